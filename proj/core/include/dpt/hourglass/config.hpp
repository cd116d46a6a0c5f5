#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dpt::hourglass {

enum class Method { kVanilla, kFixed, kGumbel, kEntropy, kUnigram, kWhitespace };
enum class Pooling { kMean, kSubsample };

// "vanilla", "fixed", "gumbel", "entropy", "unigram", "whitespaces"
// ("whitespace" is accepted on input). Unknown names raise ConfigError.
std::string method_name(Method m);
Method parse_method(std::string_view s);
std::string pooling_name(Pooling p);
Pooling parse_pooling(std::string_view s);

// True for the methods whose boundaries come from the learned predictor.
bool uses_predictor(Method m);

struct ModelConfig {
  std::size_t vocab = 27;
  std::size_t d = 128;
  std::size_t ff = 512;
  std::size_t heads = 4;
  std::size_t n1 = 1, n2 = 2, n3 = 1;
  double dropout = 0.1;
  Method method = Method::kVanilla;
  std::size_t fixed_k = 2;
  Pooling pooling = Pooling::kMean;
  double tau = 0.5;          // Gumbel temperature
  double alpha = 0.2;        // prior boundary rate
  double prior_weight = 1.0;
  double bce_weight = 1.0;
  std::size_t entropy_k = 2;
  std::vector<std::int32_t> whitespace_ids = {0};

  static ModelConfig paper();

  // Throws ConfigError on violated invariants.
  void validate() const;

  // `key = value` lines in a fixed order; parse() accepts exactly these keys.
  std::string serialize() const;
  static ModelConfig parse(std::string_view text);
  // Applies one key; false if the key is not a model key.
  bool set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace dpt::hourglass
