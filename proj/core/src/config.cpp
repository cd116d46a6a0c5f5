#include "dpt/hourglass/config.hpp"

#include <charconv>
#include <sstream>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"

namespace dpt::hourglass {

std::string method_name(Method m) {
  switch (m) {
    case Method::kVanilla: return "vanilla";
    case Method::kFixed: return "fixed";
    case Method::kGumbel: return "gumbel";
    case Method::kEntropy: return "entropy";
    case Method::kUnigram: return "unigram";
    case Method::kWhitespace: return "whitespaces";
  }
  throw InternalError("unhandled method");
}

Method parse_method(std::string_view s) {
  if (s == "vanilla") return Method::kVanilla;
  if (s == "fixed") return Method::kFixed;
  if (s == "gumbel") return Method::kGumbel;
  if (s == "entropy") return Method::kEntropy;
  if (s == "unigram") return Method::kUnigram;
  if (s == "whitespaces" || s == "whitespace") return Method::kWhitespace;
  throw ConfigError("unknown method '" + std::string(s) +
                    "' (expected vanilla, fixed, gumbel, entropy, unigram or whitespaces)");
}

std::string pooling_name(Pooling p) { return p == Pooling::kMean ? "mean" : "subsample"; }

Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "subsample") return Pooling::kSubsample;
  throw ConfigError("unknown pooling '" + std::string(s) + "' (expected mean or subsample)");
}

bool uses_predictor(Method m) { return m == Method::kGumbel || m == Method::kEntropy || m == Method::kUnigram; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.d = 512;
  c.ff = 2048;
  c.heads = 8;
  c.n1 = 2;
  c.n2 = 8;
  c.n3 = 2;
  return c;
}

void ModelConfig::validate() const {
  if (vocab == 0) throw ConfigError("vocab must be positive");
  if (d == 0 || heads == 0 || d % heads != 0) throw ConfigError("d must be a positive multiple of heads");
  if (ff == 0) throw ConfigError("ff must be positive");
  if (n1 == 0 || n3 == 0) throw ConfigError("n1 and n3 must be >= 1");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
  if (fixed_k == 0) throw ConfigError("fixed_k must be >= 1");
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("alpha must be in (0, 1)");
  if (entropy_k == 0) throw ConfigError("entropy_k must be >= 1");
  for (auto id : whitespace_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw ConfigError("whitespace id outside the vocabulary");
}


const std::vector<std::string>& ModelConfig::keys() {
  static const std::vector<std::string> k = {"vocab",  "d",       "ff",      "heads",        "n1",
                                             "n2",     "n3",      "dropout", "method",       "fixed_k",
                                             "pooling", "tau",    "alpha",   "prior_weight", "bce_weight",
                                             "entropy_k", "whitespace_ids"};
  return k;
}

bool ModelConfig::set(const std::string& key, const std::string& v) {
  if (key == "vocab") vocab = parse_number<std::size_t>(key, v);
  else if (key == "d") d = parse_number<std::size_t>(key, v);
  else if (key == "ff") ff = parse_number<std::size_t>(key, v);
  else if (key == "heads") heads = parse_number<std::size_t>(key, v);
  else if (key == "n1") n1 = parse_number<std::size_t>(key, v);
  else if (key == "n2") n2 = parse_number<std::size_t>(key, v);
  else if (key == "n3") n3 = parse_number<std::size_t>(key, v);
  else if (key == "dropout") dropout = parse_number<double>(key, v);
  else if (key == "method") method = parse_method(v);
  else if (key == "fixed_k") fixed_k = parse_number<std::size_t>(key, v);
  else if (key == "pooling") pooling = parse_pooling(v);
  else if (key == "tau") tau = parse_number<double>(key, v);
  else if (key == "alpha") alpha = parse_number<double>(key, v);
  else if (key == "prior_weight") prior_weight = parse_number<double>(key, v);
  else if (key == "bce_weight") bce_weight = parse_number<double>(key, v);
  else if (key == "entropy_k") entropy_k = parse_number<std::size_t>(key, v);
  else if (key == "whitespace_ids") {
    whitespace_ids.clear();
    std::stringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
      const std::string t = trim(item);
      if (!t.empty()) whitespace_ids.push_back(parse_number<std::int32_t>(key, t));
    }
  } else {
    return false;
  }
  return true;
}

std::string ModelConfig::serialize() const {
  std::string ws;
  for (std::size_t i = 0; i < whitespace_ids.size(); ++i) ws += (i ? "," : "") + std::to_string(whitespace_ids[i]);
  std::ostringstream o;
  o << "vocab = " << vocab << "\nd = " << d << "\nff = " << ff << "\nheads = " << heads << "\nn1 = " << n1
    << "\nn2 = " << n2 << "\nn3 = " << n3 << "\ndropout = " << format_double(dropout) << "\nmethod = " << method_name(method)
    << "\nfixed_k = " << fixed_k << "\npooling = " << pooling_name(pooling) << "\ntau = " << format_double(tau)
    << "\nalpha = " << format_double(alpha) << "\nprior_weight = " << format_double(prior_weight) << "\nbce_weight = " << format_double(bce_weight)
    << "\nentropy_k = " << entropy_k << "\nwhitespace_ids = " << ws << "\n";
  return o.str();
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig c;
  for (const auto& [k, v] : parse_key_values(text, "model config")) {
    if (!c.set(k, v)) throw ConfigError("unknown model config key '" + k + "'");
  }
  c.validate();
  return c;
}

}  // namespace dpt::hourglass
