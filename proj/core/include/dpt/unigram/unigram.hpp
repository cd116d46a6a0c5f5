#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dpt::unigram {

// Distinct whitespace-separated words with their corpus counts, in first
// occurrence order.
struct WordCount {
  std::u32string word;
  double count = 0;
};
using WordCounts = std::vector<WordCount>;

WordCounts count_words(std::string_view text);

class UnigramVocab {
 public:
  // Adds or overwrites a piece.
  void set(const std::u32string& piece, double logp);
  bool contains(const std::u32string& piece) const { return index_.count(piece) != 0; }
  // -1 if absent.
  int id(const std::u32string& piece) const;
  double logp(int id) const { return pieces_[static_cast<std::size_t>(id)].second; }
  const std::u32string& piece(int id) const { return pieces_[static_cast<std::size_t>(id)].first; }
  std::size_t size() const { return pieces_.size(); }
  std::size_t max_piece_len() const { return max_len_; }
  std::size_t single_char_count() const;

  const std::vector<std::pair<std::u32string, double>>& pieces() const { return pieces_; }

  // "piece<TAB>logprob" lines by descending logprob (ties by piece), with
  // logprobs printed to round-trip exactly.
  std::string serialize() const;
  static UnigramVocab parse(std::string_view text);
  static UnigramVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::u32string, double>> pieces_;
  std::unordered_map<std::u32string, int> index_;
  std::size_t max_len_ = 0;
};

struct Segmentation {
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // [start, end)
  double logp = 0;
};

// All single characters plus the `seed_size` most frequent substrings of
// length 2..max_piece_len (ties broken lexicographically), with
// probabilities proportional to frequency. Empty corpus: UsageError.
UnigramVocab init_seed_vocab(const WordCounts& words, std::size_t max_piece_len, std::size_t seed_size);

// Maximum-probability segmentation; ties go to fewer pieces, then to the
// longest leftmost piece. A character with no piece raises DataError.
// `excluded` (a piece id) is skipped when >= 0.
Segmentation viterbi_segment(std::u32string_view word, const UnigramVocab& vocab, int excluded = -1);

struct EmResult {
  UnigramVocab vocab;
  double log_likelihood = 0;  // of the corpus under the input vocab
};

// One soft EM round with forward-backward expected counts. Multi-character
// pieces whose expected count underflows to zero are dropped.
EmResult em_round(const WordCounts& words, const UnigramVocab& vocab);

// Log-likelihood of the corpus under the full lattice.
double corpus_log_likelihood(const WordCounts& words, const UnigramVocab& vocab);

struct PruneOptions {
  double fraction = 0.2;
  int em_rounds_between = 2;
};

// Removes the multi-character pieces whose removal costs the least
// likelihood, `fraction` of them per round, re-estimating in between, until
// size <= target. Single characters are never removed; a target below their
// count is a UsageError.
UnigramVocab prune_vocab(const WordCounts& words, UnigramVocab vocab, std::size_t target_size,
                         const PruneOptions& opts = {});

struct TrainOptions {
  std::size_t max_piece_len = 8;
  std::size_t seed_factor = 10;  // seed = factor * target
  int initial_em_rounds = 2;
  int final_em_rounds = 2;
  PruneOptions prune;
};

UnigramVocab train_unigram(std::string_view text, std::size_t target_size, const TrainOptions& opts = {});

// Per-character gold boundaries from Viterbi pieces of each word. Default:
// whitespace closes the preceding word's last group (the whitespace position
// is marked and the word's final character is not). With `ws_own_group`
// every piece end and every whitespace is marked.
std::vector<std::uint8_t> gold_boundaries(std::string_view text, const UnigramVocab& vocab,
                                          bool ws_own_group = false);

// b_t = 1 iff character t is whitespace.
std::vector<std::uint8_t> whitespace_boundaries(std::string_view text);

}  // namespace dpt::unigram
