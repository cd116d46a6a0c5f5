#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dpt::corpus {

struct CleanerConfig {
  std::set<char32_t> allowed;  // always contains ' '
  std::map<char32_t, std::string> digit_words;
  std::map<char32_t, char32_t> homoglyphs;

  // a-z, space, English digit words, no homoglyph map.
  static CleanerConfig english();

  // Key-value text, one `key = value` per line, '#' comments:
  //   allowed = <characters>        script whitelist (space is implied)
  //   newline = keep|drop           keep end-of-line characters
  //   homoglyphs = none|latin       built-in lookalike table
  //   homoglyph.<c> = <c>           extra single mapping
  //   digit.<0-9> = <word>          spelling of a digit
  // Unset keys keep their english() values.
  static CleanerConfig parse(std::string_view text);
  static CleanerConfig load(const std::filesystem::path& path);
};

// Twenty Cyrillic and Greek lowercase letters mapped to their Latin twins.
std::map<char32_t, char32_t> latin_homoglyphs();

// Lowercases, maps homoglyphs, spells digits as space-separated words, and
// replaces every other disallowed character with a space. Runs of spaces
// collapse to one. Idempotent.
std::string clean_text(std::string_view raw, const CleanerConfig& cfg);

class CharVocab {
 public:
  CharVocab() = default;
  explicit CharVocab(std::vector<char32_t> chars);

  // Sorted distinct characters of `text`.
  static CharVocab from_text(std::string_view text);
  // One character per line, line number = id. "\s" is space, "\n" newline,
  // "\t" tab, "\\" backslash.
  static CharVocab parse(std::string_view file_text);
  static CharVocab load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return char_of_.size(); }
  bool contains(char32_t c) const { return id_of_.count(c) != 0; }
  std::int32_t id_of(char32_t c) const;
  char32_t char_of(std::int32_t id) const;

  // Characters outside the vocabulary raise DataError.
  std::vector<std::int32_t> encode(std::string_view text) const;
  std::string decode(std::span<const std::int32_t> ids) const;

  const std::vector<char32_t>& chars() const { return char_of_; }
  bool operator==(const CharVocab& o) const { return char_of_ == o.char_of_; }

 private:
  std::vector<char32_t> char_of_;
  std::unordered_map<char32_t, std::int32_t> id_of_;
};

using Chunk = std::vector<std::int32_t>;

// Cyclic offset for an epoch: 0 for epoch 0, otherwise a seeded draw in [0, n).
std::size_t epoch_shift(std::size_t n, std::uint64_t epoch, std::uint64_t seed);

// Rotates the stream left by `shift`, cuts floor(n / chunk_len) chunks of
// exactly chunk_len tokens, and shuffles them with `shuffle_seed`.
std::vector<Chunk> chunk_rotated(std::span<const std::int32_t> tokens, std::size_t chunk_len,
                                 std::size_t shift, std::uint64_t shuffle_seed);

// One training epoch: rotation by epoch_shift, seeded shuffle.
std::vector<Chunk> chunk_epoch(std::span<const std::int32_t> tokens, std::size_t chunk_len,
                               std::uint64_t epoch, std::uint64_t seed);

struct EvalWindow {
  std::size_t start = 0;        // first index covered
  std::size_t length = 0;       // window length
  std::size_t score_begin = 0;  // absolute scored range [score_begin, score_end)
  std::size_t score_end = 0;
};

// Windows over n positions advancing by `step`. Each window scores its last
// `step` positions; the first window scores everything it covers unless
// `strict`, so every position is scored exactly once. When (n - l) is not a
// multiple of step, a final window ends at n and scores only the remainder.
// n <= l yields one fully scored window.
std::vector<EvalWindow> eval_windows(std::size_t n, std::size_t l = 2048, std::size_t step = 512,
                                     bool strict = false);

}  // namespace dpt::corpus
