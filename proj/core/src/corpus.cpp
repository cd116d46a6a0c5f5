#include "dpt/corpus/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"

namespace dpt::corpus {
namespace {

// Case folding for ASCII, Latin-1, Greek and Cyrillic; other scripts pass
// through unchanged.
char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

bool is_digit(char32_t c) { return c >= U'0' && c <= U'9'; }

char32_t parse_single_char(const std::string& v, const std::string& key) {
  if (v == "\\s") return U' ';
  const std::u32string u = utf8_decode(v);
  if (u.size() != 1) throw ConfigError("cleaner config: '" + key + "' expects one character, got '" + v + "'");
  return u[0];
}

}  // namespace

CleanerConfig CleanerConfig::english() {
  CleanerConfig cfg;
  cfg.allowed.insert(U' ');
  for (char32_t c = U'a'; c <= U'z'; ++c) cfg.allowed.insert(c);
  const char* words[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  for (int d = 0; d < 10; ++d) cfg.digit_words[U'0' + d] = words[d];
  return cfg;
}

std::map<char32_t, char32_t> latin_homoglyphs() {
  return {
      {U'а', U'a'}, {U'е', U'e'}, {U'о', U'o'}, {U'р', U'p'}, {U'с', U'c'},
      {U'у', U'y'}, {U'х', U'x'}, {U'і', U'i'}, {U'ј', U'j'}, {U'ѕ', U's'},
      {U'ԁ', U'd'}, {U'һ', U'h'}, {U'ԛ', U'q'}, {U'ԝ', U'w'}, {U'ɡ', U'g'},
      {U'α', U'a'}, {U'ο', U'o'}, {U'ν', U'v'}, {U'κ', U'k'}, {U'ι', U'i'},
  };
}

CleanerConfig CleanerConfig::parse(std::string_view text) {
  CleanerConfig cfg = english();
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("cleaner config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "allowed") {
      cfg.allowed.clear();
      cfg.allowed.insert(U' ');
      for (char32_t c : utf8_decode(value)) {
        if (is_digit(c)) throw ConfigError("cleaner config: digits cannot be allowed characters");
        cfg.allowed.insert(c);
      }
    } else if (key == "newline") {
      if (value == "keep") {
        cfg.allowed.insert(U'\n');
      } else if (value == "drop") {
        cfg.allowed.erase(U'\n');
      } else {
        throw ConfigError("cleaner config: newline must be keep or drop");
      }
    } else if (key == "homoglyphs") {
      if (value == "none") {
        cfg.homoglyphs.clear();
      } else if (value == "latin") {
        for (auto [from, to] : latin_homoglyphs()) cfg.homoglyphs[from] = to;
      } else {
        throw ConfigError("cleaner config: homoglyphs must be none or latin");
      }
    } else if (key.rfind("homoglyph.", 0) == 0) {
      cfg.homoglyphs[parse_single_char(key.substr(10), key)] = parse_single_char(value, key);
    } else if (key.rfind("digit.", 0) == 0 && key.size() == 7 && is_digit(static_cast<char32_t>(key[6]))) {
      cfg.digit_words[static_cast<char32_t>(key[6])] = value;
    } else {
      throw ConfigError("cleaner config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

CleanerConfig CleanerConfig::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string clean_text(std::string_view raw, const CleanerConfig& cfg) {
  std::string out;
  out.reserve(raw.size());
  // A digit word is followed by a space only if more text follows.
  bool pending_space = false;
  auto last_is_space = [&] { return !out.empty() && out.back() == ' '; };
  auto push_space = [&] {
    if (!last_is_space()) out.push_back(' ');
    pending_space = false;
  };
  const std::u32string text = utf8_decode(raw);
  for (char32_t c0 : text) {
    char32_t c = to_lower(c0);
    if (auto h = cfg.homoglyphs.find(c); h != cfg.homoglyphs.end()) c = to_lower(h->second);
    if (auto d = cfg.digit_words.find(c); d != cfg.digit_words.end()) {
      if (!out.empty()) push_space();
      out += d->second;
      pending_space = true;
      continue;
    }
    if (c == U' ' || !cfg.allowed.count(c)) {
      push_space();
      continue;
    }
    if (pending_space && c != U'\n') push_space();
    pending_space = false;
    utf8_append(out, c);
  }
  return out;
}

CharVocab::CharVocab(std::vector<char32_t> chars) : char_of_(std::move(chars)) {
  for (std::size_t i = 0; i < char_of_.size(); ++i) {
    if (!id_of_.emplace(char_of_[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("vocabulary lists a character twice");
    }
  }
}

CharVocab CharVocab::from_text(std::string_view text) {
  std::set<char32_t> seen;
  for (char32_t c : utf8_decode(text)) seen.insert(c);
  return CharVocab(std::vector<char32_t>(seen.begin(), seen.end()));
}

CharVocab CharVocab::parse(std::string_view file_text) {
  std::vector<char32_t> chars;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < file_text.size()) {
    auto nl = file_text.find('\n', pos);
    if (nl == std::string_view::npos) nl = file_text.size();
    const std::string_view line = file_text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line == "\\s") {
      chars.push_back(U' ');
    } else if (line == "\\n") {
      chars.push_back(U'\n');
    } else if (line == "\\t") {
      chars.push_back(U'\t');
    } else if (line == "\\\\") {
      chars.push_back(U'\\');
    } else {
      const std::u32string u = utf8_decode(line);
      if (u.size() != 1) throw DataError("vocabulary line " + std::to_string(lineno) + " is not one character");
      chars.push_back(u[0]);
    }
  }
  return CharVocab(std::move(chars));
}

CharVocab CharVocab::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string CharVocab::serialize() const {
  std::string out;
  for (char32_t c : char_of_) {
    switch (c) {
      case U' ': out += "\\s"; break;
      case U'\n': out += "\\n"; break;
      case U'\t': out += "\\t"; break;
      case U'\\': out += "\\\\"; break;
      default: utf8_append(out, c);
    }
    out.push_back('\n');
  }
  return out;
}

void CharVocab::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

std::int32_t CharVocab::id_of(char32_t c) const {
  auto it = id_of_.find(c);
  if (it == id_of_.end()) {
    std::string s;
    utf8_append(s, c);
    throw DataError("character '" + s + "' (U+" + std::to_string(static_cast<std::uint32_t>(c)) +
                    ") is not in the vocabulary");
  }
  return it->second;
}

char32_t CharVocab::char_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= char_of_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return char_of_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> CharVocab::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char32_t c : utf8_decode(text)) ids.push_back(id_of(c));
  return ids;
}

std::string CharVocab::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (std::int32_t id : ids) utf8_append(out, char_of(id));
  return out;
}

std::size_t epoch_shift(std::size_t n, std::uint64_t epoch, std::uint64_t seed) {
  if (epoch == 0 || n == 0) return 0;
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
  return static_cast<std::size_t>(rng() % n);
}

std::vector<Chunk> chunk_rotated(std::span<const std::int32_t> tokens, std::size_t chunk_len,
                                 std::size_t shift, std::uint64_t shuffle_seed) {
  const std::size_t n = tokens.size();
  if (chunk_len == 0) throw UsageError("chunk length must be positive");
  if (n < chunk_len) {
    throw UsageError("token stream of " + std::to_string(n) + " is shorter than chunk length " +
                     std::to_string(chunk_len));
  }
  shift %= n;
  std::vector<Chunk> chunks(n / chunk_len);
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    chunks[c].resize(chunk_len);
    for (std::size_t j = 0; j < chunk_len; ++j) chunks[c][j] = tokens[(shift + c * chunk_len + j) % n];
  }
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(chunks.begin(), chunks.end(), rng);
  return chunks;
}

std::vector<Chunk> chunk_epoch(std::span<const std::int32_t> tokens, std::size_t chunk_len,
                               std::uint64_t epoch, std::uint64_t seed) {
  const std::size_t shift = epoch_shift(tokens.size(), epoch, seed);
  return chunk_rotated(tokens, chunk_len, shift, seed * 1000003ull + epoch);
}

std::vector<EvalWindow> eval_windows(std::size_t n, std::size_t l, std::size_t step, bool strict) {
  if (step == 0 || l == 0 || step > l) throw UsageError("eval windows need 0 < step <= length");
  std::vector<EvalWindow> out;
  if (n == 0) return out;
  if (n <= l) {
    out.push_back({0, n, 0, n});
    return out;
  }
  for (std::size_t start = 0; start + l <= n; start += step) {
    const std::size_t end = start + l;
    const bool first = out.empty();
    out.push_back({start, l, first && !strict ? start : end - step, end});
  }
  const std::size_t covered = out.back().score_end;
  if (covered < n) out.push_back({n - l, l, covered, n});
  return out;
}

}  // namespace dpt::corpus
