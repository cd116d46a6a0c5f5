#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "dpt/corpus/corpus.hpp"
#include "dpt/error.hpp"

using namespace dpt;
using namespace dpt::corpus;

TEST(Clean, Examples) {
  const auto en = CleanerConfig::english();
  EXPECT_EQ(clean_text("Ab3", en), "ab three");
  EXPECT_EQ(clean_text("hello", en), "hello");
  EXPECT_EQ(clean_text("Привет, мир", en), " ");
}

TEST(Clean, HandBuiltCases) {
  auto en = CleanerConfig::english();
  auto latin = en;
  latin.homoglyphs = latin_homoglyphs();
  ASSERT_EQ(latin.homoglyphs.size(), 20u);
  struct Case {
    const char* in;
    const char* out;
    bool homoglyphs;
  };
  const Case cases[] = {
      {"Hello, World!", "hello world ", false},
      {"  many   spaces  ", " many spaces ", false},
      {"tab\tand\nnewline", "tab and newline", false},
      {"1984", "one nine eight four", false},
      {"a1b", "a one b", false},
      {"7 dwarfs", "seven dwarfs", false},
      {"x 2 y", "x two y", false},
      {"end9.", "end nine ", false},
      {"ÀÉÎ", " ", false},
      {"café", "caf ", false},
      {"日本語", " ", false},
      {"αβγ abc", " abc", false},
      {"к", " ", false},
      {"don't", "don t", false},
      {"UPPER lower", "upper lower", false},
      {"", "", false},
      {"рарос", "papoc", true},
      {"Cyrillic о in wоrd", "cyrillic o in word", true},
      {"Greek ο and ν", "greek o and v", true},
      {"mixed Жzh", "mixed zh", true},
  };
  for (const auto& c : cases) {
    EXPECT_EQ(clean_text(c.in, c.homoglyphs ? latin : en), c.out) << "input: " << c.in;
  }
}

TEST(Clean, Idempotent) {
  const auto en = CleanerConfig::english();
  std::mt19937_64 rng(1);
  const std::string alphabet = "abcXYZ 019.,!\n\t-";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const int len = std::uniform_int_distribution<int>(0, 40)(rng);
    for (int i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    const std::string once = clean_text(s, en);
    EXPECT_EQ(clean_text(once, en), once) << s;
    for (char c : once) EXPECT_TRUE(c == ' ' || (c >= 'a' && c <= 'z'));
    EXPECT_EQ(once.find("  "), std::string::npos);
  }
}

TEST(Clean, ConfigFile) {
  auto cfg = CleanerConfig::parse(
      "# finnish-ish\nallowed = abcdefghijklmnopqrstuvwxyzäö\nnewline = keep\n"
      "digit.1 = yksi\nhomoglyph.w = v\n");
  EXPECT_TRUE(cfg.allowed.count(U' '));
  EXPECT_EQ(clean_text("Wä 1\nö", cfg), "vä yksi\nö");
  EXPECT_THROW(CleanerConfig::parse("bogus = 1"), ConfigError);
  EXPECT_THROW(CleanerConfig::parse("allowed = ab1"), ConfigError);
  EXPECT_THROW(CleanerConfig::parse("no equals"), ConfigError);
}

TEST(Vocab, RoundTripAndFile) {
  const std::string text = "hello world\\ a\tb\nc";
  auto v = CharVocab::from_text(text);
  EXPECT_EQ(v.decode(v.encode(text)), text);
  EXPECT_EQ(v.id_of(U'\t'), 0);
  auto back = CharVocab::parse(v.serialize());
  EXPECT_EQ(back, v);
  EXPECT_THROW(v.encode("z"), DataError);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.id_of(v.char_of(static_cast<int>(i))), static_cast<int>(i));
}

TEST(Vocab, Text8Alphabet) {
  auto v = CharVocab::from_text("the quick brown fox jumps over the lazy dog");
  EXPECT_EQ(v.size(), 27u);
  EXPECT_EQ(v.id_of(U' '), 0);
  EXPECT_EQ(v.id_of(U'a'), 1);
  EXPECT_EQ(v.serialize().substr(0, 3), "\\s\n");
}

TEST(Chunks, Examples) {
  std::vector<std::int32_t> t(10);
  std::iota(t.begin(), t.end(), 0);
  auto c = chunk_rotated(t, 5, 0, 7);
  ASSERT_EQ(c.size(), 2u);
  std::multiset<int> all;
  for (auto& ch : c) {
    EXPECT_EQ(ch.size(), 5u);
    all.insert(ch.begin(), ch.end());
  }
  EXPECT_EQ(all, std::multiset<int>(t.begin(), t.end()));

  // Rotation oracle: rotate first, then cut.
  std::vector<std::int32_t> rot(t.begin() + 3, t.end());
  rot.insert(rot.end(), t.begin(), t.begin() + 3);
  std::set<std::vector<std::int32_t>> expect = {{rot.begin(), rot.begin() + 5}, {rot.begin() + 5, rot.end()}};
  auto r = chunk_rotated(t, 5, 3, 9);
  EXPECT_EQ(std::set<std::vector<std::int32_t>>(r.begin(), r.end()), expect);

  EXPECT_EQ(chunk_epoch(t, 3, 4, 11), chunk_epoch(t, 3, 4, 11));
  EXPECT_THROW(chunk_epoch(t, 11, 0, 1), UsageError);
  EXPECT_EQ(epoch_shift(100, 0, 5), 0u);
}

TEST(Chunks, EpochsDifferAndAreNonOverlapping) {
  std::vector<std::int32_t> t(1000);
  std::iota(t.begin(), t.end(), 0);
  auto e1 = chunk_epoch(t, 64, 1, 3);
  auto e2 = chunk_epoch(t, 64, 2, 3);
  EXPECT_NE(e1, e2);
  std::set<int> seen;
  for (auto& ch : e1)
    for (int x : ch) EXPECT_TRUE(seen.insert(x).second);
  EXPECT_EQ(seen.size(), 15u * 64u);
}

TEST(Windows, Examples) {
  auto w = eval_windows(3072, 2048, 512);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].score_begin, 0u);
  EXPECT_EQ(w[0].score_end, 2048u);
  EXPECT_EQ(w[1].score_begin, 2048u);
  EXPECT_EQ(w[1].score_end, 2560u);
  EXPECT_EQ(w[2].start, 1024u);
  EXPECT_EQ(w[2].score_begin, 2560u);
  EXPECT_EQ(w[2].score_end, 3072u);

  auto one = eval_windows(2048, 2048, 512);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].score_end - one[0].score_begin, 2048u);

  auto disjoint = eval_windows(40, 10, 10);
  ASSERT_EQ(disjoint.size(), 4u);
  for (auto& x : disjoint) EXPECT_EQ(x.score_begin, x.start);

  auto shortw = eval_windows(7, 2048, 512);
  ASSERT_EQ(shortw.size(), 1u);
  EXPECT_EQ(shortw[0].length, 7u);

  auto strict = eval_windows(3072, 2048, 512, true);
  EXPECT_EQ(strict[0].score_begin, 1536u);
  EXPECT_THROW(eval_windows(10, 4, 5), UsageError);
}

TEST(Windows, ScoredSpansPartitionPositions) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t l = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    const std::size_t step = std::uniform_int_distribution<std::size_t>(1, l)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 400)(rng);
    std::vector<int> hits(n, 0);
    for (const auto& w : eval_windows(n, l, step)) {
      EXPECT_LE(w.start + w.length, n);
      EXPECT_GE(w.score_begin, w.start);
      EXPECT_LE(w.score_end, w.start + w.length);
      for (std::size_t i = w.score_begin; i < w.score_end; ++i) ++hits[i];
    }
    for (int h : hits) ASSERT_EQ(h, 1);
  }
}
