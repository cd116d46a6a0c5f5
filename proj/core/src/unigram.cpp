#include "dpt/unigram/unigram.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"

namespace dpt::unigram {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Relative tolerance under which two segmentation scores count as tied.
constexpr double kTieTol = 1e-12;

bool is_space(char32_t c) { return c == U' ' || c == U'\n' || c == U'\t' || c == U'\r'; }

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

std::string char_name(char32_t c) {
  std::string s;
  utf8_append(s, c);
  return "'" + s + "'";
}

// Matches of vocabulary pieces in `word`: for each start, (length, id).
std::vector<std::vector<std::pair<std::size_t, int>>> lattice(std::u32string_view word, const UnigramVocab& vocab) {
  const std::size_t n = word.size();
  std::vector<std::vector<std::pair<std::size_t, int>>> out(n);
  std::u32string buf;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t max_len = std::min(vocab.max_piece_len(), n - i);
    for (std::size_t len = 1; len <= max_len; ++len) {
      buf.assign(word.substr(i, len));
      const int id = vocab.id(buf);
      if (id >= 0) out[i].emplace_back(len, id);
    }
  }
  return out;
}

// log Z, plus expected piece counts added to `counts` scaled by `weight`.
double forward_backward(std::u32string_view word, const UnigramVocab& vocab, double weight,
                        std::vector<double>* counts) {
  const std::size_t n = word.size();
  const auto lat = lattice(word, vocab);
  std::vector<double> alpha(n + 1, kNegInf), beta(n + 1, kNegInf);
  alpha[0] = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] == kNegInf) continue;
    for (auto [len, id] : lat[i]) alpha[i + len] = log_add(alpha[i + len], alpha[i] + vocab.logp(id));
  }
  const double z = alpha[n];
  if (z == kNegInf) {
    for (char32_t c : word) {
      if (vocab.id(std::u32string(1, c)) < 0) throw DataError("no vocabulary piece covers character " + char_name(c));
    }
    throw DataError("word cannot be segmented with the vocabulary");
  }
  if (!counts) return z;
  beta[n] = 0;
  for (std::size_t i = n; i-- > 0;) {
    for (auto [len, id] : lat[i]) beta[i] = log_add(beta[i], vocab.logp(id) + beta[i + len]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto [len, id] : lat[i]) {
      const double lp = alpha[i] + vocab.logp(id) + beta[i + len] - z;
      (*counts)[static_cast<std::size_t>(id)] += weight * std::exp(lp);
    }
  }
  return z;
}

UnigramVocab from_counts(const UnigramVocab& vocab, const std::vector<double>& counts) {
  double total = 0;
  std::vector<double> c(counts);
  for (std::size_t id = 0; id < c.size(); ++id) {
    if (c[id] <= 0 && vocab.piece(static_cast<int>(id)).size() == 1) {
      c[id] = std::numeric_limits<double>::min();
    }
    if (c[id] > 0) total += c[id];
  }
  UnigramVocab out;
  const double log_total = std::log(total);
  for (std::size_t id = 0; id < c.size(); ++id) {
    if (c[id] > 0) out.set(vocab.piece(static_cast<int>(id)), std::log(c[id]) - log_total);
  }
  return out;
}

}  // namespace

WordCounts count_words(std::string_view text) {
  WordCounts out;
  std::unordered_map<std::u32string, std::size_t> index;
  const std::u32string u = utf8_decode(text);
  std::size_t i = 0;
  while (i < u.size()) {
    while (i < u.size() && is_space(u[i])) ++i;
    std::size_t j = i;
    while (j < u.size() && !is_space(u[j])) ++j;
    if (j > i) {
      std::u32string w = u.substr(i, j - i);
      auto [it, fresh] = index.emplace(w, out.size());
      if (fresh) out.push_back({std::move(w), 0});
      out[it->second].count += 1;
    }
    i = j;
  }
  return out;
}

void UnigramVocab::set(const std::u32string& piece, double logp) {
  if (piece.empty()) throw DataError("empty unigram piece");
  if (!std::isfinite(logp)) throw DataError("non-finite log-probability for a unigram piece");
  auto it = index_.find(piece);
  if (it != index_.end()) {
    pieces_[static_cast<std::size_t>(it->second)].second = logp;
    return;
  }
  index_.emplace(piece, static_cast<int>(pieces_.size()));
  pieces_.emplace_back(piece, logp);
  max_len_ = std::max(max_len_, piece.size());
}

int UnigramVocab::id(const std::u32string& piece) const {
  auto it = index_.find(piece);
  return it == index_.end() ? -1 : it->second;
}

std::size_t UnigramVocab::single_char_count() const {
  std::size_t n = 0;
  for (const auto& p : pieces_) n += p.first.size() == 1;
  return n;
}

std::string UnigramVocab::serialize() const {
  std::vector<std::size_t> order(pieces_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pieces_[a].second != pieces_[b].second) return pieces_[a].second > pieces_[b].second;
    return pieces_[a].first < pieces_[b].first;
  });
  std::string out;
  char buf[64];
  for (std::size_t i : order) {
    out += utf8_encode(pieces_[i].first);
    out.push_back('\t');
    auto res = std::to_chars(buf, buf + sizeof(buf), pieces_[i].second);
    out.append(buf, res.ptr);
    out.push_back('\n');
  }
  return out;
}

UnigramVocab UnigramVocab::parse(std::string_view text) {
  UnigramVocab v;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw DataError("unigram vocab line " + std::to_string(lineno) + ": expected piece<TAB>logprob");
    }
    double lp = 0;
    const auto num = line.substr(tab + 1);
    auto res = std::from_chars(num.data(), num.data() + num.size(), lp);
    if (res.ec != std::errc() || res.ptr != num.data() + num.size()) {
      throw DataError("unigram vocab line " + std::to_string(lineno) + ": bad log-probability");
    }
    const std::u32string piece = utf8_decode(line.substr(0, tab));
    if (v.contains(piece)) throw DataError("unigram vocab line " + std::to_string(lineno) + ": duplicate piece");
    v.set(piece, lp);
  }
  if (v.size() == 0) throw DataError("unigram vocab is empty");
  return v;
}

UnigramVocab UnigramVocab::load(const std::filesystem::path& path) { return parse(read_file(path)); }

void UnigramVocab::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

UnigramVocab init_seed_vocab(const WordCounts& words, std::size_t max_piece_len, std::size_t seed_size) {
  if (max_piece_len == 0) throw UsageError("max piece length must be positive");
  std::unordered_map<std::u32string, double> freq;
  double total_chars = 0;
  for (const auto& w : words) {
    const std::size_t n = w.word.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t len = 1; len <= max_piece_len && i + len <= n; ++len) {
        freq[w.word.substr(i, len)] += w.count;
      }
    }
    total_chars += w.count * static_cast<double>(n);
  }
  if (total_chars == 0) throw UsageError("cannot seed a unigram vocabulary from an empty corpus");

  std::vector<std::pair<std::u32string, double>> singles, multi;
  for (auto& [piece, f] : freq) (piece.size() == 1 ? singles : multi).emplace_back(piece, f);
  auto by_freq = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  std::sort(singles.begin(), singles.end(), by_freq);
  std::sort(multi.begin(), multi.end(), by_freq);
  if (multi.size() > seed_size) multi.resize(seed_size);

  double total = 0;
  for (const auto& p : singles) total += p.second;
  for (const auto& p : multi) total += p.second;
  const double log_total = std::log(total);
  UnigramVocab v;
  for (const auto& p : singles) v.set(p.first, std::log(p.second) - log_total);
  for (const auto& p : multi) v.set(p.first, std::log(p.second) - log_total);
  return v;
}

Segmentation viterbi_segment(std::u32string_view word, const UnigramVocab& vocab, int excluded) {
  const std::size_t n = word.size();
  struct Best {
    double score = kNegInf;
    std::size_t pieces = 0;
    std::size_t len = 0;
  };
  // Suffix DP so the tie-break on the first piece is exact.
  std::vector<Best> best(n + 1);
  best[n].score = 0;
  std::u32string buf;
  for (std::size_t i = n; i-- > 0;) {
    Best& cur = best[i];
    const std::size_t max_len = std::min(vocab.max_piece_len(), n - i);
    for (std::size_t len = 1; len <= max_len; ++len) {
      const Best& next = best[i + len];
      if (next.score == kNegInf) continue;
      buf.assign(word.substr(i, len));
      const int id = vocab.id(buf);
      if (id < 0 || id == excluded) continue;
      const double score = vocab.logp(id) + next.score;
      const std::size_t pieces = next.pieces + 1;
      const double tol = kTieTol * std::max(1.0, std::fabs(score));
      bool better;
      if (cur.score == kNegInf || score > cur.score + tol) {
        better = true;
      } else if (score < cur.score - tol) {
        better = false;
      } else {
        better = pieces < cur.pieces || (pieces == cur.pieces && len > cur.len);
      }
      if (better) cur = {score, pieces, len};
    }
  }
  if (best[0].score == kNegInf) {
    for (char32_t c : word) {
      if (vocab.id(std::u32string(1, c)) < 0) throw DataError("no vocabulary piece covers character " + char_name(c));
    }
    throw DataError("word cannot be segmented with the vocabulary");
  }
  Segmentation seg;
  seg.logp = best[0].score;
  for (std::size_t i = 0; i < n; i += best[i].len) seg.spans.emplace_back(i, i + best[i].len);
  return seg;
}

double corpus_log_likelihood(const WordCounts& words, const UnigramVocab& vocab) {
  double ll = 0;
  for (const auto& w : words) ll += w.count * forward_backward(w.word, vocab, 0, nullptr);
  return ll;
}

EmResult em_round(const WordCounts& words, const UnigramVocab& vocab) {
  std::vector<double> counts(vocab.size(), 0.0);
  double ll = 0;
  for (const auto& w : words) ll += w.count * forward_backward(w.word, vocab, w.count, &counts);
  return {from_counts(vocab, counts), ll};
}

UnigramVocab prune_vocab(const WordCounts& words, UnigramVocab vocab, std::size_t target_size,
                         const PruneOptions& opts) {
  const std::size_t singles = vocab.single_char_count();
  if (target_size < singles) {
    throw UsageError("target vocabulary size " + std::to_string(target_size) + " is below the " +
                     std::to_string(singles) + " single characters that must be kept");
  }
  if (!(opts.fraction > 0 && opts.fraction <= 1)) throw UsageError("prune fraction must be in (0, 1]");
  while (vocab.size() > target_size) {
    // Viterbi piece frequencies over the corpus.
    std::vector<double> freq(vocab.size(), 0.0);
    for (const auto& w : words) {
      for (auto [b, e] : viterbi_segment(w.word, vocab).spans) {
        freq[static_cast<std::size_t>(vocab.id(w.word.substr(b, e - b)))] += w.count;
      }
    }
    double sum = 0;
    for (double f : freq) sum += f;
    const double log_sum = std::log(sum);

    struct Candidate {
      double loss;
      int id;
    };
    std::vector<Candidate> cands;
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      const auto& piece = vocab.piece(static_cast<int>(id));
      if (piece.size() == 1) continue;
      double loss = 0;
      if (freq[id] > 0) {
        // Likelihood change if every use of the piece is replaced by its
        // best segmentation without it.
        const auto alt = viterbi_segment(piece, vocab, static_cast<int>(id));
        const double log_sum_alt = std::log(sum + freq[id] * static_cast<double>(alt.spans.size() - 1));
        double logprob_alt = 0;
        for (auto [b, e] : alt.spans) {
          const int aid = vocab.id(piece.substr(b, e - b));
          logprob_alt += std::log(freq[static_cast<std::size_t>(aid)] + freq[id]) - log_sum_alt;
        }
        const double logprob = std::log(freq[id]) - log_sum;
        loss = (freq[id] / sum) * (logprob - logprob_alt);
      }
      cands.push_back({loss, static_cast<int>(id)});
    }
    if (cands.empty()) break;
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.loss != b.loss) return a.loss < b.loss;
      return vocab.piece(a.id) < vocab.piece(b.id);
    });
    const std::size_t per_round =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opts.fraction * static_cast<double>(cands.size()))));
    const std::size_t n_drop = std::min({per_round, vocab.size() - target_size, cands.size()});
    std::vector<bool> drop(vocab.size(), false);
    for (std::size_t i = 0; i < n_drop; ++i) drop[static_cast<std::size_t>(cands[i].id)] = true;

    std::vector<double> kept(vocab.size(), 0.0);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      if (!drop[id]) kept[id] = std::exp(vocab.logp(static_cast<int>(id)));
    }
    vocab = from_counts(vocab, kept);
    for (int r = 0; r < opts.em_rounds_between; ++r) vocab = em_round(words, vocab).vocab;
  }
  return vocab;
}

UnigramVocab train_unigram(std::string_view text, std::size_t target_size, const TrainOptions& opts) {
  const WordCounts words = count_words(text);
  UnigramVocab v = init_seed_vocab(words, opts.max_piece_len, opts.seed_factor * target_size);
  for (int r = 0; r < opts.initial_em_rounds; ++r) v = em_round(words, v).vocab;
  v = prune_vocab(words, std::move(v), std::max(target_size, v.single_char_count()), opts.prune);
  for (int r = 0; r < opts.final_em_rounds; ++r) v = em_round(words, v).vocab;
  return v;
}

std::vector<std::uint8_t> gold_boundaries(std::string_view text, const UnigramVocab& vocab, bool ws_own_group) {
  const std::u32string u = utf8_decode(text);
  std::vector<std::uint8_t> b(u.size(), 0);
  std::unordered_map<std::u32string, std::vector<std::size_t>> cache;  // word -> piece end offsets
  std::size_t i = 0;
  while (i < u.size()) {
    if (is_space(u[i])) {
      b[i] = 1;
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < u.size() && !is_space(u[j])) ++j;
    const std::u32string word = u.substr(i, j - i);
    auto it = cache.find(word);
    if (it == cache.end()) {
      std::vector<std::size_t> ends;
      for (auto [s, e] : viterbi_segment(word, vocab).spans) ends.push_back(e);
      it = cache.emplace(word, std::move(ends)).first;
    }
    for (std::size_t e : it->second) b[i + e - 1] = 1;
    if (!ws_own_group && j < u.size()) b[j - 1] = 0;
    i = j;
  }
  return b;
}

std::vector<std::uint8_t> whitespace_boundaries(std::string_view text) {
  const std::u32string u = utf8_decode(text);
  std::vector<std::uint8_t> b(u.size(), 0);
  for (std::size_t i = 0; i < u.size(); ++i) b[i] = is_space(u[i]) ? 1 : 0;
  return b;
}

}  // namespace dpt::unigram
