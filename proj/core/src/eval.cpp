#include "dpt/evaluation/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "dpt/corpus/corpus.hpp"
#include "dpt/error.hpp"
#include "dpt/numerics/special.hpp"
#include "dpt/text_io.hpp"

namespace dpt::evaluation {

namespace {

// -log2 p(target) from one row of logits.
template <typename T>
double row_bits(const T* logits, std::size_t v, std::int32_t target) {
  double mx = logits[0];
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double s = 0;
  for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(logits[j]) - mx);
  const double lse = mx + std::log(s);
  return (lse - static_cast<double>(logits[target])) / std::numbers::ln2;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) throw UsageError("CSV field '" + s + "' contains a separator");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

double mean_bits(std::span<const double> log2_losses) {
  if (log2_losses.empty()) throw UsageError("mean_bits of no losses");
  double s = 0;
  for (double x : log2_losses) s += x;
  return s / static_cast<double>(log2_losses.size());
}

template <typename T>
EvalReport bpc(const hourglass::Model<T>& model, std::span<const std::int32_t> tokens, const EvalOptions& opts) {
  if (tokens.size() < 2) throw UsageError("bpc needs at least two tokens");
  ad::NoGradGuard no_grad;
  const std::size_t v = model.config().vocab;
  const auto windows = corpus::eval_windows(tokens.size() - 1, opts.window, opts.step, opts.strict);
  const std::size_t count = opts.max_windows ? std::min(opts.max_windows, windows.size()) : windows.size();

  EvalReport r;
  r.fingerprint = fingerprint(model.config().serialize());
  double total_bits = 0;
  std::size_t positions = 0, segments = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& w = windows[i];
    const auto fwd = model.forward(tokens.subspan(w.start, w.length), 1, w.length, {});
    const T* logits = fwd.logits.value().data();
    double bits = 0;
    for (std::size_t t = w.score_begin; t < w.score_end; ++t) {
      bits += row_bits(logits + (t - w.start) * v, v, tokens[t + 1]);
    }
    const std::size_t n = w.score_end - w.score_begin;
    r.window_bits.push_back(bits / static_cast<double>(n));
    total_bits += bits;
    r.scored += n;
    positions += w.length;
    segments += fwd.map.groups[0];
  }
  r.bpc = total_bits / static_cast<double>(r.scored);
  r.sf = static_cast<double>(positions) / static_cast<double>(segments);
  return r;
}

std::string fingerprint(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <typename T>
EntropyTrace entropy_trace(const hourglass::Model<T>& model, std::span<const std::int32_t> tokens, std::size_t k) {
  if (tokens.empty()) throw UsageError("entropy_trace needs at least one token");
  ad::NoGradGuard no_grad;
  const auto fwd = model.forward(tokens, 1, tokens.size(), {});
  const auto nats = boundary::entropy_from_logits(fwd.logits.value());
  EntropyTrace tr;
  tr.spikes = boundary::spike_boundaries(nats, k);
  tr.bits.reserve(nats.size());
  for (double h : nats) tr.bits.push_back(h / std::numbers::ln2);
  return tr;
}

void write_entropy_trace_csv(const std::filesystem::path& path, const EntropyTrace& trace, std::u32string_view text) {
  if (text.size() != trace.bits.size()) throw UsageError("entropy trace and text lengths differ");
  std::string out = "position,char,entropy_bits,spike\n";
  for (std::size_t t = 0; t < text.size(); ++t) {
    std::string ch;
    if (text[t] == U' ') {
      ch = "\\s";
    } else if (text[t] == U',') {
      ch = "\\c";
    } else if (text[t] == U'\n') {
      ch = "\\n";
    } else {
      utf8_append(ch, text[t]);
    }
    out += std::to_string(t) + "," + ch + "," + num(trace.bits[t]) + "," + std::to_string(trace.spikes[t]) + "\n";
  }
  write_file(path, out);
}

double spikes_near_whitespace(const EntropyTrace& trace, std::u32string_view text) {
  auto ws = [&](std::size_t i) { return i < text.size() && (text[i] == U' ' || text[i] == U'\n'); };
  std::size_t spikes = 0, near = 0;
  for (std::size_t t = 0; t < trace.spikes.size(); ++t) {
    if (!trace.spikes[t]) continue;
    ++spikes;
    near += ws(t) || (t > 0 && ws(t - 1)) || ws(t + 1);
  }
  return spikes ? static_cast<double>(near) / static_cast<double>(spikes) : 0.0;
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("paired_t_test: samples differ in length");
  if (a.size() < 2) throw UsageError("paired_t_test needs at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += b[i] - a[i];
  mean /= n;
  double ss = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (b[i] - a[i] - mean) * (b[i] - a[i] - mean);
  TTest r;
  r.df = n - 1;
  const double sd = std::sqrt(ss / r.df);
  if (sd == 0) {
    r.degenerate = true;
    if (mean == 0) {
      r.t = 0;
      r.p = 1;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p = 0;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  r.p = 2 * student_t_cdf(-std::abs(r.t), r.df);
  return r;
}

void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  std::string out = "method,setting,bpc,sf,seed\n";
  for (const auto& r : rows) {
    check_field(r.method);
    check_field(r.setting);
    out += r.method + "," + r.setting + "," + num(r.bpc) + "," + num(r.sf) + "," + std::to_string(r.seed) + "\n";
  }
  write_file(path, out);
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "method,setting,bpc,sf,seed") {
    throw DataError("'" + path.string() + "' does not start with the results header");
  }
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      rows.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stoull(f[4])});
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

std::string pareto_svg(std::span<const ResultRow> rows) {
  constexpr double W = 640, H = 420, left = 70, right = 170, top = 30, bottom = 60;
  double x0 = 1, x1 = 1, y0 = 1, y1 = 1;
  if (!rows.empty()) {
    x0 = x1 = rows[0].sf;
    y0 = y1 = rows[0].bpc;
  }
  for (const auto& r : rows) {
    x0 = std::min(x0, r.sf);
    x1 = std::max(x1, r.sf);
    y0 = std::min(y0, r.bpc);
    y1 = std::max(y1, r.bpc);
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double m = span > 0 ? 0.08 * span : 0.5;
    lo -= m;
    hi += m;
  };
  pad(x0, x1);
  pad(y0, y1);
  x0 = std::max(x0, 0.0);  // neither axis can go negative
  y0 = std::max(y0, 0.0);
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  std::map<std::string, std::size_t> series;
  for (const auto& r : rows) series.emplace(r.method, series.size());

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  char buf[32];
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    std::snprintf(buf, sizeof buf, "%.2f", xv);
    s << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << buf
      << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3f", yv);
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << buf
      << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" font-size=\"13\" text-anchor=\"middle\">"
    << "shortening factor</text>\n"
    << "<text x=\"18\" y=\"" << top + ph / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << top + ph / 2 << ")\">bits per character</text>\n";
  for (const auto& r : rows) {
    s << "<circle cx=\"" << px(r.sf) << "\" cy=\"" << py(r.bpc) << "\" r=\"4\" fill=\""
      << kColours[series[r.method] % std::size(kColours)] << "\"><title>" << xml_escape(r.method + " " + r.setting)
      << "</title></circle>\n";
  }
  for (const auto& [name, i] : series) {
    const double y = top + 12 + 18.0 * static_cast<double>(i);
    s << "<circle cx=\"" << W - right + 20 << "\" cy=\"" << y << "\" r=\"4\" fill=\""
      << kColours[i % std::size(kColours)] << "\"/>\n"
      << "<text x=\"" << W - right + 30 << "\" y=\"" << y + 4 << "\" font-size=\"12\">" << xml_escape(name)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void emit_report(std::span<const ResultRow> rows, const std::filesystem::path& dir) {
  if (rows.empty()) throw UsageError("emit_report needs at least one result");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory '" + dir.string() + "': " + ec.message());
  write_results_csv(dir / "results.csv", rows);
  write_file(dir / "pareto.svg", pareto_svg(rows));
}

std::string ablation_table(std::span<const AblationRow> rows) {
  std::string out =
      "| Segmentation method | AvgPooling BPC | AvgPooling SF | Subsampling BPC | Subsampling SF |\n"
      "|---|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %.3f | %.2f | %.3f | %.2f |\n", r.method.c_str(), r.mean_bpc, r.mean_sf,
                  r.subsample_bpc, r.subsample_sf);
    out += buf;
  }
  return out;
}

void write_ablation(std::span<const AblationRow> rows, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory '" + dir.string() + "': " + ec.message());
  std::string csv = "method,pooling,bpc,sf\n";
  for (const auto& r : rows) {
    check_field(r.method);
    csv += r.method + ",mean," + num(r.mean_bpc) + "," + num(r.mean_sf) + "\n";
    csv += r.method + ",subsample," + num(r.subsample_bpc) + "," + num(r.subsample_sf) + "\n";
  }
  write_file(dir / "ablation.csv", csv);
  write_file(dir / "ablation.md", ablation_table(rows));
}

#define DPT_INSTANTIATE_EVAL(T)                                                                                  \
  template EvalReport bpc<T>(const hourglass::Model<T>&, std::span<const std::int32_t>, const EvalOptions&); \
  template EntropyTrace entropy_trace<T>(const hourglass::Model<T>&, std::span<const std::int32_t>, std::size_t);

DPT_INSTANTIATE_EVAL(float)
DPT_INSTANTIATE_EVAL(double)

}  // namespace dpt::evaluation
