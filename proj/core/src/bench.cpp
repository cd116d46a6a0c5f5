#include "dpt/evaluation/bench.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpt/error.hpp"
#include "dpt/hourglass/model.hpp"
#include "dpt/text_io.hpp"
#include "dpt/trainer/trainer.hpp"

namespace dpt::evaluation {

std::size_t peak_rss_kb() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) return std::stoull(line.substr(6));
  }
  return 0;
}

void reset_peak_rss() {
  std::ofstream out("/proc/self/clear_refs");
  out << "5";
}

namespace {

BenchRecord measure(const hourglass::ModelConfig& base, std::size_t k, std::span<const std::int32_t> tokens,
                    const BenchOptions& opts) {
  const std::size_t B = opts.batch, L = opts.length;
  if (tokens.size() < B * (L + 1)) throw DataError("bench needs at least batch * (length + 1) tokens");
  auto cfg = base;
  cfg.method = hourglass::Method::kFixed;
  cfg.fixed_k = k;
  hourglass::Model<float> model(cfg, opts.seed);
  trainer::Adam<float> adam(model.params(), 0.9, 0.999, 1e-8);
  ad::Rng rng(opts.seed);
  std::vector<std::int32_t> inputs, targets;
  for (std::size_t b = 0; b < B; ++b) {
    const auto row = tokens.subspan(b * (L + 1), L + 1);
    inputs.insert(inputs.end(), row.begin(), row.end() - 1);
    targets.insert(targets.end(), row.begin() + 1, row.end());
  }
  hourglass::ForwardOptions fo;
  fo.training = true;
  fo.rng = &rng;

  BenchRecord rec;
  rec.sf_setting = k;
  std::vector<double> ms;
  reset_peak_rss();
  for (std::size_t s = 0; s < opts.warmup + opts.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    auto fwd = model.forward(inputs, B, L, fo);
    auto parts = model.loss(fwd, targets, {});
    model.params().zero_grad();
    ad::backward(parts.total);
    trainer::clip_grad_norm(model.params(), 0.25);
    adam.step(model.params(), 2.5e-4);
    const double dt = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rec.sf = fwd.sf;
    if (s >= opts.warmup) ms.push_back(dt);
  }
  double mean = 0;
  for (double x : ms) mean += x;
  mean /= double(ms.size());
  double var = 0;
  for (double x : ms) var += (x - mean) * (x - mean);
  rec.mean_ms = mean;
  rec.stddev_ms = ms.size() > 1 ? std::sqrt(var / double(ms.size() - 1)) : 0;
  rec.peak_rss_kb = peak_rss_kb();
  return rec;
}

}  // namespace

BenchRecord bench_setting(const hourglass::ModelConfig& base, std::size_t k, std::span<const std::int32_t> tokens,
                          const BenchOptions& opts) {
  if (opts.steps == 0) throw UsageError("bench needs at least one measured step");
  if (!opts.isolate) return measure(base, k, tokens, opts);

  int fds[2];
  if (pipe(fds) != 0) throw InternalError(std::string("pipe failed: ") + std::strerror(errno));
  const pid_t pid = fork();
  if (pid < 0) throw InternalError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    close(fds[0]);
    std::string msg;
    int code = 0;
    try {
      const auto r = measure(base, k, tokens, opts);
      std::ostringstream o;
      o << "ok " << r.sf_setting << " " << format_double(r.sf) << " " << format_double(r.mean_ms) << " "
        << format_double(r.stddev_ms) << " " << r.peak_rss_kb;
      msg = o.str();
    } catch (const std::exception& e) {
      msg = std::string("error ") + e.what();
      code = 1;
    }
    const ssize_t n = write(fds[1], msg.data(), msg.size());
    close(fds[1]);
    _exit(n == static_cast<ssize_t>(msg.size()) ? code : 2);
  }
  close(fds[1]);
  std::string msg;
  char buf[512];
  ssize_t n;
  while ((n = read(fds[0], buf, sizeof buf)) > 0) msg.append(buf, static_cast<std::size_t>(n));
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  std::istringstream in(msg);
  std::string tag;
  in >> tag;
  if (tag != "ok") throw InternalError("bench child failed: " + (msg.empty() ? std::string("no output") : msg));
  BenchRecord r;
  in >> r.sf_setting >> r.sf >> r.mean_ms >> r.stddev_ms >> r.peak_rss_kb;
  if (!in) throw InternalError("bench child sent a malformed record: " + msg);
  return r;
}

void write_bench_csv(const std::filesystem::path& path, std::span<const BenchRecord> records,
                     std::span<const std::size_t> runs) {
  if (records.size() != runs.size()) throw UsageError("write_bench_csv: one run index per record");
  std::string out = "sf_setting,sf,run,mean_ms,stddev_ms,peak_rss_kb\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out += std::to_string(r.sf_setting) + "," + format_double(r.sf) + "," + std::to_string(runs[i]) + "," +
           format_double(r.mean_ms) + "," + format_double(r.stddev_ms) + "," + std::to_string(r.peak_rss_kb) + "\n";
  }
  write_file(path, out);
}

}  // namespace dpt::evaluation
