#include "commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <optional>

#include "dpt/corpus/corpus.hpp"
#include "dpt/error.hpp"
#include "dpt/evaluation/bench.hpp"
#include "dpt/evaluation/eval.hpp"
#include "dpt/hourglass/checkpoint.hpp"
#include "dpt/text_io.hpp"
#include "dpt/trainer/trainer.hpp"
#include "dpt/unigram/unigram.hpp"
#include "run_config.hpp"

namespace dpt::cli {

namespace fs = std::filesystem;
using hourglass::Method;

namespace {

// Exclusive ownership of a run directory for the life of the process.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / "lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw IoError("cannot open '" + path.string() + "': " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw DataError("run directory '" + dir.string() + "' is in use by another process");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::ftruncate(fd_, 0) != 0 || ::write(fd_, pid.data(), pid.size()) < 0) {
      // The lock itself is what matters; the pid is informational.
    }
  }
  ~RunLock() { ::close(fd_); }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

corpus::CleanerConfig cleaner_of(const RunConfig& cfg) {
  return cfg.cleaner.empty() ? corpus::CleanerConfig::english() : corpus::CleanerConfig::load(cfg.cleaner);
}

fs::path require(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw DataError("missing " + p.string() + " (" + hint + ")");
  return p;
}

corpus::CharVocab load_vocab(const RunConfig& cfg) {
  return corpus::CharVocab::load(require(fs::path(cfg.data_dir) / "vocab.txt", "run `dpt preprocess` first"));
}

std::string load_split_text(const RunConfig& cfg, const std::string& split) {
  return read_file(require(fs::path(cfg.data_dir) / (split + ".txt"), "run `dpt preprocess` first"));
}

std::vector<std::int32_t> load_split(const RunConfig& cfg, const std::string& split, const corpus::CharVocab& v) {
  return v.encode(load_split_text(cfg, split));
}

// Vocabulary size and whitespace ids always follow the data.
void resolve_model(hourglass::ModelConfig& m, const corpus::CharVocab& v) {
  m.vocab = v.size();
  m.whitespace_ids.clear();
  for (char32_t c : {U' ', U'\n'})
    if (v.contains(c)) m.whitespace_ids.push_back(v.id_of(c));
  m.validate();
}

std::string setting_of(const hourglass::ModelConfig& m, const RunConfig& cfg) {
  std::string s;
  switch (m.method) {
    case Method::kFixed: s = "k=" + std::to_string(m.fixed_k); break;
    case Method::kGumbel: s = "alpha=" + format_double(m.alpha); break;
    case Method::kEntropy: s = "k=" + std::to_string(m.entropy_k); break;
    case Method::kUnigram: s = "vocab=" + std::to_string(cfg.unigram_size); break;
    default: s = "-"; break;
  }
  if (m.pooling == hourglass::Pooling::kSubsample) s += ";pooling=subsample";
  return s;
}

struct LoadedModel {
  hourglass::ModelConfig config;
  std::unique_ptr<hourglass::Model<float>> model;
};

LoadedModel load_model(const fs::path& path) {
  const auto ckpt = hourglass::load_checkpoint(path);
  LoadedModel m;
  m.config = hourglass::ModelConfig::parse(ckpt.config_text);
  m.model = std::make_unique<hourglass::Model<float>>(m.config, 0);
  hourglass::restore_params(ckpt, m.model->params());
  return m;
}

std::u32string input_text(const RunConfig& cfg) {
  std::string text = cfg.text.empty() ? load_split_text(cfg, cfg.eval_split) : trim(clean_text(cfg.text, cleaner_of(cfg)));
  std::u32string u = utf8_decode(text);
  if (u.size() > cfg.text_len) u.resize(cfg.text_len);
  if (u.empty()) throw UsageError("no input text");
  return u;
}

int cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  const auto files = split_list(cfg.input);
  if (files.empty()) throw UsageError("preprocess needs --input=<file>[,<file>...]");
  const auto cleaner = cleaner_of(cfg);
  std::string joined;
  for (const auto& f : files) {
    joined += clean_text(read_file(f), cleaner);
    joined += ' ';
  }
  const std::u32string text = utf8_decode(trim(clean_text(joined, cleaner)));
  if (text.size() < 100) throw DataError("cleaned corpus has only " + std::to_string(text.size()) + " characters");
  const auto n = text.size();
  const auto n_valid = static_cast<std::size_t>(double(n) * cfg.valid_frac);
  const auto n_test = static_cast<std::size_t>(double(n) * cfg.test_frac);
  const std::size_t n_train = n - n_valid - n_test;
  const fs::path dir(cfg.data_dir);
  fs::create_directories(dir);
  write_file(dir / "train.txt", utf8_encode(text.substr(0, n_train)));
  write_file(dir / "valid.txt", utf8_encode(text.substr(n_train, n_valid)));
  write_file(dir / "test.txt", utf8_encode(text.substr(n_train + n_valid)));
  const auto vocab = corpus::CharVocab::from_text(utf8_encode(text));
  vocab.save(dir / "vocab.txt");

  std::size_t spaces = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) spaces += text[i] == U' ';
  out << "characters " << n << " (train " << n_train << ", valid " << n_valid << ", test " << n - n_train - n_valid
      << ")\nvocab " << vocab.size() << "\nwhitespace sf " << double(n) / double(spaces + 1) << "\n";
  return 0;
}

int cmd_train_unigram(const RunConfig& cfg, std::ostream& out) {
  const std::string text = load_split_text(cfg, "train");
  const auto vocab = unigram::train_unigram(text, cfg.unigram_size);
  const auto path = cfg.unigram_path();
  vocab.save(path);
  out << "pieces " << vocab.size() << " -> " << path.string() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, std::ostream& out) {
  const auto vocab = load_vocab(cfg);
  resolve_model(cfg.model, vocab);
  const fs::path run(cfg.run_dir);
  RunLock lock(run);
  write_file(run / "config.echo", cfg.serialize());

  trainer::TrainData data;
  const std::string train_text = load_split_text(cfg, "train");
  data.train = vocab.encode(train_text);
  data.valid = load_split(cfg, "valid", vocab);
  if (cfg.model.method == Method::kUnigram) {
    const auto uv = unigram::UnigramVocab::load(require(cfg.unigram_path(), "run `dpt train-unigram` first"));
    data.train_gold = unigram::gold_boundaries(train_text, uv, cfg.ws_own_group);
  }
  trainer::Trainer tr(cfg.model, cfg.optim, std::move(data), run);
  const auto last = run / "checkpoints" / "last.ckpt";
  if (cfg.resume && fs::exists(last)) {
    tr.resume(last);
    out << "resumed at step " << tr.steps_done() << "\n";
  }
  const std::size_t print_every = std::max<std::size_t>(cfg.optim.log_every, cfg.optim.total_steps / 20);
  const auto result = tr.run([&](const trainer::StepMetrics& m) {
    if (m.step % print_every == 0 || m.step == cfg.optim.total_steps) {
      out << "step " << m.step << " loss " << m.loss_total << " lm_bits " << m.loss_lm_bits << " sf " << m.sf
          << " " << m.wall_ms << " ms\n";
    }
  });

  std::string hist = "step,bpc,sf\n";
  for (const auto& v : result.validations)
    hist += std::to_string(v.step) + "," + format_double(v.bpc) + "," + format_double(v.sf) + "\n";
  write_file(run / "reports" / "validation.csv", hist);
  const auto& final_val = result.validations.back();
  const evaluation::ResultRow row{hourglass::method_name(cfg.model.method), setting_of(cfg.model, cfg), final_val.bpc,
                                  final_val.sf, cfg.optim.seed};
  evaluation::write_results_csv(run / "reports" / "results.csv", std::vector{row});
  out << "final validation bpc " << final_val.bpc << " sf " << final_val.sf << " (best " << result.best.bpc
      << " at step " << result.best.step << ") in " << result.wall_seconds << " s\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const auto loaded = load_model(cfg.checkpoint_path());
  const auto vocab = load_vocab(cfg);
  if (vocab.size() != loaded.config.vocab) throw DataError("checkpoint vocabulary does not match " + cfg.data_dir);
  const auto tokens = load_split(cfg, cfg.eval_split, vocab);
  evaluation::EvalOptions eo{cfg.eval_window, cfg.eval_step, cfg.strict_eval, cfg.eval_windows};
  auto rep = evaluation::bpc(*loaded.model, tokens, eo);
  rep.seed = cfg.optim.seed;
  const fs::path dir = cfg.out.empty() ? fs::path(cfg.run_dir) / "reports" : fs::path(cfg.out);
  const evaluation::ResultRow row{hourglass::method_name(loaded.config.method), setting_of(loaded.config, cfg),
                                  rep.bpc, rep.sf, cfg.optim.seed};
  evaluation::write_results_csv(dir / ("eval_" + cfg.eval_split + ".csv"), std::vector{row});
  out << cfg.eval_split << " bpc " << rep.bpc << " sf " << rep.sf << " scored " << rep.scored << " windows "
      << rep.window_bits.size() << " config " << rep.fingerprint << "\n";
  return 0;
}

int cmd_segment(const RunConfig& cfg, std::ostream& out) {
  const auto loaded = load_model(cfg.checkpoint_path());
  const auto vocab = load_vocab(cfg);
  const auto text = input_text(cfg);
  const auto tokens = vocab.encode(utf8_encode(text));
  ad::NoGradGuard no_grad;
  const auto fwd = loaded.model->forward(tokens, 1, tokens.size(), {});
  std::u32string seg;
  for (std::size_t t = 0; t < text.size(); ++t) {
    seg += text[t];
    if (fwd.bits[t] && t + 1 < text.size()) seg += U'|';
  }
  const std::string s = utf8_encode(seg) + "\n";
  if (cfg.out.empty()) {
    out << s;
  } else {
    write_file(cfg.out, s);
  }
  out << "segments " << fwd.map.groups[0] << " sf " << fwd.sf << "\n";
  return 0;
}

int cmd_entropy_trace(const RunConfig& cfg, std::ostream& out) {
  const auto loaded = load_model(cfg.checkpoint_path());
  const auto vocab = load_vocab(cfg);
  const auto text = input_text(cfg);
  const auto trace = evaluation::entropy_trace(*loaded.model, vocab.encode(utf8_encode(text)), loaded.config.entropy_k);
  const fs::path path = cfg.out.empty() ? fs::path(cfg.run_dir) / "reports" / "entropy_trace.csv" : fs::path(cfg.out);
  evaluation::write_entropy_trace_csv(path, trace, text);
  std::size_t spikes = 0;
  for (auto s : trace.spikes) spikes += s;
  out << "spikes " << spikes << " near whitespace " << evaluation::spikes_near_whitespace(trace, text) << " -> "
      << path.string() << "\n";
  return 0;
}

int cmd_bench(RunConfig cfg, std::ostream& out) {
  const auto vocab = load_vocab(cfg);
  resolve_model(cfg.model, vocab);
  const auto tokens = load_split(cfg, "train", vocab);
  evaluation::BenchOptions bo;
  bo.length = cfg.bench_length;
  bo.batch = cfg.bench_batch;
  bo.warmup = cfg.bench_warmup;
  bo.steps = cfg.bench_steps;
  bo.seed = cfg.optim.seed;
  std::vector<evaluation::BenchRecord> recs;
  std::vector<std::size_t> runs;
  for (std::size_t run = 0; run < cfg.bench_runs; ++run) {
    for (std::size_t k : parse_size_list("sf_grid", cfg.sf_grid)) {
      recs.push_back(evaluation::bench_setting(cfg.model, k, tokens, bo));
      runs.push_back(run);
      const auto& r = recs.back();
      out << "run " << run << " k " << k << " sf " << r.sf << " mean " << r.mean_ms << " ms (sd " << r.stddev_ms
          << ") peak " << r.peak_rss_kb / 1024 << " MB\n";
    }
  }
  const fs::path path = cfg.out.empty() ? fs::path(cfg.run_dir) / "reports" / "bench.csv" : fs::path(cfg.out);
  evaluation::write_bench_csv(path, recs, runs);
  return 0;
}

int cmd_report(const RunConfig& cfg, std::ostream& out) {
  const auto dirs = split_list(cfg.results);
  if (dirs.empty()) throw UsageError("report needs --results=<run dir>[,<run dir>...]");
  std::vector<evaluation::ResultRow> rows;
  for (const auto& d : dirs) {
    const fs::path p = fs::is_directory(d) ? fs::path(d) / "reports" / "results.csv" : fs::path(d);
    for (auto& r : evaluation::read_results_csv(require(p, "train the run first"))) rows.push_back(std::move(r));
  }
  const fs::path dir = cfg.out.empty() ? fs::path(cfg.run_dir) / "reports" : fs::path(cfg.out);
  evaluation::emit_report(rows, dir);

  // Mean-pool / subsample pairs of the same method and setting.
  const std::string tag = ";pooling=subsample";
  std::vector<evaluation::AblationRow> ablation;
  for (const auto& sub : rows) {
    if (sub.setting.size() < tag.size() || sub.setting.compare(sub.setting.size() - tag.size(), tag.size(), tag) != 0)
      continue;
    const std::string base = sub.setting.substr(0, sub.setting.size() - tag.size());
    for (const auto& mean : rows) {
      if (mean.method == sub.method && mean.setting == base) {
        std::string name = sub.method;
        if (sub.method == "fixed") name += " (" + base + ")";
        ablation.push_back({name, mean.bpc, mean.sf, sub.bpc, sub.sf});
        break;
      }
    }
  }
  if (!ablation.empty()) {
    evaluation::write_ablation(ablation, dir);
    out << evaluation::ablation_table(ablation);
  }
  out << rows.size() << " results -> " << (dir / "results.csv").string() << ", " << (dir / "pareto.svg").string()
      << "\n";
  return 0;
}

struct Cli {
  CLI::App app{"Dynamic-pooling hourglass language models", "dpt"};
  std::map<std::string, std::string> values;
  std::string config_file;
  std::vector<std::pair<std::string, CLI::App*>> commands;

  Cli() {
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.set_help_all_flag("--help-all", "Show every option");
    app.add_option("--config", config_file, "key = value run config file (e.g. a run's config.echo)");
    const RunConfig defaults;
    for (const auto& key : RunConfig::keys()) {
      const std::string def = defaults.get(key);
      const std::string help = RunConfig::describe(key) + (def.empty() ? "" : " [" + def + "]");
      if (RunConfig::is_flag(key)) {
        app.add_flag("--" + flag_of(key) + "{true}", values[key], help)
            ->group("Run config")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      } else {
        app.add_option("--" + flag_of(key), values[key], help)
            ->group("Run config")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      }
    }
    const std::pair<const char*, const char*> subs[] = {
        {"preprocess", "Clean raw text, split train/valid/test and build the character vocabulary"},
        {"train-unigram", "Train the unigram subword vocabulary on the training split"},
        {"train", "Train a model into run_dir"},
        {"eval", "Bits per character of a checkpoint on eval_split"},
        {"segment", "Print the segmentation a checkpoint assigns to text"},
        {"entropy-trace", "Write per-position predictive entropies and spikes as CSV"},
        {"bench", "Train-step time and peak memory for each fixed shortening factor in sf_grid"},
        {"report", "Merge run results into results.csv and pareto.svg (plus the pooling ablation table)"},
    };
    for (const auto& [name, desc] : subs) commands.emplace_back(name, app.add_subcommand(name, desc));
  }

  RunConfig resolve() const {
    RunConfig cfg;
    auto given = [&](const std::string& k) {
      auto it = values.find(k);
      return it != values.end() && !it->second.empty();
    };
    // Config file, then the profile flags, then every other flag.
    if (!config_file.empty()) {
      for (const auto& [k, v] : parse_key_values(read_file(config_file), config_file)) cfg.set(k, v);
    }
    if (given("preset")) cfg.set("preset", values.at("preset"));
    if (given("paper_config")) cfg.set("paper_config", values.at("paper_config"));
    for (const auto& key : RunConfig::keys()) {
      if (key == "preset" || key == "paper_config") continue;
      if (given(key)) cfg.set(key, values.at(key));
    }
    cfg.validate();
    return cfg;
  }
};

}  // namespace

std::string flag_of(const std::string& key) {
  std::string f = key;
  for (auto& c : f)
    if (c == '_') c = '-';
  return f;
}

std::vector<std::string> cli_flags() {
  Cli cli;
  std::vector<std::string> out;
  for (const CLI::Option* o : cli.app.get_options()) {
    for (const auto& n : o->get_lnames()) out.push_back(n);
  }
  return out;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli;
  if (args.empty()) {
    err << cli.app.help();
    return 1;
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    cli.app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << cli.app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << cli.app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << cli.app.help();
    return 1;
  }
  try {
    RunConfig cfg = cli.resolve();
    for (const auto& [name, sub] : cli.commands) {
      if (!sub->parsed()) continue;
      if (name == "preprocess") return cmd_preprocess(cfg, out);
      if (name == "train-unigram") return cmd_train_unigram(cfg, out);
      if (name == "train") return cmd_train(cfg, out);
      if (name == "eval") return cmd_eval(cfg, out);
      if (name == "segment") return cmd_segment(cfg, out);
      if (name == "entropy-trace") return cmd_entropy_trace(cfg, out);
      if (name == "bench") return cmd_bench(cfg, out);
      if (name == "report") return cmd_report(cfg, out);
    }
    throw InternalError("no subcommand dispatched");
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kInternal);
  }
}

}  // namespace dpt::cli
