#include "run_config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"

namespace dpt::cli {

namespace {

const std::vector<std::string>& own_keys() {
  static const std::vector<std::string> k = {
      "preset",      "paper_config", "data_dir",     "run_dir",      "input",        "cleaner",
      "valid_frac",  "test_frac",    "unigram_vocab", "unigram_size", "ws_own_group", "resume",
      "checkpoint",  "eval_split",   "eval_window",  "eval_step",    "eval_windows", "strict_eval",
      "text",        "text_len",     "out",          "sf_grid",      "bench_length", "bench_batch",
      "bench_warmup", "bench_steps", "bench_runs",   "results"};
  return k;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid value '" + v + "' for " + key + " (expected true or false)");
}

std::string lookup(const std::string& text, const std::string& key) {
  for (const auto& [k, v] : parse_key_values(text, "config")) {
    if (k == key) return v;
  }
  throw InternalError("key '" + key + "' missing from its own serialization");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> k = own_keys();
    k.erase(k.begin() + 2, k.end());  // preset, paper_config lead
    for (const auto& m : hourglass::ModelConfig::keys()) k.push_back(m);
    for (const auto& o : trainer::OptimConfig::keys()) k.push_back(o);
    for (std::size_t i = 2; i < own_keys().size(); ++i) k.push_back(own_keys()[i]);
    return k;
  }();
  return all;
}

bool RunConfig::is_flag(const std::string& key) {
  return key == "paper_config" || key == "ws_own_group" || key == "resume" || key == "strict_eval";
}

std::string RunConfig::describe(const std::string& key) {
  static const std::map<std::string, std::string> d = {
      {"preset", "english, finnish or hebrew hyper-parameter profile"},
      {"paper_config", "full-size model and schedule instead of the desk config"},
      {"vocab", "character vocabulary size (taken from data_dir when training)"},
      {"d", "model width"},
      {"ff", "feed-forward width"},
      {"heads", "attention heads"},
      {"n1", "layers before shortening"},
      {"n2", "layers on the shortened sequence"},
      {"n3", "layers after up-sampling"},
      {"dropout", "dropout rate"},
      {"method", "vanilla, fixed, gumbel, entropy, unigram or whitespace"},
      {"fixed_k", "segment length of the fixed method"},
      {"pooling", "mean or subsample"},
      {"tau", "Gumbel-sigmoid temperature"},
      {"alpha", "prior boundary rate of the gumbel method"},
      {"prior_weight", "weight of the binomial prior loss"},
      {"bce_weight", "weight of the boundary cross-entropy"},
      {"entropy_k", "neighbourhood of the entropy spike rule"},
      {"whitespace_ids", "whitespace token ids (taken from data_dir when training)"},
      {"lr", "peak learning rate"},
      {"beta1", "Adam beta1"},
      {"beta2", "Adam beta2"},
      {"eps", "Adam epsilon"},
      {"clip", "global gradient-norm clip"},
      {"warmup_steps", "linear warm-up steps"},
      {"total_steps", "training steps"},
      {"batch", "sequences per step"},
      {"chunk_len", "characters per training sequence"},
      {"seed", "seed of initialization, batching and noise"},
      {"log_every", "steps between metrics.csv rows"},
      {"val_every", "steps between validations (0: every 5% of training)"},
      {"entropy_warm_start", "fraction of training on whitespace targets (entropy method)"},
      {"val_window", "validation window length during training"},
      {"val_step", "validation window stride during training"},
      {"val_windows", "validation windows per check (0: all)"},
      {"data_dir", "directory of train/valid/test.txt, vocab.txt and unigram.vocab"},
      {"run_dir", "run directory: config.echo, metrics.csv, checkpoints/, reports/"},
      {"input", "comma-separated raw text files (preprocess)"},
      {"cleaner", "cleaner config file (default: English a-z and space)"},
      {"valid_frac", "validation share of the corpus"},
      {"test_frac", "test share of the corpus"},
      {"unigram_vocab", "unigram vocabulary file (default: <data_dir>/unigram.vocab)"},
      {"unigram_size", "unigram vocabulary size"},
      {"ws_own_group", "whitespace forms its own unigram segment"},
      {"resume", "continue from checkpoints/last.ckpt"},
      {"checkpoint", "checkpoint to load (default: <run_dir>/checkpoints/best.ckpt)"},
      {"eval_split", "train, valid or test"},
      {"eval_window", "evaluation window length"},
      {"eval_step", "evaluation stride; the last eval_step positions of a window are scored"},
      {"eval_windows", "evaluate only the first N windows (0: all)"},
      {"strict_eval", "score every position of every window"},
      {"text", "input text of segment and entropy-trace (default: start of eval_split)"},
      {"text_len", "characters of input for segment and entropy-trace"},
      {"out", "output file or directory of the command"},
      {"sf_grid", "fixed shortening factors to bench"},
      {"bench_length", "bench sequence length"},
      {"bench_batch", "bench batch size"},
      {"bench_warmup", "untimed bench steps"},
      {"bench_steps", "timed bench steps"},
      {"bench_runs", "repetitions of the bench grid"},
      {"results", "comma-separated run directories or results.csv files (report)"},
  };
  const auto it = d.find(key);
  if (it == d.end()) throw InternalError("no description for config key '" + key + "'");
  return it->second;
}

const std::vector<std::string>& RunConfig::presets() {
  static const std::vector<std::string> p = {"english", "finnish", "hebrew"};
  return p;
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "english") {
    model.alpha = 0.2;
    unigram_size = 10000;
  } else if (name == "finnish") {
    model.alpha = 0.37;
    unigram_size = 200;
  } else if (name == "hebrew") {
    model.alpha = 0.2;
    unigram_size = 200;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected english, finnish or hebrew)");
  }
  preset = name;
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (model.set(key, v) || optim.set(key, v)) return;
  if (key == "preset") apply_preset(v);
  else if (key == "paper_config") {
    paper_config = parse_bool(key, v);
    if (paper_config) {
      const auto method = model.method;
      model = hourglass::ModelConfig::paper();
      model.method = method;
      optim = trainer::OptimConfig::paper();
      eval_window = 2048;
      eval_step = 512;
    }
  } else if (key == "data_dir") data_dir = v;
  else if (key == "run_dir") run_dir = v;
  else if (key == "input") input = v;
  else if (key == "cleaner") cleaner = v;
  else if (key == "valid_frac") valid_frac = parse_number<double>(key, v);
  else if (key == "test_frac") test_frac = parse_number<double>(key, v);
  else if (key == "unigram_vocab") unigram_vocab = v;
  else if (key == "unigram_size") unigram_size = parse_number<std::size_t>(key, v);
  else if (key == "ws_own_group") ws_own_group = parse_bool(key, v);
  else if (key == "resume") resume = parse_bool(key, v);
  else if (key == "checkpoint") checkpoint = v;
  else if (key == "eval_split") eval_split = v;
  else if (key == "eval_window") eval_window = parse_number<std::size_t>(key, v);
  else if (key == "eval_step") eval_step = parse_number<std::size_t>(key, v);
  else if (key == "eval_windows") eval_windows = parse_number<std::size_t>(key, v);
  else if (key == "strict_eval") strict_eval = parse_bool(key, v);
  else if (key == "text") text = v;
  else if (key == "text_len") text_len = parse_number<std::size_t>(key, v);
  else if (key == "out") out = v;
  else if (key == "sf_grid") {
    parse_size_list(key, v);
    sf_grid = v;
  } else if (key == "bench_length") bench_length = parse_number<std::size_t>(key, v);
  else if (key == "bench_batch") bench_batch = parse_number<std::size_t>(key, v);
  else if (key == "bench_warmup") bench_warmup = parse_number<std::size_t>(key, v);
  else if (key == "bench_steps") bench_steps = parse_number<std::size_t>(key, v);
  else if (key == "bench_runs") bench_runs = parse_number<std::size_t>(key, v);
  else if (key == "results") results = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  const auto& mk = hourglass::ModelConfig::keys();
  if (std::find(mk.begin(), mk.end(), key) != mk.end()) return lookup(model.serialize(), key);
  const auto& ok = trainer::OptimConfig::keys();
  if (std::find(ok.begin(), ok.end(), key) != ok.end()) return lookup(optim.serialize(), key);
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  if (key == "preset") return preset;
  if (key == "paper_config") return b(paper_config);
  if (key == "data_dir") return data_dir;
  if (key == "run_dir") return run_dir;
  if (key == "input") return input;
  if (key == "cleaner") return cleaner;
  if (key == "valid_frac") return format_double(valid_frac);
  if (key == "test_frac") return format_double(test_frac);
  if (key == "unigram_vocab") return unigram_vocab;
  if (key == "unigram_size") return std::to_string(unigram_size);
  if (key == "ws_own_group") return b(ws_own_group);
  if (key == "resume") return b(resume);
  if (key == "checkpoint") return checkpoint;
  if (key == "eval_split") return eval_split;
  if (key == "eval_window") return std::to_string(eval_window);
  if (key == "eval_step") return std::to_string(eval_step);
  if (key == "eval_windows") return std::to_string(eval_windows);
  if (key == "strict_eval") return b(strict_eval);
  if (key == "text") return text;
  if (key == "text_len") return std::to_string(text_len);
  if (key == "out") return out;
  if (key == "sf_grid") return sf_grid;
  if (key == "bench_length") return std::to_string(bench_length);
  if (key == "bench_batch") return std::to_string(bench_batch);
  if (key == "bench_warmup") return std::to_string(bench_warmup);
  if (key == "bench_steps") return std::to_string(bench_steps);
  if (key == "bench_runs") return std::to_string(bench_runs);
  if (key == "results") return results;
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  if (!(valid_frac > 0 && test_frac > 0 && valid_frac + test_frac < 1)) {
    throw ConfigError("valid_frac and test_frac must be positive and sum below 1");
  }
  if (eval_split != "train" && eval_split != "valid" && eval_split != "test") {
    throw ConfigError("eval_split must be train, valid or test");
  }
  if (eval_window == 0 || eval_step == 0 || eval_step > eval_window) {
    throw ConfigError("evaluation needs 0 < eval_step <= eval_window");
  }
  if (unigram_size == 0) throw ConfigError("unigram_size must be positive");
  if (bench_length == 0 || bench_batch == 0 || bench_steps == 0 || bench_runs == 0) {
    throw ConfigError("bench sizes must be positive");
  }
  if (parse_size_list("sf_grid", sf_grid).empty()) throw ConfigError("sf_grid is empty");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& k : keys()) out += k + "=" + get(k) + "\n";
  return out;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  for (const auto& [k, v] : parse_key_values(text, "run config")) c.set(k, v);
  return c;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? std::filesystem::path(run_dir) / "checkpoints" / "best.ckpt"
                            : std::filesystem::path(checkpoint);
}

std::filesystem::path RunConfig::unigram_path() const {
  return unigram_vocab.empty() ? std::filesystem::path(data_dir) / "unigram.vocab"
                               : std::filesystem::path(unigram_vocab);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(value)) {
    const auto n = parse_number<std::size_t>(key, item);
    if (n == 0) throw ConfigError(key + " entries must be positive");
    out.push_back(n);
  }
  return out;
}

}  // namespace dpt::cli
