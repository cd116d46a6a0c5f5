#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dpt/hourglass/config.hpp"
#include "dpt/trainer/trainer.hpp"

namespace dpt::cli {

// Everything one invocation needs: model, optimizer, paths and per-command
// settings. Serialized as `key=value` lines; `preset` and `paper_config`
// come first so that the keys after them override what they set.
struct RunConfig {
  hourglass::ModelConfig model;
  trainer::OptimConfig optim;

  std::string preset = "english";
  bool paper_config = false;

  std::string data_dir = "data/processed";
  std::string run_dir = "runs/default";
  std::string input;    // comma-separated raw text files
  std::string cleaner;  // cleaner config file; empty: English text8 rules
  double valid_frac = 0.05;
  double test_frac = 0.05;

  std::string unigram_vocab;  // empty: <data_dir>/unigram.vocab
  std::size_t unigram_size = 10000;
  bool ws_own_group = false;

  bool resume = false;

  std::string checkpoint;  // empty: <run_dir>/checkpoints/best.ckpt
  std::string eval_split = "test";
  std::size_t eval_window = 2048;
  std::size_t eval_step = 512;
  std::size_t eval_windows = 0;  // 0: all
  bool strict_eval = false;

  std::string text;  // segment / entropy-trace input; empty: start of eval_split
  std::size_t text_len = 2000;
  std::string out;   // output file or directory of the command

  std::string sf_grid = "1,2,4";
  std::size_t bench_length = 2048;
  std::size_t bench_batch = 1;
  std::size_t bench_warmup = 5;
  std::size_t bench_steps = 20;
  std::size_t bench_runs = 3;

  std::string results;  // comma-separated run directories for `report`

  // Model keys, optimizer keys, then the keys above.
  static const std::vector<std::string>& keys();
  static bool is_flag(const std::string& key);  // boolean key
  static std::string describe(const std::string& key);  // one-line help

  // Unknown key or bad value: ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Named hyper-parameter profiles: english, finnish, hebrew.
  void apply_preset(const std::string& name);
  static const std::vector<std::string>& presets();

  void validate() const;
  std::string serialize() const;
  static RunConfig parse(std::string_view text);

  std::filesystem::path checkpoint_path() const;
  std::filesystem::path unigram_path() const;
};

// "1,2,4" -> {1, 2, 4}; ConfigError on junk.
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
std::vector<std::string> split_list(const std::string& value);

}  // namespace dpt::cli
