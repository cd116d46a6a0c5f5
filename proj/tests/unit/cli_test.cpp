#include <fcntl.h>
#include <gtest/gtest.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "dpt/evaluation/eval.hpp"
#include "dpt/text_io.hpp"
#include "run_config.hpp"

using namespace dpt;
using namespace dpt::cli;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run dpt_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// A few hundred words of lowercase text with some repetition.
std::string sample_text() {
  const char* words[] = {"the", "cat", "sat", "on", "a", "mat", "and", "then", "ran", "off", "into", "garden"};
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
  std::string s;
  while (s.size() < 20000) {
    s += words[pick(rng)];
    s += ' ';
  }
  return s;
}

// Small model and schedule shared by every training invocation below.
std::vector<std::string> tiny_flags(const fs::path& dir) {
  return {"--data-dir=" + (dir / "data").string(),
          "--d=16",
          "--ff=32",
          "--heads=2",
          "--total-steps=6",
          "--warmup-steps=2",
          "--batch=2",
          "--chunk-len=32",
          "--val-window=64",
          "--val-step=32",
          "--val-windows=2",
          "--unigram-size=40"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dpt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void preprocess() {
    write_file(dir_ / "raw.txt", sample_text());
    const auto r = dpt_run({"preprocess", "--input=" + (dir_ / "raw.txt").string(),
                            "--data-dir=" + (dir_ / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

}  // namespace

TEST(RunConfigTest, EveryHelpFlagIsAConfigKeyAndBack) {
  std::set<std::string> flags;
  for (const auto& f : cli_flags()) {
    if (f != "help" && f != "help-all" && f != "config") flags.insert(f);
  }
  std::set<std::string> keys;
  for (const auto& k : RunConfig::keys()) keys.insert(flag_of(k));
  EXPECT_EQ(flags, keys);
  EXPECT_EQ(keys.size(), RunConfig::keys().size());
  EXPECT_EQ(flag_of("fixed_k"), "fixed-k");
}

TEST(RunConfigTest, SerializeParseRoundTripAndHelpText) {
  RunConfig c;
  c.set("method", "unigram");
  c.set("unigram_size", "500");
  c.set("strict_eval", "true");
  c.set("sf_grid", "1,4");
  const auto back = RunConfig::parse(c.serialize());
  EXPECT_EQ(back.serialize(), c.serialize());
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.optim, c.optim);
  for (const auto& k : RunConfig::keys()) EXPECT_FALSE(RunConfig::describe(k).empty()) << k;
  EXPECT_THROW(c.set("nonsense", "1"), ConfigError);
  EXPECT_THROW(c.set("sf_grid", "1,x"), ConfigError);
  EXPECT_THROW(c.set("resume", "maybe"), ConfigError);
}

TEST(RunConfigTest, PresetsAndPaperConfig) {
  RunConfig c;
  EXPECT_DOUBLE_EQ(c.model.alpha, 0.2);
  EXPECT_EQ(c.unigram_size, 10000u);
  c.set("preset", "finnish");
  EXPECT_DOUBLE_EQ(c.model.alpha, 0.37);
  EXPECT_EQ(c.unigram_size, 200u);
  c.set("preset", "hebrew");
  EXPECT_EQ(c.unigram_size, 200u);
  EXPECT_THROW(c.set("preset", "klingon"), ConfigError);
  c.set("method", "entropy");
  c.set("paper_config", "true");
  EXPECT_EQ(c.model.method, hourglass::Method::kEntropy);
  EXPECT_EQ(c.model, [] {
    auto p = hourglass::ModelConfig::paper();
    p.method = hourglass::Method::kEntropy;
    return p;
  }());
  EXPECT_EQ(c.optim, trainer::OptimConfig::paper());
}

TEST(DispatchTest, EmptyArgsPrintUsageAndFail) {
  const auto r = dpt_run({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(DispatchTest, HelpSucceedsAndListsSubcommands) {
  const auto r = dpt_run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"preprocess", "train-unigram", "train", "eval", "segment", "entropy-trace", "bench", "report"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(DispatchTest, UsageErrorsExitOne) {
  EXPECT_EQ(dpt_run({"train", "--bogus=1"}).code, 1);
  EXPECT_EQ(dpt_run({"fly"}).code, 1);
  EXPECT_EQ(dpt_run({"train", "--fixed-k=abc"}).code, 1);
  EXPECT_EQ(dpt_run({"train", "--method=bpe"}).code, 1);
  EXPECT_EQ(dpt_run({"preprocess"}).code, 1);
}

TEST(DispatchTest, MissingCheckpointExitsTwo) {
  const auto r = dpt_run({"eval", "--checkpoint", "missing"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checkpoint not found"), std::string::npos);
}

TEST_F(CliTest, MissingDataExitsTwo) {
  const auto r = dpt_run({"train", "--data-dir=" + (dir_ / "nowhere").string(), "--run-dir=" + dir_.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dpt preprocess"), std::string::npos);
}

TEST_F(CliTest, TrainEchoesConfigAndFillsRunDirectory) {
  preprocess();
  const auto run = dir_ / "run";
  const auto r = dpt_run(cat({"train", "--method=gumbel", "--alpha=0.2", "--run-dir=" + run.string()}, tiny_flags(dir_)));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto echo = read_file(run / "config.echo");
  EXPECT_NE(echo.find("\nalpha=0.2\n"), std::string::npos);
  EXPECT_NE(echo.find("\nmethod=gumbel\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(run / "checkpoints" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(run / "metrics.csv"));
  EXPECT_TRUE(fs::exists(run / "lock"));
  const auto rows = evaluation::read_results_csv(run / "reports" / "results.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].method, "gumbel");
  EXPECT_EQ(rows[0].setting, "alpha=0.2");

  // The echo reproduces the run when fed back as a config file.
  const auto again = dpt_run({"train", "--config=" + (run / "config.echo").string(),
                              "--run-dir=" + (dir_ / "again").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(read_file(dir_ / "again" / "config.echo"),
            [&] {
              auto e = echo;
              const auto from = "run_dir=" + run.string();
              e.replace(e.find(from), from.size(), "run_dir=" + (dir_ / "again").string());
              return e;
            }());
}

TEST_F(CliTest, LockedRunDirectoryIsRefused) {
  preprocess();
  const auto run = dir_ / "run";
  fs::create_directories(run);
  const int fd = ::open((run / "lock").c_str(), O_RDWR | O_CREAT, 0644);
  ASSERT_GE(fd, 0);
  // flock locks belong to the open file description, so a second open in
  // this process conflicts just like another process would.
  ASSERT_EQ(::flock(fd, LOCK_EX | LOCK_NB), 0);
  const auto r = dpt_run(cat({"train", "--run-dir=" + run.string()}, tiny_flags(dir_)));
  ::close(fd);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("in use"), std::string::npos);
}

TEST_F(CliTest, FullPipelineFromRawTextToReport) {
  preprocess();
  ASSERT_TRUE(fs::exists(dir_ / "data" / "vocab.txt"));
  const auto tiny = tiny_flags(dir_);
  ASSERT_EQ(dpt_run(cat({"train-unigram"}, tiny)).code, 0);
  ASSERT_TRUE(fs::exists(dir_ / "data" / "unigram.vocab"));

  const auto mean = dir_ / "mean", sub = dir_ / "sub", uni = dir_ / "uni";
  ASSERT_EQ(dpt_run(cat({"train", "--method=entropy", "--run-dir=" + mean.string()}, tiny)).code, 0);
  ASSERT_EQ(dpt_run(cat({"train", "--method=entropy", "--pooling=subsample", "--run-dir=" + sub.string()}, tiny)).code,
            0);
  const auto u = dpt_run(cat({"train", "--method=unigram", "--run-dir=" + uni.string()}, tiny));
  ASSERT_EQ(u.code, 0) << u.err;

  const auto ev = dpt_run({"eval", "--run-dir=" + uni.string(), "--data-dir=" + (dir_ / "data").string(),
                           "--eval-window=64", "--eval-step=32", "--eval-windows=3"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("test bpc"), std::string::npos);
  EXPECT_TRUE(fs::exists(uni / "reports" / "eval_test.csv"));

  const auto seg = dpt_run({"segment", "--run-dir=" + uni.string(), "--data-dir=" + (dir_ / "data").string(),
                            "--text=The cat sat.", "--text-len=50"});
  ASSERT_EQ(seg.code, 0) << seg.err;
  std::string stripped;
  const auto first_line = seg.out.substr(0, seg.out.find('\n'));
  for (char c : first_line)
    if (c != '|') stripped += c;
  EXPECT_EQ(stripped, "the cat sat");

  const auto tr = dpt_run({"entropy-trace", "--run-dir=" + mean.string(), "--data-dir=" + (dir_ / "data").string(),
                           "--text-len=64"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(mean / "reports" / "entropy_trace.csv"));

  const auto rep = dpt_run({"report", "--results=" + mean.string() + "," + sub.string() + "," + uni.string(),
                            "--out=" + (dir_ / "report").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(evaluation::read_results_csv(dir_ / "report" / "results.csv").size(), 3u);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "pareto.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "report" / "ablation.md"));
  EXPECT_NE(rep.out.find("| entropy |"), std::string::npos);
}

TEST_F(CliTest, BenchWritesOneRowPerSettingAndRun) {
  preprocess();
  const auto r = dpt_run(cat({"bench", "--run-dir=" + dir_.string(), "--sf-grid=1,2", "--bench-length=32",
                              "--bench-warmup=1", "--bench-steps=2", "--bench-runs=2"},
                             tiny_flags(dir_)));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(dir_ / "reports" / "bench.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
