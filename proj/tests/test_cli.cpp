#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "ellip/commands.hpp"

using namespace ellip;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSmallModel{
    "layers=2", "heads=2", "head_dim=4", "embed=8", "ff=16", "context=16", "batch=2", "corpus_length=3000",
    "symbols=6", "eval_windows=4"};

class CliTest : public ::testing::Test {
 protected:
  fs::path root;
  std::ostringstream log;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root = fs::temp_directory_path() / ("ellip_cli_" + std::string(info->name()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  int run(const std::string& cmd, const std::string& out, std::vector<std::string> overrides,
          const std::string& config_file = "", std::size_t jobs = 1) {
    cli::CommandContext ctx;
    ctx.out_dir = root / out;
    ctx.jobs = jobs;
    ctx.log = &log;
    return cli::run_command(cmd, config_file, overrides, ctx);
  }

  std::string read(const std::string& rel) { return csv::read_file(root / rel); }

  static std::vector<std::string> with(std::vector<std::string> base, const std::vector<std::string>& extra) {
    base.insert(base.end(), extra.begin(), extra.end());
    return base;
  }
};

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_F(CliTest, MissingKeyNamesTheKey) {
  std::string text;
  for (const auto& k : cli::nw_sparse_schema())
    if (k.key != "n") text += k.key + " = " + k.default_value + "\n";
  csv::write_file(root / "cfg.txt", text);
  try {
    run("nw-sparse", "out", {}, (root / "cfg.txt").string());
    FAIL() << "expected a usage error";
  } catch (const UsageError& e) {
    EXPECT_EQ(e.key, "n");
    EXPECT_NE(std::string(e.what()).find("'n'"), std::string::npos);
  }
}

TEST_F(CliTest, UnknownAndDuplicateKeysRejected) {
  EXPECT_THROW(run("verify", "out", {"bogus=1"}), UsageError);
  std::string text;
  for (const auto& k : cli::verify_schema()) text += k.key + " = " + k.default_value + "\n";
  csv::write_file(root / "dup.txt", text + "seed = 3\n");
  try {
    run("verify", "out", {}, (root / "dup.txt").string());
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_EQ(e.key, "seed");
  }
  EXPECT_THROW(run("nw-sparse", "out", {"weights=magic"}), UsageError);
  EXPECT_THROW(run("nw-sparse", "out", {"n=-3"}), UsageError);
  EXPECT_THROW(run("no-such-command", "out", {}), UsageError);
}

TEST_F(CliTest, EchoedConfigReloadsToSameOutput) {
  const std::vector<std::string> small{"seeds=2", "n=120", "n_test=60"};
  ASSERT_NO_THROW(run("nw-sparse", "a", small));
  const std::string echo = read("a/config.txt");
  EXPECT_EQ(lines(echo).front(), "# ellip nw-sparse");
  run("nw-sparse", "b", {}, (root / "a/config.txt").string());
  EXPECT_EQ(read("a/nw_sparse.csv"), read("b/nw_sparse.csv"));
  EXPECT_EQ(echo, read("b/config.txt"));
}

TEST_F(CliTest, NwSparseDeterministicAcrossRunsAndJobs) {
  const std::vector<std::string> small{"seeds=3", "n=150", "n_test=80"};
  run("nw-sparse", "a", small);
  run("nw-sparse", "b", small);
  run("nw-sparse", "c", small, "", 3);
  EXPECT_EQ(read("a/nw_sparse.csv"), read("b/nw_sparse.csv"));
  EXPECT_EQ(read("a/nw_sparse.csv"), read("c/nw_sparse.csv"));
  EXPECT_EQ(lines(read("a/nw_sparse.csv")).front(), "experiment,estimator,seed,n,bandwidth,metric,value");
}

TEST_F(CliTest, NwSparseDefaultEllipticalWins) {
  EXPECT_EQ(run("nw-sparse", "out", {}, "", 2), 0);
  double eu = 0, el = 0;
  for (const auto& l : lines(read("out/nw_sparse.csv"))) {
    if (l.find(",mse_mean,") == std::string::npos) continue;
    const double v = std::stod(l.substr(l.rfind(',') + 1));
    (l.find("euclidean") != std::string::npos ? eu : el) = v;
  }
  EXPECT_GT(eu, 0.0);
  EXPECT_LT(el, eu);
}

TEST_F(CliTest, EdgeAndBenchWriteCsvs) {
  EXPECT_EQ(run("edge-preserve", "edge", {"seeds=4"}), 0);
  EXPECT_EQ(lines(read("edge/edge_preserve.csv")).size(), 1u + 2 * 5);
  run("estimator-bench", "bench", {"seeds=2", "rate_ns=100,1000", "rate_reps=3", "noise_n=2000"});
  EXPECT_TRUE(fs::exists(root / "bench/estimator_bench.csv"));
  EXPECT_NE(read("bench/summary.txt").find("ordering_fidelity"), std::string::npos);
}

TEST_F(CliTest, TrainZeroStepsCheckpointIsInitialisation) {
  run("train-lm", "t", with(kSmallModel, {"steps=0", "seed=4"}));
  const LoadedCheckpoint ck = parse_checkpoint(read("t/checkpoint.txt"));
  RunConfig c("train-lm", cli::train_schema());
  c.load_text(ck.config_echo);
  const ModelConfig m = cli::model_config(c, 7);
  EXPECT_EQ(ck.step, 0u);
  EXPECT_EQ(ck.params.tensors, init_params(m).tensors);
  EXPECT_EQ(lines(read("t/loss.csv")).size(), 1u);
}

TEST_F(CliTest, ResumeMatchesSingleRun) {
  const auto base = with(kSmallModel, {"elliptical=true"});
  run("train-lm", "full", with(base, {"steps=8"}));
  run("train-lm", "half", with(base, {"steps=3"}));
  run("train-lm", "rest", with(base, {"steps=8", "resume=" + (root / "half/checkpoint.txt").string()}));
  const LoadedCheckpoint a = parse_checkpoint(read("full/checkpoint.txt"));
  const LoadedCheckpoint b = parse_checkpoint(read("rest/checkpoint.txt"));
  EXPECT_EQ(a.step, 8u);
  EXPECT_EQ(a.params.tensors, b.params.tensors);
  EXPECT_EQ(a.adam.m, b.adam.m);
  EXPECT_EQ(a.adam.v, b.adam.v);
  auto full = lines(read("full/loss.csv")), half = lines(read("half/loss.csv")), rest = lines(read("rest/loss.csv"));
  half.insert(half.end(), rest.begin() + 1, rest.end());
  EXPECT_EQ(full, half);
  EXPECT_EQ(read("full/eval.csv"), read("rest/eval.csv"));
}

TEST_F(CliTest, ResumeRejectsDifferentModel) {
  run("train-lm", "half", with(kSmallModel, {"steps=1"}));
  try {
    run("train-lm", "bad", with(kSmallModel, {"steps=2", "ff=8", "resume=" + (root / "half/checkpoint.txt").string()}));
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_EQ(e.key, "ff");
  }
}

TEST_F(CliTest, CorruptFlagOnlyTouchesEvalColumns) {
  run("train-lm", "off", with(kSmallModel, {"steps=4", "corrupt=false"}));
  run("train-lm", "on", with(kSmallModel, {"steps=4", "corrupt=true"}));
  EXPECT_EQ(read("off/loss.csv"), read("on/loss.csv"));
  EXPECT_EQ(parse_checkpoint(read("off/checkpoint.txt")).params.tensors,
            parse_checkpoint(read("on/checkpoint.txt")).params.tensors);
  const auto off = lines(read("off/eval.csv")), on = lines(read("on/eval.csv"));
  ASSERT_EQ(off.size(), 2u);
  ASSERT_EQ(on.size(), 2u);
  EXPECT_EQ(off[0], on[0]);
  EXPECT_EQ(off[1].back(), ',');  // empty corrupted cell
  EXPECT_EQ(on[1].substr(0, off[1].size()), off[1]);
  EXPECT_GT(on[1].size(), off[1].size());
}

TEST_F(CliTest, DiagnoseOutputs) {
  run("train-lm", "t", with(kSmallModel, {"steps=2", "elliptical=true"}));
  EXPECT_THROW(run("diagnose", "d", {"checkpoint=" + (root / "missing.txt").string()}), FileError);
  EXPECT_THROW(run("diagnose", "d", {}), UsageError);
  run("diagnose", "d", {"checkpoint=" + (root / "t/checkpoint.txt").string(), "perturbations=2"});

  std::map<std::string, int> rows;
  for (const auto& l : lines(read("d/diagnostics.csv"))) rows[l.substr(0, l.find(','))]++;
  rows.erase("metric");
  EXPECT_EQ(rows.size(), 5u);
  for (const auto& [name, n] : rows) EXPECT_EQ(n, 2) << name;

  for (int layer = 1; layer <= 2; ++layer) {
    for (int head = 1; head <= 2; ++head) {
      const auto hl = lines(read("d/heatmap_layer" + std::to_string(layer) + "_head" + std::to_string(head) + ".csv"));
      ASSERT_EQ(hl.size(), 2u + 16);
      for (std::size_t r = 2; r < hl.size(); ++r) {
        std::vector<double> vals;
        std::istringstream in(hl[r]);
        std::string cell;
        std::getline(in, cell, ',');
        while (std::getline(in, cell, ',')) vals.push_back(std::stod(cell));
        const double lo = *std::min_element(vals.begin(), vals.end());
        const double hi = *std::max_element(vals.begin(), vals.end());
        EXPECT_EQ(lo, 0.0);
        EXPECT_EQ(hi, 1.0) << hl[r];
      }
    }
  }
  EXPECT_TRUE(fs::exists(root / "d/perplexity.csv"));
}

TEST(CliBinary, ExitStatusesAndOutRoot) {
  const fs::path root = fs::temp_directory_path() / "ellip_cli_binary";
  fs::remove_all(root);
  const std::string bin = ELLIP_CLI_PATH;
  const std::string env = "ELLIP_OUT_ROOT=" + root.string() + " ";
  const std::string quiet = " > /dev/null 2>&1";
  const std::string fast = " -s instances=50 -s bound_instances=5 -s perturbations=50 -s lipschitz_pairs=500";

  EXPECT_EQ(shell(env + bin + " verify" + fast + quiet), 0);
  EXPECT_TRUE(fs::exists(root / "verify/verify.csv"));
  EXPECT_EQ(shell(env + bin + " verify" + fast + " -s kappa_fault=true" + quiet), 1);
  EXPECT_NE(csv::read_file(root / "verify/verify.csv").find("kappa_bound"), std::string::npos);
  EXPECT_EQ(shell(env + bin + " verify -s nope=1" + quiet), 1);
  EXPECT_EQ(shell(env + bin + " verify -c " + (root / "absent.txt").string() + quiet), 1);
  EXPECT_EQ(shell(bin + quiet), 1);
  EXPECT_EQ(shell(bin + " verify --keys" + quiet), 0);
  fs::remove_all(root);
}
