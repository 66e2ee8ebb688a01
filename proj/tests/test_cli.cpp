#include <fstream>

#include <gtest/gtest.h>

#include "bbgcn/cli.hpp"
#include "support.hpp"

using namespace bbgcn;
using bbgcn::oracle::ScratchDir;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bbgcn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  return Json::parse(in);
}

std::size_t csv_rows(const std::string& path) {
  const auto text = oracle::read_file(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 1;
}

/// Writes a small synthetic dataset and returns its directory.
std::string small_synth(const ScratchDir& dir) {
  const auto d = dir.file("data");
  EXPECT_EQ(run_cli({"synth", "--out-dir", d, "--num-labels", "4", "--feature-dim", "6", "--samples",
                     "160", "--base-rate", "0.3", "--noise", "0.5", "--seed", "2"}),
            0);
  return d;
}

std::vector<std::string> small_model_flags(const std::string& data) {
  return {"--labels",    data + "/labels.csv", "--features", data + "/features.txt", "--d1", "6",
          "--gcn-dims",  "8,6,5",              "--d3",       "4",                    "--G",  "2",
          "--g",         "2",                  "--epochs",   "2",                    "--lr-main", "0.05"};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(CliBuildGraph, MicroFileValues) {
  ScratchDir dir("cli_graph");
  oracle::write_file(dir.file("labels.csv"), oracle::micro_pipe_file());
  ASSERT_EQ(run_cli({"build-graph", "--labels", dir.file("labels.csv"), "--out", dir.file("g.json")}), 0);
  const auto text = oracle::read_file(dir.file("g.json"));
  EXPECT_NE(text.find("0.666666666667"), std::string::npos);
  const auto j = read_json(dir.file("g.json"));
  EXPECT_EQ(j["vocabulary"], Json({"a", "b", "c"}));
  EXPECT_EQ(j["T"], Json({3, 3, 1}));
  EXPECT_EQ(j["P"][0][1].get<double>(), 0.666666666667);
  EXPECT_EQ(j["P"][1][2].get<double>(), 1.0);
  EXPECT_EQ(j["P"][2][0].get<double>(), 0.0);
  EXPECT_EQ(j["EA"][0][1].get<double>(), 0.2);
  EXPECT_EQ(j["EA"][0][0].get<double>(), 0.8);
  EXPECT_EQ(j["scope"], "all");
}

TEST(CliBuildGraph, EpsilonOneKeepsOnlyDiagonal) {
  ScratchDir dir("cli_graph_eps");
  oracle::write_file(dir.file("labels.csv"), oracle::micro_pipe_file());
  ASSERT_EQ(run_cli({"build-graph", "--labels", dir.file("labels.csv"), "--epsilon", "1", "--out",
                     dir.file("g.json")}),
            0);
  const auto A = read_json(dir.file("g.json"))["A"];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(A[i][j].get<double>(), i == j ? 1.0 : 0.0);
}

TEST(CliBuildGraph, ExitCodes) {
  ScratchDir dir("cli_graph_err");
  EXPECT_EQ(run_cli({"build-graph", "--labels", dir.file("nope.csv")}), 2);
  oracle::write_file(dir.file("bad.csv"), "s1,a|zebra\n");
  EXPECT_EQ(run_cli({"build-graph", "--labels", dir.file("bad.csv"), "--vocab", "a,b"}), 2);
  EXPECT_EQ(run_cli({"build-graph", "--labels", dir.file("bad.csv"), "--epsilon", "1.5"}), 2);
  EXPECT_EQ(run_cli({"build-graph", "--bogus"}), 2);
}

TEST(CliConfig, UnknownKeyIsRejected) {
  ScratchDir dir("cli_cfg");
  oracle::write_file(dir.file("labels.csv"), oracle::micro_pipe_file());
  oracle::write_file(dir.file("cfg.json"), R"({"epsilon": 0.5, "epsilonn": 0.2})");
  EXPECT_EQ(run_cli({"build-graph", "--labels", dir.file("labels.csv"), "--config", dir.file("cfg.json"),
                     "--out", dir.file("g.json")}),
            2);
  oracle::write_file(dir.file("cfg.json"), R"({"epsilon": 0.5})");
  ASSERT_EQ(run_cli({"build-graph", "--labels", dir.file("labels.csv"), "--config", dir.file("cfg.json"),
                     "--out", dir.file("g.json")}),
            0);
  EXPECT_EQ(read_json(dir.file("g.json"))["epsilon"].get<double>(), 0.5);
}

TEST(CliConfig, FlagsOverrideConfigFile) {
  ScratchDir dir("cli_cfg2");
  oracle::write_file(dir.file("labels.csv"), oracle::micro_pipe_file());
  oracle::write_file(dir.file("cfg.json"), R"({"epsilon": 0.5, "delta": 0.4})");
  ASSERT_EQ(run_cli({"build-graph", "--labels", dir.file("labels.csv"), "--config", dir.file("cfg.json"),
                     "--epsilon", "0.1", "--out", dir.file("g.json")}),
            0);
  const auto j = read_json(dir.file("g.json"));
  EXPECT_EQ(j["epsilon"].get<double>(), 0.1);
  EXPECT_EQ(j["delta"].get<double>(), 0.4);
}

TEST(CliHelp, ExitsZero) {
  EXPECT_EQ(run_cli({"--help"}), 0);
  EXPECT_EQ(run_cli({"train", "--help"}), 0);
  EXPECT_EQ(run_cli({}), 2);
}

TEST(CliPipeline, SynthTrainEvalReport) {
  ScratchDir dir("cli_pipe");
  const auto data = small_synth(dir);
  const auto run = dir.file("run");
  ASSERT_EQ(run_cli({"build-graph", "--labels", data + "/labels.csv", "--scope", "train", "--out-dir", run}), 0);
  EXPECT_EQ(read_json(run + "/graph.json")["scope"], "train");
  ASSERT_EQ(run_cli(std::vector<std::string>{"train"} + small_model_flags(data) +
                    std::vector<std::string>{"--out-dir", run}),
            0);
  for (const auto* f : {"checkpoint.bin", "metrics_log.csv", "graph.json", "config_echo.json"})
    EXPECT_TRUE(fs::exists(fs::path(run) / f)) << f;
  EXPECT_EQ(csv_rows(run + "/metrics_log.csv"), 2u);

  const auto ev = dir.file("eval");
  ASSERT_EQ(run_cli({"eval", "--checkpoint", run + "/checkpoint.bin", "--out-dir", ev, "--top-k", "2"}), 0);
  const auto m = read_json(ev + "/metrics.json");
  EXPECT_EQ(m["per_label_auc"].size(), 4u);
  EXPECT_TRUE(m["mean_auc"].is_number());
  EXPECT_TRUE(fs::exists(fs::path(ev) / "roc_00_finding_0.csv"));
  EXPECT_EQ(csv_rows(ev + "/topk.csv"), 2 * m["test_samples"].get<std::size_t>());

  const auto rp = dir.file("report");
  ASSERT_EQ(run_cli({"report", "--checkpoint", run + "/checkpoint.bin", "--out-dir", rp}), 0);
  EXPECT_TRUE(fs::exists(fs::path(rp) / "cooccurrence_counts.csv"));
  EXPECT_TRUE(fs::exists(fs::path(rp) / "conditional_probability.csv"));
  EXPECT_EQ(csv_rows(rp + "/topk.csv"), 4 * m["test_samples"].get<std::size_t>());
}

TEST(CliPipeline, VocabularyMismatchOnEvalIsShapeError) {
  ScratchDir dir("cli_mismatch");
  const auto data = small_synth(dir);
  const auto run = dir.file("run");
  ASSERT_EQ(run_cli(std::vector<std::string>{"train"} + small_model_flags(data) +
                    std::vector<std::string>{"--out-dir", run}),
            0);
  oracle::write_file(dir.file("five.csv"), "syn000000,finding_0|finding_4\nsyn000001,finding_1\n"
                                            "syn000002,finding_2\nsyn000003,finding_3\n");
  EXPECT_EQ(run_cli({"eval", "--checkpoint", run + "/checkpoint.bin", "--labels", dir.file("five.csv"),
                     "--out-dir", dir.file("ev")}),
            3);
}

TEST(CliPipeline, FeatureWidthMismatchIsShapeError) {
  ScratchDir dir("cli_width");
  const auto data = small_synth(dir);
  auto flags = std::vector<std::string>{"train"} + small_model_flags(data) +
               std::vector<std::string>{"--out-dir", dir.file("run")};
  flags[std::find(flags.begin(), flags.end(), "--d1") - flags.begin() + 1] = "7";
  EXPECT_EQ(run_cli(flags), 3);
}

TEST(CliSweep, EpsilonGridProducesOneRowPerValue) {
  ScratchDir dir("cli_sweep_eps");
  const auto data = small_synth(dir);
  const auto out = dir.file("sweep.csv");
  auto flags = small_model_flags(data);
  flags[std::find(flags.begin(), flags.end(), "--epochs") - flags.begin() + 1] = "1";
  ASSERT_EQ(run_cli(std::vector<std::string>{"sweep", "--axis", "epsilon", "--values",
                                             "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", "--out", out} +
                    flags),
            0);
  EXPECT_EQ(csv_rows(out), 10u);
  EXPECT_TRUE(fs::exists(dir.file("sweep_config_echo.json")));
}

TEST(CliSweep, DepthAndDuplicates) {
  ScratchDir dir("cli_sweep_depth");
  const auto data = small_synth(dir);
  const auto out = dir.file("depth.csv");
  ASSERT_EQ(run_cli(std::vector<std::string>{"sweep", "--axis", "gcn_depth", "--values", "2,3,4,3", "--out",
                                             out} +
                    small_model_flags(data)),
            0);
  EXPECT_EQ(csv_rows(out), 3u);
  const auto text = oracle::read_file(out);
  EXPECT_NE(text.find("gcn_depth,4,"), std::string::npos);
}

TEST(CliSweep, InvalidValueFailsBeforeTraining) {
  ScratchDir dir("cli_sweep_bad");
  const auto data = small_synth(dir);
  const auto out = dir.file("bad.csv");
  EXPECT_EQ(run_cli(std::vector<std::string>{"sweep", "--axis", "epsilon", "--values", "0.1,1.5", "--out",
                                             out} +
                    small_model_flags(data)),
            2);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(run_cli(std::vector<std::string>{"sweep", "--axis", "groupsum", "--values", "2:2,3:2", "--out",
                                             out} +
                    small_model_flags(data)),
            2);
  EXPECT_EQ(run_cli(std::vector<std::string>{"sweep", "--axis", "width", "--values", "1", "--out", out} +
                    small_model_flags(data)),
            2);
}

TEST(SweepPlan, DeduplicatesWithWarning) {
  const auto p = pipeline::plan_sweep("epsilon", {"0.3", "0.30", "0.5"});
  EXPECT_EQ(p.values, (std::vector<std::string>{"0.3", "0.5"}));
  ASSERT_EQ(p.warnings.size(), 1u);
  EXPECT_NE(p.warnings[0].find("0.30"), std::string::npos);
}

TEST(SweepPlan, FlagsNonConvergentSettings) {
  ScratchDir dir("plan_flags");
  const auto data = small_synth(dir);
  TrainConfig cfg;
  cfg.labels = data + "/labels.csv";
  cfg.features = data + "/features.txt";
  cfg.d1 = 6;
  cfg.gcn_dims = {8, 6, 5};
  cfg.d3 = 4;
  cfg.G = 2;
  cfg.g = 2;
  cfg.epochs = 1;
  const auto eps = pipeline::run_sweep(cfg, pipeline::plan_sweep("epsilon", {"0", "0.3"}));
  EXPECT_EQ(eps[0].status, "unfiltered_graph");
  EXPECT_EQ(eps[1].status, "ok");
  const auto del = pipeline::run_sweep(cfg, pipeline::plan_sweep("delta", {"1", "0.2"}));
  EXPECT_EQ(del[0].status, "no_self_weight");
  EXPECT_TRUE(std::isnan(del[0].mean_auc));
  EXPECT_TRUE(std::isfinite(del[1].mean_auc));
}
