#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsepi/training.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string output;
};

CliRun tsepi_cli(const std::string& args) {
  const std::string cmd = std::string("TSEPI_SEED= ") + TSEPI_CLI_PATH + " " + args + " 2>&1";
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.output += buf.data();
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

// Small nets so the verbs finish in seconds.
fs::path tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << R"({
    "pitch_net": {"depth": 2, "channels": 8, "embed_dim": 4},
    "tse_net": {"n_filters": 16, "dcc_channels": 8, "dcc_layers": 6, "pitch_proj_dim": 4}
  })";
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  const CliRun none = tsepi_cli("");
  EXPECT_EQ(none.status, 2);
  EXPECT_NE(none.output.find("error: code=invalid-argument message="), std::string::npos) << none.output;
  EXPECT_EQ(tsepi_cli("frobnicate").status, 2);
  EXPECT_EQ(tsepi_cli("synth-data --num 2").status, 2);
  EXPECT_EQ(tsepi_cli("train-pitch --preset studio").status, 2);
  EXPECT_EQ(tsepi_cli("--help").status, 0);
}

TEST(Cli, MissingFilesExitFive) {
  const auto dir = tsepi::testing::temp_dir("cli_missing");
  const CliRun r = tsepi_cli("eval --manifest " + (dir / "nope.jsonl").string() + " --oracle --out " + dir.string());
  EXPECT_EQ(r.status, 5);
  EXPECT_NE(r.output.find("error: code=io-error message="), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("nope.jsonl"), std::string::npos) << r.output;
}

TEST(Cli, BadConfigKeyExitTwo) {
  const auto dir = tsepi::testing::temp_dir("cli_badcfg");
  std::ofstream(dir / "c.json") << R"({"pitch_nett": {}})";
  const CliRun r = tsepi_cli("train-pitch --config " + (dir / "c.json").string() + " --run-dir " + dir.string());
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("pitch_nett"), std::string::npos) << r.output;
}

TEST(Cli, FullPipeline) {
  const auto dir = tsepi::testing::temp_dir("cli_pipeline");
  const std::string cfg = " --config " + tiny_config(dir).string();
  const std::string data = (dir / "data").string(), run = (dir / "run").string();
  ASSERT_EQ(tsepi_cli("synth-data --split train --num 3 --seconds 0.3 --out " + data).status, 0);
  const std::string manifest = (dir / "data" / "manifest.jsonl").string();
  const CliRun a = tsepi_cli("train-pitch" + cfg + " --train " + manifest + " --run-dir " + run + " --max-steps 2");
  ASSERT_EQ(a.status, 0) << a.output;
  const CliRun b = tsepi_cli("train-tse" + cfg + " --train " + manifest + " --run-dir " + run + " --max-steps 2");
  ASSERT_EQ(b.status, 0) << b.output;
  EXPECT_TRUE(fs::exists(dir / "run" / "config.json"));
  const std::string ckpts = " --pitch-ckpt " + run + "/pitch.ckpt --tse-ckpt " + run + "/tse.ckpt";
  const CliRun e = tsepi_cli("eval" + cfg + " --manifest " + manifest + ckpts + " --out " + run + "/eval");
  ASSERT_EQ(e.status, 0) << e.output;
  const auto rep = tsepi::read_report(dir / "run" / "eval" / "report.json");
  EXPECT_EQ(rep["num_samples"], 3);
  EXPECT_TRUE(fs::exists(dir / "run" / "eval" / "per_class.csv"));

  const CliRun x = tsepi_cli("extract --mix " + data + "/mixture/00000.wav --class 3" + ckpts + " --out " + run +
                          "/est.wav --pitch-out " + run + "/est.csv");
  ASSERT_EQ(x.status, 0) << x.output;
  EXPECT_EQ(tsepi::wav::read(dir / "run" / "est.wav").size(), tsepi::wav::read(dir / "data" / "mixture" / "00000.wav").size());
  EXPECT_TRUE(fs::exists(dir / "run" / "est.csv"));
  EXPECT_EQ(tsepi_cli("extract --mix " + data + "/mixture/00000.wav --class 40" + ckpts + " --out " + run + "/x.wav").status, 2);

  const CliRun g = tsepi_cli("inspect-gtfb --tse-ckpt " + run + "/tse.ckpt --out " + run + "/gtfb");
  ASSERT_EQ(g.status, 0) << g.output;
  std::ifstream params(dir / "run" / "gtfb" / "gtfb_params.csv");
  std::string header, line;
  std::getline(params, header);
  EXPECT_EQ(header, "filter,fc_hz,bandwidth_hz,bw_scale,amp,phase,peak_hz");
  int rows = 0;
  while (std::getline(params, line)) ++rows;
  EXPECT_EQ(rows, 16);

  // a pitch checkpoint is not a tse checkpoint
  const CliRun wrong = tsepi_cli("inspect-gtfb --tse-ckpt " + run + "/pitch.ckpt --out " + run + "/gtfb2");
  EXPECT_EQ(wrong.status, 2) << wrong.output;
}
