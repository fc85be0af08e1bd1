#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsepi/training.hpp"

using namespace tsepi;

namespace {

RunConfig tiny_run() {
  RunConfig c = preset("desk");
  c.pitch_net.depth = 2;
  c.pitch_net.channels = 8;
  c.pitch_net.embed_dim = 4;
  c.tse_net.n_filters = 16;
  c.tse_net.dcc_channels = 8;
  c.tse_net.dcc_layers = 6;
  c.tse_net.pitch_proj_dim = 4;
  c.pitch_optim = {1e-3, 2, 2, 0, -1, 5.0, 1};
  c.tse_optim = {1e-3, 2, 2, 0, -1, 5.0, 1};
  return c;
}

const std::vector<Example>& examples() {
  static const std::vector<Example> ex = [] {
    MixtureRecipe rec;
    rec.seconds = 0.2;
    std::vector<Example> v;
    for (std::uint64_t i = 0; i < 4; ++i) v.push_back(to_example(make_sample(3, i, rec), sample_id(i)));
    return v;
  }();
  return ex;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(Config, PresetsAndDefaults) {
  const RunConfig desk = preset("desk");
  EXPECT_EQ(desk.tse_net.n_filters, 256);
  EXPECT_EQ(desk.tse_net.dcc_layers, 10);
  EXPECT_EQ(desk.loss.snr, 0.9);
  EXPECT_EQ(desk.loss.si_snr, 0.1);
  ASSERT_EQ(desk.loss_sweep.size(), 3u);
  const RunConfig paper = preset("paper");
  EXPECT_EQ(paper.pitch_optim.lr, 1e-4);
  EXPECT_EQ(paper.pitch_optim.batch, 32);
  EXPECT_EQ(paper.tse_net.n_filters, 512);
  EXPECT_EQ(paper.train_count, 50000u);
  EXPECT_EQ(paper.val_count, 5000u);
  EXPECT_EQ(paper.test_count, 5000u);
  EXPECT_NO_THROW(desk.validate());
  EXPECT_NO_THROW(paper.validate());
  tsepi::testing::expect_error([] { preset("laptop"); }, ErrorCode::InvalidArgument);
}

TEST(Config, FileOverridesAndUnknownKeys) {
  const auto dir = tsepi::testing::temp_dir("config");
  write_text(dir / "ok.json", R"({"preset": "paper", "seed": 5, "tse_optim": {"lr": 0.002}})");
  const RunConfig c = load_config((dir / "ok.json").string());
  EXPECT_EQ(c.preset, "paper");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.tse_optim.lr, 0.002);
  EXPECT_EQ(c.tse_optim.batch, 32);
  write_text(dir / "typo.json", R"({"tse_optm": {"lr": 0.002}})");
  tsepi::testing::expect_error([&] { load_config((dir / "typo.json").string()); }, ErrorCode::InvalidArgument);
  write_text(dir / "nested.json", R"({"tse_net": {"filters": 3}})");
  tsepi::testing::expect_error([&] { load_config((dir / "nested.json").string()); }, ErrorCode::InvalidArgument);
  write_text(dir / "bad.json", "{");
  tsepi::testing::expect_error([&] { load_config((dir / "bad.json").string()); }, ErrorCode::Format);
  tsepi::testing::expect_error([&] { load_config((dir / "none.json").string()); }, ErrorCode::Io);
}

TEST(Config, ResolvedConfigRoundTrip) {
  const auto dir = tsepi::testing::temp_dir("config_rt");
  RunConfig c = tiny_run();
  c.seed = 99;
  c.loss = {0.7, 0.3};
  write_resolved_config(c, dir);
  const RunConfig back = load_config((dir / "config.json").string());
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.tse_net, c.tse_net);
  EXPECT_EQ(back.pitch_net, c.pitch_net);
  EXPECT_EQ(back.loss.snr, 0.7);
}

TEST(Config, SeedFromEnvironment) {
  ::setenv("TSEPI_SEED", "1234", 1);
  EXPECT_EQ(load_config("").seed, 1234u);
  ::setenv("TSEPI_SEED", "12x", 1);
  tsepi::testing::expect_error([] { load_config(""); }, ErrorCode::InvalidArgument);
  ::unsetenv("TSEPI_SEED");
  EXPECT_EQ(load_config("").seed, 17u);
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto dir = tsepi::testing::temp_dir("ckpt");
  const RunConfig c = tiny_run();
  PitchNet<Real> net(c.pitch_net, c.grid, 4);
  ckpt::save_pitch<Real>(dir / "p.ckpt", net, {});
  const PitchNet<Real> back = ckpt::load_pitch<Real>(dir / "p.ckpt");
  const auto& x = examples()[0].mixture;
  EXPECT_EQ(back.infer(x, 2).probs, net.infer(x, 2).probs);

  PitchNetConfig other = c.pitch_net;
  other.channels = 16;
  tsepi::testing::expect_error([&] { ckpt::load_pitch<Real>(dir / "p.ckpt", &other); }, ErrorCode::InvalidArgument);
  tsepi::testing::expect_error([&] { ckpt::load_tse<Real>(dir / "p.ckpt"); }, ErrorCode::InvalidArgument);

  std::string bytes = slurp(dir / "p.ckpt");
  bytes.replace(bytes.find(" 1\n"), 3, " 9\n");
  write_text(dir / "v9.ckpt", bytes);
  tsepi::testing::expect_error([&] { ckpt::read(dir / "v9.ckpt"); }, ErrorCode::Format);
  write_text(dir / "junk.ckpt", "hello\n");
  tsepi::testing::expect_error([&] { ckpt::read(dir / "junk.ckpt"); }, ErrorCode::Format);
  const std::string good = slurp(dir / "p.ckpt");
  write_text(dir / "short.ckpt", good.substr(0, good.size() - 100));
  tsepi::testing::expect_error([&] { ckpt::read(dir / "short.ckpt"); }, ErrorCode::Format);
  tsepi::testing::expect_error([&] { ckpt::read(dir / "absent.ckpt"); }, ErrorCode::Io);
}

TEST(Training, DeterministicUnderSeed) {
  const RunConfig c = tiny_run();
  const TseData d = make_tse_data(examples(), c.grid);
  const auto a = train_tse(c, d, nullptr);
  const auto b = train_tse(c, d, nullptr);
  ASSERT_EQ(a.losses.size(), 4u);
  EXPECT_EQ(a.losses, b.losses);
  const PitchData pd = make_pitch_data(examples(), c.pitch_net);
  EXPECT_EQ(train_pitch(c, pd, nullptr).losses, train_pitch(c, pd, nullptr).losses);
}

TEST(Training, ResumeContinuesExactly) {
  RunConfig c = tiny_run();
  c.tse_optim.batch = 1;
  c.tse_optim.epochs = 0;
  c.tse_optim.max_steps = 7;
  const TseData d = make_tse_data(examples(), c.grid);
  const auto full = train_tse(c, d, nullptr);
  ASSERT_EQ(full.losses.size(), 7u);

  const auto dir = tsepi::testing::temp_dir("resume");
  RunConfig first = c;
  first.tse_optim.max_steps = 3;  // stops mid-epoch
  TrainOptions t;
  t.run_dir = dir;
  const auto part = train_tse(first, d, nullptr, t);
  EXPECT_EQ(part.state.step, 3);
  EXPECT_EQ(part.state.batch, 3);
  TrainOptions r;
  r.run_dir = dir / "resumed";
  r.resume = dir / "tse.ckpt";
  const auto rest = train_tse(c, d, nullptr, r);
  ASSERT_EQ(rest.losses.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(rest.losses[i], full.losses[3 + i], 1e-6) << i;

  RunConfig wrong = c;
  wrong.tse_net.dcc_channels = 4;
  tsepi::testing::expect_error([&] { train_tse(wrong, d, nullptr, r); }, ErrorCode::InvalidArgument);
}

TEST(Training, LrHalvingIsLogged) {
  RunConfig c = tiny_run();
  c.pitch_optim = {1e-3, 2, 3, 0, 1, 0.0, 1};
  const auto dir = tsepi::testing::temp_dir("lr_halve");
  TrainOptions t;
  t.run_dir = dir;
  const auto res = train_pitch(c, make_pitch_data(examples(), c.pitch_net), nullptr, t);
  EXPECT_EQ(res.state.epoch, 3);
  EXPECT_DOUBLE_EQ(res.state.lr, 5e-4);
  std::ifstream in(dir / "train_pitch.jsonl");
  int halved = 0, epochs = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = json::parse(line);
    if (j.value("event", "") == "lr_halved") {
      ++halved;
      EXPECT_EQ(j["epoch"], 1);
      EXPECT_DOUBLE_EQ(j["lr"].get<double>(), 5e-4);
    }
    if (j.value("event", "") == "epoch_end") ++epochs;
  }
  EXPECT_EQ(halved, 1);
  EXPECT_EQ(epochs, 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "pitch.ckpt"));
}

TEST(Training, OptimConfigValidation) {
  RunConfig c = tiny_run();
  c.tse_optim.lr = -1.0;
  tsepi::testing::expect_error([&] { c.validate(); }, ErrorCode::InvalidArgument);
  c = tiny_run();
  c.loss = {0.6, 0.6};
  tsepi::testing::expect_error([&] { c.validate(); }, ErrorCode::InvalidArgument);
}

TEST(LossSweep, RunsEveryPair) {
  RunConfig c = tiny_run();
  c.tse_optim.max_steps = 2;
  const TseData d = make_tse_data(examples(), c.grid);
  const auto rows = loss_sweep(c, d, &d, {});
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r["val_si_snri"].get<double>())) << r.dump();
  EXPECT_EQ(rows[2]["snr_weight"], 0.9);
}

TEST(Eval, OracleReportAndCsv) {
  const auto dir = tsepi::testing::temp_dir("eval_oracle");
  EvalOptions o;
  o.oracle = true;
  const json rep = evaluate(examples(), nullptr, nullptr, PitchGrid{}, o, dir);
  EXPECT_EQ(rep["num_samples"], 4);
  for (const auto& s : rep["samples"]) {
    EXPECT_NEAR(s["si_snri"].get<double>(), metrics::kCapDb - s["si_snr_in"].get<double>(), 1e-9);
    EXPECT_EQ(s["rpa"], 1.0);
  }
  const json back = read_report(dir / "report.json");
  EXPECT_EQ(back["global"], rep["global"]);
  std::ifstream csv(dir / "per_class.csv");
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header, "class,count,snri,si_snri,snri_teacher_forced,si_snri_teacher_forced,rpa,coss");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, rep["per_class"].size());
  tsepi::testing::expect_error([] { evaluate(examples(), nullptr, nullptr, PitchGrid{}, {}); },
                               ErrorCode::InvalidArgument);
}

TEST(Eval, TrainedNetsReportBothPitchSources) {
  const RunConfig c = tiny_run();
  const auto pitch = train_pitch(c, make_pitch_data(examples(), c.pitch_net), nullptr);
  const auto tse = train_tse(c, make_tse_data(examples(), c.grid), nullptr);
  const json rep = evaluate(examples(), pitch.net.get(), tse.net.get(), c.grid, {});
  for (const auto& s : rep["samples"]) {
    for (const char* k : {"snri", "si_snri", "snri_teacher_forced", "si_snri_teacher_forced"})
      EXPECT_TRUE(std::isfinite(s[k].get<double>())) << k;
    EXPECT_TRUE(s["rpa"].is_number());
    EXPECT_TRUE(s["coss"].is_number());
  }
  const auto dir = tsepi::testing::temp_dir("eval_version");
  write_text(dir / "r.json", R"({"format_version": 7})");
  tsepi::testing::expect_error([&] { read_report(dir / "r.json"); }, ErrorCode::Format);
}
