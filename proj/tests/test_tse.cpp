#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsepi/metrics.hpp"
#include "tsepi/tse_net.hpp"

using namespace tsepi;

namespace {

TSEConfig tiny(EncoderType enc = EncoderType::GtfbLearnable, int proj = 4) {
  TSEConfig c;
  c.encoder_type = enc;
  c.kernel_length = 32;
  c.n_filters = 16;
  c.dcc_layers = 6;
  c.dcc_channels = 8;
  c.pitch_proj_dim = proj;
  return c;
}

Eigen::MatrixXd random_pitch(const TSENet<double>& net, int len, std::uint64_t seed) {
  const PitchGrid grid;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bin(0, grid.n_classes() - 1);
  PitchSequence p;
  for (int t = 0; t < net.expected_pitch_frames(len); ++t) p.bins.push_back(bin(rng));
  return net.pitch_matrix(p);
}

nn::Param<double>& find(nn::ParamList<double> ps, const std::string& name) {
  for (auto* p : ps)
    if (p->name == name) return *p;
  throw std::runtime_error("no param " + name);
}

}  // namespace

TEST(TSENet, GradientCheck) {
  TSENet<double> net(tiny(), 3);
  const int len = 1600;
  const auto x = tsepi::testing::gaussian(len, 1, 0.3);
  const auto r = tsepi::testing::gaussian(len, 2);
  const Eigen::MatrixXd pitch = random_pitch(net, len, 4);
  const auto loss = [&] {
    typename TSENet<double>::Workspace ws;
    const auto y = net.forward(x, 5, pitch, ws);
    double l = 0.0;
    for (int i = 0; i < len; ++i) l += r[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    return l;
  };
  auto params = net.params();
  nn::zero_grads(params);
  typename TSENet<double>::Workspace ws;
  net.forward(x, 5, pitch, ws);
  net.backward(ws, r);
  for (const char* name :
       {"encoder.gtfb.fc", "encoder.gtfb.bw_scale", "encoder.gtfb.amp", "encoder.gtfb.phase", "pitch.proj",
        "pitch.bias", "label.embedding", "dcc.input.weight", "dcc.block2.dconv.weight", "dcc.block5.prelu.slope",
        "dcc.output.bias", "decoder.head0.conv.weight", "decoder.mask.weight", "decoder.weight"}) {
    EXPECT_LT(tsepi::testing::grad_rel_error(find(params, name), loss, 40, 9), 1e-4) << name;
  }
}

TEST(TSENet, EveryGroupReceivesGradient) {
  for (EncoderType enc : {EncoderType::Conv, EncoderType::GtfbLearnable}) {
    TSENet<double> net(tiny(enc), 5);
    const auto x = tsepi::testing::gaussian(1200, 6, 0.3);
    const auto t = tsepi::testing::gaussian(1200, 7, 0.3);
    auto groups = net.param_groups();
    for (auto& [name, ps] : groups) nn::zero_grads(ps);
    net.accumulate(x, 2, random_pitch(net, 1200, 8), t, {});
    for (auto& [name, ps] : groups) {
      double g = 0.0;
      for (auto* p : ps) g += p->grad.squaredNorm();
      EXPECT_GT(g, 0.0) << name << " / " << to_string(enc);
    }
  }
}

TEST(TSENet, ParamGroupsPerEncoder) {
  TSENet<double> conv(tiny(EncoderType::Conv), 1);
  auto g = conv.param_groups();
  ASSERT_EQ(g["encoder"].size(), 1u);
  EXPECT_EQ(g["encoder"][0]->name, "encoder.weight");
  EXPECT_EQ(conv.gammatone(), nullptr);

  TSENet<double> fixed(tiny(EncoderType::GtfbFixed, 0), 1);
  auto f = fixed.param_groups();
  EXPECT_EQ(f["encoder"].size(), 4u);
  for (auto* p : f["encoder"]) EXPECT_FALSE(p->trainable) << p->name;
  EXPECT_TRUE(f["pitch"].empty());
  EXPECT_EQ(fixed.label_embedding().value.rows(), 16);
  EXPECT_EQ(fixed.label_embedding().value.cols(), 27);

  TSENet<double> learn(tiny(), 1);
  auto lg = learn.param_groups();
  for (auto* p : lg["encoder"]) EXPECT_TRUE(p->trainable) << p->name;
}

TEST(TSENet, OutputLengthMatchesInput) {
  TSENet<double> net(tiny(), 2);
  for (int len : {32, 33, 250, 801, 1600}) {
    const auto x = tsepi::testing::gaussian(static_cast<std::size_t>(len), 3, 0.2);
    typename TSENet<double>::Workspace ws;
    if (net.expected_pitch_frames(len) <= 0) continue;
    EXPECT_EQ(net.forward(x, 0, random_pitch(net, len, 1), ws).size(), static_cast<std::size_t>(len));
  }
  TSENet<double> nopitch(tiny(EncoderType::GtfbLearnable, 0), 2);
  for (int len : {32, 100, 777}) {
    typename TSENet<double>::Workspace ws;
    EXPECT_EQ(nopitch.forward(tsepi::testing::gaussian(len, 3), 0, Eigen::MatrixXd(), ws).size(),
              static_cast<std::size_t>(len));
  }
}

TEST(TSENet, RejectsBadInputs) {
  TSENet<double> net(tiny(), 2);
  const auto x = tsepi::testing::gaussian(1600, 3);
  typename TSENet<double>::Workspace ws;
  const Eigen::MatrixXd p = random_pitch(net, 1600, 1);
  tsepi::testing::expect_error([&] { net.forward(x, 27, p, ws); }, ErrorCode::InvalidArgument);
  tsepi::testing::expect_error([&] { net.forward(x, -1, p, ws); }, ErrorCode::InvalidArgument);
  tsepi::testing::expect_error([&] { net.forward(x, 0, Eigen::MatrixXd(p.topRows(3)), ws); },
                               ErrorCode::InvalidArgument);
  TSEConfig shallow = tiny();
  shallow.dcc_layers = 2;
  tsepi::testing::expect_error([&] { shallow.validate(); }, ErrorCode::InvalidArgument);
}

TEST(ConcatPitch, UnvoicedBlockIsConstant) {
  TSENet<double> net(tiny(), 4);
  const int len = 4000;
  PitchSequence p;
  p.bins.assign(static_cast<std::size_t>(net.expected_pitch_frames(len)), PitchGrid{}.unvoiced_index());
  typename TSENet<double>::Workspace ws;
  net.forward(tsepi::testing::gaussian(len, 5), 1, p, ws);
  const Eigen::MatrixXd block = ws.stacked.bottomRows(4).cast<double>();
  for (Eigen::Index j = 1; j < block.cols(); ++j) ASSERT_EQ(block.col(j), block.col(0));
  EXPECT_EQ(ws.stacked.rows(), 16 + 4);
}

TEST(ConcatPitch, ProjectionZeroIsPitchFree) {
  TSENet<double> net(tiny(EncoderType::GtfbLearnable, 0), 4);
  typename TSENet<double>::Workspace ws;
  const auto x = tsepi::testing::gaussian(1000, 5);
  net.forward(x, 1, Eigen::MatrixXd(), ws);
  EXPECT_EQ(ws.stacked.rows(), 16);
  const Eigen::MatrixXd f = Eigen::MatrixXd::Random(5, 7);
  const Eigen::MatrixXd cat = concat_pitch(f, Eigen::MatrixXd::Random(3, 357), Eigen::MatrixXd(0, 357),
                                           std::vector<int>(7, 0));
  EXPECT_EQ(cat, f);
}

TEST(ConcatPitch, TenfoldHoldAlignment) {
  const int n_pitch = 40, n_enc = 420;
  const auto idx = align_pitch_frames(n_pitch, 1024, 160, n_enc, 32, 16);
  std::vector<int> run(n_pitch, 0);
  for (std::size_t j = 1; j < idx.size(); ++j) ASSERT_GE(idx[j], idx[j - 1]);
  for (int i : idx) ++run[static_cast<std::size_t>(i)];
  // interior pitch frames are each held for 10 encoder frames
  for (int i = 1; i + 1 < n_pitch; ++i) EXPECT_EQ(run[static_cast<std::size_t>(i)], 10) << i;
  tsepi::testing::expect_error(
      [] { concat_pitch(Eigen::MatrixXd::Zero(4, 3), Eigen::MatrixXd::Zero(2, 5), Eigen::MatrixXd::Zero(1, 5), {0, 1, 2}); },
      ErrorCode::InvalidArgument);
  tsepi::testing::expect_error(
      [] { concat_pitch(Eigen::MatrixXd::Zero(4, 3), Eigen::MatrixXd::Zero(2, 5), Eigen::MatrixXd::Zero(1, 5), {0, 1}); },
      ErrorCode::InvalidArgument);
}

TEST(TSENet, CausalUnderPerturbation) {
  TSENet<double> net(tiny(), 6);
  const int len = 3200, t0 = 2000;
  auto x = tsepi::testing::gaussian(len, 8, 0.3);
  const Eigen::MatrixXd pitch = random_pitch(net, len, 2);
  typename TSENet<double>::Workspace a, b;
  const auto ya = net.forward(x, 3, pitch, a);
  for (int i = t0; i < len; ++i) x[static_cast<std::size_t>(i)] += 0.5;
  const auto yb = net.forward(x, 3, pitch, b);
  // encoder frame j reads samples [16 j - 32, 16 j), so frames up to t0 / 16 are untouched
  const int last_clean = t0 / 16;
  for (int j = 0; j <= last_clean; ++j) ASSERT_EQ(a.top.col(j), b.top.col(j)) << j;
  EXPECT_NE(a.top.col(last_clean + 1), b.top.col(last_clean + 1));
  // the overlap-add decoder adds one kernel length of latency
  for (int t = 0; t < t0 - 32; ++t) ASSERT_EQ(ya[static_cast<std::size_t>(t)], yb[static_cast<std::size_t>(t)]) << t;
}

TEST(TSENet, ZeroedLabelIgnoresLabel) {
  TSENet<double> net(tiny(), 6);
  const auto x = tsepi::testing::gaussian(2000, 8, 0.3);
  const Eigen::MatrixXd pitch = random_pitch(net, 2000, 2);
  typename TSENet<double>::Workspace ws;
  const auto y0 = net.forward(x, 0, pitch, ws, true);
  EXPECT_EQ(net.forward(x, 9, pitch, ws, true), y0);
  EXPECT_NE(net.forward(x, 9, pitch, ws), net.forward(x, 0, pitch, ws));
}

TEST(Decoder, LinearAndZero) {
  const Eigen::MatrixXd D = Eigen::MatrixXd::Random(32, 16);
  const Eigen::MatrixXd F = Eigen::MatrixXd::Random(16, 20);
  const AudioClip y = decode_to_waveform(F, D, 16);
  EXPECT_EQ(y.size(), static_cast<std::size_t>(19 * 16 + 32));
  const AudioClip y3 = decode_to_waveform(-3.0 * F, D, 16);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y3.samples[i], -3.0 * y.samples[i], 1e-12);
  for (double v : decode_to_waveform(Eigen::MatrixXd::Zero(16, 20), D, 16).samples) ASSERT_EQ(v, 0.0);
  tsepi::testing::expect_error([&] { decode_to_waveform(F, Eigen::MatrixXd::Zero(32, 15), 16); },
                               ErrorCode::InvalidArgument);
}

TEST(Decoder, AutoencoderRoundTripOnWhiteNoise) {
  // encoder -> identity mask -> decoder, decoder fitted by Adam on squared error
  const int len = 4000, L = 32, s = 16, K = 64;
  const auto x = tsepi::testing::gaussian(len, 13, 0.3);
  const Eigen::MatrixXd kernels = gtfb::build_kernels(gtfb::GammatoneParams::standard(K, L));
  const auto layout = FrameLayout::make(len, L, s);
  std::vector<double> padded(static_cast<std::size_t>(layout.padded), 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + L);
  const Eigen::MatrixXd F = (kernels.transpose() * gtfb::frame_matrix<double>(padded, L, s)).cwiseMax(0.0);
  nn::Param<double> dec("decoder", L, K);
  nn::init_uniform(dec, 1.0 / std::sqrt(static_cast<double>(K)), 1);
  nn::Adam<double> adam({&dec}, {1e-2});
  const auto reconstruct = [&] {
    const auto full = overlap_add<double>(dec.value * F, s, layout.padded);
    return std::vector<double>(full.begin() + L, full.begin() + L + len);
  };
  for (int step = 0; step < 200; ++step) {
    const auto y = reconstruct();
    std::vector<double> dpad(static_cast<std::size_t>(layout.padded), 0.0);
    for (int i = 0; i < len; ++i)
      dpad[static_cast<std::size_t>(i + L)] = 2.0 * (y[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(i)]) / len;
    dec.zero_grad();
    dec.grad = gtfb::frame_matrix<double>(dpad, L, s) * F.transpose();
    adam.step();
  }
  EXPECT_GT(metrics::si_snr_db(reconstruct(), x), -10.0);
}
