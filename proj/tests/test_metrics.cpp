#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsepi/metrics.hpp"

using namespace tsepi;
using namespace tsepi::metrics;

namespace {

std::vector<double> scaled(const std::vector<double>& x, double a) {
  std::vector<double> y = x;
  for (double& v : y) v *= a;
  return y;
}

std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

// Noise orthogonal to the constant and to ref (so also to the zero-mean ref),
// scaled so ||ref0||^2 / ||n||^2 = rho.
std::vector<double> orthogonal_noise(const std::vector<double>& ref, double rho, std::uint64_t seed) {
  auto r = ref;
  const double mr = std::accumulate(r.begin(), r.end(), 0.0) / r.size();
  for (double& v : r) v -= mr;
  auto n = tsepi::testing::gaussian(ref.size(), seed);
  const double mn = std::accumulate(n.begin(), n.end(), 0.0) / n.size();
  for (double& v : n) v -= mn;
  const double p = dot(n, r) / energy(r);
  for (std::size_t i = 0; i < n.size(); ++i) n[i] -= p * r[i];
  const double g = std::sqrt(energy(r) / (rho * energy(n)));
  for (double& v : n) v *= g;
  return n;
}

}  // namespace

TEST(SiSnr, ScaleInvariance) {
  const auto ref = tsepi::testing::gaussian(4000, 1);
  const auto est = add(ref, scaled(tsepi::testing::gaussian(4000, 2), 0.3));
  const double base = si_snr_db(est, ref);
  for (double a : {0.1, 1.0, 10.0}) EXPECT_NEAR(si_snr_db(scaled(est, a), ref), base, 1e-9);
}

TEST(SiSnr, OrthogonalNoiseOracle) {
  const auto ref = tsepi::testing::gaussian(4000, 3);
  for (double rho : {0.5, 3.0, 100.0}) {
    const auto est = add(ref, orthogonal_noise(ref, rho, 4));
    EXPECT_NEAR(si_snr_db(est, ref), 10.0 * std::log10(rho), 1e-6);
  }
}

TEST(SiSnr, CapAndDegenerateInputs) {
  const auto ref = tsepi::testing::gaussian(1000, 5);
  EXPECT_EQ(si_snr_db(ref, ref), kCapDb);
  EXPECT_EQ(si_snr_db(scaled(ref, 3.7), ref), kCapDb);
  tsepi::testing::expect_error([&] { si_snr_db(std::vector<double>(1000, 0.0), ref); }, ErrorCode::InvalidArgument);
  tsepi::testing::expect_error([&] { si_snr_db(ref, std::vector<double>(1000, 0.0)); }, ErrorCode::InvalidArgument);
  tsepi::testing::expect_error([&] { si_snr_db(ref, std::vector<double>(999, 1.0)); }, ErrorCode::InvalidArgument);
}

TEST(Snr, KnownRatios) {
  const auto ref = tsepi::testing::gaussian(4000, 6);
  auto n = tsepi::testing::gaussian(4000, 7);
  n = scaled(n, std::sqrt(energy(ref) / (100.0 * energy(n))));
  EXPECT_NEAR(snr_db(add(ref, n), ref), 20.0, 1e-9);
  EXPECT_EQ(snr_db(ref, ref), kCapDb);
  EXPECT_NEAR(snr_db(std::vector<double>(4000, 0.0), ref), 0.0, 1e-12);
  // not scale invariant: residual of 2x equals ref
  EXPECT_NEAR(snr_db(scaled(ref, 2.0), ref), 0.0, 1e-12);
}

TEST(Improvement, MixtureAndOracle) {
  const auto ref = tsepi::testing::gaussian(2000, 8);
  const auto mix = add(ref, tsepi::testing::gaussian(2000, 9));
  using SpanMetric = double (*)(std::span<const double>, std::span<const double>);
  for (const Metric& m : {Metric(static_cast<SpanMetric>(snr_db)), Metric(static_cast<SpanMetric>(si_snr_db))}) {
    EXPECT_NEAR(improvement(m, mix, ref, mix), 0.0, 1e-12);
    EXPECT_NEAR(improvement(m, ref, ref, mix), kCapDb - m(mix, ref), 1e-12);
  }
}

TEST(CombinedLoss, DefaultsAndPureSnr) {
  const LossWeights w;
  EXPECT_EQ(w.snr, 0.9);
  EXPECT_EQ(w.si_snr, 0.1);
  const auto ref = tsepi::testing::gaussian(1000, 10);
  const auto est = add(ref, scaled(tsepi::testing::gaussian(1000, 11), 0.5));
  const auto pure = combined_loss(est, ref, {1.0, 0.0});
  EXPECT_NEAR(pure.loss, -pure.snr_db, 1e-12);
  EXPECT_NEAR(pure.snr_db, snr_db(est, ref), 1e-6);
  EXPECT_NEAR(pure.si_snr_db, si_snr_db(est, ref), 1e-6);
  const auto good = combined_loss(add(ref, scaled(est, 1e-4)), ref, w);
  EXPECT_LT(good.loss, -50.0);
  tsepi::testing::expect_error([&] { combined_loss(est, ref, {0.5, 0.6}); }, ErrorCode::InvalidArgument);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
  const auto ref = tsepi::testing::gaussian(300, 12);
  auto est = add(scaled(ref, 0.8), scaled(tsepi::testing::gaussian(300, 13), 0.4));
  for (const LossWeights w : {LossWeights{0.9, 0.1}, LossWeights{0.5, 0.5}, LossWeights{0.0, 1.0}}) {
    const auto lv = combined_loss(est, ref, w);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) {
      const double keep = est[i], h = 1e-6;
      est[i] = keep + h;
      const double up = combined_loss(est, ref, w, false).loss;
      est[i] = keep - h;
      const double dn = combined_loss(est, ref, w, false).loss;
      est[i] = keep;
      const double num = (up - dn) / (2 * h);
      diff += std::pow(num - lv.grad[i], 2);
      norm += num * num;
    }
    EXPECT_LT(std::sqrt(diff / norm), 1e-3);
  }
}

TEST(Aggregate, GlobalIsCountWeightedClassMean) {
  std::vector<SampleScores> s;
  const double vals[] = {1.0, 2.0, 4.0, 8.0, 16.0, 3.0};
  const int cls[] = {0, 0, 0, 5, 5, 9};
  for (int i = 0; i < 6; ++i) s.push_back({"x", cls[i], 0.0, vals[i], 1.0, 1.0 + 2 * vals[i]});
  const auto a = aggregate(s);
  ASSERT_EQ(a.per_class.size(), 3u);
  double weighted = 0.0;
  for (const auto& [c, v] : a.per_class) weighted += v.snri * v.count;
  EXPECT_DOUBLE_EQ(a.snri, weighted / 6.0);
  EXPECT_DOUBLE_EQ(a.per_class.at(0).snri, 7.0 / 3.0);
  EXPECT_DOUBLE_EQ(a.per_class.at(5).si_snri, 24.0);
  EXPECT_EQ(a.count, 6);
}
