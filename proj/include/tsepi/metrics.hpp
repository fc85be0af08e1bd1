#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tsepi/audio.hpp"
#include "tsepi/error.hpp"

namespace tsepi::metrics {

/// Reported metrics are capped so reports stay finite.
inline constexpr double kCapDb = 60.0;
/// Denominator stabilizer of the training loss.
inline constexpr double kLossEps = 1e-8;

namespace detail {

inline double capped_db(double num, double den) {
  if (den <= 0.0) return kCapDb;
  const double v = 10.0 * std::log10(num / den);
  return std::min(v, kCapDb);
}

inline std::vector<double> zero_mean(std::span<const double> x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v -= mean;
  return out;
}

}  // namespace detail

inline double snr_db(std::span<const double> est, std::span<const double> ref) {
  require(est.size() == ref.size(), "snr: lengths differ");
  const double e_ref = energy(ref);
  require(e_ref > 0.0, "snr: reference has zero energy");
  double e_res = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = ref[i] - est[i];
    e_res += d * d;
  }
  return detail::capped_db(e_ref, e_res);
}

inline double si_snr_db(std::span<const double> est, std::span<const double> ref) {
  require(est.size() == ref.size(), "si-snr: lengths differ");
  const auto e = detail::zero_mean(est);
  const auto r = detail::zero_mean(ref);
  const double rr = energy(r);
  require(rr > 0.0, "si-snr: reference has zero energy");
  require(energy(e) > 0.0, "si-snr: estimate has zero energy");
  const double alpha = dot(e, r) / rr;
  double e_target = 0.0, e_noise = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double s = alpha * r[i];
    const double n = e[i] - s;
    e_target += s * s;
    e_noise += n * n;
  }
  return detail::capped_db(e_target, e_noise);
}

inline double snr_db(const AudioClip& est, const AudioClip& ref) { return snr_db(est.samples, ref.samples); }
inline double si_snr_db(const AudioClip& est, const AudioClip& ref) { return si_snr_db(est.samples, ref.samples); }

using Metric = std::function<double(std::span<const double>, std::span<const double>)>;

/// metric(est, ref) - metric(mixture, ref)
inline double improvement(const Metric& metric, std::span<const double> est, std::span<const double> ref,
                          std::span<const double> mixture) {
  require(est.size() == ref.size() && mixture.size() == ref.size(), "improvement: lengths differ");
  return metric(est, ref) - metric(mixture, ref);
}

struct LossWeights {
  double snr = 0.9;
  double si_snr = 0.1;

  void validate() const {
    require(snr >= 0.0 && si_snr >= 0.0, "loss weights must be non-negative");
    require(std::abs(snr + si_snr - 1.0) < 1e-9, "loss weights must sum to 1");
  }
};

struct LossValue {
  double loss = 0.0;
  double snr_db = 0.0;
  double si_snr_db = 0.0;
  std::vector<double> grad;  // d loss / d est
};

/// -(w_snr * SNR + w_sisnr * SI-SNR) in the uncapped, eps-stabilized form,
/// with its gradient with respect to the estimate.
inline LossValue combined_loss(std::span<const double> est, std::span<const double> ref,
                               const LossWeights& w, bool with_grad = true) {
  w.validate();
  require(est.size() == ref.size() && !ref.empty(), "combined loss: lengths differ");
  const std::size_t n = ref.size();
  const double k = 10.0 / std::numbers::ln10;

  // SNR term
  double rr = 0.0, dd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ref[i] - est[i];
    rr += ref[i] * ref[i];
    dd += d * d;
  }
  const double snr = k * (std::log(rr + kLossEps) - std::log(dd + kLossEps));

  // SI-SNR term
  const auto e = detail::zero_mean(est);
  const auto r = detail::zero_mean(ref);
  const double er = dot(e, r);
  const double rr0 = energy(r);
  const double denom = rr0 + kLossEps;
  const double alpha = er / denom;
  const double ss = alpha * alpha * rr0;
  double nn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = e[i] - alpha * r[i];
    nn += v * v;
  }
  const double sisnr = k * (std::log(ss + kLossEps) - std::log(nn + kLossEps));

  LossValue out;
  out.snr_db = snr;
  out.si_snr_db = sisnr;
  out.loss = -(w.snr * snr + w.si_snr * sisnr);
  if (!with_grad) return out;

  out.grad.assign(n, 0.0);
  // d snr / d est = k * 2 (ref - est) / (dd + eps)
  const double c_snr = -w.snr * k * 2.0 / (dd + kLossEps);
  // d ss / d e = 2 alpha rr0 r / denom;  d nn / d e = 2 e - 4 alpha r + 2 alpha rr0 r / denom
  const double c_ss = w.si_snr * k / (ss + kLossEps);
  const double c_nn = w.si_snr * k / (nn + kLossEps);
  std::vector<double> g(n);
  double g_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dss = 2.0 * alpha * rr0 * r[i] / denom;
    const double dnn = 2.0 * e[i] - 4.0 * alpha * r[i] + 2.0 * alpha * rr0 * r[i] / denom;
    g[i] = -(c_ss * dss - c_nn * dnn);
    g_mean += g[i];
  }
  g_mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out.grad[i] = c_snr * (ref[i] - est[i]) + (g[i] - g_mean);
  return out;
}

struct SampleScores {
  std::string id;
  int class_label = 0;
  double snr_in = 0.0, snr_out = 0.0;
  double si_snr_in = 0.0, si_snr_out = 0.0;
  double snri() const { return snr_out - snr_in; }
  double si_snri() const { return si_snr_out - si_snr_in; }
};

inline SampleScores score_sample(std::string id, int class_label, std::span<const double> est,
                                 std::span<const double> ref, std::span<const double> mixture) {
  SampleScores s;
  s.id = std::move(id);
  s.class_label = class_label;
  s.snr_in = snr_db(mixture, ref);
  s.snr_out = snr_db(est, ref);
  s.si_snr_in = si_snr_db(mixture, ref);
  s.si_snr_out = si_snr_db(est, ref);
  return s;
}

struct ClassAggregate {
  int count = 0;
  double snri = 0.0;
  double si_snri = 0.0;
};

/// Per-class means plus the count-weighted global mean.
struct Aggregate {
  std::map<int, ClassAggregate> per_class;
  double snri = 0.0;
  double si_snri = 0.0;
  int count = 0;
};

inline Aggregate aggregate(const std::vector<SampleScores>& samples) {
  Aggregate agg;
  for (const auto& s : samples) {
    auto& c = agg.per_class[s.class_label];
    ++c.count;
    c.snri += s.snri();
    c.si_snri += s.si_snri();
  }
  for (auto& [label, c] : agg.per_class) {
    agg.snri += c.snri;
    agg.si_snri += c.si_snri;
    agg.count += c.count;
    c.snri /= c.count;
    c.si_snri /= c.count;
  }
  if (agg.count > 0) {
    agg.snri /= agg.count;
    agg.si_snri /= agg.count;
  }
  return agg;
}

}  // namespace tsepi::metrics
