#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsepi/audio.hpp"
#include "tsepi/error.hpp"
#include "tsepi/nn.hpp"

namespace tsepi::gtfb {

/// Glasberg-Moore equivalent rectangular bandwidth in Hz.
inline double erb(double f) {
  require(std::isfinite(f) && f >= 0.0, "erb: frequency must be non-negative");
  return 24.7 * (4.37 * f / 1000.0 + 1.0);
}

inline constexpr double kErbSlope = 24.7 * 4.37 / 1000.0;  // d erb / d f

/// ERB-rate (number of ERBs below f).
inline double erb_rate(double f) { return 21.4 * std::log10(1.0 + 4.37 * f / 1000.0); }

inline double erb_rate_inverse(double e) { return (std::pow(10.0, e / 21.4) - 1.0) * 1000.0 / 4.37; }

inline double erb_rate_inverse_derivative(double e) {
  return std::pow(10.0, e / 21.4) * std::numbers::ln10 / 21.4 * 1000.0 / 4.37;
}

/// K center frequencies equally spaced on the ERB-rate scale over [f_low, f_high].
inline std::vector<double> init_center_freqs(int count, double f_low, double f_high, int fs = kWorkingRate) {
  require(count >= 1, "init_center_freqs: need at least one filter");
  require(f_low > 0.0 && f_low < f_high && f_high < fs / 2.0,
          "init_center_freqs: need 0 < f_low < f_high < fs/2");
  std::vector<double> fc(static_cast<std::size_t>(count));
  if (count == 1) {
    fc[0] = erb_rate_inverse(0.5 * (erb_rate(f_low) + erb_rate(f_high)));
    return fc;
  }
  const double e0 = erb_rate(f_low), e1 = erb_rate(f_high);
  for (int k = 0; k < count; ++k) fc[static_cast<std::size_t>(k)] = erb_rate_inverse(e0 + (e1 - e0) * k / (count - 1));
  fc.front() = f_low;
  fc.back() = f_high;
  return fc;
}

/// |H(f)|^2 of the unnormalized kernel with phase `ph`.
inline double kernel_power(double f, double fc, double bw_scale, double ph, int order, int length, int fs) {
  const double b = bw_scale * erb(fc);
  std::complex<double> h = 0.0;
  for (int t = 0; t < length; ++t) {
    const double s = static_cast<double>(t) / fs;
    const double g = std::pow(s, order - 1) * std::exp(-2.0 * std::numbers::pi * b * s) *
                     std::cos(2.0 * std::numbers::pi * fc * s + ph);
    h += g * std::polar(1.0, -2.0 * std::numbers::pi * f * s);
  }
  return std::norm(h);
}

/// Initial phase that puts the magnitude-response peak of a short kernel at
/// fc. With a few taps the negative-frequency image drags the peak away from
/// fc; the slope of |H|^2 at fc is a + b cos(2 ph) + c sin(2 ph), so a zero
/// crossing is found in closed form.
inline double aligned_phase(double fc, double bw_scale, int order, int length, int fs = kWorkingRate) {
  const double df = 1e-3;
  const auto slope = [&](double ph) {
    return (kernel_power(fc + df, fc, bw_scale, ph, order, length, fs) -
            kernel_power(fc - df, fc, bw_scale, ph, order, length, fs)) / (2.0 * df);
  };
  const double g0 = slope(0.0), g1 = slope(std::numbers::pi / 4.0), g2 = slope(std::numbers::pi / 2.0);
  const double a = 0.5 * (g0 + g2), b = 0.5 * (g0 - g2), c = g1 - a;
  const double r = std::hypot(b, c), psi = std::atan2(c, b);
  if (r <= 0.0) return 0.0;
  std::vector<double> cands;
  if (std::abs(a) <= r) {
    const double d = std::acos(-a / r);
    cands = {0.5 * (psi + d), 0.5 * (psi - d)};
  } else {
    cands = {0.5 * (a > 0.0 ? psi + std::numbers::pi : psi)};
  }
  // of the two zero crossings, the maximum has the larger gain at fc
  double best = cands[0], best_gain = -1.0;
  for (double ph : cands) {
    const double gain = kernel_power(fc, fc, bw_scale, ph, order, length, fs);
    if (gain > best_gain) {
      best_gain = gain;
      best = ph;
    }
  }
  return std::remainder(best, 2.0 * std::numbers::pi);
}

/// Filter parameters in their constrained (physical) form.
struct GammatoneParams {
  std::vector<double> fc;        // Hz
  std::vector<double> bw_scale;  // multiplier on erb(fc)
  std::vector<double> amp;
  std::vector<double> phase;     // radians
  int order = 4;
  int length = 32;
  bool learnable = true;

  std::size_t count() const noexcept { return fc.size(); }

  static GammatoneParams standard(int count, int length, int fs = kWorkingRate, double f_low = 50.0,
                                  double f_high = 7800.0) {
    GammatoneParams p;
    p.fc = init_center_freqs(count, f_low, f_high, fs);
    p.bw_scale.assign(static_cast<std::size_t>(count), 1.019);
    p.amp.assign(static_cast<std::size_t>(count), 1.0);
    p.length = length;
    p.phase.resize(static_cast<std::size_t>(count));
    for (std::size_t k = 0; k < p.fc.size(); ++k) p.phase[k] = aligned_phase(p.fc[k], p.bw_scale[k], p.order, length, fs);
    return p;
  }

  void validate(int fs) const {
    const std::size_t k = fc.size();
    require(k > 0 && bw_scale.size() == k && amp.size() == k && phase.size() == k,
            "gammatone: parameter vectors must have equal non-zero length");
    require(order >= 1 && length >= 1, "gammatone: order and length must be positive");
    for (std::size_t i = 0; i < k; ++i) {
      require(fc[i] > 0.0 && fc[i] < fs / 2.0,
              "gammatone: center frequency " + std::to_string(fc[i]) + " Hz outside (0, fs/2)");
      require(bw_scale[i] >= 0.0 && std::isfinite(bw_scale[i]), "gammatone: bandwidth scale must be >= 0");
      require(std::isfinite(amp[i]) && std::isfinite(phase[i]), "gammatone: non-finite amplitude or phase");
    }
  }
};

namespace detail {

struct KernelTerms {
  Eigen::MatrixXd shape;  // unnormalized g, L x K
  Eigen::VectorXd norm;   // ||g_k||
};

inline KernelTerms raw_kernels(const GammatoneParams& p, int fs) {
  const auto L = static_cast<Eigen::Index>(p.length), K = static_cast<Eigen::Index>(p.count());
  KernelTerms kt{Eigen::MatrixXd(L, K), Eigen::VectorXd(K)};
  for (Eigen::Index k = 0; k < K; ++k) {
    const double fc = p.fc[k], b = p.bw_scale[k] * erb(fc), ph = p.phase[k];
    for (Eigen::Index t = 0; t < L; ++t) {
      const double s = static_cast<double>(t) / fs;
      kt.shape(t, k) = std::pow(s, p.order - 1) * std::exp(-2.0 * std::numbers::pi * b * s) *
                       std::cos(2.0 * std::numbers::pi * fc * s + ph);
    }
    kt.norm(k) = kt.shape.col(k).norm();
  }
  return kt;
}

}  // namespace detail

/// L x K kernel matrix: amp_k * g_k / ||g_k|| with
/// g_k[t] = (t/fs)^(n-1) exp(-2 pi b_k erb(fc_k) t/fs) cos(2 pi fc_k t/fs + phase_k).
inline Eigen::MatrixXd build_kernels(const GammatoneParams& p, int fs = kWorkingRate) {
  p.validate(fs);
  auto kt = detail::raw_kernels(p, fs);
  for (Eigen::Index k = 0; k < kt.shape.cols(); ++k) {
    require(kt.norm(k) > 0.0, "gammatone: kernel " + std::to_string(k) + " is identically zero");
    kt.shape.col(k) *= p.amp[static_cast<std::size_t>(k)] / kt.norm(k);
  }
  return kt.shape;
}

/// Gradients of sum(dK .* K) with respect to the constrained parameters.
struct KernelGrads {
  Eigen::VectorXd fc, bw_scale, amp, phase;
};

inline KernelGrads build_kernels_backward(const GammatoneParams& p, const Eigen::MatrixXd& dkernels,
                                          int fs = kWorkingRate) {
  const auto kt = detail::raw_kernels(p, fs);
  const auto L = kt.shape.rows(), K = kt.shape.cols();
  require(dkernels.rows() == L && dkernels.cols() == K, "gammatone backward: gradient shape mismatch");
  KernelGrads g{Eigen::VectorXd::Zero(K), Eigen::VectorXd::Zero(K), Eigen::VectorXd::Zero(K),
                Eigen::VectorXd::Zero(K)};
  const double two_pi = 2.0 * std::numbers::pi;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double nrm = kt.norm(k);
    const Eigen::VectorXd unit = kt.shape.col(k) / nrm;
    const double amp = p.amp[static_cast<std::size_t>(k)];
    g.amp(k) = dkernels.col(k).dot(unit);
    const Eigen::VectorXd dunit = amp * dkernels.col(k);
    const Eigen::VectorXd dshape = (dunit - unit * unit.dot(dunit)) / nrm;

    const double fc = p.fc[k], bs = p.bw_scale[k], ph = p.phase[k];
    const double bw = bs * erb(fc);
    for (Eigen::Index t = 0; t < L; ++t) {
      const double s = static_cast<double>(t) / fs;
      const double env = std::pow(s, p.order - 1) * std::exp(-two_pi * bw * s);
      const double arg = two_pi * fc * s + ph;
      const double val = env * std::cos(arg);
      const double sin_term = -env * std::sin(arg);
      g.bw_scale(k) += dshape(t) * val * (-two_pi * erb(fc) * s);
      g.fc(k) += dshape(t) * (val * (-two_pi * bs * kErbSlope * s) + sin_term * two_pi * s);
      g.phase(k) += dshape(t) * sin_term;
    }
  }
  return g;
}

/// K x n_frames encoder output.
struct EncodedFrames {
  Eigen::MatrixXd features;
  int stride = 0;
};

/// L x n_frames matrix of strided waveform windows.
template <typename T>
nn::Mat<T> frame_matrix(std::span<const double> x, int length, int stride) {
  require(length > 0 && stride > 0, "framing: length and stride must be positive");
  require(x.size() >= static_cast<std::size_t>(length), "framing: waveform shorter than the filter length");
  const int frames = frame_count(x.size(), length, stride);
  nn::Mat<T> f(length, frames);
  for (int j = 0; j < frames; ++j)
    for (int t = 0; t < length; ++t) f(t, j) = static_cast<T>(x[static_cast<std::size_t>(j) * stride + t]);
  return f;
}

/// Strided correlation with each kernel, before the rectifier.
inline Eigen::MatrixXd encode_linear(const AudioClip& waveform, const Eigen::MatrixXd& kernels, int stride) {
  require(waveform.size() >= static_cast<std::size_t>(kernels.rows()), "encode: waveform shorter than the filter length");
  return kernels.transpose() * frame_matrix<double>(waveform.samples, static_cast<int>(kernels.rows()), stride);
}

inline EncodedFrames encode(const AudioClip& waveform, const GammatoneParams& params, int stride) {
  const Eigen::MatrixXd kernels = build_kernels(params, waveform.sample_rate);
  return {encode_linear(waveform, kernels, stride).cwiseMax(0.0), stride};
}

/// Trainable bank. Stores unconstrained values; fc lives on the ERB-rate axis
/// behind a sigmoid, bw_scale behind a softplus, so any raw value maps to a
/// valid filter.
template <typename T>
class GammatoneBank {
 public:
  static constexpr double kMargin = 1e-6;

  GammatoneBank() = default;
  GammatoneBank(const std::string& name, const GammatoneParams& init, int fs = kWorkingRate)
      : fs_(fs), order_(init.order), length_(init.length),
        fc_raw_(name + ".fc", static_cast<Eigen::Index>(init.count()), 1),
        bw_raw_(name + ".bw_scale", static_cast<Eigen::Index>(init.count()), 1),
        amp_(name + ".amp", static_cast<Eigen::Index>(init.count()), 1),
        phase_(name + ".phase", static_cast<Eigen::Index>(init.count()), 1) {
    init.validate(fs);
    for (std::size_t k = 0; k < init.count(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      fc_raw_.value(i, 0) = static_cast<T>(fc_to_raw(init.fc[k]));
      bw_raw_.value(i, 0) = static_cast<T>(bw_to_raw(init.bw_scale[k]));
      amp_.value(i, 0) = static_cast<T>(init.amp[k]);
      phase_.value(i, 0) = static_cast<T>(init.phase[k]);
    }
    set_learnable(init.learnable);
  }

  double nyquist_erb_rate() const { return erb_rate(fs_ / 2.0); }

  double raw_to_fc(double u) const {
    const double sig = 1.0 / (1.0 + std::exp(-u));
    return erb_rate_inverse(nyquist_erb_rate() * (kMargin + (1.0 - 2.0 * kMargin) * sig));
  }
  double fc_to_raw(double fc) const {
    const double q = (erb_rate(fc) / nyquist_erb_rate() - kMargin) / (1.0 - 2.0 * kMargin);
    return std::log(q / (1.0 - q));
  }
  static double raw_to_bw(double v) { return softplus(v) + kMargin; }
  static double bw_to_raw(double bw) {
    const double y = bw - kMargin;
    return y > 30.0 ? y : std::log(std::expm1(y));
  }

  void set_learnable(bool on) {
    learnable_ = on;
    for (auto* p : raw_params()) p->trainable = on;
  }
  bool learnable() const noexcept { return learnable_; }
  int length() const noexcept { return length_; }
  int count() const noexcept { return static_cast<int>(fc_raw_.value.rows()); }
  int sample_rate() const noexcept { return fs_; }

  GammatoneParams params() const {
    GammatoneParams p;
    const int k = count();
    p.fc.resize(k);
    p.bw_scale.resize(k);
    p.amp.resize(k);
    p.phase.resize(k);
    for (int i = 0; i < k; ++i) {
      p.fc[i] = raw_to_fc(static_cast<double>(fc_raw_.value(i, 0)));
      p.bw_scale[i] = raw_to_bw(static_cast<double>(bw_raw_.value(i, 0)));
      p.amp[i] = static_cast<double>(amp_.value(i, 0));
      p.phase[i] = static_cast<double>(phase_.value(i, 0));
    }
    p.order = order_;
    p.length = length_;
    p.learnable = learnable_;
    return p;
  }

  nn::Mat<T> kernels() const { return build_kernels(params(), fs_).template cast<T>(); }

  /// Chains dL/dkernels through the constraint maps into the raw parameters.
  void backward(const nn::Mat<T>& dkernels) {
    if (!learnable_) return;
    const GammatoneParams p = params();
    const KernelGrads g = build_kernels_backward(p, dkernels.template cast<double>(), fs_);
    const double enyq = nyquist_erb_rate();
    for (int i = 0; i < count(); ++i) {
      const double u = static_cast<double>(fc_raw_.value(i, 0));
      const double sig = 1.0 / (1.0 + std::exp(-u));
      const double e = enyq * (kMargin + (1.0 - 2.0 * kMargin) * sig);
      const double dfc_du = erb_rate_inverse_derivative(e) * enyq * (1.0 - 2.0 * kMargin) * sig * (1.0 - sig);
      const double v = static_cast<double>(bw_raw_.value(i, 0));
      const double dbw_dv = 1.0 / (1.0 + std::exp(-v));
      fc_raw_.grad(i, 0) += static_cast<T>(g.fc(i) * dfc_du);
      bw_raw_.grad(i, 0) += static_cast<T>(g.bw_scale(i) * dbw_dv);
      amp_.grad(i, 0) += static_cast<T>(g.amp(i));
      phase_.grad(i, 0) += static_cast<T>(g.phase(i));
    }
  }

  std::vector<nn::Param<T>*> raw_params() { return {&fc_raw_, &bw_raw_, &amp_, &phase_}; }
  void collect(nn::ParamList<T>& ps) {
    for (auto* p : raw_params()) ps.push_back(p);
  }

 private:
  static double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

  int fs_ = kWorkingRate;
  int order_ = 4;
  int length_ = 32;
  bool learnable_ = true;
  nn::Param<T> fc_raw_, bw_raw_, amp_, phase_;
};

}  // namespace tsepi::gtfb
