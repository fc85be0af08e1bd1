#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "tsepi/error.hpp"

namespace tsepi {

/// Mono signal plus its sample rate. Every module exchanges audio as clips.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;

  AudioClip() = default;
  AudioClip(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  void validate() const {
    require(sample_rate > 0, "sample rate must be positive");
    for (double v : samples) require(std::isfinite(v), "audio clip contains non-finite samples");
  }
};

/// Magnitude spectrogram, frames x bins.
struct Spectrogram {
  Eigen::MatrixXd frames;
  int window_size = 0;
  int hop = 0;
  int sample_rate = 0;

  Eigen::Index n_frames() const noexcept { return frames.rows(); }
  Eigen::Index n_bins() const noexcept { return frames.cols(); }
};

inline constexpr int kWorkingRate = 16000;
inline constexpr int kDefaultWindow = 1024;
inline constexpr int kDefaultHop = 160;

inline double energy(std::span<const double> x) noexcept {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double rms(std::span<const double> x) noexcept {
  return x.empty() ? 0.0 : std::sqrt(energy(x) / static_cast<double>(x.size()));
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

/// Zero-pads or crops to exactly `length` samples.
inline AudioClip fit_length(const AudioClip& clip, std::size_t length) {
  AudioClip out = clip;
  out.samples.resize(length, 0.0);
  return out;
}

/// Frame count of a `window`/`hop` analysis over `length` samples.
inline int frame_count(std::size_t length, int window, int hop) {
  if (length < static_cast<std::size_t>(window)) return 0;
  return static_cast<int>((length - window) / hop) + 1;
}

namespace detail {

inline double sinc(double x) noexcept {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

inline double kaiser(double x, double beta) noexcept {
  // x in [-1, 1]
  if (std::abs(x) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

/// Band-limited resampling with a Kaiser-windowed sinc kernel. The output
/// holds round(len * target / source) samples.
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  require(target_rate > 0, "resample: target rate must be positive");
  require(clip.sample_rate > 0, "resample: source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  constexpr double kZeroCrossings = 32.0;
  constexpr double kRolloff = 0.97;
  constexpr double kBeta = 8.6;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio) * kRolloff;
  const double half_width = kZeroCrossings / cutoff;
  const auto n_in = static_cast<std::ptrdiff_t>(clip.size());
  const auto n_out = static_cast<std::size_t>(std::llround(n_in * ratio));

  std::vector<double> out(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const double d = t - static_cast<double>(k);
      acc += clip.samples[k] * cutoff * detail::sinc(cutoff * d) * detail::kaiser(d / half_width, kBeta);
    }
    out[n] = acc;
  }
  return AudioClip(std::move(out), target_rate);
}

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

inline Spectrogram stft_magnitude(const AudioClip& clip, int window = kDefaultWindow,
                                  int hop = kDefaultHop) {
  require(window > 0 && hop > 0 && hop <= window, "stft: need 0 < hop <= window");
  require(clip.size() >= static_cast<std::size_t>(window), "stft: clip shorter than window");

  const int n_frames = frame_count(clip.size(), window, hop);
  const int n_bins = window / 2 + 1;
  const auto w = hann_window(window);

  Spectrogram spec;
  spec.window_size = window;
  spec.hop = hop;
  spec.sample_rate = clip.sample_rate;
  spec.frames.resize(n_frames, n_bins);

  Eigen::FFT<double> fft;
  std::vector<double> buf(window);
  std::vector<std::complex<double>> bins;
  for (int f = 0; f < n_frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * hop;
    for (int i = 0; i < window; ++i) buf[i] = clip.samples[start + i] * w[i];
    fft.fwd(bins, buf);
    for (int b = 0; b < n_bins; ++b) spec.frames(f, b) = std::abs(bins[b]);
  }
  return spec;
}

/// Returns target + scale * interference with the requested target-to-interference ratio.
inline std::pair<AudioClip, double> mix_at_snr(const AudioClip& target,
                                               const AudioClip& interference, double snr_db) {
  require(target.sample_rate == interference.sample_rate, "mix_at_snr: sample rates differ");
  require(target.size() == interference.size(), "mix_at_snr: lengths differ");
  const double e_t = energy(target.samples);
  const double e_i = energy(interference.samples);
  require(e_t > 0.0, "mix_at_snr: target has zero energy");
  require(e_i > 0.0, "mix_at_snr: interference has zero energy");

  const double scale = std::sqrt(e_t / (e_i * std::pow(10.0, snr_db / 10.0)));
  AudioClip mix = target;
  for (std::size_t i = 0; i < mix.size(); ++i) mix.samples[i] += scale * interference.samples[i];
  return {std::move(mix), scale};
}

/// Linear convolution, truncated to the signal length (output n aligned with input n).
inline AudioClip convolve(const AudioClip& signal, std::span<const double> kernel) {
  require(!kernel.empty(), "convolve: empty kernel");
  const std::size_t n = signal.size();
  const std::size_t m = kernel.size();
  AudioClip out(std::vector<double>(n, 0.0), signal.sample_rate);
  if (n == 0) return out;

  if (m <= 64 || n <= 64) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const std::size_t kmax = std::min(m - 1, i);
      for (std::size_t k = 0; k <= kmax; ++k) acc += kernel[k] * signal.samples[i - k];
      out.samples[i] = acc;
    }
    return out;
  }

  const std::size_t keep = std::min(m, n);
  const std::size_t n_fft = detail::next_pow2(n + keep - 1);
  std::vector<double> a(n_fft, 0.0), b(n_fft, 0.0);
  std::copy(signal.samples.begin(), signal.samples.end(), a.begin());
  std::copy(kernel.begin(), kernel.begin() + static_cast<std::ptrdiff_t>(keep), b.begin());

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> full;
  fft.inv(full, fa);
  std::copy(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n), out.samples.begin());
  return out;
}

inline AudioClip convolve(const AudioClip& signal, const std::vector<double>& kernel) {
  return convolve(signal, std::span<const double>(kernel));
}

}  // namespace tsepi
