#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsepi/error.hpp"

namespace tsepi {

/// Log-frequency pitch grid. Voiced bins are 0..n_bins-1, the unvoiced class is n_bins.
class PitchGrid {
 public:
  PitchGrid(double f_min = 32.7, double f_max = 1975.5, double step_cents = 20.0)
      : f_min_(f_min), f_max_(f_max), step_(step_cents) {
    require(f_min > 0.0 && f_max > f_min, "pitch grid: need 0 < f_min < f_max");
    require(step_cents > 0.0, "pitch grid: step must be positive");
    n_bins_ = static_cast<int>(std::lround(1200.0 * std::log2(f_max / f_min) / step_cents)) + 1;
  }

  double f_min() const noexcept { return f_min_; }
  double f_max() const noexcept { return f_max_; }
  double step_cents() const noexcept { return step_; }
  int n_bins() const noexcept { return n_bins_; }
  int unvoiced_index() const noexcept { return n_bins_; }
  int n_classes() const noexcept { return n_bins_ + 1; }

  bool is_voiced(int bin) const noexcept { return bin >= 0 && bin < n_bins_; }

  /// Cents above f_min.
  double cents(double hz) const { return 1200.0 * std::log2(hz / f_min_); }

  double bin_to_hz(int bin) const {
    require(bin >= 0 && bin <= n_bins_, "pitch grid: bin out of range");
    if (bin == n_bins_) return 0.0;
    return f_min_ * std::exp2(bin * step_ / 1200.0);
  }

  int hz_to_bin(double hz) const {
    require(std::isfinite(hz) && hz >= 0.0, "hz_to_bin: frequency must be non-negative");
    if (hz == 0.0) return unvoiced_index();
    const long b = std::lround(cents(hz) / step_);
    return static_cast<int>(std::clamp<long>(b, 0, n_bins_ - 1));
  }

  bool operator==(const PitchGrid& o) const noexcept {
    return f_min_ == o.f_min_ && f_max_ == o.f_max_ && step_ == o.step_;
  }

 private:
  double f_min_;
  double f_max_;
  double step_;
  int n_bins_;
};

/// Per-frame pitch labels on a PitchGrid.
struct PitchSequence {
  std::vector<int> bins;
  double hop = 0.01;

  std::size_t size() const noexcept { return bins.size(); }

  void validate(const PitchGrid& grid) const {
    require(hop > 0.0, "pitch sequence: hop must be positive");
    for (int b : bins)
      require(b >= 0 && b <= grid.n_bins(), "pitch sequence: bin " + std::to_string(b) + " out of range");
  }
};

/// frames x (n_bins + 1) one-hot matrix.
inline Eigen::MatrixXd one_hot(const PitchSequence& seq, const PitchGrid& grid) {
  seq.validate(grid);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(seq.size()), grid.n_classes());
  for (std::size_t t = 0; t < seq.size(); ++t) m(static_cast<Eigen::Index>(t), seq.bins[t]) = 1.0;
  return m;
}

/// Row-wise argmax of a frames x classes matrix.
inline PitchSequence argmax_sequence(const Eigen::MatrixXd& m, double hop) {
  PitchSequence seq;
  seq.hop = hop;
  seq.bins.resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    Eigen::Index best;
    m.row(t).maxCoeff(&best);
    seq.bins[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return seq;
}

/// Raw pitch accuracy over reference-voiced frames.
inline double rpa(const PitchSequence& est, const PitchSequence& ref, const PitchGrid& grid,
                  double threshold_cents = 50.0) {
  require(est.size() == ref.size(), "rpa: sequence lengths differ");
  require(std::abs(est.hop - ref.hop) < 1e-12, "rpa: hops differ");
  std::size_t voiced = 0, hits = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    if (!grid.is_voiced(ref.bins[t])) continue;
    ++voiced;
    if (!grid.is_voiced(est.bins[t])) continue;
    const double err = std::abs(est.bins[t] - ref.bins[t]) * grid.step_cents();
    if (err <= threshold_cents + 1e-9) ++hits;
  }
  if (voiced == 0) fail(ErrorCode::UndefinedResult, "rpa: reference has no voiced frames");
  return static_cast<double>(hits) / static_cast<double>(voiced);
}

/// Cosine similarity of two Hz vectors. Both all-zero is undefined; exactly one
/// all-zero yields 0.
inline double coss_hz(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "coss: sequence lengths differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 && bb == 0.0) fail(ErrorCode::UndefinedResult, "coss: both sequences are all unvoiced");
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

inline std::vector<double> to_hz(const PitchSequence& seq, const PitchGrid& grid) {
  std::vector<double> hz(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) hz[i] = grid.bin_to_hz(seq.bins[i]);
  return hz;
}

inline double coss(const PitchSequence& est, const PitchSequence& ref, const PitchGrid& grid) {
  require(est.size() == ref.size(), "coss: sequence lengths differ");
  return coss_hz(to_hz(est, grid), to_hz(ref, grid));
}

/// CSV lines: frame_index,f0_hz,bin_index (f0 is 0 for unvoiced frames).
inline void write_pitch_csv(const std::filesystem::path& path, const PitchSequence& seq,
                            const PitchGrid& grid) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write pitch csv: " + path.string());
  out.precision(10);
  for (std::size_t i = 0; i < seq.size(); ++i)
    out << i << ',' << grid.bin_to_hz(seq.bins[i]) << ',' << seq.bins[i] << '\n';
}

inline PitchSequence read_pitch_csv(const std::filesystem::path& path, const PitchGrid& grid,
                                    double hop = 0.01) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open pitch csv: " + path.string());
  PitchSequence seq;
  seq.hop = hop;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string idx, hz, bin;
    if (!std::getline(ss, idx, ',') || !std::getline(ss, hz, ',') || !std::getline(ss, bin))
      fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    try {
      if (std::stoul(idx) != seq.bins.size())
        fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": frame index out of order");
      seq.bins.push_back(std::stoi(bin));
    } catch (const std::logic_error&) {
      fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": unparsable field");
    }
  }
  seq.validate(grid);
  return seq;
}

}  // namespace tsepi
