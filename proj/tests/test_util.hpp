#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tsepi/audio.hpp"
#include "tsepi/error.hpp"
#include "tsepi/nn.hpp"

namespace tsepi::testing {

inline AudioClip sine(double hz, double seconds, int fs = kWorkingRate, double amp = 0.5, double phase = 0.0) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / fs + phase);
  return AudioClip(std::move(x), fs);
}

inline std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("tsepi_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Central-difference check of p.grad (already accumulated for `loss`) on up
/// to `samples` random entries. Returns ||analytic - numeric|| / max norm.
inline double grad_rel_error(nn::Param<double>& p, const std::function<double()>& loss, int samples,
                             std::uint64_t seed, double h = 1e-6) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
  const int n = static_cast<int>(std::min<Eigen::Index>(samples, p.value.size()));
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (int s = 0; s < n; ++s) {
    const Eigen::Index i = p.value.size() <= samples ? s : pick(rng);
    double& v = p.value.data()[i];
    const double keep = v;
    v = keep + h;
    const double up = loss();
    v = keep - h;
    const double dn = loss();
    v = keep;
    const double num = (up - dn) / (2.0 * h);
    const double ana = p.grad.data()[i];
    diff += (num - ana) * (num - ana);
    na += ana * ana;
    nn += num * num;
  }
  const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-12);
  return std::sqrt(diff) / scale;
}

template <typename F>
void expect_error(F&& f, ErrorCode code) {
  try {
    f();
    ADD_FAILURE() << "expected an error with code " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace tsepi::testing
