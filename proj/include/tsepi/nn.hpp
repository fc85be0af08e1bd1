#pragma once

// Minimal layer toolkit with hand-written backward passes. Activations are
// channels x frames matrices. Layers are stateless: the model keeps whatever
// forward intermediates its backward pass needs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tsepi/error.hpp"

namespace tsepi::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const noexcept { return value.size(); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename T>
std::size_t count_params(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->size());
  return n;
}

/// FNV-1a; stable across platforms, used to derive per-parameter init seeds.
constexpr std::uint64_t hash_name(std::string_view s, std::uint64_t seed = 0) noexcept {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
void init_uniform(Param<T>& p, double bound, std::uint64_t seed) {
  std::mt19937_64 rng(hash_name(p.name, seed));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
void init_normal(Param<T>& p, double mean, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(hash_name(p.name, seed));
  std::normal_distribution<double> dist(mean, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

enum class Padding { Same, Causal };

/// Dilated 1-D convolution. Weight layout: out x (kernel * in), tap-major blocks.
template <typename T>
struct Conv1d {
  int in = 0, out = 0, kernel = 1, dilation = 1;
  Padding padding = Padding::Same;
  Param<T> weight;
  Param<T> bias;

  Conv1d() = default;
  Conv1d(const std::string& name, int in_ch, int out_ch, int k = 1, int dil = 1,
         Padding pad = Padding::Same)
      : in(in_ch), out(out_ch), kernel(k), dilation(dil), padding(pad),
        weight(name + ".weight", out_ch, static_cast<Eigen::Index>(k) * in_ch),
        bias(name + ".bias", out_ch, 1) {}

  void init(std::uint64_t seed, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(in * kernel));
    init_uniform(weight, bound, seed);
    init_uniform(bias, bound, seed);
  }

  int tap_offset(int j) const noexcept {
    return padding == Padding::Causal ? (j - (kernel - 1)) * dilation
                                      : (j - (kernel - 1) / 2) * dilation;
  }

  /// Frames of context on each side: {past, future}.
  std::pair<int, int> context() const noexcept {
    return {-tap_offset(0), tap_offset(kernel - 1)};
  }

  Mat<T> forward(const Mat<T>& x) const {
    require(x.rows() == in, "conv1d: channel mismatch");
    const Eigen::Index frames = x.cols();
    Mat<T> y = bias.value.col(0).replicate(1, frames);
    for (int j = 0; j < kernel; ++j) {
      const int o = tap_offset(j);
      const Eigen::Index t0 = std::max<Eigen::Index>(0, -o);
      const Eigen::Index len = frames - std::abs(o);
      if (len <= 0) continue;
      y.middleCols(t0, len).noalias() +=
          weight.value.middleCols(static_cast<Eigen::Index>(j) * in, in) * x.middleCols(t0 + o, len);
    }
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx when `need_input_grad`.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, bool need_input_grad = true) {
    const Eigen::Index frames = x.cols();
    bias.grad.col(0) += dy.rowwise().sum();
    Mat<T> dx;
    if (need_input_grad) dx = Mat<T>::Zero(in, frames);
    for (int j = 0; j < kernel; ++j) {
      const int o = tap_offset(j);
      const Eigen::Index t0 = std::max<Eigen::Index>(0, -o);
      const Eigen::Index len = frames - std::abs(o);
      if (len <= 0) continue;
      const auto wj = weight.value.middleCols(static_cast<Eigen::Index>(j) * in, in);
      weight.grad.middleCols(static_cast<Eigen::Index>(j) * in, in).noalias() +=
          dy.middleCols(t0, len) * x.middleCols(t0 + o, len).transpose();
      if (need_input_grad) dx.middleCols(t0 + o, len).noalias() += wj.transpose() * dy.middleCols(t0, len);
    }
    return dx;
  }

  void collect(ParamList<T>& params) {
    params.push_back(&weight);
    params.push_back(&bias);
  }
};

/// Per-channel parametric ReLU.
template <typename T>
struct PReLU {
  Param<T> slope;

  PReLU() = default;
  PReLU(const std::string& name, int channels, double init = 0.25) : slope(name + ".slope", channels, 1) {
    slope.value.setConstant(static_cast<T>(init));
  }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x;
    for (Eigen::Index t = 0; t < y.cols(); ++t)
      for (Eigen::Index c = 0; c < y.rows(); ++c)
        if (y(c, t) < T(0)) y(c, t) *= slope.value(c, 0);
    return y;
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    Mat<T> dx = dy;
    for (Eigen::Index t = 0; t < x.cols(); ++t)
      for (Eigen::Index c = 0; c < x.rows(); ++c)
        if (x(c, t) < T(0)) {
          slope.grad(c, 0) += dy(c, t) * x(c, t);
          dx(c, t) *= slope.value(c, 0);
        }
    return dx;
  }

  void collect(ParamList<T>& params) { params.push_back(&slope); }
};

template <typename T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
Mat<T> relu_backward(const Mat<T>& x, const Mat<T>& dy) {
  return (x.array() > T(0)).select(dy, T(0));
}

template <typename T>
Mat<T> sigmoid(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
}

/// Column-wise softmax.
template <typename T>
Mat<T> softmax_cols(const Mat<T>& logits) {
  Mat<T> p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const T m = logits.col(t).maxCoeff();
    p.col(t) = (logits.col(t).array() - m).exp();
    p.col(t) /= p.col(t).sum();
  }
  return p;
}

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

template <typename T>
class Adam {
 public:
  Adam(const ParamList<T>& params, AdamOptions opts) : params_(params), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    double scale = 1.0;
    if (opts_.clip_norm > 0.0) {
      double sq = 0.0;
      for (auto* p : params_)
        if (p->trainable) sq += static_cast<double>(p->grad.squaredNorm());
      const double norm = std::sqrt(sq);
      if (norm > opts_.clip_norm) scale = opts_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T step_size = static_cast<T>(opts_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<T>& p = *params_[i];
      if (!p.trainable) continue;
      const Mat<T> g = p.grad * static_cast<T>(scale);
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
      p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

  double lr() const noexcept { return opts_.lr; }
  void set_lr(double lr) noexcept { opts_.lr = lr; }
  std::int64_t steps() const noexcept { return t_; }
  void set_steps(std::int64_t t) noexcept { t_ = t; }
  std::vector<Mat<T>>& first_moments() noexcept { return m_; }
  std::vector<Mat<T>>& second_moments() noexcept { return v_; }
  const ParamList<T>& params() const noexcept { return params_; }

 private:
  ParamList<T> params_;
  AdamOptions opts_;
  std::vector<Mat<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace tsepi::nn
