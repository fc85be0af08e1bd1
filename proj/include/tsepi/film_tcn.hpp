#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsepi/audio.hpp"
#include "tsepi/error.hpp"
#include "tsepi/nn.hpp"
#include "tsepi/pitch.hpp"

namespace tsepi {

struct PitchNetConfig {
  int depth = 9;
  int channels = 64;
  int kernel = 3;
  int dilation_cycle = 8;  // dilation of block l is 2^(l mod cycle)
  int embed_dim = 64;
  int n_classes = 27;
  int input_bins = kDefaultWindow / 2 + 1;
  int stft_window = kDefaultWindow;
  int stft_hop = kDefaultHop;

  void validate() const {
    require(depth >= 1, "pitch net: depth must be >= 1");
    require(channels > 0 && kernel >= 1 && kernel % 2 == 1, "pitch net: need channels > 0 and odd kernel");
    require(dilation_cycle >= 1, "pitch net: dilation cycle must be >= 1");
    require(embed_dim > 0 && n_classes > 0 && input_bins > 0, "pitch net: invalid sizes");
    require(input_bins == stft_window / 2 + 1, "pitch net: input bins must match the STFT window");
  }

  int dilation(int layer) const { return 1 << (layer % dilation_cycle); }

  /// Receptive field in frames.
  int receptive_field() const {
    int rf = 1;
    for (int l = 0; l < depth; ++l) rf += (kernel - 1) * dilation(l);
    return rf;
  }

  bool operator==(const PitchNetConfig&) const = default;
};

/// frames x (n_bins + 1) class probabilities.
struct PitchPosterior {
  Eigen::MatrixXd probs;
  double hop = 0.01;
};

/// gamma[c] * features[c, t] + beta[c]
inline Eigen::MatrixXd film_modulate(const Eigen::MatrixXd& features, const Eigen::VectorXd& gamma,
                                     const Eigen::VectorXd& beta) {
  require(gamma.size() == features.rows() && beta.size() == features.rows(),
          "film: gamma/beta length must equal the channel count");
  Eigen::MatrixXd out = features;
  out.array().colwise() *= gamma.array();
  out.colwise() += beta;
  return out;
}

/// Mean per-frame negative log-probability of the reference class.
inline double pitch_ce_loss(const PitchPosterior& posterior, const PitchSequence& ref) {
  require(posterior.probs.rows() == static_cast<Eigen::Index>(ref.size()), "pitch loss: frame counts differ");
  require(ref.size() > 0, "pitch loss: empty sequence");
  double loss = 0.0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    require(ref.bins[t] >= 0 && ref.bins[t] < posterior.probs.cols(), "pitch loss: bin out of range");
    const double p = posterior.probs(static_cast<Eigen::Index>(t), ref.bins[t]);
    loss -= std::log(std::max(p, 1e-300));
  }
  return loss / static_cast<double>(ref.size());
}

/// Argmax decoding; frames whose winner is the unvoiced class or whose peak
/// probability is below `unvoiced_threshold` are unvoiced.
inline PitchSequence decode(const PitchPosterior& posterior, const PitchGrid& grid,
                            double unvoiced_threshold = 0.0) {
  require(posterior.probs.cols() == grid.n_classes(), "decode: posterior width does not match the grid");
  PitchSequence seq;
  seq.hop = posterior.hop;
  seq.bins.resize(static_cast<std::size_t>(posterior.probs.rows()));
  for (Eigen::Index t = 0; t < posterior.probs.rows(); ++t) {
    Eigen::Index best;
    const double p = posterior.probs.row(t).maxCoeff(&best);
    int bin = static_cast<int>(best);
    if (bin == grid.unvoiced_index() || p < unvoiced_threshold) bin = grid.unvoiced_index();
    seq.bins[static_cast<std::size_t>(t)] = bin;
  }
  return seq;
}

/// Network input: log(1 + |STFT|), bins x frames.
template <typename T>
nn::Mat<T> pitch_features(const Spectrogram& spec) {
  return spec.frames.transpose().array().log1p().template cast<T>().matrix();
}

/// Residual dilated TCN whose every dilated conv output is FiLM-modulated by
/// a class embedding.
template <typename T>
class PitchNet {
 public:
  using Mat = nn::Mat<T>;

  struct Block {
    nn::Conv1d<T> dconv;
    nn::Param<T> gamma_w, gamma_b, beta_w, beta_b;
    nn::PReLU<T> act;
    nn::Conv1d<T> pconv;
  };

  struct Workspace {
    Mat input;
    nn::Vec<T> embedding;
    std::vector<Mat> h, u, v, a;
    std::vector<nn::Vec<T>> gamma, beta;
    Mat top;
    Mat logits;
  };

  PitchNet(const PitchNetConfig& cfg, const PitchGrid& grid, std::uint64_t seed = 0)
      : cfg_(cfg), grid_(grid), seed_(seed) {
    cfg_.validate();
    const int c = cfg_.channels, e = cfg_.embed_dim;
    embedding_ = nn::Param<T>("embedding", e, cfg_.n_classes);
    nn::init_normal(embedding_, 0.0, 1.0, seed);
    input_ = nn::Conv1d<T>("input", cfg_.input_bins, c, 1);
    input_.init(seed);
    for (int l = 0; l < cfg_.depth; ++l) {
      const std::string p = "block" + std::to_string(l);
      Block b;
      b.dconv = nn::Conv1d<T>(p + ".dconv", c, c, cfg_.kernel, cfg_.dilation(l), nn::Padding::Same);
      b.dconv.init(seed);
      b.gamma_w = nn::Param<T>(p + ".film.gamma_w", c, e);
      b.gamma_b = nn::Param<T>(p + ".film.gamma_b", c, 1);
      b.beta_w = nn::Param<T>(p + ".film.beta_w", c, e);
      b.beta_b = nn::Param<T>(p + ".film.beta_b", c, 1);
      const double film_bound = 0.1 / std::sqrt(static_cast<double>(e));
      nn::init_uniform(b.gamma_w, film_bound, seed);
      nn::init_uniform(b.beta_w, film_bound, seed);
      b.gamma_b.value.setOnes();
      b.act = nn::PReLU<T>(p + ".prelu", c);
      b.pconv = nn::Conv1d<T>(p + ".pconv", c, c, 1);
      b.pconv.init(seed);
      blocks_.push_back(std::move(b));
    }
    head_ = nn::Conv1d<T>("head", c, grid_.n_classes(), 1);
    head_.init(seed);
  }

  const PitchNetConfig& config() const noexcept { return cfg_; }
  const PitchGrid& grid() const noexcept { return grid_; }
  std::uint64_t seed() const noexcept { return seed_; }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps{&embedding_};
    input_.collect(ps);
    for (auto& b : blocks_) {
      b.dconv.collect(ps);
      ps.push_back(&b.gamma_w);
      ps.push_back(&b.gamma_b);
      ps.push_back(&b.beta_w);
      ps.push_back(&b.beta_b);
      b.act.collect(ps);
      b.pconv.collect(ps);
    }
    head_.collect(ps);
    return ps;
  }

  /// Forces gamma = 1 and beta = 0 in every block for every class.
  void set_film_identity() {
    for (auto& b : blocks_) {
      b.gamma_w.value.setZero();
      b.beta_w.value.setZero();
      b.gamma_b.value.setOnes();
      b.beta_b.value.setZero();
    }
  }

  /// FiLM parameters produced for `label` at block `layer`.
  std::pair<nn::Vec<T>, nn::Vec<T>> film_params(int label, int layer) const {
    check_label(label);
    const auto& b = blocks_.at(static_cast<std::size_t>(layer));
    const nn::Vec<T> e = embedding_.value.col(label);
    return {b.gamma_w.value * e + b.gamma_b.value.col(0), b.beta_w.value * e + b.beta_b.value.col(0)};
  }

  /// Logits, classes x frames. `features` is bins x frames.
  Mat forward_logits(const Mat& features, int label, Workspace& ws) const {
    check_label(label);
    require(features.rows() == cfg_.input_bins, "pitch net: input bin count mismatch");
    require(features.allFinite(), "pitch net: non-finite input");
    ws.input = features;
    ws.embedding = embedding_.value.col(label);
    const std::size_t depth = blocks_.size();
    ws.h.resize(depth);
    ws.u.resize(depth);
    ws.v.resize(depth);
    ws.a.resize(depth);
    ws.gamma.resize(depth);
    ws.beta.resize(depth);

    Mat h = input_.forward(features);
    for (std::size_t l = 0; l < depth; ++l) {
      const Block& b = blocks_[l];
      ws.h[l] = h;
      ws.u[l] = b.dconv.forward(h);
      ws.gamma[l] = b.gamma_w.value * ws.embedding + b.gamma_b.value.col(0);
      ws.beta[l] = b.beta_w.value * ws.embedding + b.beta_b.value.col(0);
      ws.v[l] = ws.u[l];
      ws.v[l].array().colwise() *= ws.gamma[l].array();
      ws.v[l].colwise() += ws.beta[l];
      ws.a[l] = b.act.forward(ws.v[l]);
      h += b.pconv.forward(ws.a[l]);
    }
    ws.top = h;
    ws.logits = head_.forward(h);
    return ws.logits;
  }

  /// Backpropagates dL/dlogits, accumulating parameter gradients.
  void backward(Workspace& ws, const Mat& dlogits, int label) {
    Mat dh = head_.backward(ws.top, dlogits);
    nn::Vec<T> de = nn::Vec<T>::Zero(cfg_.embed_dim);
    for (std::size_t li = blocks_.size(); li-- > 0;) {
      Block& b = blocks_[li];
      const Mat da = b.pconv.backward(ws.a[li], dh);
      const Mat dv = b.act.backward(ws.v[li], da);
      const nn::Vec<T> dgamma = dv.cwiseProduct(ws.u[li]).rowwise().sum();
      const nn::Vec<T> dbeta = dv.rowwise().sum();
      b.gamma_w.grad.noalias() += dgamma * ws.embedding.transpose();
      b.gamma_b.grad.col(0) += dgamma;
      b.beta_w.grad.noalias() += dbeta * ws.embedding.transpose();
      b.beta_b.grad.col(0) += dbeta;
      de.noalias() += b.gamma_w.value.transpose() * dgamma + b.beta_w.value.transpose() * dbeta;
      Mat du = dv;
      du.array().colwise() *= ws.gamma[li].array();
      dh += b.dconv.backward(ws.h[li], du);
    }
    input_.backward(ws.input, dh, false);
    embedding_.grad.col(label) += de;
  }

  /// Forward + cross-entropy + backward for one example; returns the loss.
  double accumulate(const Mat& features, int label, const PitchSequence& ref, double weight = 1.0) {
    Workspace ws;
    const Mat logits = forward_logits(features, label, ws);
    require(logits.cols() == static_cast<Eigen::Index>(ref.size()), "pitch net: frame count mismatch");
    const Mat probs = nn::softmax_cols(logits);
    Mat dlogits = probs;
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(ref.size());
    for (std::size_t t = 0; t < ref.size(); ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      require(ref.bins[t] >= 0 && ref.bins[t] < grid_.n_classes(), "pitch net: reference bin out of range");
      loss -= std::log(std::max(static_cast<double>(probs(ref.bins[t], ti)), 1e-30));
      dlogits(ref.bins[t], ti) -= T(1);
    }
    dlogits *= static_cast<T>(inv * weight);
    backward(ws, dlogits, label);
    return loss * inv;
  }

  PitchPosterior infer(const Mat& features, int label) const {
    Workspace ws;
    const Mat probs = nn::softmax_cols(forward_logits(features, label, ws));
    PitchPosterior post;
    post.hop = static_cast<double>(cfg_.stft_hop) / kWorkingRate;
    post.probs = probs.transpose().template cast<double>();
    return post;
  }

  PitchPosterior infer(const Spectrogram& spec, int label) const {
    return infer(pitch_features<T>(spec), label);
  }

  PitchPosterior infer(const AudioClip& clip, int label) const {
    return infer(stft_magnitude(clip, cfg_.stft_window, cfg_.stft_hop), label);
  }

 private:
  void check_label(int label) const {
    require(label >= 0 && label < cfg_.n_classes, "pitch net: class label " + std::to_string(label) + " out of range");
  }

  PitchNetConfig cfg_;
  PitchGrid grid_;
  std::uint64_t seed_;
  nn::Param<T> embedding_;
  nn::Conv1d<T> input_;
  std::vector<Block> blocks_;
  nn::Conv1d<T> head_;
};

}  // namespace tsepi
