#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tsepi/audio.hpp"
#include "tsepi/error.hpp"
#include "tsepi/gtfb.hpp"
#include "tsepi/metrics.hpp"
#include "tsepi/nn.hpp"
#include "tsepi/pitch.hpp"

namespace tsepi {

enum class EncoderType { Conv, GtfbFixed, GtfbLearnable };

inline std::string to_string(EncoderType e) {
  switch (e) {
    case EncoderType::Conv: return "conv";
    case EncoderType::GtfbFixed: return "gtfb_fixed";
    case EncoderType::GtfbLearnable: return "gtfb_learnable";
  }
  return "conv";
}

inline EncoderType encoder_type_from_string(const std::string& s) {
  if (s == "conv") return EncoderType::Conv;
  if (s == "gtfb_fixed") return EncoderType::GtfbFixed;
  if (s == "gtfb_learnable") return EncoderType::GtfbLearnable;
  fail(ErrorCode::InvalidArgument, "unknown encoder type: " + s);
}

struct TSEConfig {
  EncoderType encoder_type = EncoderType::GtfbLearnable;
  int kernel_length = 32;
  int n_filters = 512;
  int dcc_layers = 10;
  int dcc_channels = 256;
  int dcc_kernel = 3;
  int decoder_layers = 1;
  int pitch_proj_dim = 64;
  int n_classes = 27;
  int pitch_classes = 357;
  int pitch_window = kDefaultWindow;
  int pitch_hop = kDefaultHop;
  int sample_rate = kWorkingRate;
  double gtfb_f_low = 50.0;
  double gtfb_f_high = 7800.0;

  int stride() const noexcept { return kernel_length / 2; }
  int label_embed_dim() const noexcept { return n_filters; }

  /// Receptive field of the causal stack, in encoder frames.
  int dcc_receptive_field() const {
    int rf = 1;
    for (int l = 0; l < dcc_layers; ++l) rf += (dcc_kernel - 1) * (1 << l);
    return rf;
  }

  double dcc_receptive_field_seconds() const {
    return static_cast<double>(dcc_receptive_field() * stride() + kernel_length) / sample_rate;
  }

  void validate() const {
    require(kernel_length >= 2 && kernel_length % 2 == 0, "tse: kernel length must be even and >= 2");
    require(n_filters > 0 && dcc_channels > 0 && dcc_layers >= 1, "tse: invalid layer sizes");
    require(dcc_kernel >= 2, "tse: dcc kernel must be >= 2");
    require(decoder_layers >= 0 && pitch_proj_dim >= 0, "tse: invalid decoder/pitch sizes");
    require(n_classes > 0 && pitch_classes > 1, "tse: invalid class counts");
    require(dcc_receptive_field_seconds() >= 0.05, "tse: dcc receptive field must cover at least 50 ms");
  }

  bool operator==(const TSEConfig&) const = default;
};

struct EncoderVariant {
  EncoderType encoder;
  int length;
  int filters;
};

/// Encoder configurations compared in the filterbank ablation.
inline std::vector<EncoderVariant> encoder_ablation_rows() {
  return {{EncoderType::GtfbLearnable, 8, 512}, {EncoderType::GtfbLearnable, 32, 512},
          {EncoderType::GtfbLearnable, 8, 256}, {EncoderType::GtfbLearnable, 32, 256},
          {EncoderType::GtfbFixed, 8, 512},     {EncoderType::GtfbFixed, 32, 512},
          {EncoderType::Conv, 8, 512},          {EncoderType::Conv, 8, 256},
          {EncoderType::Conv, 32, 512},         {EncoderType::Conv, 32, 256}};
}

/// For each encoder frame, the pitch frame whose center is nearest
/// (clamped to the available range).
inline std::vector<int> align_pitch_frames(int n_pitch, int pitch_window, int pitch_hop, int n_enc,
                                           int kernel_length, int stride) {
  require(n_pitch > 0 && n_enc > 0, "pitch alignment: empty sequence");
  std::vector<int> idx(static_cast<std::size_t>(n_enc));
  for (int j = 0; j < n_enc; ++j) {
    const double enc_center = static_cast<double>(j) * stride - kernel_length / 2.0;
    const double pos = (enc_center - pitch_window / 2.0) / pitch_hop;
    const long i = static_cast<long>(std::floor(pos + 0.5));
    idx[static_cast<std::size_t>(j)] = static_cast<int>(std::clamp<long>(i, 0, n_pitch - 1));
  }
  return idx;
}

/// Padded layout shared by the encoder and decoder: L zeros on the left, then
/// enough on the right for whole frames.
struct FrameLayout {
  int length = 0;      // original samples
  int padded = 0;      // padded samples
  int n_frames = 0;
  int kernel_length = 0;
  int stride = 0;

  static FrameLayout make(int length, int kernel_length, int stride) {
    FrameLayout f;
    f.length = length;
    f.kernel_length = kernel_length;
    f.stride = stride;
    const int body = length + kernel_length;  // frames must reach past the last sample
    const int steps = (body + stride - 1) / stride;
    f.padded = kernel_length + steps * stride;
    f.n_frames = steps + 1;
    return f;
  }
};

/// Concatenates projected pitch frames (hold-aligned to the encoder rate)
/// under the encoder features: (K + proj) x n_frames.
inline Eigen::MatrixXd concat_pitch(const Eigen::MatrixXd& features, const Eigen::MatrixXd& pitch_frames,
                                    const Eigen::MatrixXd& projection, const std::vector<int>& alignment) {
  require(static_cast<Eigen::Index>(alignment.size()) == features.cols(),
          "concat_pitch: alignment does not cover every encoder frame");
  const Eigen::Index proj = projection.rows();
  Eigen::MatrixXd out(features.rows() + proj, features.cols());
  out.topRows(features.rows()) = features;
  if (proj == 0) return out;
  require(projection.cols() == pitch_frames.cols(), "concat_pitch: projection width mismatch");
  const Eigen::MatrixXd projected = projection * pitch_frames.transpose();
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const int i = alignment[static_cast<std::size_t>(j)];
    require(i >= 0 && i < projected.cols(), "concat_pitch: frame-rate mismatch after alignment");
    out.bottomRows(proj).col(j) = projected.col(i);
  }
  return out;
}

/// Overlap-add transposed strided convolution: frames (L x n) -> waveform.
template <typename T>
std::vector<double> overlap_add(const nn::Mat<T>& frames, int stride, int total_length) {
  std::vector<double> y(static_cast<std::size_t>(total_length), 0.0);
  for (Eigen::Index j = 0; j < frames.cols(); ++j)
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
      const auto pos = static_cast<std::size_t>(j * stride + t);
      if (pos < y.size()) y[pos] += static_cast<double>(frames(t, j));
    }
  return y;
}

/// decoder (L x K) applied to masked features (K x n), overlap-added.
inline AudioClip decode_to_waveform(const Eigen::MatrixXd& masked_features, const Eigen::MatrixXd& decoder,
                                    int stride, int sample_rate = kWorkingRate) {
  require(decoder.cols() == masked_features.rows(), "decode: decoder width must equal the feature count");
  require(stride > 0, "decode: stride must be positive");
  const Eigen::MatrixXd frames = decoder * masked_features;
  const int total = static_cast<int>((masked_features.cols() - 1) * stride + decoder.rows());
  return AudioClip(overlap_add<double>(frames, stride, std::max(total, 0)), sample_rate);
}

template <typename T>
class TSENet {
 public:
  using Mat = nn::Mat<T>;

  struct Block {
    nn::Conv1d<T> dconv;
    nn::PReLU<T> act;
    nn::Conv1d<T> pconv;
  };

  struct Workspace {
    FrameLayout layout;
    Mat frames;        // L x N
    Mat pre;           // K x N
    Mat encoded;       // K x N
    Mat pitch_input;   // P x classes
    std::vector<int> alignment;
    Mat stacked;       // (K + proj) x N
    std::vector<Mat> h, u, a;
    Mat top;           // C x N
    Mat z;             // K x N
    std::vector<Mat> head_in, head_pre;
    Mat mask_logits, mask;
    Mat masked;
    int label = 0;
    bool label_zeroed = false;
  };

  TSENet(const TSEConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    const int K = cfg_.n_filters, L = cfg_.kernel_length, C = cfg_.dcc_channels;
    if (cfg_.encoder_type == EncoderType::Conv) {
      conv_encoder_ = nn::Param<T>("encoder.weight", L, K);
      nn::init_uniform(conv_encoder_, 1.0 / std::sqrt(static_cast<double>(L)), seed);
    } else {
      auto p = gtfb::GammatoneParams::standard(K, L, cfg_.sample_rate, cfg_.gtfb_f_low, cfg_.gtfb_f_high);
      p.learnable = cfg_.encoder_type == EncoderType::GtfbLearnable;
      bank_ = gtfb::GammatoneBank<T>("encoder.gtfb", p, cfg_.sample_rate);
    }
    if (cfg_.pitch_proj_dim > 0) {
      pitch_proj_ = nn::Param<T>("pitch.proj", cfg_.pitch_proj_dim, cfg_.pitch_classes);
      pitch_bias_ = nn::Param<T>("pitch.bias", cfg_.pitch_proj_dim, 1);
      nn::init_normal(pitch_proj_, 0.0, 1.0, seed);
    }
    label_embedding_ = nn::Param<T>("label.embedding", K, cfg_.n_classes);
    nn::init_normal(label_embedding_, 1.0, 0.1, seed);

    mix_in_ = nn::Conv1d<T>("dcc.input", K + cfg_.pitch_proj_dim, C, 1);
    mix_in_.init(seed);
    for (int l = 0; l < cfg_.dcc_layers; ++l) {
      const std::string p = "dcc.block" + std::to_string(l);
      Block b{nn::Conv1d<T>(p + ".dconv", C, C, cfg_.dcc_kernel, 1 << l, nn::Padding::Causal),
              nn::PReLU<T>(p + ".prelu", C), nn::Conv1d<T>(p + ".pconv", C, C, 1)};
      b.dconv.init(seed);
      b.pconv.init(seed, 0.5);
      blocks_.push_back(std::move(b));
    }
    dcc_out_ = nn::Conv1d<T>("dcc.output", C, K, 1);
    dcc_out_.init(seed);
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      const std::string p = "decoder.head" + std::to_string(i);
      head_.push_back(nn::Conv1d<T>(p + ".conv", K, K, 1));
      head_.back().init(seed);
      head_act_.push_back(nn::PReLU<T>(p + ".prelu", K));
    }
    mask_out_ = nn::Conv1d<T>("decoder.mask", K, K, 1);
    mask_out_.init(seed);
    decoder_ = nn::Param<T>("decoder.weight", L, K);
    nn::init_uniform(decoder_, 1.0 / std::sqrt(static_cast<double>(K)), seed);
  }

  const TSEConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }

  gtfb::GammatoneBank<T>* gammatone() noexcept {
    return cfg_.encoder_type == EncoderType::Conv ? nullptr : &bank_;
  }
  const gtfb::GammatoneBank<T>* gammatone() const noexcept {
    return cfg_.encoder_type == EncoderType::Conv ? nullptr : &bank_;
  }
  nn::Param<T>& decoder_weight() noexcept { return decoder_; }
  nn::Param<T>& label_embedding() noexcept { return label_embedding_; }

  /// Encoder kernels, L x K.
  Mat encoder_kernels() const {
    return cfg_.encoder_type == EncoderType::Conv ? conv_encoder_.value : bank_.kernels();
  }

  std::map<std::string, nn::ParamList<T>> param_groups() {
    std::map<std::string, nn::ParamList<T>> g;
    if (cfg_.encoder_type == EncoderType::Conv) g["encoder"].push_back(&conv_encoder_);
    else bank_.collect(g["encoder"]);
    if (cfg_.pitch_proj_dim > 0) g["pitch"] = {&pitch_proj_, &pitch_bias_};
    else g["pitch"] = {};
    g["label"] = {&label_embedding_};
    auto& dcc = g["dcc"];
    mix_in_.collect(dcc);
    for (auto& b : blocks_) {
      b.dconv.collect(dcc);
      b.act.collect(dcc);
      b.pconv.collect(dcc);
    }
    dcc_out_.collect(dcc);
    auto& dec = g["decoder"];
    for (std::size_t i = 0; i < head_.size(); ++i) {
      head_[i].collect(dec);
      head_act_[i].collect(dec);
    }
    mask_out_.collect(dec);
    dec.push_back(&decoder_);
    return g;
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> all;
    auto groups = param_groups();
    for (const char* name : {"encoder", "pitch", "label", "dcc", "decoder"})
      for (auto* p : groups[name]) all.push_back(p);
    return all;
  }

  int expected_pitch_frames(int length) const { return frame_count(static_cast<std::size_t>(length), cfg_.pitch_window, cfg_.pitch_hop); }

  /// Forward pass. `pitch` is P x pitch_classes (one-hot rows or posteriors);
  /// ignored when pitch_proj_dim == 0.
  std::vector<double> forward(std::span<const double> mixture, int label, const Eigen::MatrixXd& pitch,
                              Workspace& ws, bool zero_label = false) const {
    require(label >= 0 && label < cfg_.n_classes, "tse: class label " + std::to_string(label) + " out of range");
    const int len = static_cast<int>(mixture.size());
    require(len >= cfg_.kernel_length, "tse: mixture shorter than the encoder kernel");
    const int L = cfg_.kernel_length, s = cfg_.stride();
    ws.layout = FrameLayout::make(len, L, s);
    ws.label = label;
    ws.label_zeroed = zero_label;

    std::vector<double> padded(static_cast<std::size_t>(ws.layout.padded), 0.0);
    std::copy(mixture.begin(), mixture.end(), padded.begin() + L);
    ws.frames = gtfb::frame_matrix<T>(padded, L, s);
    const Mat kernels = encoder_kernels();
    ws.pre.noalias() = kernels.transpose() * ws.frames;
    ws.encoded = nn::relu(ws.pre);
    const Eigen::Index N = ws.frames.cols();

    ws.stacked.resize(cfg_.n_filters + cfg_.pitch_proj_dim, N);
    ws.stacked.topRows(cfg_.n_filters) = ws.encoded;
    if (cfg_.pitch_proj_dim > 0) {
      require(pitch.cols() == cfg_.pitch_classes, "tse: pitch input width must equal the pitch class count");
      require(pitch.rows() == expected_pitch_frames(len),
              "tse: pitch has " + std::to_string(pitch.rows()) + " frames, mixture implies " +
                  std::to_string(expected_pitch_frames(len)));
      ws.pitch_input = pitch.cast<T>();
      ws.alignment = align_pitch_frames(static_cast<int>(pitch.rows()), cfg_.pitch_window, cfg_.pitch_hop,
                                        static_cast<int>(N), L, s);
      Mat projected = pitch_proj_.value * ws.pitch_input.transpose();
      projected.colwise() += pitch_bias_.value.col(0);
      for (Eigen::Index j = 0; j < N; ++j)
        ws.stacked.bottomRows(cfg_.pitch_proj_dim).col(j) = projected.col(ws.alignment[static_cast<std::size_t>(j)]);
    }

    Mat h = mix_in_.forward(ws.stacked);
    ws.h.resize(blocks_.size());
    ws.u.resize(blocks_.size());
    ws.a.resize(blocks_.size());
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      ws.h[l] = h;
      ws.u[l] = blocks_[l].dconv.forward(h);
      ws.a[l] = blocks_[l].act.forward(ws.u[l]);
      h += blocks_[l].pconv.forward(ws.a[l]);
    }
    ws.top = std::move(h);
    ws.z = dcc_out_.forward(ws.top);

    Mat g = ws.z;
    if (zero_label) g.setZero();
    else g.array().colwise() *= label_embedding_.value.col(label).array();
    ws.head_in.resize(head_.size());
    ws.head_pre.resize(head_.size());
    for (std::size_t i = 0; i < head_.size(); ++i) {
      ws.head_in[i] = g;
      ws.head_pre[i] = head_[i].forward(g);
      g = head_act_[i].forward(ws.head_pre[i]);
    }
    ws.head_in.push_back(g);
    ws.mask_logits = mask_out_.forward(g);
    ws.mask = nn::sigmoid(ws.mask_logits);
    ws.masked = ws.encoded.cwiseProduct(ws.mask);

    const Mat out_frames = decoder_.value * ws.masked;
    const auto full = overlap_add<T>(out_frames, s, ws.layout.padded);
    return std::vector<double>(full.begin() + L, full.begin() + L + len);
  }

  std::vector<double> forward(std::span<const double> mixture, int label, const PitchSequence& pitch,
                              Workspace& ws, bool zero_label = false) const {
    return forward(mixture, label, pitch_matrix(pitch), ws, zero_label);
  }

  Eigen::MatrixXd pitch_matrix(const PitchSequence& pitch) const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pitch.size()), cfg_.pitch_classes);
    for (std::size_t t = 0; t < pitch.size(); ++t) {
      require(pitch.bins[t] >= 0 && pitch.bins[t] < cfg_.pitch_classes, "tse: pitch bin out of range");
      m(static_cast<Eigen::Index>(t), pitch.bins[t]) = 1.0;
    }
    return m;
  }

  /// Backpropagates dL/d(output waveform).
  void backward(Workspace& ws, std::span<const double> dout) {
    const int L = cfg_.kernel_length, s = cfg_.stride();
    std::vector<double> dpad(static_cast<std::size_t>(ws.layout.padded), 0.0);
    std::copy(dout.begin(), dout.end(), dpad.begin() + L);
    const Mat dframes = gtfb::frame_matrix<T>(dpad, L, s);

    decoder_.grad.noalias() += dframes * ws.masked.transpose();
    const Mat dmasked = decoder_.value.transpose() * dframes;
    Mat dencoded = dmasked.cwiseProduct(ws.mask);
    const Mat dmask = dmasked.cwiseProduct(ws.encoded);
    Mat dg = dmask.array() * ws.mask.array() * (T(1) - ws.mask.array());
    dg = mask_out_.backward(ws.head_in.back(), dg);
    for (std::size_t i = head_.size(); i-- > 0;) {
      dg = head_act_[i].backward(ws.head_pre[i], dg);
      dg = head_[i].backward(ws.head_in[i], dg);
    }
    Mat dz;
    if (ws.label_zeroed) {
      dz = Mat::Zero(ws.z.rows(), ws.z.cols());
    } else {
      label_embedding_.grad.col(ws.label) += dg.cwiseProduct(ws.z).rowwise().sum();
      dz = dg;
      dz.array().colwise() *= label_embedding_.value.col(ws.label).array();
    }
    Mat dh = dcc_out_.backward(ws.top, dz);
    for (std::size_t l = blocks_.size(); l-- > 0;) {
      const Mat da = blocks_[l].pconv.backward(ws.a[l], dh);
      const Mat du = blocks_[l].act.backward(ws.u[l], da);
      dh += blocks_[l].dconv.backward(ws.h[l], du);
    }
    const Mat dstacked = mix_in_.backward(ws.stacked, dh);
    dencoded += dstacked.topRows(cfg_.n_filters);
    if (cfg_.pitch_proj_dim > 0) {
      Mat dproj = Mat::Zero(cfg_.pitch_proj_dim, ws.pitch_input.rows());
      for (Eigen::Index j = 0; j < dstacked.cols(); ++j)
        dproj.col(ws.alignment[static_cast<std::size_t>(j)]) += dstacked.bottomRows(cfg_.pitch_proj_dim).col(j);
      pitch_proj_.grad.noalias() += dproj * ws.pitch_input;
      pitch_bias_.grad.col(0) += dproj.rowwise().sum();
    }
    const Mat dpre = nn::relu_backward(ws.pre, dencoded);
    const Mat dkernels = ws.frames * dpre.transpose();
    if (cfg_.encoder_type == EncoderType::Conv) conv_encoder_.grad += dkernels;
    else bank_.backward(dkernels);
  }

  /// Forward, combined loss against `target`, backward. Returns the loss terms.
  metrics::LossValue accumulate(std::span<const double> mixture, int label, const Eigen::MatrixXd& pitch,
                                std::span<const double> target, const metrics::LossWeights& w,
                                double weight = 1.0) {
    Workspace ws;
    const auto est = forward(mixture, label, pitch, ws);
    auto loss = metrics::combined_loss(est, target, w);
    for (double& g : loss.grad) g *= weight;
    backward(ws, loss.grad);
    return loss;
  }

  AudioClip extract(const AudioClip& mixture, int label, const Eigen::MatrixXd& pitch) const {
    Workspace ws;
    return AudioClip(forward(mixture.samples, label, pitch, ws), mixture.sample_rate);
  }

  AudioClip extract(const AudioClip& mixture, int label, const PitchSequence& pitch) const {
    return extract(mixture, label, pitch_matrix(pitch));
  }

 private:
  TSEConfig cfg_;
  std::uint64_t seed_;
  nn::Param<T> conv_encoder_;
  gtfb::GammatoneBank<T> bank_;
  nn::Param<T> pitch_proj_, pitch_bias_;
  nn::Param<T> label_embedding_;
  nn::Conv1d<T> mix_in_;
  std::vector<Block> blocks_;
  nn::Conv1d<T> dcc_out_;
  std::vector<nn::Conv1d<T>> head_;
  std::vector<nn::PReLU<T>> head_act_;
  nn::Conv1d<T> mask_out_;
  nn::Param<T> decoder_;
};

}  // namespace tsepi
