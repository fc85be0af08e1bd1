#pragma once

// Training loops for both stages and the two-stage evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsepi/audio.hpp"
#include "tsepi/checkpoint.hpp"
#include "tsepi/config.hpp"
#include "tsepi/dataset.hpp"
#include "tsepi/film_tcn.hpp"
#include "tsepi/metrics.hpp"
#include "tsepi/nn.hpp"
#include "tsepi/pitch.hpp"
#include "tsepi/tse_net.hpp"

namespace tsepi {

using nlohmann::json;
using Real = float;  // training precision

/// Append-only JSONL log.
class JsonlLog {
 public:
  JsonlLog() = default;
  JsonlLog(const fs::path& path, bool append, bool echo) : echo_(echo) {
    if (path.empty()) return;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) fail(ErrorCode::Io, "cannot open log: " + path.string());
  }

  void write(const json& j) {
    if (out_.is_open()) out_ << j.dump() << '\n' << std::flush;
    if (echo_) std::cerr << j.dump() << '\n';
  }

 private:
  std::ofstream out_;
  bool echo_ = false;
};

struct TrainOptions {
  fs::path run_dir;     // empty: nothing written
  fs::path resume;      // checkpoint to continue from
  bool echo = false;    // mirror log lines to stderr
};

/// Batch order of one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(nn::hash_name("epoch", seed * 7919ull + static_cast<std::uint64_t>(epoch)));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

inline double scheduled_lr(const OptimConfig& o, int epoch) {
  return (o.lr_halve_epoch >= 0 && epoch >= o.lr_halve_epoch) ? 0.5 * o.lr : o.lr;
}

/// Steps through epochs and batches, handling max_steps, lr halving and
/// resume positions; `step_fn(batch indices)` runs one optimizer step.
template <typename StepFn, typename EpochFn>
void run_schedule(std::size_t n, const OptimConfig& o, int batch, std::uint64_t seed, ckpt::TrainState& st,
                  JsonlLog& log, const std::function<void(double)>& set_lr, StepFn&& step_fn, EpochFn&& epoch_end) {
  const std::size_t n_batches = (n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch);
  const auto done = [&] { return o.max_steps > 0 ? st.step >= o.max_steps : st.epoch >= o.epochs; };
  while (!done()) {
    const double lr = scheduled_lr(o, st.epoch);
    if (lr != st.lr) {
      if (st.lr != 0.0) log.write({{"event", "lr_halved"}, {"epoch", st.epoch}, {"step", st.step}, {"lr", lr}});
      st.lr = lr;
    }
    set_lr(lr);
    const auto order = epoch_order(n, seed, st.epoch);
    for (; st.batch < static_cast<int>(n_batches); ++st.batch) {
      if (o.max_steps > 0 && st.step >= o.max_steps) return;
      const std::size_t b0 = static_cast<std::size_t>(st.batch) * static_cast<std::size_t>(batch);
      const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(batch));
      step_fn(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                       order.begin() + static_cast<std::ptrdiff_t>(b1)));
    }
    st.batch = 0;
    ++st.epoch;
    epoch_end();
  }
}

// ---------------------------------------------------------------------------
// Stage 1

struct PitchData {
  std::vector<nn::Mat<Real>> features;
  std::vector<int> labels;
  std::vector<PitchSequence> refs;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return features.size(); }

  void add(const AudioClip& mixture, int label, const PitchSequence& ref, const PitchNetConfig& cfg,
           std::string id = {}) {
    const Spectrogram spec = stft_magnitude(mixture, cfg.stft_window, cfg.stft_hop);
    require(spec.frames.rows() == static_cast<Eigen::Index>(ref.size()),
            "pitch data: " + id + " has " + std::to_string(ref.size()) + " pitch frames but " +
                std::to_string(spec.frames.rows()) + " STFT frames");
    features.push_back(pitch_features<Real>(spec));
    labels.push_back(label);
    refs.push_back(ref);
    ids.push_back(std::move(id));
  }
};

inline PitchData make_pitch_data(const std::vector<Example>& ex, const PitchNetConfig& cfg) {
  PitchData d;
  for (const auto& e : ex) d.add(e.mixture, e.label, e.pitch, cfg, e.id);
  return d;
}

template <typename T>
double mean_rpa(const PitchNet<T>& net, const PitchData& data, double threshold = 0.0) {
  double acc = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PitchSequence est = decode(net.infer(data.features[i], data.labels[i]), net.grid(), threshold);
    try {
      acc += rpa(est, data.refs[i], net.grid());
      ++n;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UndefinedResult) throw;
    }
  }
  return n > 0 ? acc / n : 0.0;
}

struct PitchTrainResult {
  std::unique_ptr<PitchNet<Real>> net;
  ckpt::TrainState state;
  std::vector<double> losses;  // per step
  fs::path checkpoint;
};

inline PitchTrainResult train_pitch(const RunConfig& cfg, const PitchData& train, const PitchData* val,
                                    const TrainOptions& topt = {}) {
  require(train.size() > 0, "train-pitch: empty training set");
  PitchData subset;
  const PitchData* data = &train;
  OptimConfig o = cfg.pitch_optim;
  if (cfg.overfit > 0) {
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.overfit), train.size());
    subset.features.assign(train.features.begin(), train.features.begin() + static_cast<std::ptrdiff_t>(k));
    subset.labels.assign(train.labels.begin(), train.labels.begin() + static_cast<std::ptrdiff_t>(k));
    subset.refs.assign(train.refs.begin(), train.refs.begin() + static_cast<std::ptrdiff_t>(k));
    subset.ids.assign(train.ids.begin(), train.ids.begin() + static_cast<std::ptrdiff_t>(k));
    data = &subset;
    o.batch = static_cast<int>(k);
  }

  PitchTrainResult res;
  res.net = std::make_unique<PitchNet<Real>>(cfg.pitch_net, cfg.grid, cfg.seed);
  auto params = res.net->params();
  nn::Adam<Real> adam(params, {o.lr, 0.9, 0.999, 1e-8, o.clip_norm});
  if (!topt.resume.empty()) {
    const auto c = ckpt::read(topt.resume);
    require(ckpt::pitch_config_of(c) == cfg.pitch_net, "resume: pitch-net config differs from the checkpoint");
    require(ckpt::grid_of(c) == cfg.grid, "resume: pitch grid differs from the checkpoint");
    ckpt::restore<Real>(c, params, &adam);
    res.state = c.state();
  }

  const fs::path ckpt_path = topt.run_dir.empty() ? fs::path{} : topt.run_dir / "pitch.ckpt";
  JsonlLog log(topt.run_dir.empty() ? fs::path{} : topt.run_dir / "train_pitch.jsonl", !topt.resume.empty(),
               topt.echo);
  const auto save = [&] {
    if (!ckpt_path.empty()) ckpt::save_pitch<Real>(ckpt_path, *res.net, res.state, &adam);
  };

  run_schedule(
      data->size(), o, o.batch, cfg.seed, res.state, log, [&](double lr) { adam.set_lr(lr); },
      [&](const std::vector<std::size_t>& batch) {
        nn::zero_grads(params);
        double loss = 0.0;
        const double w = 1.0 / static_cast<double>(batch.size());
        for (auto i : batch) loss += w * res.net->accumulate(data->features[i], data->labels[i], data->refs[i], w);
        adam.step();
        ++res.state.step;
        res.losses.push_back(loss);
        if (res.state.step % o.log_every == 0)
          log.write({{"step", res.state.step}, {"epoch", res.state.epoch}, {"loss", loss}, {"lr", adam.lr()}});
      },
      [&] {
        if (cfg.overfit > 0) return;  // every step is an epoch here
        json j = {{"event", "epoch_end"}, {"epoch", res.state.epoch}, {"step", res.state.step}};
        if (val && val->size() > 0) j["val_rpa"] = mean_rpa(*res.net, *val, cfg.unvoiced_threshold);
        log.write(j);
        save();
      });
  save();
  res.checkpoint = ckpt_path;
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2

struct TseData {
  std::vector<std::vector<double>> mixtures, targets;
  std::vector<Eigen::MatrixXd> pitch;  // frames x pitch classes
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return mixtures.size(); }
};

/// Pitch input for stage 2: one-hot of the given sequence.
inline Eigen::MatrixXd pitch_input(const PitchSequence& seq, const PitchGrid& grid) { return one_hot(seq, grid); }

/// Stage-1 prediction for stage 2.
template <typename T>
PitchSequence predict_pitch(const PitchNet<T>& net, const AudioClip& mixture, int label, double threshold) {
  return decode(net.infer(mixture, label), net.grid(), threshold);
}

/// `pitch_net` non-null: stage-1 predictions instead of ground truth.
inline TseData make_tse_data(const std::vector<Example>& ex, const PitchGrid& grid,
                             const PitchNet<Real>* pitch_net = nullptr, double threshold = 0.0) {
  TseData d;
  for (const auto& e : ex) {
    d.mixtures.push_back(e.mixture.samples);
    d.targets.push_back(e.target.samples);
    d.labels.push_back(e.label);
    d.ids.push_back(e.id);
    d.pitch.push_back(pitch_input(pitch_net ? predict_pitch(*pitch_net, e.mixture, e.label, threshold) : e.pitch, grid));
  }
  return d;
}

/// Refuses a stage-1 checkpoint whose grid or framing disagrees with the run.
inline void check_pitch_compat(const PitchNet<Real>& net, const RunConfig& cfg) {
  require(net.grid() == cfg.grid, "pitch checkpoint grid differs from the configured grid");
  require(net.grid().n_classes() == cfg.tse_net.pitch_classes,
          "pitch checkpoint grid has " + std::to_string(net.grid().n_classes()) + " classes, tse expects " +
              std::to_string(cfg.tse_net.pitch_classes));
  require(net.config().stft_window == cfg.tse_net.pitch_window && net.config().stft_hop == cfg.tse_net.pitch_hop,
          "pitch checkpoint framing differs from the tse pitch framing");
  require(net.config().n_classes == cfg.tse_net.n_classes, "pitch checkpoint class count differs from the tse net");
}

template <typename T>
double mean_si_snri(const TSENet<T>& net, const TseData& data) {
  if (data.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    typename TSENet<T>::Workspace ws;
    const auto est = net.forward(data.mixtures[i], data.labels[i], data.pitch[i], ws);
    acc += metrics::si_snr_db(est, data.targets[i]) - metrics::si_snr_db(data.mixtures[i], data.targets[i]);
  }
  return acc / static_cast<double>(data.size());
}

struct TseTrainResult {
  std::unique_ptr<TSENet<Real>> net;
  ckpt::TrainState state;
  std::vector<double> losses;
  fs::path checkpoint;
};

inline TseTrainResult train_tse(const RunConfig& cfg, const TseData& train, const TseData* val,
                                const TrainOptions& topt = {}) {
  require(train.size() > 0, "train-tse: empty training set");
  cfg.loss.validate();
  std::vector<std::size_t> pool(train.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  OptimConfig o = cfg.tse_optim;
  if (cfg.overfit > 0) {
    pool.resize(std::min<std::size_t>(static_cast<std::size_t>(cfg.overfit), train.size()));
    o.batch = static_cast<int>(pool.size());
  }

  TseTrainResult res;
  res.net = std::make_unique<TSENet<Real>>(cfg.tse_net, cfg.seed);
  auto params = res.net->params();
  nn::Adam<Real> adam(params, {o.lr, 0.9, 0.999, 1e-8, o.clip_norm});
  if (!topt.resume.empty()) {
    const auto c = ckpt::read(topt.resume);
    require(ckpt::tse_config_of(c) == cfg.tse_net, "resume: tse-net config differs from the checkpoint");
    ckpt::restore<Real>(c, params, &adam);
    res.state = c.state();
  }

  const fs::path ckpt_path = topt.run_dir.empty() ? fs::path{} : topt.run_dir / "tse.ckpt";
  JsonlLog log(topt.run_dir.empty() ? fs::path{} : topt.run_dir / "train_tse.jsonl", !topt.resume.empty(), topt.echo);
  const json extra = {{"loss", to_json(cfg.loss)},
                      {"pitch_source", cfg.pitch_source == PitchSource::Checkpoint ? "checkpoint" : "ground_truth"}};
  const auto save = [&] {
    if (!ckpt_path.empty()) ckpt::save_tse<Real>(ckpt_path, *res.net, res.state, &adam, extra);
  };

  run_schedule(
      pool.size(), o, o.batch, cfg.seed, res.state, log, [&](double lr) { adam.set_lr(lr); },
      [&](const std::vector<std::size_t>& batch) {
        nn::zero_grads(params);
        double loss = 0.0, snr = 0.0, si = 0.0;
        const double w = 1.0 / static_cast<double>(batch.size());
        for (auto b : batch) {
          const std::size_t i = pool[b];
          const auto lv = res.net->accumulate(train.mixtures[i], train.labels[i], train.pitch[i], train.targets[i],
                                              cfg.loss, w);
          loss += w * lv.loss;
          snr += w * lv.snr_db;
          si += w * lv.si_snr_db;
        }
        adam.step();
        ++res.state.step;
        res.losses.push_back(loss);
        if (res.state.step % o.log_every == 0)
          log.write({{"step", res.state.step}, {"epoch", res.state.epoch}, {"loss", loss}, {"snr_db", snr},
                     {"si_snr_db", si}, {"lr", adam.lr()}});
      },
      [&] {
        if (cfg.overfit > 0) return;
        json j = {{"event", "epoch_end"}, {"epoch", res.state.epoch}, {"step", res.state.step}};
        if (val && val->size() > 0) j["val_si_snri"] = mean_si_snri(*res.net, *val);
        log.write(j);
        save();
      });
  save();
  res.checkpoint = ckpt_path;
  return res;
}

/// One run per weight pair, each in run_dir/loss_<w1>_<w2>.
inline std::vector<json> loss_sweep(const RunConfig& cfg, const TseData& train, const TseData* val,
                                    const TrainOptions& topt = {}) {
  require(!cfg.loss_sweep.empty(), "loss sweep: no weight pairs configured");
  std::vector<json> out;
  for (const auto& w : cfg.loss_sweep) {
    w.validate();
    RunConfig c = cfg;
    c.loss = w;
    TrainOptions t = topt;
    t.resume.clear();
    char name[64];
    std::snprintf(name, sizeof name, "loss_%.2f_%.2f", w.snr, w.si_snr);
    if (!topt.run_dir.empty()) t.run_dir = topt.run_dir / name;
    auto r = train_tse(c, train, val, t);
    json j = {{"snr_weight", w.snr}, {"si_snr_weight", w.si_snr}, {"steps", r.state.step},
              {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()}, {"run_dir", t.run_dir.string()}};
    if (val && val->size() > 0) j["val_si_snri"] = mean_si_snri(*r.net, *val);
    out.push_back(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline constexpr int kReportVersion = 1;

struct EvalOptions {
  double unvoiced_threshold = 0.0;
  bool oracle = false;  // use the reference as the estimate (harness check)
};

namespace detail {

inline json finite_or_null(std::optional<double> v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

inline std::optional<double> try_metric(const std::function<double()>& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UndefinedResult && e.code() != ErrorCode::InvalidArgument) throw;
    return std::nullopt;
  }
}

}  // namespace detail

/// Full two-stage inference over `examples`; writes report.json and
/// per_class.csv into `out_dir` (if non-empty) and returns the report.
inline json evaluate(const std::vector<Example>& examples, const PitchNet<Real>* pitch_net, const TSENet<Real>* tse_net,
                     const PitchGrid& grid, const EvalOptions& opt, const fs::path& out_dir = {}) {
  require(opt.oracle || (pitch_net && tse_net), "eval: both checkpoints are required");
  if (pitch_net) require(pitch_net->grid() == grid, "eval: pitch checkpoint grid differs from the configured grid");
  if (pitch_net && tse_net) {
    require(pitch_net->grid().n_classes() == tse_net->config().pitch_classes, "eval: pitch grids of the stages differ");
    require(pitch_net->config().n_classes == tse_net->config().n_classes, "eval: class counts of the stages differ");
  }

  std::vector<metrics::SampleScores> pred_scores, tf_scores;
  json samples = json::array();
  struct ClassExtra {
    double rpa = 0.0, coss = 0.0;
    int n_rpa = 0, n_coss = 0;
  };
  std::map<int, ClassExtra> extra;
  double rpa_sum = 0.0, coss_sum = 0.0;
  int rpa_n = 0, coss_n = 0;

  for (const auto& ex : examples) {
    std::vector<double> est_pred, est_tf;
    std::optional<double> r, c;
    if (opt.oracle) {
      est_pred = est_tf = ex.target.samples;
    } else {
      const PitchSequence pred = predict_pitch(*pitch_net, ex.mixture, ex.label, opt.unvoiced_threshold);
      r = detail::try_metric([&] { return rpa(pred, ex.pitch, grid); });
      c = detail::try_metric([&] { return coss(pred, ex.pitch, grid); });
      est_pred = tse_net->extract(ex.mixture, ex.label, pred).samples;
      est_tf = tse_net->extract(ex.mixture, ex.label, ex.pitch).samples;
    }
    const auto sp = metrics::score_sample(ex.id, ex.label, est_pred, ex.target.samples, ex.mixture.samples);
    const auto st = metrics::score_sample(ex.id, ex.label, est_tf, ex.target.samples, ex.mixture.samples);
    pred_scores.push_back(sp);
    tf_scores.push_back(st);
    auto& ce = extra[ex.label];
    if (r) {
      rpa_sum += *r;
      ++rpa_n;
      ce.rpa += *r;
      ++ce.n_rpa;
    }
    if (c) {
      coss_sum += *c;
      ++coss_n;
      ce.coss += *c;
      ++ce.n_coss;
    }
    samples.push_back({{"id", ex.id},
                       {"class", ex.label},
                       {"snr_in", sp.snr_in},
                       {"snr_out", sp.snr_out},
                       {"si_snr_in", sp.si_snr_in},
                       {"si_snr_out", sp.si_snr_out},
                       {"snri", sp.snri()},
                       {"si_snri", sp.si_snri()},
                       {"snri_teacher_forced", st.snri()},
                       {"si_snri_teacher_forced", st.si_snri()},
                       {"rpa", opt.oracle ? json(1.0) : detail::finite_or_null(r)},
                       {"coss", opt.oracle ? json(1.0) : detail::finite_or_null(c)}});
  }

  const auto agg = metrics::aggregate(pred_scores);
  const auto agg_tf = metrics::aggregate(tf_scores);
  json per_class = json::array();
  for (const auto& [label, a] : agg.per_class) {
    const auto& ce = extra[label];
    per_class.push_back({{"class", label},
                         {"count", a.count},
                         {"snri", a.snri},
                         {"si_snri", a.si_snri},
                         {"snri_teacher_forced", agg_tf.per_class.at(label).snri},
                         {"si_snri_teacher_forced", agg_tf.per_class.at(label).si_snri},
                         {"rpa", ce.n_rpa ? json(ce.rpa / ce.n_rpa) : (opt.oracle ? json(1.0) : json(nullptr))},
                         {"coss", ce.n_coss ? json(ce.coss / ce.n_coss) : (opt.oracle ? json(1.0) : json(nullptr))}});
  }
  json report = {{"format_version", kReportVersion},
                 {"kind", "tsepi-eval"},
                 {"oracle", opt.oracle},
                 {"num_samples", examples.size()},
                 {"global",
                  {{"snri", agg.snri},
                   {"si_snri", agg.si_snri},
                   {"snri_teacher_forced", agg_tf.snri},
                   {"si_snri_teacher_forced", agg_tf.si_snri},
                   {"rpa", rpa_n ? json(rpa_sum / rpa_n) : (opt.oracle ? json(1.0) : json(nullptr))},
                   {"coss", coss_n ? json(coss_sum / coss_n) : (opt.oracle ? json(1.0) : json(nullptr))}}},
                 {"per_class", per_class},
                 {"samples", samples}};

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream rj(out_dir / "report.json");
    if (!rj) fail(ErrorCode::Io, "cannot write " + (out_dir / "report.json").string());
    rj << report.dump(2) << '\n';
    std::ofstream csv(out_dir / "per_class.csv");
    if (!csv) fail(ErrorCode::Io, "cannot write " + (out_dir / "per_class.csv").string());
    csv << "class,count,snri,si_snri,snri_teacher_forced,si_snri_teacher_forced,rpa,coss\n";
    const auto cell = [](const json& v) { return v.is_null() ? std::string() : v.dump(); };
    for (const auto& row : per_class)
      csv << row["class"] << ',' << row["count"] << ',' << cell(row["snri"]) << ',' << cell(row["si_snri"]) << ','
          << cell(row["snri_teacher_forced"]) << ',' << cell(row["si_snri_teacher_forced"]) << ','
          << cell(row["rpa"]) << ',' << cell(row["coss"]) << '\n';
  }
  return report;
}

/// Reads a report and checks its format version.
inline json read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open report: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, path.string() + ": invalid JSON (" + e.what() + ")");
  }
  if (j.value("format_version", -1) != kReportVersion)
    fail(ErrorCode::Format, path.string() + ": unsupported report format version");
  return j;
}

}  // namespace tsepi
