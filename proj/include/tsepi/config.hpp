#pragma once

// Run configuration: JSON files layered over a named preset, with the
// TSEPI_SEED environment override.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsepi/error.hpp"
#include "tsepi/film_tcn.hpp"
#include "tsepi/metrics.hpp"
#include "tsepi/pitch.hpp"
#include "tsepi/tse_net.hpp"

namespace tsepi {

using nlohmann::json;

namespace detail {

/// Rejects keys of `j` not present in `known`, so typos do not pass silently.
inline void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  require(j.is_object(), where + ": expected an object");
  for (const auto& [k, v] : j.items())
    require(known.count(k) > 0, where + ": unknown key '" + k + "'");
}

template <typename V>
void read_key(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline json grid_to_json(const PitchGrid& g) {
  return {{"f_min", g.f_min()}, {"f_max", g.f_max()}, {"step_cents", g.step_cents()}};
}

inline PitchGrid grid_from_json(const json& j) {
  return PitchGrid(j.value("f_min", 32.7), j.value("f_max", 1975.5), j.value("step_cents", 20.0));
}

inline json to_json(const PitchNetConfig& c) {
  return {{"depth", c.depth},         {"channels", c.channels},       {"kernel", c.kernel},
          {"dilation_cycle", c.dilation_cycle}, {"embed_dim", c.embed_dim}, {"n_classes", c.n_classes},
          {"input_bins", c.input_bins}, {"stft_window", c.stft_window}, {"stft_hop", c.stft_hop}};
}

inline void merge(PitchNetConfig& c, const json& j) {
  detail::check_keys(j, {"depth", "channels", "kernel", "dilation_cycle", "embed_dim", "n_classes", "input_bins",
                         "stft_window", "stft_hop"},
                     "pitch_net");
  detail::read_key(j, "depth", c.depth);
  detail::read_key(j, "channels", c.channels);
  detail::read_key(j, "kernel", c.kernel);
  detail::read_key(j, "dilation_cycle", c.dilation_cycle);
  detail::read_key(j, "embed_dim", c.embed_dim);
  detail::read_key(j, "n_classes", c.n_classes);
  detail::read_key(j, "stft_window", c.stft_window);
  detail::read_key(j, "stft_hop", c.stft_hop);
  c.input_bins = c.stft_window / 2 + 1;
  detail::read_key(j, "input_bins", c.input_bins);
}

inline json to_json(const TSEConfig& c) {
  return {{"encoder_type", to_string(c.encoder_type)},
          {"kernel_length", c.kernel_length},
          {"n_filters", c.n_filters},
          {"dcc_layers", c.dcc_layers},
          {"dcc_channels", c.dcc_channels},
          {"dcc_kernel", c.dcc_kernel},
          {"decoder_layers", c.decoder_layers},
          {"pitch_proj_dim", c.pitch_proj_dim},
          {"n_classes", c.n_classes},
          {"pitch_classes", c.pitch_classes},
          {"pitch_window", c.pitch_window},
          {"pitch_hop", c.pitch_hop},
          {"sample_rate", c.sample_rate},
          {"gtfb_f_low", c.gtfb_f_low},
          {"gtfb_f_high", c.gtfb_f_high}};
}

inline void merge(TSEConfig& c, const json& j) {
  detail::check_keys(j, {"encoder_type", "kernel_length", "n_filters", "dcc_layers", "dcc_channels", "dcc_kernel",
                         "decoder_layers", "pitch_proj_dim", "n_classes", "pitch_classes", "pitch_window",
                         "pitch_hop", "sample_rate", "gtfb_f_low", "gtfb_f_high"},
                     "tse_net");
  if (j.contains("encoder_type")) c.encoder_type = encoder_type_from_string(j.at("encoder_type").get<std::string>());
  detail::read_key(j, "kernel_length", c.kernel_length);
  detail::read_key(j, "n_filters", c.n_filters);
  detail::read_key(j, "dcc_layers", c.dcc_layers);
  detail::read_key(j, "dcc_channels", c.dcc_channels);
  detail::read_key(j, "dcc_kernel", c.dcc_kernel);
  detail::read_key(j, "decoder_layers", c.decoder_layers);
  detail::read_key(j, "pitch_proj_dim", c.pitch_proj_dim);
  detail::read_key(j, "n_classes", c.n_classes);
  detail::read_key(j, "pitch_classes", c.pitch_classes);
  detail::read_key(j, "pitch_window", c.pitch_window);
  detail::read_key(j, "pitch_hop", c.pitch_hop);
  detail::read_key(j, "sample_rate", c.sample_rate);
  detail::read_key(j, "gtfb_f_low", c.gtfb_f_low);
  detail::read_key(j, "gtfb_f_high", c.gtfb_f_high);
}

struct OptimConfig {
  double lr = 1e-4;
  int batch = 32;
  int epochs = 80;
  long max_steps = 0;       // > 0 stops after this many optimizer steps
  int lr_halve_epoch = -1;  // < 0 disables
  double clip_norm = 0.0;
  int log_every = 1;

  void validate(const std::string& where) const {
    require(lr > 0.0, where + ": lr must be positive");
    require(batch >= 1, where + ": batch must be >= 1");
    require(epochs >= 1 || max_steps > 0, where + ": need epochs >= 1 or max_steps > 0");
    require(log_every >= 1, where + ": log_every must be >= 1");
  }
};

inline json to_json(const OptimConfig& o) {
  return {{"lr", o.lr},
          {"batch", o.batch},
          {"epochs", o.epochs},
          {"max_steps", o.max_steps},
          {"lr_halve_epoch", o.lr_halve_epoch},
          {"clip_norm", o.clip_norm},
          {"log_every", o.log_every}};
}

inline void merge(OptimConfig& o, const json& j, const std::string& where) {
  detail::check_keys(j, {"lr", "batch", "epochs", "max_steps", "lr_halve_epoch", "clip_norm", "log_every"}, where);
  detail::read_key(j, "lr", o.lr);
  detail::read_key(j, "batch", o.batch);
  detail::read_key(j, "epochs", o.epochs);
  detail::read_key(j, "max_steps", o.max_steps);
  detail::read_key(j, "lr_halve_epoch", o.lr_halve_epoch);
  detail::read_key(j, "clip_norm", o.clip_norm);
  detail::read_key(j, "log_every", o.log_every);
}

inline json to_json(const metrics::LossWeights& w) { return {{"snr", w.snr}, {"si_snr", w.si_snr}}; }

inline metrics::LossWeights weights_from_json(const json& j) {
  detail::check_keys(j, {"snr", "si_snr"}, "loss");
  metrics::LossWeights w;
  detail::read_key(j, "snr", w.snr);
  detail::read_key(j, "si_snr", w.si_snr);
  return w;
}

enum class PitchSource { GroundTruth, Checkpoint };

struct RunConfig {
  std::string preset = "desk";
  std::string stage = "tse";  // pitch | tse | eval | synth
  std::string run_dir = "runs/default";
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  std::uint64_t seed = 17;
  PitchGrid grid;
  PitchNetConfig pitch_net;
  TSEConfig tse_net;
  OptimConfig pitch_optim;
  OptimConfig tse_optim;
  metrics::LossWeights loss;
  std::vector<metrics::LossWeights> loss_sweep;
  PitchSource pitch_source = PitchSource::GroundTruth;
  std::string pitch_checkpoint;
  double unvoiced_threshold = 0.0;  // decode: peak probability below this is unvoiced
  int overfit = 0;  // > 0: train on the first N examples, full batch

  // synth-data
  std::size_t train_count = 200, val_count = 50, test_count = 50;
  double clip_seconds = 4.0;
  int sources_per_mixture = 2;

  void validate() const {
    require(stage == "pitch" || stage == "tse" || stage == "eval" || stage == "synth",
            "config: stage must be pitch, tse, eval or synth");
    pitch_net.validate();
    tse_net.validate();
    pitch_optim.validate("pitch_optim");
    tse_optim.validate("tse_optim");
    loss.validate();
    for (const auto& w : loss_sweep) w.validate();
    require(tse_net.pitch_classes == grid.n_classes(), "config: tse pitch_classes must equal the grid class count");
    require(tse_net.pitch_window == pitch_net.stft_window && tse_net.pitch_hop == pitch_net.stft_hop,
            "config: stage-1 and stage-2 pitch framing differ");
    require(tse_net.n_classes == pitch_net.n_classes, "config: stage-1 and stage-2 class counts differ");
    require(unvoiced_threshold >= 0.0 && unvoiced_threshold <= 1.0, "config: unvoiced_threshold must be in [0, 1]");
    require(overfit >= 0, "config: overfit must be >= 0");
    require(clip_seconds > 0.0, "config: clip_seconds must be positive");
    require(sources_per_mixture >= 1 && sources_per_mixture <= 4, "config: sources_per_mixture must be in [1, 4]");
  }

  /// Paths a stage needs must exist before any work starts.
  void check_paths() const {
    const auto need = [](const std::string& p, const char* what) {
      require(!p.empty(), std::string("config: ") + what + " is not set");
      if (!std::filesystem::exists(p)) fail(ErrorCode::Io, std::string(what) + " not found: " + p);
    };
    if (stage == "pitch" || stage == "tse") need(train_manifest, "train_manifest");
    if ((stage == "pitch" || stage == "tse") && !val_manifest.empty()) need(val_manifest, "val_manifest");
    if (stage == "tse" && pitch_source == PitchSource::Checkpoint) need(pitch_checkpoint, "pitch_checkpoint");
    if (stage == "eval") need(test_manifest, "test_manifest");
  }
};

/// desk: small models and data that train on one CPU core.
/// paper: published counts and hyperparameters; not meant for CI.
inline RunConfig preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.pitch_net.depth = 9;
    c.pitch_net.channels = 64;
    c.pitch_optim = {1e-3, 8, 5, 0, -1, 5.0, 10};
    c.tse_net.n_filters = 256;
    c.tse_net.dcc_channels = 64;
    c.tse_net.dcc_layers = 10;
    c.tse_net.pitch_proj_dim = 64;
    c.tse_optim = {5e-4, 8, 5, 0, 4, 5.0, 10};
    c.train_count = 200;
    c.val_count = 50;
    c.test_count = 50;
  } else if (name == "paper") {
    c.pitch_net.depth = 9;
    c.pitch_optim = {1e-4, 32, 80, 0, -1, 0.0, 50};
    c.tse_net.n_filters = 512;
    c.tse_net.dcc_channels = 256;
    c.tse_optim = {5e-4, 32, 80, 0, 40, 0.0, 50};
    c.train_count = 50000;
    c.val_count = 5000;
    c.test_count = 5000;
  } else {
    fail(ErrorCode::InvalidArgument, "unknown preset: " + name);
  }
  c.loss = {0.9, 0.1};
  c.loss_sweep = {{0.5, 0.5}, {0.7, 0.3}, {0.9, 0.1}};
  return c;
}

inline json to_json(const RunConfig& c) {
  json sweep = json::array();
  for (const auto& w : c.loss_sweep) sweep.push_back(to_json(w));
  return {{"preset", c.preset},
          {"stage", c.stage},
          {"run_dir", c.run_dir},
          {"train_manifest", c.train_manifest},
          {"val_manifest", c.val_manifest},
          {"test_manifest", c.test_manifest},
          {"seed", c.seed},
          {"grid", grid_to_json(c.grid)},
          {"pitch_net", to_json(c.pitch_net)},
          {"tse_net", to_json(c.tse_net)},
          {"pitch_optim", to_json(c.pitch_optim)},
          {"tse_optim", to_json(c.tse_optim)},
          {"loss", to_json(c.loss)},
          {"loss_sweep", sweep},
          {"pitch_source", c.pitch_source == PitchSource::Checkpoint ? "checkpoint" : "ground_truth"},
          {"pitch_checkpoint", c.pitch_checkpoint},
          {"unvoiced_threshold", c.unvoiced_threshold},
          {"overfit", c.overfit},
          {"data", {{"train_count", c.train_count},
                    {"val_count", c.val_count},
                    {"test_count", c.test_count},
                    {"clip_seconds", c.clip_seconds},
                    {"sources_per_mixture", c.sources_per_mixture}}}};
}

inline void merge(RunConfig& c, const json& j) {
  detail::check_keys(j, {"preset", "stage", "run_dir", "train_manifest", "val_manifest", "test_manifest", "seed",
                         "grid", "pitch_net", "tse_net", "pitch_optim", "tse_optim", "loss", "loss_sweep",
                         "pitch_source", "pitch_checkpoint", "unvoiced_threshold", "overfit", "data"},
                     "config");
  detail::read_key(j, "stage", c.stage);
  detail::read_key(j, "run_dir", c.run_dir);
  detail::read_key(j, "train_manifest", c.train_manifest);
  detail::read_key(j, "val_manifest", c.val_manifest);
  detail::read_key(j, "test_manifest", c.test_manifest);
  detail::read_key(j, "seed", c.seed);
  if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
  if (j.contains("pitch_net")) merge(c.pitch_net, j.at("pitch_net"));
  if (j.contains("tse_net")) merge(c.tse_net, j.at("tse_net"));
  if (j.contains("pitch_optim")) merge(c.pitch_optim, j.at("pitch_optim"), "pitch_optim");
  if (j.contains("tse_optim")) merge(c.tse_optim, j.at("tse_optim"), "tse_optim");
  if (j.contains("loss")) c.loss = weights_from_json(j.at("loss"));
  if (j.contains("loss_sweep")) {
    c.loss_sweep.clear();
    for (const auto& w : j.at("loss_sweep")) c.loss_sweep.push_back(weights_from_json(w));
  }
  if (j.contains("pitch_source")) {
    const auto s = j.at("pitch_source").get<std::string>();
    require(s == "ground_truth" || s == "checkpoint", "config: pitch_source must be ground_truth or checkpoint");
    c.pitch_source = s == "checkpoint" ? PitchSource::Checkpoint : PitchSource::GroundTruth;
  }
  detail::read_key(j, "pitch_checkpoint", c.pitch_checkpoint);
  detail::read_key(j, "unvoiced_threshold", c.unvoiced_threshold);
  detail::read_key(j, "overfit", c.overfit);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d, {"train_count", "val_count", "test_count", "clip_seconds", "sources_per_mixture"}, "data");
    detail::read_key(d, "train_count", c.train_count);
    detail::read_key(d, "val_count", c.val_count);
    detail::read_key(d, "test_count", c.test_count);
    detail::read_key(d, "clip_seconds", c.clip_seconds);
    detail::read_key(d, "sources_per_mixture", c.sources_per_mixture);
  }
}

/// Applies TSEPI_SEED if set.
inline void apply_env(RunConfig& c) {
  if (const char* s = std::getenv("TSEPI_SEED"); s && *s) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(s, &used);
      require(used == std::string(s).size(), "TSEPI_SEED must be an unsigned integer");
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidArgument, std::string("TSEPI_SEED must be an unsigned integer, got '") + s + "'");
    }
  }
}

/// Preset (from the file's "preset" key or `preset_name`), then the file, then
/// the environment.
inline RunConfig load_config(const std::string& path, const std::string& preset_name = "desk") {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open config: " + path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, path + ": invalid JSON (" + e.what() + ")");
    }
  }
  RunConfig c = preset(j.value("preset", preset_name));
  try {
    merge(c, j);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, "config: " + std::string(e.what()));
  }
  apply_env(c);
  return c;
}

inline void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) fail(ErrorCode::Io, "cannot write " + (dir / "config.json").string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace tsepi
