#pragma once

// Checkpoint file: a magic line, one JSON header line, then raw little-endian
// float64 parameter values (and Adam moments when saved with an optimizer).

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsepi/config.hpp"
#include "tsepi/error.hpp"
#include "tsepi/film_tcn.hpp"
#include "tsepi/nn.hpp"
#include "tsepi/tse_net.hpp"

namespace tsepi::ckpt {

using nlohmann::json;

inline constexpr const char* kMagic = "TSEPI-CKPT";
inline constexpr int kFormatVersion = 1;

struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;  // epoch in progress
  int batch = 0;  // next batch index within `epoch`
  double lr = 0.0;
};

struct Checkpoint {
  json header;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<double>> m, v;  // empty unless optimizer state was saved

  std::string kind() const { return header.at("kind").get<std::string>(); }
  TrainState state() const {
    const auto& s = header.at("state");
    return {s.at("step").get<std::int64_t>(), s.at("epoch").get<int>(), s.at("batch").get<int>(),
            s.at("lr").get<double>()};
  }
  bool has_optimizer() const { return !m.empty(); }
};

namespace detail {

template <typename T>
void put_matrix(std::ofstream& out, const nn::Mat<T>& a) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]);
    out.write(reinterpret_cast<const char*>(&d), sizeof d);
  }
}

inline std::vector<double> get_values(std::ifstream& in, std::size_t n, const std::string& path) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) fail(ErrorCode::Format, path + ": truncated checkpoint");
  return v;
}

}  // namespace detail

template <typename T>
void write(const std::filesystem::path& path, const std::string& kind, json config, json extra,
           const nn::ParamList<T>& params, const TrainState& state, nn::Adam<T>* opt = nullptr) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  json shapes = json::array();
  for (const auto* p : params) shapes.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  json header = {{"format_version", kFormatVersion},
                 {"kind", kind},
                 {"config", std::move(config)},
                 {"extra", std::move(extra)},
                 {"params", shapes},
                 {"optimizer", opt != nullptr},
                 {"state", {{"step", state.step}, {"epoch", state.epoch}, {"batch", state.batch}, {"lr", state.lr}}}};
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write checkpoint: " + path.string());
    out << kMagic << ' ' << kFormatVersion << '\n' << header.dump() << '\n';
    for (const auto* p : params) detail::put_matrix(out, p->value);
    if (opt) {
      for (const auto& m : opt->first_moments()) detail::put_matrix(out, m);
      for (const auto& v : opt->second_moments()) detail::put_matrix(out, v);
    }
    if (!out) fail(ErrorCode::Io, "failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint: " + path.string());
  std::string magic_line, header_line;
  std::getline(in, magic_line);
  const std::string prefix = std::string(kMagic) + ' ';
  if (magic_line.rfind(prefix, 0) != 0) fail(ErrorCode::Format, path.string() + ": not a checkpoint file");
  const std::string version = magic_line.substr(prefix.size());
  if (version != std::to_string(kFormatVersion))
    fail(ErrorCode::Format, path.string() + ": unsupported checkpoint format version " + version);
  std::getline(in, header_line);
  Checkpoint c;
  try {
    c.header = json::parse(header_line);
    if (c.header.at("format_version").get<int>() != kFormatVersion)
      fail(ErrorCode::Format, path.string() + ": header format version mismatch");
    std::vector<std::size_t> sizes;
    for (const auto& p : c.header.at("params"))
      sizes.push_back(p.at("rows").get<std::size_t>() * p.at("cols").get<std::size_t>());
    for (auto n : sizes) c.values.push_back(detail::get_values(in, n, path.string()));
    if (c.header.at("optimizer").get<bool>()) {
      for (auto n : sizes) c.m.push_back(detail::get_values(in, n, path.string()));
      for (auto n : sizes) c.v.push_back(detail::get_values(in, n, path.string()));
    }
    c.state();
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }
  return c;
}

/// Copies values (and moments, if `opt`) into `params`; names and shapes must match.
template <typename T>
void restore(const Checkpoint& c, const nn::ParamList<T>& params, nn::Adam<T>* opt = nullptr) {
  const auto& shapes = c.header.at("params");
  require(shapes.size() == params.size(), "checkpoint: parameter count differs from the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    require(shapes[i].at("name").get<std::string>() == p->name &&
                shapes[i].at("rows").get<Eigen::Index>() == p->value.rows() &&
                shapes[i].at("cols").get<Eigen::Index>() == p->value.cols(),
            "checkpoint: parameter " + p->name + " differs in name or shape");
    for (Eigen::Index k = 0; k < p->value.size(); ++k)
      p->value.data()[k] = static_cast<T>(c.values[i][static_cast<std::size_t>(k)]);
  }
  if (opt) {
    require(c.has_optimizer(), "checkpoint: no optimizer state to resume from");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = opt->first_moments()[i];
      auto& v = opt->second_moments()[i];
      for (Eigen::Index k = 0; k < m.size(); ++k) {
        m.data()[k] = static_cast<T>(c.m[i][static_cast<std::size_t>(k)]);
        v.data()[k] = static_cast<T>(c.v[i][static_cast<std::size_t>(k)]);
      }
    }
    opt->set_steps(c.state().step);
  }
}

inline json pitch_config_json(const PitchNetConfig& cfg, const PitchGrid& grid, std::uint64_t seed) {
  return {{"pitch_net", to_json(cfg)}, {"grid", grid_to_json(grid)}, {"seed", seed}};
}

inline json tse_config_json(const TSEConfig& cfg, std::uint64_t seed) {
  return {{"tse_net", to_json(cfg)}, {"seed", seed}};
}

inline PitchNetConfig pitch_config_of(const Checkpoint& c) {
  require(c.kind() == "pitch", "checkpoint: expected a pitch-net checkpoint, got " + c.kind());
  PitchNetConfig cfg;
  merge(cfg, c.header.at("config").at("pitch_net"));
  return cfg;
}

inline PitchGrid grid_of(const Checkpoint& c) { return grid_from_json(c.header.at("config").at("grid")); }

inline TSEConfig tse_config_of(const Checkpoint& c) {
  require(c.kind() == "tse", "checkpoint: expected a tse-net checkpoint, got " + c.kind());
  TSEConfig cfg;
  merge(cfg, c.header.at("config").at("tse_net"));
  return cfg;
}

inline std::uint64_t seed_of(const Checkpoint& c) { return c.header.at("config").at("seed").get<std::uint64_t>(); }

template <typename T>
void save_pitch(const std::filesystem::path& path, PitchNet<T>& net, const TrainState& state,
                nn::Adam<T>* opt = nullptr) {
  write<T>(path, "pitch", pitch_config_json(net.config(), net.grid(), net.seed()), json::object(), net.params(), state,
           opt);
}

/// Loads a pitch net; with `expected`, a differing config or grid is refused.
template <typename T>
PitchNet<T> load_pitch(const std::filesystem::path& path, const PitchNetConfig* expected = nullptr,
                       const PitchGrid* expected_grid = nullptr) {
  const Checkpoint c = read(path);
  const PitchNetConfig cfg = pitch_config_of(c);
  const PitchGrid grid = grid_of(c);
  if (expected) require(*expected == cfg, path.string() + ": pitch-net config differs from the requested config");
  if (expected_grid) require(*expected_grid == grid, path.string() + ": pitch grid differs from the requested grid");
  PitchNet<T> net(cfg, grid, seed_of(c));
  restore<T>(c, net.params());
  return net;
}

template <typename T>
void save_tse(const std::filesystem::path& path, TSENet<T>& net, const TrainState& state, nn::Adam<T>* opt = nullptr,
              json extra = json::object()) {
  write<T>(path, "tse", tse_config_json(net.config(), net.seed()), std::move(extra), net.params(), state, opt);
}

template <typename T>
TSENet<T> load_tse(const std::filesystem::path& path, const TSEConfig* expected = nullptr) {
  const Checkpoint c = read(path);
  const TSEConfig cfg = tse_config_of(c);
  if (expected) require(*expected == cfg, path.string() + ": tse-net config differs from the requested config");
  TSENet<T> net(cfg, seed_of(c));
  restore<T>(c, net.params());
  return net;
}

}  // namespace tsepi::ckpt
