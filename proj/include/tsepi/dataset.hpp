#pragma once

// On-disk datasets: WAV/CSV files plus a JSONL manifest, one record per
// mixture. Paths inside a manifest are relative to the manifest's directory.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsepi/error.hpp"
#include "tsepi/forge.hpp"
#include "tsepi/pitch.hpp"
#include "tsepi/rir.hpp"
#include "tsepi/wav.hpp"

namespace tsepi {

namespace fs = std::filesystem;
using nlohmann::json;

struct ManifestRecord {
  std::string id;
  std::string split;
  std::string mixture;  // relative paths
  std::string target;
  std::string pitch;
  int target_class = 0;
  std::vector<int> classes;
  std::uint64_t seed = 0;
  double snr_db = 0.0;
  double noise_snr_db = std::numeric_limits<double>::infinity();
  double interference_scale = 1.0;
  double gain = 1.0;
  rir::Scene scene;
  std::vector<double> measured_rt60;
  int sample_rate = kWorkingRate;
  std::size_t length = 0;

  bool operator==(const ManifestRecord& o) const {
    const auto same_scene = [](const rir::Scene& a, const rir::Scene& b) {
      if (a.room.dimensions != b.room.dimensions || a.room.rt60 != b.room.rt60) return false;
      if (a.sources.size() != b.sources.size()) return false;
      for (std::size_t i = 0; i < a.sources.size(); ++i)
        if (a.sources[i].source != b.sources[i].source || a.sources[i].mic != b.sources[i].mic) return false;
      return true;
    };
    return id == o.id && split == o.split && mixture == o.mixture && target == o.target && pitch == o.pitch &&
           target_class == o.target_class && classes == o.classes && seed == o.seed && snr_db == o.snr_db &&
           noise_snr_db == o.noise_snr_db && interference_scale == o.interference_scale && gain == o.gain &&
           same_scene(scene, o.scene) && measured_rt60 == o.measured_rt60 && sample_rate == o.sample_rate &&
           length == o.length;
  }
};

inline json scene_to_json(const rir::Scene& s) {
  json srcs = json::array();
  for (const auto& g : s.sources) srcs.push_back({{"source", g.source}, {"mic", g.mic}});
  return {{"room", {{"dimensions", s.room.dimensions}, {"rt60", s.room.rt60}}}, {"sources", srcs}};
}

inline rir::Scene scene_from_json(const json& j) {
  rir::Scene s;
  s.room.dimensions = j.at("room").at("dimensions").get<rir::Point>();
  s.room.rt60 = j.at("room").at("rt60").get<double>();
  for (const auto& g : j.at("sources")) s.sources.push_back({g.at("source").get<rir::Point>(), g.at("mic").get<rir::Point>()});
  return s;
}

inline json to_json(const ManifestRecord& r) {
  json j;
  j["id"] = r.id;
  j["split"] = r.split;
  j["mixture"] = r.mixture;
  j["target"] = r.target;
  j["pitch"] = r.pitch;
  j["class"] = r.target_class;
  j["classes"] = r.classes;
  j["seed"] = r.seed;
  j["snr_db"] = r.snr_db;
  j["noise_snr_db"] = std::isfinite(r.noise_snr_db) ? json(r.noise_snr_db) : json(nullptr);
  j["interference_scale"] = r.interference_scale;
  j["gain"] = r.gain;
  j["scene"] = scene_to_json(r.scene);
  j["measured_rt60"] = r.measured_rt60;
  j["sample_rate"] = r.sample_rate;
  j["length"] = r.length;
  return j;
}

inline ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.split = j.value("split", "");
  r.mixture = j.at("mixture").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.pitch = j.at("pitch").get<std::string>();
  r.target_class = j.at("class").get<int>();
  r.classes = j.value("classes", std::vector<int>{r.target_class});
  r.seed = j.value("seed", std::uint64_t{0});
  r.snr_db = j.value("snr_db", 0.0);
  const auto& n = j.contains("noise_snr_db") ? j.at("noise_snr_db") : json(nullptr);
  r.noise_snr_db = n.is_null() ? std::numeric_limits<double>::infinity() : n.get<double>();
  r.interference_scale = j.value("interference_scale", 1.0);
  r.gain = j.value("gain", 1.0);
  if (j.contains("scene")) r.scene = scene_from_json(j.at("scene"));
  r.measured_rt60 = j.value("measured_rt60", std::vector<double>{});
  r.sample_rate = j.value("sample_rate", kWorkingRate);
  r.length = j.value("length", std::size_t{0});
  return r;
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write manifest: " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) fail(ErrorCode::Io, "failed writing manifest: " + path.string());
}

/// Parses a manifest; with `check_files`, every referenced file must exist.
inline std::vector<ManifestRecord> read_manifest(const fs::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open manifest: " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    ManifestRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, where + ": malformed manifest record (" + e.what() + ")");
    }
    if (check_files)
      for (const auto* rel : {&r.mixture, &r.target, &r.pitch})
        if (!fs::exists(base / *rel)) fail(ErrorCode::Io, where + ": missing file " + (base / *rel).string());
    records.push_back(std::move(r));
  }
  return records;
}

/// A loaded training/evaluation example.
struct Example {
  std::string id;
  AudioClip mixture;
  AudioClip target;
  int label = 0;
  PitchSequence pitch;
};

inline Example load_example(const ManifestRecord& r, const fs::path& base, const PitchGrid& grid = {}) {
  Example ex;
  ex.id = r.id;
  ex.mixture = wav::read(base / r.mixture);
  ex.target = wav::read(base / r.target);
  ex.label = r.target_class;
  ex.pitch = read_pitch_csv(base / r.pitch, grid);
  require(ex.mixture.size() == ex.target.size(), r.id + ": mixture and target lengths differ");
  return ex;
}

inline std::vector<Example> load_manifest(const fs::path& path, const PitchGrid& grid = {}) {
  std::vector<Example> out;
  for (const auto& r : read_manifest(path)) out.push_back(load_example(r, path.parent_path(), grid));
  return out;
}

inline Example to_example(const MixtureSample& m, std::string id = {}) {
  return {std::move(id), m.mixture, m.target_direct, m.target_class, m.pitch_ref};
}

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return buf;
}

/// RIR cache entry: float32 WAV plus a JSON sidecar.
inline void write_rir_cache(const fs::path& wav_path, const rir::RIR& h, const rir::RoomSpec& room,
                            const rir::Geometry& geo) {
  if (wav_path.has_parent_path()) fs::create_directories(wav_path.parent_path());
  wav::write(wav_path, AudioClip(h.taps, h.sample_rate), wav::SampleFormat::Float32);
  const auto rt = rir::measure_rt60(h.taps, h.sample_rate);
  json side = {{"room", {{"dimensions", room.dimensions}, {"rt60", room.rt60}}},
               {"geometry", {{"source", geo.source}, {"mic", geo.mic}}},
               {"measured_rt60", rt ? json(*rt) : json(nullptr)},
               {"direct_delay", h.direct_delay},
               {"max_order", h.max_order},
               {"absorption", h.absorption},
               {"decay_warning", h.decay_warning},
               {"sample_rate", h.sample_rate}};
  fs::path side_path = wav_path;
  side_path.replace_extension(".json");
  std::ofstream out(side_path);
  if (!out) fail(ErrorCode::Io, "cannot write " + side_path.string());
  out << side.dump(2) << '\n';
}

struct SynthOptions {
  std::string split = "train";
  std::size_t num = 200;
  std::uint64_t seed = 17;
  MixtureRecipe recipe;
  MixtureOptions mixture;
  bool save_rirs = false;
};

/// Per-split seed so train/val/test differ under one base seed.
inline std::uint64_t split_seed(const std::string& split, std::uint64_t seed) { return nn::hash_name(split, seed); }

/// Writes DIR/{mixture,target}/NNNNN.wav, DIR/pitch/NNNNN.csv and
/// DIR/manifest.jsonl; returns the records.
inline std::vector<ManifestRecord> synth_dataset(const fs::path& dir, const SynthOptions& opt) {
  for (const char* sub : {"mixture", "target", "pitch"}) fs::create_directories(dir / sub);
  const std::uint64_t base = split_seed(opt.split, opt.seed);
  std::vector<ManifestRecord> records;
  for (std::size_t i = 0; i < opt.num; ++i) {
    const MixtureSample m = make_sample(base, i, opt.recipe, opt.mixture);
    ManifestRecord r;
    r.id = sample_id(i);
    r.split = opt.split;
    r.mixture = "mixture/" + r.id + ".wav";
    r.target = "target/" + r.id + ".wav";
    r.pitch = "pitch/" + r.id + ".csv";
    r.target_class = m.target_class;
    r.classes = m.meta.classes;
    r.seed = m.meta.seed;
    r.snr_db = m.meta.snr_db;
    r.noise_snr_db = m.meta.noise_snr_db;
    r.interference_scale = m.meta.interference_scale;
    r.gain = m.meta.gain;
    r.scene = m.meta.scene;
    r.measured_rt60 = m.meta.measured_rt60;
    r.sample_rate = m.mixture.sample_rate;
    r.length = m.mixture.size();
    wav::write(dir / r.mixture, m.mixture);
    wav::write(dir / r.target, m.target_direct);
    write_pitch_csv(dir / r.pitch, m.pitch_ref, opt.mixture.grid);
    if (opt.save_rirs)
      for (std::size_t s = 0; s < m.rirs.size(); ++s)
        write_rir_cache(dir / "rir" / (r.id + "_s" + std::to_string(s) + ".wav"), m.rirs[s], m.meta.scene.room,
                        m.meta.scene.sources[s]);
    records.push_back(std::move(r));
  }
  write_manifest(dir / "manifest.jsonl", records);
  return records;
}

}  // namespace tsepi
