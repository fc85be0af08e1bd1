#pragma once

// Synthetic sound events, the YIN pitch labeler and reverberant mixture
// assembly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tsepi/audio.hpp"
#include "tsepi/error.hpp"
#include "tsepi/nn.hpp"
#include "tsepi/pitch.hpp"
#include "tsepi/rir.hpp"

namespace tsepi {

inline constexpr int kNumClasses = 27;

struct SourceEvent {
  AudioClip clip;
  int class_label = 0;
  std::string origin = "synthetic";  // or a file path

  void validate(int n_classes = kNumClasses) const {
    clip.validate();
    require(class_label >= 0 && class_label < n_classes, "source: invalid class id " + std::to_string(class_label));
    require(rms(clip.samples) > 1e-5, "source: clip is silent");
  }
};

/// Timbre recipe of a synthetic class.
struct ClassRecipe {
  double f0_low = 80.0;  // f0 band is [f0_low, 2 f0_low]
  int partials = 4;
  double rolloff = 1.0;  // partial k has amplitude k^-rolloff
  int envelope = 0;      // 0 sustained, 1 percussive, 2 swell
  double noise_db = -40.0;
};

inline ClassRecipe class_recipe(int class_label) {
  require(class_label >= 0 && class_label < kNumClasses, "invalid class id " + std::to_string(class_label));
  ClassRecipe r;
  r.f0_low = 80.0 * std::pow(2.0, class_label * 3.3 / (kNumClasses - 1));
  r.partials = 2 + 2 * (class_label % 5);
  r.rolloff = 0.6 + 0.25 * (class_label % 4);
  r.envelope = class_label % 3;
  r.noise_db = -45.0 + 5.0 * (class_label % 4);
  return r;
}

/// Harmonic-complex note sequence in the class's f0 band.
inline SourceEvent synth_source(int class_label, std::uint64_t seed, double seconds = 4.0, int fs = kWorkingRate) {
  require(seconds > 0.0 && fs > 0, "synth_source: invalid duration or rate");
  const ClassRecipe rec = class_recipe(class_label);
  std::mt19937_64 rng(nn::hash_name("source", seed ^ (0x9e3779b97f4a7c15ull * (class_label + 1))));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto n = static_cast<std::size_t>(std::lround(seconds * fs));
  std::vector<double> x(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;

  double t = 0.02 + 0.1 * unit(rng);
  while (t < seconds) {
    const double dur = 0.25 + 0.45 * unit(rng);
    const double f0 = rec.f0_low * std::pow(2.0, unit(rng));
    const double vib_rate = 4.0 + 2.0 * unit(rng);
    const double vib_depth = std::pow(2.0, 15.0 / 1200.0) - 1.0;
    const auto i0 = static_cast<std::size_t>(t * fs);
    const auto i1 = std::min(n, static_cast<std::size_t>((t + dur) * fs));
    std::vector<double> phase(static_cast<std::size_t>(rec.partials));
    for (auto& p : phase) p = two_pi * unit(rng);
    double acc = 0.0;  // fundamental phase
    for (std::size_t i = i0; i < i1; ++i) {
      const double tau = static_cast<double>(i - i0) / fs;
      const double f = f0 * (1.0 + vib_depth * std::sin(two_pi * vib_rate * tau));
      acc += two_pi * f / fs;
      double env = 1.0;
      const double attack = rec.envelope == 2 ? 0.4 * dur : (rec.envelope == 1 ? 0.005 : 0.02);
      if (tau < attack) env = tau / attack;
      if (rec.envelope == 1) env *= std::exp(-tau / 0.25);
      const double release = 0.05;
      if (dur - tau < release) env *= std::max(0.0, (dur - tau) / release);
      double v = 0.0;
      for (int k = 1; k <= rec.partials; ++k) {
        if (k * f >= 0.45 * fs) break;
        v += std::pow(static_cast<double>(k), -rec.rolloff) * std::sin(k * acc + phase[static_cast<std::size_t>(k - 1)]);
      }
      x[i] += env * v;
    }
    t += dur + 0.05 + 0.2 * unit(rng);
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? 0.5 / peak : 1.0;
  const double noise = 0.5 * std::pow(10.0, rec.noise_db / 20.0);
  for (double& v : x) v = v * scale + noise * gauss(rng);

  SourceEvent ev{AudioClip(std::move(x), fs), class_label, "synthetic"};
  ev.validate();
  return ev;
}

struct YinOptions {
  int window = kDefaultWindow;
  int hop = kDefaultHop;
  double threshold = 0.15;    // cumulative-mean-normalized difference
  double silence_rms = 1e-5;  // frames quieter than this are unvoiced
};

/// YIN f0 track quantized to `grid`; one label per STFT-aligned frame.
inline PitchSequence f0_oracle(const AudioClip& clip, const PitchGrid& grid = {}, const YinOptions& opt = {}) {
  require(clip.sample_rate > 0, "f0_oracle: invalid sample rate");
  const int fs = clip.sample_rate;
  const int tau_min = std::max(2, static_cast<int>(std::floor(fs / grid.f_max())));
  const int tau_max = static_cast<int>(std::ceil(fs / grid.f_min()));
  const int w = opt.window - tau_max - 1;
  require(w > tau_min, "f0_oracle: window too short for the pitch range");

  PitchSequence seq;
  seq.hop = static_cast<double>(opt.hop) / fs;
  const int frames = frame_count(clip.size(), opt.window, opt.hop);
  seq.bins.assign(static_cast<std::size_t>(frames), grid.unvoiced_index());
  std::vector<double> d(static_cast<std::size_t>(tau_max) + 2), cm(d.size());

  for (int f = 0; f < frames; ++f) {
    const double* x = clip.samples.data() + static_cast<std::ptrdiff_t>(f) * opt.hop;
    double e = 0.0;
    for (int j = 0; j < opt.window; ++j) e += x[j] * x[j];
    if (std::sqrt(e / opt.window) < opt.silence_rms) continue;

    for (int tau = 1; tau <= tau_max + 1; ++tau) {
      double s = 0.0;
      for (int j = 0; j < w; ++j) {
        const double diff = x[j] - x[j + tau];
        s += diff * diff;
      }
      d[static_cast<std::size_t>(tau)] = s;
    }
    cm[0] = 1.0;
    double running = 0.0;
    for (int tau = 1; tau <= tau_max + 1; ++tau) {
      running += d[static_cast<std::size_t>(tau)];
      cm[static_cast<std::size_t>(tau)] = running > 0.0 ? d[static_cast<std::size_t>(tau)] * tau / running : 1.0;
    }
    int best = -1;
    for (int tau = tau_min; tau <= tau_max; ++tau) {
      if (cm[static_cast<std::size_t>(tau)] < opt.threshold) {
        while (tau + 1 <= tau_max && cm[static_cast<std::size_t>(tau + 1)] < cm[static_cast<std::size_t>(tau)]) ++tau;
        best = tau;
        break;
      }
    }
    if (best < 0) continue;

    double period = best;
    const double a = cm[static_cast<std::size_t>(best - 1)], b = cm[static_cast<std::size_t>(best)],
                 c = cm[static_cast<std::size_t>(best + 1)];
    const double denom = a - 2.0 * b + c;
    if (denom > 0.0) period += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
    seq.bins[static_cast<std::size_t>(f)] = grid.hz_to_bin(fs / period);
  }
  return seq;
}

struct MixtureMeta {
  rir::Scene scene;
  std::vector<int> classes;  // target first
  double snr_db = 0.0;
  double noise_snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  double interference_scale = 1.0;
  double gain = 1.0;  // peak normalization applied to every component
  std::vector<double> measured_rt60;
};

struct MixtureSample {
  AudioClip mixture;
  AudioClip target_direct;
  int target_class = 0;
  PitchSequence pitch_ref;
  MixtureMeta meta;
  // Components, already scaled: mixture = target_reverb + interference + noise.
  AudioClip target_reverb;
  AudioClip interference;
  AudioClip noise;
  std::vector<AudioClip> source_direct;  // direct-path image of every source
  std::vector<PitchSequence> source_pitch;  // filled when MixtureOptions::pitch_all_sources
  std::vector<rir::RIR> rirs;
};

struct MixtureOptions {
  rir::SimulationOptions sim;
  bool peak_normalize = true;
  double peak = 0.9;
  PitchGrid grid;
  YinOptions yin;
  bool pitch_all_sources = false;  // also label interferers (source_pitch)
};

/// Reverberant mixture of `sources` (first is the target) in `scene`.
/// noise_snr_db = +inf disables the noise floor.
inline MixtureSample build_mixture(const std::vector<SourceEvent>& sources, const rir::Scene& scene, double snr_db,
                                  double noise_snr_db, std::uint64_t seed, const MixtureOptions& opt = {}) {
  require(!sources.empty(), "build_mixture: no sources");
  require(scene.sources.size() >= sources.size(), "build_mixture: scene has fewer source positions than sources");
  const int fs = sources[0].clip.sample_rate;
  const std::size_t len = sources[0].clip.size();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    sources[i].validate();
    require(sources[i].clip.sample_rate == fs && sources[i].clip.size() == len,
            "build_mixture: sources differ in rate or length");
    for (std::size_t j = 0; j < i; ++j)
      require(sources[i].class_label != sources[j].class_label, "build_mixture: duplicate source classes");
  }

  MixtureSample out;
  out.target_class = sources[0].class_label;
  out.meta.scene = scene;
  out.meta.snr_db = snr_db;
  out.meta.noise_snr_db = noise_snr_db;
  out.meta.seed = seed;

  std::vector<AudioClip> reverb;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const rir::RIR h = rir::simulate_rir(scene.room, scene.sources[i], fs, opt.sim);
    if (auto m = rir::measure_rt60(h.taps, fs)) out.meta.measured_rt60.push_back(*m);
    else out.meta.measured_rt60.push_back(0.0);
    reverb.push_back(convolve(sources[i].clip, h.taps));
    out.rirs.push_back(h);
    out.source_direct.push_back(convolve(sources[i].clip, rir::direct_path_rir(scene.sources[i], fs).taps));
    out.meta.classes.push_back(sources[i].class_label);
  }

  out.target_reverb = reverb[0];
  out.interference = AudioClip(std::vector<double>(len, 0.0), fs);
  for (std::size_t i = 1; i < reverb.size(); ++i)
    for (std::size_t k = 0; k < len; ++k) out.interference.samples[k] += reverb[i].samples[k];

  AudioClip sum = out.target_reverb;
  if (reverb.size() > 1) {
    auto [mix, scale] = mix_at_snr(out.target_reverb, out.interference, snr_db);
    out.meta.interference_scale = scale;
    for (double& v : out.interference.samples) v *= scale;
    sum = std::move(mix);
  }

  out.noise = AudioClip(std::vector<double>(len, 0.0), fs);
  if (std::isfinite(noise_snr_db)) {
    std::mt19937_64 rng(nn::hash_name("noise", seed));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : out.noise.samples) v = gauss(rng);
    const double e_sum = energy(sum.samples), e_n = energy(out.noise.samples);
    require(e_sum > 0.0, "build_mixture: silent reverberant sum");
    const double g = std::sqrt(e_sum / (e_n * std::pow(10.0, noise_snr_db / 10.0)));
    for (double& v : out.noise.samples) v *= g;
  }

  out.mixture = sum;
  for (std::size_t k = 0; k < len; ++k) out.mixture.samples[k] += out.noise.samples[k];
  out.target_direct = out.source_direct[0];

  if (opt.peak_normalize) {
    double peak = 0.0;
    for (double v : out.mixture.samples) peak = std::max(peak, std::abs(v));
    for (double v : out.target_direct.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.0) {
      const double g = opt.peak / peak;
      out.meta.gain = g;
      for (AudioClip* c : {&out.mixture, &out.target_direct, &out.target_reverb, &out.interference, &out.noise})
        for (double& v : c->samples) v *= g;
      for (auto& c : out.source_direct)
        for (double& v : c.samples) v *= g;
    }
  }

  out.pitch_ref = f0_oracle(out.target_direct, opt.grid, opt.yin);
  if (opt.pitch_all_sources) {
    out.source_pitch.push_back(out.pitch_ref);
    for (std::size_t i = 1; i < out.source_direct.size(); ++i)
      out.source_pitch.push_back(f0_oracle(out.source_direct[i], opt.grid, opt.yin));
  }
  return out;
}

struct MixtureRecipe {
  double seconds = 4.0;
  int n_sources = 2;
  std::vector<int> classes;  // candidate classes; empty = all
  double snr_low = -5.0, snr_high = 5.0;
  double noise_snr_db = 40.0;
};

/// Sample `index` of a dataset: classes, sources, scene and SNR all derive
/// from (seed, index).
inline MixtureSample make_sample(std::uint64_t seed, std::uint64_t index, const MixtureRecipe& recipe,
                                const MixtureOptions& opt = {}) {
  require(recipe.n_sources >= 1 && recipe.n_sources <= 4, "mixture: sources per mixture must be in [1, 4]");
  std::vector<int> pool = recipe.classes;
  if (pool.empty())
    for (int c = 0; c < kNumClasses; ++c) pool.push_back(c);
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  require(static_cast<int>(pool.size()) >= recipe.n_sources, "mixture: not enough distinct classes");

  const std::uint64_t s = nn::hash_name("sample", seed * 1000003ull + index);
  std::mt19937_64 rng(s);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<SourceEvent> sources;
  for (int i = 0; i < recipe.n_sources; ++i)
    sources.push_back(synth_source(pool[static_cast<std::size_t>(i)], s + 17 * (i + 1), recipe.seconds));
  const rir::Scene scene = rir::sample_scene(rng, recipe.n_sources);
  std::uniform_real_distribution<double> snr(recipe.snr_low, recipe.snr_high);
  const double snr_db = snr(rng);
  return build_mixture(sources, scene, snr_db, recipe.noise_snr_db, s, opt);
}

}  // namespace tsepi
