#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tsepi/error.hpp"

namespace tsepi::rir {

inline constexpr double kSpeedOfSound = 343.0;
inline constexpr int kSincTaps = 81;
inline constexpr int kSincHalf = kSincTaps / 2;

using Point = std::array<double, 3>;

inline double distance(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct RoomLimits {
  double min_xy = 3.0, max_xy = 8.0;
  double min_z = 2.5, max_z = 4.0;
  double min_rt60 = 0.2, max_rt60 = 0.8;
  double wall_margin = 0.8;
  double min_distance = 0.6, max_distance = 2.0;
};

struct RoomSpec {
  Point dimensions{5.0, 4.0, 3.0};
  double rt60 = 0.5;

  double volume() const { return dimensions[0] * dimensions[1] * dimensions[2]; }
  double surface() const {
    const auto& d = dimensions;
    return 2.0 * (d[0] * d[1] + d[0] * d[2] + d[1] * d[2]);
  }
  double min_dimension() const { return *std::min_element(dimensions.begin(), dimensions.end()); }

  void validate(const RoomLimits& lim = {}) const {
    const double eps = 1e-9;
    require(dimensions[0] >= lim.min_xy - eps && dimensions[0] <= lim.max_xy + eps &&
                dimensions[1] >= lim.min_xy - eps && dimensions[1] <= lim.max_xy + eps,
            "room: horizontal dimensions outside [3, 8] m");
    require(dimensions[2] >= lim.min_z - eps && dimensions[2] <= lim.max_z + eps, "room: height outside [2.5, 4] m");
    require(rt60 >= lim.min_rt60 - eps && rt60 <= lim.max_rt60 + eps, "room: rt60 outside [0.2, 0.8] s");
  }

  /// Uniform wall absorption from Sabine's formula, clamped to (0, 1].
  double sabine_absorption() const {
    const double a = 0.161 * volume() / (rt60 * surface());
    return std::clamp(a, 1e-6, 1.0);
  }
};

struct Geometry {
  Point source{1.0, 1.0, 1.0};
  Point mic{2.0, 2.0, 1.5};

  double distance() const { return rir::distance(source, mic); }

  void validate(const RoomSpec& room, const RoomLimits& lim = {}) const {
    for (const Point* p : {&source, &mic})
      for (int i = 0; i < 3; ++i)
        require((*p)[i] >= lim.wall_margin - 1e-9 && (*p)[i] <= room.dimensions[i] - lim.wall_margin + 1e-9,
                "geometry: position closer than 0.8 m to a wall");
    const double d = distance();
    require(d >= lim.min_distance - 1e-9 && d <= lim.max_distance + 1e-9,
            "geometry: source-mic distance outside [0.6, 2.0] m");
  }
};

struct Scene {
  RoomSpec room;
  std::vector<Geometry> sources;  // one per source, all sharing the mic position
};

struct RIR {
  std::vector<double> taps;
  int sample_rate = 16000;
  int direct_delay = 0;
  int max_order = 0;
  double absorption = 0.0;
  bool decay_warning = false;  // image order too low to reach -60 dB
};

/// Draws a room, RT60, mic position and `n_sources` source positions.
inline Scene sample_scene(std::mt19937_64& rng, int n_sources = 2, const RoomLimits& lim = {}) {
  require(n_sources >= 1, "sample_scene: need at least one source");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Scene scene;
  scene.room.dimensions = {uniform(lim.min_xy, lim.max_xy), uniform(lim.min_xy, lim.max_xy),
                           uniform(lim.min_z, lim.max_z)};
  scene.room.rt60 = uniform(lim.min_rt60, lim.max_rt60);
  const auto& dims = scene.room.dimensions;
  const auto inside = [&](const Point& p) {
    for (int i = 0; i < 3; ++i)
      if (p[i] < lim.wall_margin || p[i] > dims[i] - lim.wall_margin) return false;
    return true;
  };

  constexpr int kMicAttempts = 100, kSourceAttempts = 200;
  for (int attempt = 0; attempt < kMicAttempts; ++attempt) {
    Point mic;
    for (int i = 0; i < 3; ++i) mic[i] = uniform(lim.wall_margin, dims[i] - lim.wall_margin);
    std::vector<Geometry> geos;
    for (int s = 0; s < n_sources; ++s) {
      bool placed = false;
      for (int k = 0; k < kSourceAttempts && !placed; ++k) {
        const double r = uniform(lim.min_distance, lim.max_distance);
        const double z = uniform(-1.0, 1.0);
        const double phi = uniform(0.0, 2.0 * std::numbers::pi);
        const double rho = std::sqrt(1.0 - z * z);
        const Point src{mic[0] + r * rho * std::cos(phi), mic[1] + r * rho * std::sin(phi), mic[2] + r * z};
        if (inside(src)) {
          geos.push_back({src, mic});
          placed = true;
        }
      }
      if (!placed) break;
    }
    if (static_cast<int>(geos.size()) == n_sources) {
      scene.sources = std::move(geos);
      return scene;
    }
  }
  fail(ErrorCode::SceneSampling, "could not place sources satisfying the distance/wall constraints");
}

/// Default image order: axial images of this order arrive after rt60, i.e.
/// the modeled decay spans the full 60 dB.
inline int default_max_order(const RoomSpec& room) {
  return static_cast<int>(std::ceil(kSpeedOfSound * room.rt60 / room.min_dimension())) + 2;
}

namespace detail {

/// Adds amplitude * (Hann-windowed sinc, unit energy) centered at `delay`.
inline void add_fractional_impulse(std::vector<double>& taps, double delay, double amplitude) {
  const long center = std::lround(delay);
  const long first = center - kSincHalf;
  double kernel[kSincTaps];
  const double frac0 = static_cast<double>(first) - delay;  // offset of tap 0
  const double s0 = std::sin(std::numbers::pi * frac0);
  double e = 0.0;
  for (int i = 0; i < kSincTaps; ++i) {
    const double x = frac0 + i;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : ((i % 2 == 0) ? s0 : -s0) / (std::numbers::pi * x);
    const double w = std::abs(x) <= kSincHalf + 1.0
                         ? 0.5 * (1.0 + std::cos(std::numbers::pi * x / (kSincHalf + 1.0)))
                         : 0.0;
    kernel[i] = sinc * w;
    e += kernel[i] * kernel[i];
  }
  const double g = amplitude / std::sqrt(e);
  for (int i = 0; i < kSincTaps; ++i) {
    const long n = first + i;
    if (n >= 0 && n < static_cast<long>(taps.size())) taps[static_cast<std::size_t>(n)] += g * kernel[i];
  }
}

}  // namespace detail

/// Schroeder energy decay curve in dB (0 dB at t = 0).
inline std::vector<double> energy_decay_curve(const std::vector<double>& taps) {
  std::vector<double> edc(taps.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = taps.size(); i-- > 0;) {
    acc += taps[i] * taps[i];
    edc[i] = acc;
  }
  const double total = edc.empty() ? 0.0 : edc[0];
  for (double& v : edc) v = (total > 0.0 && v > 0.0) ? 10.0 * std::log10(v / total) : -400.0;
  return edc;
}

/// RT60 extrapolated from a least-squares line over the -5..-25 dB span of
/// the Schroeder curve. Returns nullopt when the curve never reaches -25 dB.
inline std::optional<double> measure_rt60(const std::vector<double>& taps, int fs, double hi_db = -5.0,
                                          double lo_db = -25.0) {
  const auto edc = energy_decay_curve(taps);
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  bool reached = false;
  for (std::size_t i = 0; i < edc.size(); ++i) {
    if (edc[i] > hi_db) continue;
    if (edc[i] < lo_db) {
      reached = true;
      break;
    }
    const double t = static_cast<double>(i) / fs;
    n += 1;
    sx += t;
    sy += edc[i];
    sxx += t * t;
    sxy += t * edc[i];
  }
  if (!reached || n < 2) return std::nullopt;
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (slope >= 0.0) return std::nullopt;
  return -60.0 / slope;
}

struct SimulationOptions {
  int max_order = -1;                // < 0: default_max_order(room)
  std::optional<double> absorption;  // fixed absorption (1 = anechoic); skips calibration
  double length_factor = 1.2;        // RIR length in units of rt60
  int sinc_max_order = 3;            // higher orders are rendered as single taps
  double calibration_tolerance = 0.05;
  int calibration_rounds = 6;
};

namespace detail {

inline RIR render_images(const RoomSpec& room, const Geometry& geo, int fs, double absorption, int max_order,
                         const SimulationOptions& opts) {
  RIR out;
  out.sample_rate = fs;
  out.absorption = absorption;
  out.max_order = max_order;
  const double beta = std::sqrt(1.0 - absorption);
  const double r0 = geo.distance();
  out.direct_delay = static_cast<int>(std::lround(fs * r0 / kSpeedOfSound));

  const std::size_t length =
      static_cast<std::size_t>(std::ceil(opts.length_factor * room.rt60 * fs)) + out.direct_delay + kSincTaps;
  out.taps.assign(length, 0.0);
  const double max_dist = static_cast<double>(length - kSincHalf) * kSpeedOfSound / fs;

  // Image coordinate along one axis for signed reflection index m:
  // m even -> 2n L + s, m odd -> 2n L - s, with |m| wall hits.
  const auto image_coord = [](int m, double size, double s) {
    const int n = (m >= 0) ? (m + 1) / 2 : -((-m) / 2);
    return (m % 2 == 0) ? 2.0 * n * size + s : 2.0 * n * size - s;
  };

  const int N = max_order;
  std::vector<double> gain(static_cast<std::size_t>(N) + 1);
  for (int n = 0; n <= N; ++n) gain[static_cast<std::size_t>(n)] = std::pow(beta, n) / (4.0 * std::numbers::pi);

  const auto& L = room.dimensions;
  const bool anechoic = beta == 0.0;
  for (int mx = -N; mx <= N; ++mx) {
    const double x = image_coord(mx, L[0], geo.source[0]) - geo.mic[0];
    const int ry = N - std::abs(mx);
    for (int my = -ry; my <= ry; ++my) {
      const double y = image_coord(my, L[1], geo.source[1]) - geo.mic[1];
      const int rz = ry - std::abs(my);
      for (int mz = -rz; mz <= rz; ++mz) {
        const int order = std::abs(mx) + std::abs(my) + std::abs(mz);
        if (anechoic && order > 0) continue;
        const double z = image_coord(mz, L[2], geo.source[2]) - geo.mic[2];
        const double d = std::sqrt(x * x + y * y + z * z);
        if (d > max_dist) continue;
        const double amp = gain[static_cast<std::size_t>(order)] / d;
        const double delay = fs * d / kSpeedOfSound;
        if (order <= opts.sinc_max_order) {
          add_fractional_impulse(out.taps, delay, amp);
        } else {
          const auto n = static_cast<std::size_t>(std::lround(delay));
          if (n < out.taps.size()) out.taps[n] += amp;
        }
      }
    }
  }

  const double reach_time = N * room.min_dimension() / kSpeedOfSound;
  out.decay_warning = !anechoic && reach_time < room.rt60;
  return out;
}

}  // namespace detail

/// Shoebox image-source RIR for a point receiver with uniform,
/// frequency-independent absorption. Unless an absorption is forced, the
/// Sabine estimate is refined until the measured T20 decay matches rt60.
inline RIR simulate_rir(const RoomSpec& room, const Geometry& geo, int fs = 16000, SimulationOptions opts = {}) {
  require(fs > 0, "simulate_rir: sample rate must be positive");
  for (double d : room.dimensions) require(d > 0.0, "simulate_rir: room dimensions must be positive");
  require(room.rt60 > 0.0, "simulate_rir: rt60 must be positive");
  for (int i = 0; i < 3; ++i)
    require(geo.source[i] > 0.0 && geo.source[i] < room.dimensions[i] && geo.mic[i] > 0.0 &&
                geo.mic[i] < room.dimensions[i],
            "simulate_rir: positions must lie inside the room");
  const int order = opts.max_order >= 0 ? opts.max_order : default_max_order(room);

  if (opts.absorption) return detail::render_images(room, geo, fs, std::clamp(*opts.absorption, 0.0, 1.0), order, opts);

  RoomSpec design = room;
  RIR best;
  double best_err = 1e300;
  for (int round = 0; round < std::max(1, opts.calibration_rounds); ++round) {
    RIR r = detail::render_images(room, geo, fs, design.sabine_absorption(), order, opts);
    const auto measured = measure_rt60(r.taps, fs, -5.0, -25.0);
    const double err = measured ? std::abs(*measured / room.rt60 - 1.0) : 1e299;
    if (err < best_err) {
      best_err = err;
      best = std::move(r);
    }
    if (!measured || err <= opts.calibration_tolerance) break;
    design.rt60 *= room.rt60 / *measured;
  }
  return best;
}

/// Line-of-sight arrival only: 1/(4 pi r) at delay r/c.
inline RIR direct_path_rir(const Geometry& geo, int fs = 16000) {
  require(fs > 0, "direct_path_rir: sample rate must be positive");
  const double r = geo.distance();
  require(r > 0.0, "direct_path_rir: source and mic coincide");
  RIR out;
  out.sample_rate = fs;
  out.direct_delay = static_cast<int>(std::lround(fs * r / kSpeedOfSound));
  out.absorption = 1.0;
  out.taps.assign(static_cast<std::size_t>(out.direct_delay + kSincHalf + 1), 0.0);
  detail::add_fractional_impulse(out.taps, fs * r / kSpeedOfSound, 1.0 / (4.0 * std::numbers::pi * r));
  return out;
}

}  // namespace tsepi::rir
