#pragma once

// Time-series containers, the derivative augmentation, splitting, irregular
// subsampling, the synthetic scene generator and the KTS1 container format.
//
// Indexing convention: for a per-pixel series x_1..x_T the augmented series
// has T-1 entries and entry j (1-based) is (x_{j+1}, x_{j+1} - x_j). The band
// part of augmented entry j is therefore the frame with timestamp ts_1 + j.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "koopman/binary_io.hpp"
#include "koopman/error.hpp"
#include "koopman/random.hpp"

namespace koopman {

using BandVector = std::vector<float>;
using AugmentedState = std::vector<float>;

/// Derivative augmentation of one pixel series; output has series.size()-1 states.
inline std::vector<AugmentedState> augment(std::span<const BandVector> series) {
  if (series.size() < 2) {
    throw DegenerateSeriesError("augment needs at least 2 frames, got " +
                                std::to_string(series.size()));
  }
  const std::size_t bands = series.front().size();
  std::vector<AugmentedState> out;
  out.reserve(series.size() - 1);
  for (std::size_t t = 0; t + 1 < series.size(); ++t) {
    const BandVector& prev = series[t];
    const BandVector& curr = series[t + 1];
    if (prev.size() != bands || curr.size() != bands) {
      throw ShapeError("augment: band count changes at frame " + std::to_string(t + 1));
    }
    AugmentedState y(2 * bands);
    for (std::size_t l = 0; l < bands; ++l) {
      y[l] = curr[l];
      y[bands + l] = curr[l] - prev[l];
    }
    out.push_back(std::move(y));
  }
  return out;
}

/// Inverse of augment for a single state: returns (x_prev, x_curr).
inline std::pair<BandVector, BandVector> deaugment(std::span<const float> y) {
  if (y.size() % 2 != 0) {
    throw FormatError("deaugment: augmented state has odd length " + std::to_string(y.size()));
  }
  const std::size_t bands = y.size() / 2;
  BandVector prev(bands), curr(bands);
  for (std::size_t l = 0; l < bands; ++l) {
    curr[l] = y[l];
    prev[l] = y[l] - y[bands + l];
  }
  return {std::move(prev), std::move(curr)};
}

/// Immutable T x H x W x L cube of float values with integer step timestamps.
///
/// Storage is t-major, then row, then column, then band (the KTS1 order).
class SeriesCube {
 public:
  SeriesCube() = default;

  SeriesCube(std::size_t height, std::size_t width, std::size_t bands,
             std::vector<std::uint32_t> timestamps, std::vector<float> data)
      : h_(height), w_(width), l_(bands), ts_(std::move(timestamps)), data_(std::move(data)) {
    if (h_ == 0 || w_ == 0 || l_ == 0) {
      throw ShapeError("SeriesCube: H, W and L must be positive");
    }
    if (data_.size() != ts_.size() * h_ * w_ * l_) {
      throw ShapeError("SeriesCube: data length " + std::to_string(data_.size()) +
                       " does not match T*H*W*L = " + std::to_string(ts_.size() * h_ * w_ * l_));
    }
    for (std::size_t t = 1; t < ts_.size(); ++t) {
      if (ts_[t] <= ts_[t - 1]) {
        throw FormatError("SeriesCube: timestamps not strictly increasing at index " +
                          std::to_string(t));
      }
    }
    regular_ = true;
    for (std::size_t t = 1; t < ts_.size(); ++t) {
      if (ts_[t] != ts_[t - 1] + 1) regular_ = false;
    }
  }

  std::size_t frames() const { return ts_.size(); }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t bands() const { return l_; }
  std::size_t pixels() const { return h_ * w_; }
  bool regular() const { return regular_; }
  bool empty() const { return ts_.empty(); }

  const std::vector<std::uint32_t>& timestamps() const { return ts_; }
  const std::vector<float>& data() const { return data_; }

  std::span<const float> frame(std::size_t t) const {
    return {data_.data() + t * pixels() * l_, pixels() * l_};
  }

  std::span<const float> pixel(std::size_t t, std::size_t index) const {
    return {data_.data() + (t * pixels() + index) * l_, l_};
  }

  std::span<const float> pixel(std::size_t t, std::size_t row, std::size_t col) const {
    return pixel(t, row * w_ + col);
  }

  /// The full band series of one pixel (index = row * W + col).
  std::vector<BandVector> pixel_series(std::size_t index) const {
    std::vector<BandVector> out;
    out.reserve(frames());
    for (std::size_t t = 0; t < frames(); ++t) {
      auto p = pixel(t, index);
      out.emplace_back(p.begin(), p.end());
    }
    return out;
  }

  /// Sub-cube made of the given frame indices (0-based, strictly increasing).
  SeriesCube select(std::span<const std::size_t> indices) const {
    std::vector<std::uint32_t> ts;
    std::vector<float> data;
    ts.reserve(indices.size());
    data.reserve(indices.size() * pixels() * l_);
    for (std::size_t idx : indices) {
      if (idx >= frames()) throw BoundsError("SeriesCube::select: frame index out of range");
      ts.push_back(ts_[idx]);
      auto f = frame(idx);
      data.insert(data.end(), f.begin(), f.end());
    }
    return SeriesCube(h_, w_, l_, std::move(ts), std::move(data));
  }

  SeriesCube slice(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx;
    for (std::size_t t = begin; t < end; ++t) idx.push_back(t);
    return select(idx);
  }

  bool same_geometry(const SeriesCube& o) const {
    return h_ == o.h_ && w_ == o.w_ && l_ == o.l_;
  }

  friend bool operator==(const SeriesCube& a, const SeriesCube& b) {
    return a.same_geometry(b) && a.ts_ == b.ts_ && a.data_ == b.data_;
  }

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::size_t l_ = 0;
  std::vector<std::uint32_t> ts_;
  std::vector<float> data_;
  bool regular_ = true;
};

/// Leading/trailing frame counts of a train/validation split.
struct SplitSpec {
  std::size_t t_train = 242;
  std::size_t t_val = 100;
};

/// Train = first t_train frames, val = last t_val frames; frames in between belong to neither.
inline std::pair<SeriesCube, SeriesCube> split(const SeriesCube& cube, const SplitSpec& spec) {
  if (spec.t_train == 0 || spec.t_val == 0) {
    throw BoundsError("split: t_train and t_val must both be positive");
  }
  if (spec.t_train + spec.t_val > cube.frames()) {
    throw BoundsError("split: t_train + t_val = " + std::to_string(spec.t_train + spec.t_val) +
                      " exceeds series length " + std::to_string(cube.frames()));
  }
  return {cube.slice(0, spec.t_train), cube.slice(cube.frames() - spec.t_val, cube.frames())};
}

struct Partition {
  SeriesCube kept;
  SeriesCube removed;
};

/// Keeps each frame independently with probability keep_prob.
///
/// Throws EmptyDrawError when no frame survives; the outcome is a pure function of the seed.
inline Partition subsample_irregular(const SeriesCube& cube, double keep_prob, std::uint64_t seed) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw PreconditionError("subsample_irregular: keep_prob must lie in (0, 1]");
  }
  Rng rng(mix_seed(seed, 0x5u));
  std::vector<std::size_t> kept, removed;
  for (std::size_t t = 0; t < cube.frames(); ++t) {
    (uniform01(rng) < keep_prob ? kept : removed).push_back(t);
  }
  if (kept.empty()) {
    throw EmptyDrawError("subsample_irregular: seed " + std::to_string(seed) +
                         " kept no frame; use another seed");
  }
  return {cube.select(kept), cube.select(removed)};
}

/// `count` distinct frames drawn uniformly without replacement, in time order.
inline SeriesCube draw_frames(const SeriesCube& cube, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw EmptyDrawError("draw_frames: count must be positive");
  if (count > cube.frames()) {
    throw PreconditionError("draw_frames: cannot draw " + std::to_string(count) + " of " +
                            std::to_string(cube.frames()) + " frames");
  }
  Rng rng(mix_seed(seed, 0x6u));
  std::vector<std::size_t> idx(cube.frames());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // partial Fisher-Yates with the portable uniform draw
  for (std::size_t i = 0; i < count; ++i) {
    const auto span = static_cast<double>(idx.size() - i);
    auto j = i + static_cast<std::size_t>(uniform01(rng) * span);
    if (j >= idx.size()) j = idx.size() - 1;
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return cube.select(idx);
}

/// Parameters of the synthetic scene generator.
///
/// Each pixel mixes a small library of land-cover endmembers through smooth
/// abundance fields, so neighbouring pixels correlate. `library_seed` fixes the
/// endmember library (the "biome"); `seed` draws the abundance maps, noise and
/// clouds, so two seeds with the same library behave like two sites of one region.
struct SynthConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t bands = 10;
  std::size_t frames = 343;
  double period = 73.0;
  double noise_sd = 0.01;
  std::uint64_t seed = 0;
  std::uint64_t library_seed = 7;
  std::size_t endmembers = 4;
  double amplitude_scale = 1.0;  // 0 forces constant series
  double outlier_prob = 0.0;     // per-frame probability of a cloud patch
};

/// Per-pixel, per-band parameters of the two-harmonic signal.
struct PixelHarmonics {
  std::vector<double> mean, amp, phase, amp2, phase2;  // each pixels * bands, pixel-major
};

namespace detail {

struct Endmember {
  std::vector<double> mean, amp, phase, amp2, phase2;
};

inline double veg_profile(double u) {
  if (u < 0.3) return 0.04 + 0.05 * u;
  if (u < 0.55) return 0.055 + (u - 0.3) / 0.25 * 0.33;
  if (u < 0.8) return 0.385;
  return 0.22;
}

inline double soil_profile(double u) { return 0.08 + 0.22 * u; }

inline std::vector<Endmember> endmember_library(const SynthConfig& cfg) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  Rng rng(mix_seed(cfg.library_seed, 0x1u));
  std::vector<Endmember> lib(cfg.endmembers);
  for (std::size_t c = 0; c < cfg.endmembers; ++c) {
    Endmember& e = lib[c];
    const double greenness = cfg.endmembers == 1
                                 ? 1.0
                                 : 0.15 + 0.85 * static_cast<double>(c) / (cfg.endmembers - 1);
    const double base_phase = uniform(rng, 0.0, kTwoPi);
    const double season = uniform(rng, 0.6, 1.0);
    const double ratio2 = uniform(rng, 0.1, 0.35);
    const double phase2 = uniform(rng, 0.0, kTwoPi);
    for (std::size_t l = 0; l < cfg.bands; ++l) {
      const double u = cfg.bands == 1 ? 0.5 : static_cast<double>(l) / (cfg.bands - 1);
      const double m = greenness * veg_profile(u) + (1.0 - greenness) * soil_profile(u);
      e.mean.push_back(m * uniform(rng, 0.9, 1.1));
      // Visible bands darken when vegetation greens up; NIR brightens.
      const double visible = u < 0.3 ? 1.0 : 0.0;
      const double a = season * greenness * (0.02 + 0.5 * m) + 0.004;
      e.amp.push_back(a * uniform(rng, 0.85, 1.15));
      e.phase.push_back(base_phase + visible * std::numbers::pi + uniform(rng, -0.15, 0.15));
      e.amp2.push_back(ratio2 * a);
      e.phase2.push_back(phase2 + visible * std::numbers::pi + uniform(rng, -0.15, 0.15));
    }
  }
  return lib;
}

/// Smooth random field on the image grid, a sum of low-frequency cosines.
inline std::vector<double> smooth_field(Rng& rng, std::size_t h, std::size_t w) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::vector<double> f(h * w, 0.0);
  for (int m = 0; m < 5; ++m) {
    const double kx = uniform(rng, -1.5, 1.5);
    const double ky = uniform(rng, -1.5, 1.5);
    const double theta = uniform(rng, 0.0, kTwoPi);
    const double a = uniform(rng, 0.5, 1.0);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double x = static_cast<double>(c) / static_cast<double>(std::max<std::size_t>(w, 2));
        const double y = static_cast<double>(r) / static_cast<double>(std::max<std::size_t>(h, 2));
        f[r * w + c] += a * std::cos(kTwoPi * (kx * x + ky * y) + theta);
      }
    }
  }
  return f;
}

inline void validate(const SynthConfig& cfg) {
  if (cfg.height == 0 || cfg.width == 0 || cfg.bands == 0 || cfg.frames == 0 ||
      cfg.endmembers == 0) {
    throw PreconditionError("synth_generate: all dimensions must be positive");
  }
  if (!(cfg.period > 0.0)) throw PreconditionError("synth_generate: period must be positive");
  if (!(cfg.noise_sd >= 0.0)) throw PreconditionError("synth_generate: noise_sd must be >= 0");
  if (!(cfg.outlier_prob >= 0.0 && cfg.outlier_prob <= 1.0)) {
    throw PreconditionError("synth_generate: outlier_prob must lie in [0, 1]");
  }
}

}  // namespace detail

/// Per-pixel harmonic parameters of the scene described by cfg (noise-free part).
inline PixelHarmonics synth_harmonics(const SynthConfig& cfg) {
  detail::validate(cfg);
  const auto lib = detail::endmember_library(cfg);
  const std::size_t n = cfg.height * cfg.width;
  Rng rng(mix_seed(cfg.seed, 0x2u));

  std::vector<std::vector<double>> logits(cfg.endmembers);
  for (auto& f : logits) f = detail::smooth_field(rng, cfg.height, cfg.width);

  PixelHarmonics ph;
  for (auto* v : {&ph.mean, &ph.amp, &ph.phase, &ph.amp2, &ph.phase2}) v->assign(n * cfg.bands, 0.0);
  std::vector<double> abundance(cfg.endmembers);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = -1e300;
    for (std::size_t c = 0; c < cfg.endmembers; ++c) zmax = std::max(zmax, 1.5 * logits[c][i]);
    double norm = 0.0;
    for (std::size_t c = 0; c < cfg.endmembers; ++c) {
      abundance[c] = std::exp(1.5 * logits[c][i] - zmax);
      norm += abundance[c];
    }
    for (auto& a : abundance) a /= norm;
    for (std::size_t l = 0; l < cfg.bands; ++l) {
      double m = 0, re1 = 0, im1 = 0, re2 = 0, im2 = 0;
      for (std::size_t c = 0; c < cfg.endmembers; ++c) {
        const auto& e = lib[c];
        m += abundance[c] * e.mean[l];
        re1 += abundance[c] * e.amp[l] * std::cos(e.phase[l]);
        im1 += abundance[c] * e.amp[l] * std::sin(e.phase[l]);
        re2 += abundance[c] * e.amp2[l] * std::cos(e.phase2[l]);
        im2 += abundance[c] * e.amp2[l] * std::sin(e.phase2[l]);
      }
      const std::size_t k = i * cfg.bands + l;
      ph.mean[k] = m;
      ph.amp[k] = cfg.amplitude_scale * std::hypot(re1, im1);
      ph.phase[k] = std::atan2(im1, re1);
      ph.amp2[k] = cfg.amplitude_scale * std::hypot(re2, im2);
      ph.phase2[k] = std::atan2(im2, re2);
    }
  }
  return ph;
}

/// Noise-free signal value of pixel/band entry k at timestamp t.
inline double synth_signal(const PixelHarmonics& ph, std::size_t k, double t, double period) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  return ph.mean[k] + ph.amp[k] * std::sin(kTwoPi * t / period + ph.phase[k]) +
         ph.amp2[k] * std::sin(2.0 * kTwoPi * t / period + ph.phase2[k]);
}

/// Regular synthetic cube with timestamps 1..T; seed-deterministic, values in [0, 1].
inline SeriesCube synth_generate(const SynthConfig& cfg) {
  const PixelHarmonics ph = synth_harmonics(cfg);
  const std::size_t n = cfg.height * cfg.width;
  Rng noise(mix_seed(cfg.seed, 0x3u));
  Rng clouds(mix_seed(cfg.seed, 0x4u));

  std::vector<std::uint32_t> ts(cfg.frames);
  std::vector<float> data(cfg.frames * n * cfg.bands);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    ts[t] = static_cast<std::uint32_t>(t + 1);
    bool cloudy = cfg.outlier_prob > 0.0 && uniform01(clouds) < cfg.outlier_prob;
    double cr = 0, cc = 0, radius = 1;
    if (cloudy) {
      cr = uniform(clouds, 0.0, static_cast<double>(cfg.height));
      cc = uniform(clouds, 0.0, static_cast<double>(cfg.width));
      radius = uniform(clouds, 0.15, 0.5) * static_cast<double>(std::max(cfg.height, cfg.width));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double haze = 0.0;
      if (cloudy) {
        const double d = std::hypot(static_cast<double>(i / cfg.width) - cr,
                                    static_cast<double>(i % cfg.width) - cc);
        haze = d < radius ? 0.35 * (1.0 - d / radius) : 0.0;
      }
      for (std::size_t l = 0; l < cfg.bands; ++l) {
        const std::size_t k = i * cfg.bands + l;
        double v = synth_signal(ph, k, static_cast<double>(ts[t]), cfg.period);
        if (cfg.noise_sd > 0.0) v += cfg.noise_sd * normal01(noise);
        v += haze;
        data[t * n * cfg.bands + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return SeriesCube(cfg.height, cfg.width, cfg.bands, std::move(ts), std::move(data));
}

/// Writes a cube in the KTS1 container format.
inline void save_cube(const SeriesCube& cube, const std::string& path) {
  detail::ByteWriter w;
  w.put_bytes("KTS1");
  w.put_u32(static_cast<std::uint32_t>(cube.frames()));
  w.put_u32(static_cast<std::uint32_t>(cube.height()));
  w.put_u32(static_cast<std::uint32_t>(cube.width()));
  w.put_u32(static_cast<std::uint32_t>(cube.bands()));
  w.put_u32(cube.regular() ? 1u : 0u);
  for (auto t : cube.timestamps()) w.put_u32(t);
  for (float v : cube.data()) w.put_f32(v);
  w.write_file(path);
}

inline SeriesCube decode_cube(detail::ByteReader r) {
  if (r.get_bytes(4, "magic") != "KTS1") throw FormatError("bad magic: expected KTS1");
  const std::uint32_t t = r.get_u32("header field T");
  const std::uint32_t h = r.get_u32("header field H");
  const std::uint32_t w = r.get_u32("header field W");
  const std::uint32_t l = r.get_u32("header field L");
  const std::uint32_t flag = r.get_u32("header field regular_flag");
  if (h == 0 || w == 0 || l == 0) throw FormatError("dimension mismatch: H, W and L must be nonzero");
  if (flag > 1) throw FormatError("regular_flag must be 0 or 1, got " + std::to_string(flag));

  std::vector<std::uint32_t> ts(t);
  for (auto& v : ts) v = r.get_u32("timestamps");
  const std::uint64_t per_frame = std::uint64_t{h} * w * l;
  const std::uint64_t have = r.remaining() / 4;
  if (have < per_frame * t) {
    throw FormatError("truncated payload: header claims T=" + std::to_string(t) +
                      " but payload holds " + std::to_string(have / per_frame) + " frames");
  }
  std::vector<float> data(per_frame * t);
  for (auto& v : data) v = r.get_f32("frame data");
  if (r.remaining() != 0) {
    throw FormatError("dimension mismatch: " + std::to_string(r.remaining()) +
                      " trailing bytes after declared T*H*W*L payload");
  }
  SeriesCube cube(h, w, l, std::move(ts), std::move(data));
  if (cube.regular() != (flag == 1)) {
    throw FormatError("regular_flag=" + std::to_string(flag) +
                      " disagrees with the stored timestamps");
  }
  return cube;
}

inline SeriesCube load_cube(const std::string& path) {
  return decode_cube(detail::ByteReader::from_file(path));
}

}  // namespace koopman
