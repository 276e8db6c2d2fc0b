#pragma once

// Scoring, the constant reference predictor and PCA false-colour composites.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "koopman/data_model.hpp"
#include "koopman/error.hpp"

namespace koopman {

struct MseReport {
  double overall = 0.0;
  std::vector<double> per_band;
  std::vector<double> per_frame;
  std::size_t frames = 0;
  std::size_t pixels = 0;
  std::size_t bands = 0;
};

/// MSE over band channels of two aligned cubes.
///
/// A cube with 2L channels (augmented) may be scored against one with L; only
/// the leading L channels (the bands) enter the score. `frames` selects frame
/// indices (0-based); all frames are scored when it is empty.
inline MseReport mse_cubes(const SeriesCube& pred, const SeriesCube& truth,
                           const std::vector<std::size_t>& frames = {}) {
  if (pred.frames() != truth.frames() || pred.height() != truth.height() ||
      pred.width() != truth.width()) {
    throw MisalignmentError("mse_cubes: cubes differ in T, H or W");
  }
  if (pred.timestamps() != truth.timestamps()) {
    throw MisalignmentError("mse_cubes: timestamps differ");
  }
  const std::size_t lo = std::min(pred.bands(), truth.bands());
  const std::size_t hi = std::max(pred.bands(), truth.bands());
  if (hi != lo && hi != 2 * lo) {
    throw MisalignmentError("mse_cubes: channel counts " + std::to_string(pred.bands()) + " and " +
                            std::to_string(truth.bands()) + " are not L and L or 2L");
  }
  std::vector<std::size_t> idx = frames;
  if (idx.empty()) {
    for (std::size_t t = 0; t < truth.frames(); ++t) idx.push_back(t);
  }
  for (auto t : idx) {
    if (t >= truth.frames()) throw BoundsError("mse_cubes: frame index out of range");
  }

  MseReport r;
  r.frames = idx.size();
  r.pixels = truth.pixels();
  r.bands = lo;
  r.per_band.assign(lo, 0.0);
  double total = 0.0;
  for (auto t : idx) {
    double frame_sum = 0.0;
    for (std::size_t i = 0; i < truth.pixels(); ++i) {
      auto a = pred.pixel(t, i);
      auto b = truth.pixel(t, i);
      for (std::size_t l = 0; l < lo; ++l) {
        const double d = static_cast<double>(a[l]) - static_cast<double>(b[l]);
        frame_sum += d * d;
        r.per_band[l] += d * d;
      }
    }
    total += frame_sum;
    r.per_frame.push_back(frame_sum / static_cast<double>(r.pixels * lo));
  }
  const double count = static_cast<double>(r.frames * r.pixels * lo);
  r.overall = count > 0 ? total / count : 0.0;
  for (auto& v : r.per_band) v = r.frames > 0 ? v / static_cast<double>(r.frames * r.pixels) : 0.0;
  return r;
}

/// Predicts the frame at t = 2 for every validation frame and scores it.
inline MseReport constant_baseline(const SeriesCube& cube, const SplitSpec& split_spec) {
  auto [train, val] = split(cube, split_spec);
  if (cube.frames() < 2) throw DegenerateSeriesError("constant_baseline: need 2 frames");
  auto second = cube.frame(1);
  std::vector<float> data;
  data.reserve(val.data().size());
  for (std::size_t t = 0; t < val.frames(); ++t) data.insert(data.end(), second.begin(), second.end());
  SeriesCube pred(val.height(), val.width(), val.bands(), val.timestamps(), std::move(data));
  return mse_cubes(pred, val);
}

/// Top-3 principal components of all band vectors of a cube and the per-frame composites.
struct PcaComposite {
  std::vector<std::vector<double>> components;  // 3 orthonormal vectors of length L
  std::vector<double> mean;                     // length L
  std::vector<double> explained;                // variance fraction of each component
  std::vector<double> lo, hi;                   // global min/max of each projected channel
  std::vector<std::vector<std::uint8_t>> images;  // per frame, H*W*3 interleaved RGB
};

inline PcaComposite pca3_composite(const SeriesCube& cube) {
  const std::size_t l = cube.bands();
  if (l < 3) throw DegenerateDataError("pca3_composite: need at least 3 bands");
  const std::size_t n = cube.frames() * cube.pixels();
  if (n < 3) throw DegenerateDataError("pca3_composite: need at least 3 pixel vectors");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l));
  const auto& data = cube.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t b = 0; b < l; ++b) mean[static_cast<Eigen::Index>(b)] += data[s * l + b];
  }
  mean /= static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
  Eigen::VectorXd v(static_cast<Eigen::Index>(l));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t b = 0; b < l; ++b) v[static_cast<Eigen::Index>(b)] = data[s * l + b];
    v -= mean;
    cov.noalias() += v * v.transpose();
  }
  cov /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double trace = std::max(vals.sum(), 0.0);
  const auto li = static_cast<Eigen::Index>(l);
  if (!(trace > 0.0) || vals[li - 3] <= 1e-12 * trace) {
    throw DegenerateDataError("pca3_composite: band vectors span fewer than 3 dimensions");
  }

  PcaComposite out;
  out.mean.assign(mean.data(), mean.data() + l);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd comp = eig.eigenvectors().col(li - 1 - c);
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp[arg] < 0) comp = -comp;
    out.components.emplace_back(comp.data(), comp.data() + l);
    out.explained.push_back(vals[li - 1 - c] / trace);
  }

  std::vector<double> proj(n * 3);
  out.lo.assign(3, 1e300);
  out.hi.assign(3, -1e300);
  for (std::size_t s = 0; s < n; ++s) {
    for (int c = 0; c < 3; ++c) {
      double p = 0.0;
      for (std::size_t b = 0; b < l; ++b) p += (data[s * l + b] - out.mean[b]) * out.components[c][b];
      proj[s * 3 + c] = p;
      out.lo[c] = std::min(out.lo[c], p);
      out.hi[c] = std::max(out.hi[c], p);
    }
  }
  const std::size_t np = cube.pixels();
  for (std::size_t t = 0; t < cube.frames(); ++t) {
    std::vector<std::uint8_t> img(np * 3);
    for (std::size_t i = 0; i < np; ++i) {
      for (int c = 0; c < 3; ++c) {
        const double span = out.hi[c] - out.lo[c];
        const double u = span > 0 ? (proj[(t * np + i) * 3 + c] - out.lo[c]) / span : 0.0;
        img[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
      }
    }
    out.images.push_back(std::move(img));
  }
  return out;
}

/// Binary PPM (P6, maxval 255).
inline void write_ppm(const std::string& path, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != height * width * 3) throw ShapeError("write_ppm: buffer size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

/// Band channels (first L of 2L) of an augmented cube.
inline SeriesCube band_channels(const SeriesCube& augmented) {
  if (augmented.bands() % 2 != 0) throw FormatError("band_channels: channel count is odd");
  const std::size_t l = augmented.bands() / 2;
  std::vector<float> data;
  data.reserve(augmented.frames() * augmented.pixels() * l);
  for (std::size_t t = 0; t < augmented.frames(); ++t) {
    for (std::size_t i = 0; i < augmented.pixels(); ++i) {
      auto p = augmented.pixel(t, i);
      data.insert(data.end(), p.begin(), p.begin() + static_cast<std::ptrdiff_t>(l));
    }
  }
  return SeriesCube(augmented.height(), augmented.width(), l, augmented.timestamps(), std::move(data));
}

/// Frames of `cube` whose timestamps appear in `timestamps` (all must be present).
inline SeriesCube frames_at(const SeriesCube& cube, const std::vector<std::uint32_t>& timestamps) {
  std::vector<std::size_t> idx;
  const auto& ts = cube.timestamps();
  for (auto t : timestamps) {
    auto it = std::lower_bound(ts.begin(), ts.end(), t);
    if (it == ts.end() || *it != t) {
      throw MisalignmentError("frames_at: timestamp " + std::to_string(t) + " not in cube");
    }
    idx.push_back(static_cast<std::size_t>(it - ts.begin()));
  }
  return cube.select(idx);
}

}  // namespace koopman
