#pragma once

// Temporal Cressman interpolation with Gaussian weights over all samples
// (no cutoff): v(t) = sum_i w_i v_i / sum_i w_i, w_i = exp(-(t - t_i)^2 / (2 R^2)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "koopman/data_model.hpp"
#include "koopman/error.hpp"
#include "koopman/metrics.hpp"

namespace koopman {

struct CressmanConfig {
  double radius = 3.0;  // Gaussian standard deviation in time steps (15 days at 5 days/step)
};

struct TimedSample {
  double t = 0.0;
  std::vector<double> values;
};

/// Normalized Gaussian weights of every sample time for one query time.
///
/// Exponents are shifted by the nearest sample's so that far queries never
/// underflow to 0/0; the shift cancels in the normalization.
inline std::vector<double> cressman_weights(std::span<const double> sample_times, double query,
                                            double radius) {
  if (sample_times.empty()) throw NoDataError("cressman: no samples");
  if (!(radius > 0.0)) throw PreconditionError("cressman: radius must be positive");
  double dmin = std::numeric_limits<double>::infinity();
  for (double ti : sample_times) dmin = std::min(dmin, (query - ti) * (query - ti));
  std::vector<double> w(sample_times.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = (query - sample_times[i]) * (query - sample_times[i]);
    w[i] = std::exp(-(d - dmin) / (2.0 * radius * radius));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline std::vector<std::vector<double>> cressman_interpolate(const std::vector<TimedSample>& samples,
                                                             const std::vector<double>& queries,
                                                             const CressmanConfig& cfg) {
  if (samples.empty()) throw NoDataError("cressman_interpolate: no samples");
  const std::size_t dim = samples.front().values.size();
  std::vector<double> times;
  for (const auto& s : samples) {
    if (s.values.size() != dim) throw ShapeError("cressman_interpolate: sample lengths differ");
    times.push_back(s.t);
  }
  std::vector<std::vector<double>> out;
  out.reserve(queries.size());
  for (double q : queries) {
    const auto w = cressman_weights(times, q, cfg.radius);
    std::vector<double> v(dim, 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (std::size_t c = 0; c < dim; ++c) v[c] += w[i] * samples[i].values[c];
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Interpolates every pixel of `samples` at the query timestamps.
inline SeriesCube cressman_cube(const SeriesCube& samples, const std::vector<std::uint32_t>& queries,
                                const CressmanConfig& cfg) {
  if (samples.empty()) throw NoDataError("cressman_cube: no sample frames");
  std::vector<double> times(samples.timestamps().begin(), samples.timestamps().end());
  const std::size_t frame_size = samples.pixels() * samples.bands();
  std::vector<float> data(queries.size() * frame_size);
  std::vector<double> acc(frame_size);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto w = cressman_weights(times, static_cast<double>(queries[q]), cfg.radius);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t s = 0; s < samples.frames(); ++s) {
      auto f = samples.frame(s);
      for (std::size_t j = 0; j < frame_size; ++j) acc[j] += w[s] * f[j];
    }
    for (std::size_t j = 0; j < frame_size; ++j) data[q * frame_size + j] = static_cast<float>(acc[j]);
  }
  return SeriesCube(samples.height(), samples.width(), samples.bands(), queries, std::move(data));
}

/// Fills every integer timestamp between the first and last sample (the regularization recipe).
inline SeriesCube cressman_regularize(const SeriesCube& samples, const CressmanConfig& cfg) {
  if (samples.empty()) throw NoDataError("cressman_regularize: no sample frames");
  std::vector<std::uint32_t> q;
  for (auto t = samples.timestamps().front(); t <= samples.timestamps().back(); ++t) q.push_back(t);
  return cressman_cube(samples, q, cfg);
}

inline std::vector<double> default_sweep_radii() {
  std::vector<double> r;
  for (int i = 1; i <= 14; ++i) r.push_back(0.5 * i);
  return r;
}

struct SweepResult {
  double best_radius = 0.0;
  double best_mse = 0.0;
  std::vector<std::pair<double, double>> table;  // (radius, mse) in input order
};

/// Interpolates `kept` at the removed timestamps for each radius; lowest MSE wins, ties go to
/// the smaller radius.
inline SweepResult radius_sweep(const SeriesCube& kept, const SeriesCube& removed,
                                const std::vector<double>& radii = default_sweep_radii()) {
  if (removed.empty()) throw PreconditionError("radius_sweep: no removed frames to score");
  if (radii.empty()) throw PreconditionError("radius_sweep: empty radius list");
  SweepResult r;
  bool first = true;
  for (double radius : radii) {
    const SeriesCube est = cressman_cube(kept, removed.timestamps(), CressmanConfig{radius});
    const double m = mse_cubes(est, removed).overall;
    r.table.emplace_back(radius, m);
    if (first || m < r.best_mse || (m == r.best_mse && radius < r.best_radius)) {
      r.best_radius = radius;
      r.best_mse = m;
      first = false;
    }
  }
  return r;
}

}  // namespace koopman
