#pragma once

// Variational assimilation of the latent initial condition of a frozen model:
//
//   z1* = argmin_z  sum_{t in S} || y_t - psi(K^{t-1} z) ||^2
//
// solved per pixel by gradient descent with a backtracking line search.
// An observation either carries a full augmented state (2L values) or only the
// band part (L values); band-only observations score the first L channels.
//
// Time convention: the band part of y_t is the frame stamped origin + t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "koopman/autodiff.hpp"
#include "koopman/koopman_model.hpp"
#include "koopman/parallel.hpp"

namespace koopman {

enum class InitStrategy { automatic, zero, encode_first };

struct Observation {
  std::size_t t = 1;          // augmented time index, >= 1
  std::vector<float> values;  // 2L (full) or L (bands only)
};

struct AssimOptions {
  InitStrategy init = InitStrategy::automatic;
  std::size_t steps = 500;
  double lr = 1e-2;
  std::size_t max_halvings = 30;
  double step_growth = 2.0;  // next trial step = growth * last accepted step
};

struct AssimProblem {
  std::vector<Observation> observations;
  AssimOptions options;
};

template <class T>
struct AssimResult {
  std::vector<T> z1_star;
  std::vector<double> objective;  // accepted objective per iteration, entry 0 = initial
  double final_objective = 0.0;
  std::size_t iterations = 0;
  InitStrategy init_used = InitStrategy::zero;
};

template <class T>
class Assimilator {
 public:
  Assimilator(const KoopmanModel<T>& model, const AssimProblem& problem)
      : model_(model), problem_(problem), l_(model.config().bands), k_(model.config().latent) {
    validate();
    const std::size_t d = 2 * l_;
    targets_ = ad::Tensor<T>({obs().size(), d});
    weights_.assign(obs().size() * d, T(0));
    for (std::size_t r = 0; r < obs().size(); ++r) {
      const auto& o = obs()[r];
      rows_.push_back(o.t - 1);
      for (std::size_t c = 0; c < o.values.size(); ++c) {
        targets_.data[r * d + c] = static_cast<T>(o.values[c]);
        weights_[r * d + c] = T(1);
      }
    }
    horizon_ = obs().back().t;
  }

  /// J(z) without recording a tape.
  double objective(const std::vector<T>& z) const {
    const auto K = model_.params().value("K").mat();
    ad::RowMatrix<T> traj(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(k_));
    Eigen::Matrix<T, 1, Eigen::Dynamic> cur = ad::ConstMatrixMap<T>(z.data(), 1, static_cast<Eigen::Index>(k_));
    std::size_t next = 0;
    for (std::size_t j = 0; j < horizon_ && next < rows_.size(); ++j) {
      if (j > 0) cur = cur * K.transpose();
      while (next < rows_.size() && rows_[next] == j) traj.row(static_cast<Eigen::Index>(next++)) = cur;
    }
    const ad::RowMatrix<T> dec = model_.decode_rows(traj);
    double s = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const double diff = static_cast<double>(dec.data()[i]) - static_cast<double>(targets_.data[i]);
      s += static_cast<double>(weights_[i]) * diff * diff;
    }
    return s;
  }

  /// Records J on `tape` with z as a differentiable leaf; returns (J, z leaf).
  std::pair<ad::Var, ad::Var> record(ad::Tape<T>& tape, const std::vector<T>& z) const {
    BoundModel bm = model_.bind_frozen(tape);
    ad::Var zv = tape.variable(ad::Tensor<T>::vector(z));
    ad::Var traj = ad::trajectory(tape, bm.K, zv, horizon_ - 1);
    ad::Var picked = ad::gather_rows(tape, traj, rows_);
    ad::Var dec = KoopmanModel<T>::decode(tape, bm, picked);
    ad::Var obs_v = tape.constant(targets_);
    return {ad::weighted_sse(tape, dec, obs_v, weights_), zv};
  }

  std::pair<double, std::vector<T>> value_and_grad(const std::vector<T>& z) const {
    ad::Tape<T> tape;
    auto [j, zv] = record(tape, z);
    tape.backward(j);
    const auto& g = tape.grad(zv).data;
    return {tape.value(j).item(), std::vector<T>(g.begin(), g.end())};
  }

  std::vector<T> initial_latent(InitStrategy& used) const {
    InitStrategy s = problem_.options.init;
    const bool has_full_first = obs().front().t == 1 && obs().front().values.size() == 2 * l_;
    if (s == InitStrategy::automatic) s = has_full_first ? InitStrategy::encode_first : InitStrategy::zero;
    used = s;
    if (s == InitStrategy::zero) return std::vector<T>(k_, T(0));
    if (!has_full_first) {
      throw PreconditionError("assimilate: encode_first needs a full augmented observation at t = 1");
    }
    std::vector<T> y(obs().front().values.begin(), obs().front().values.end());
    return model_.encode(y);
  }

  AssimResult<T> run() const {
    AssimResult<T> res;
    std::vector<T> z = initial_latent(res.init_used);
    double f = objective(z);
    if (!std::isfinite(f)) throw DivergenceError("assimilate: initial objective is not finite");
    res.objective.push_back(f);
    const auto& opt = problem_.options;
    double step = opt.lr;
    std::vector<T> trial(k_);
    for (std::size_t it = 0; it < opt.steps; ++it) {
      auto [f0, g] = value_and_grad(z);
      if (!std::isfinite(f0)) throw DivergenceError("assimilate: objective became non-finite");
      bool accepted = false;
      for (std::size_t h = 0; h <= opt.max_halvings; ++h) {
        for (std::size_t c = 0; c < k_; ++c) trial[c] = z[c] - static_cast<T>(step) * g[c];
        const double ft = objective(trial);
        if (std::isfinite(ft) && ft < f) {
          z = trial;
          f = ft;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      res.objective.push_back(f);
      res.iterations = it + 1;
      step *= opt.step_growth;
    }
    res.z1_star = std::move(z);
    res.final_objective = f;
    return res;
  }

 private:
  const std::vector<Observation>& obs() const { return problem_.observations; }

  void validate() const {
    if (obs().empty()) throw PreconditionError("assimilate: empty observation set S");
    for (std::size_t i = 0; i < obs().size(); ++i) {
      const auto& o = obs()[i];
      if (o.t < 1) throw PreconditionError("assimilate: observation times must be >= 1");
      if (i > 0 && o.t <= obs()[i - 1].t) {
        throw PreconditionError("assimilate: observation times must be strictly increasing");
      }
      if (o.values.size() != 2 * l_ && o.values.size() != l_) {
        throw ShapeError("assimilate: observation at t = " + std::to_string(o.t) + " has " +
                         std::to_string(o.values.size()) + " values, expected " +
                         std::to_string(2 * l_) + " or " + std::to_string(l_));
      }
    }
  }

  const KoopmanModel<T>& model_;
  AssimProblem problem_;
  std::size_t l_, k_;
  ad::Tensor<T> targets_;
  std::vector<T> weights_;
  std::vector<std::size_t> rows_;
  std::size_t horizon_ = 0;
};

/// Finds the latent initial condition of a frozen model that best explains the observations.
template <class T>
AssimResult<T> assimilate(const KoopmanModel<T>& model, const AssimProblem& problem) {
  return Assimilator<T>(model, problem).run();
}

/// psi(K^{t-1} z1) for every requested t >= 1, by incremental propagation up to max(t).
template <class T>
std::vector<AugmentedState> forecast_from_latent(const KoopmanModel<T>& model,
                                                 const std::vector<T>& z1,
                                                 const std::vector<std::size_t>& horizons) {
  if (horizons.empty()) return {};
  for (auto t : horizons) {
    if (t < 1) throw PreconditionError("forecast_from_latent: horizons must be >= 1");
  }
  const std::size_t steps = *std::max_element(horizons.begin(), horizons.end());
  const auto rows = model.rollout_latent(z1, steps);
  std::vector<AugmentedState> out;
  out.reserve(horizons.size());
  for (auto t : horizons) {
    const auto r = rows.row(static_cast<Eigen::Index>(t - 1));
    AugmentedState s(static_cast<std::size_t>(r.size()));
    for (Eigen::Index c = 0; c < r.size(); ++c) s[static_cast<std::size_t>(c)] = static_cast<float>(r[c]);
    out.push_back(std::move(s));
  }
  return out;
}

/// Timestamp whose offset defines augmented time for a set of sample and query timestamps.
///
/// When the first two samples are consecutive the first full augmented state
/// sits at t = 1 (origin = first sample); otherwise the first sample is a
/// band-only observation at t = 1. Queries earlier than that move the origin back.
inline std::uint32_t assimilation_origin(const std::vector<std::uint32_t>& samples,
                                         const std::vector<std::uint32_t>& queries) {
  if (samples.empty()) throw NoDataError("assimilation: no sample frames");
  std::uint32_t origin = samples.size() >= 2 && samples[1] == samples[0] + 1 ? samples[0]
                                                                              : samples[0] - 1;
  if (samples[0] == 0 && origin == std::numeric_limits<std::uint32_t>::max()) {
    throw PreconditionError("assimilation: timestamp 0 cannot be a band-only observation");
  }
  for (auto q : queries) {
    if (q == 0) throw PreconditionError("assimilation: query timestamp 0 is not representable");
    origin = std::min(origin, q - 1);
  }
  return origin;
}

/// Observations of one pixel: full augmented state when the previous timestamp
/// is also sampled, band part only otherwise. Frames at the origin are skipped.
inline std::vector<Observation> pixel_observations(const SeriesCube& samples, std::size_t pixel,
                                                   std::uint32_t origin) {
  std::vector<Observation> out;
  const auto& ts = samples.timestamps();
  const std::size_t l = samples.bands();
  for (std::size_t f = 0; f < samples.frames(); ++f) {
    if (ts[f] <= origin) continue;
    Observation o;
    o.t = ts[f] - origin;
    auto cur = samples.pixel(f, pixel);
    o.values.assign(cur.begin(), cur.end());
    if (f > 0 && ts[f - 1] + 1 == ts[f]) {
      auto prev = samples.pixel(f - 1, pixel);
      for (std::size_t c = 0; c < l; ++c) o.values.push_back(cur[c] - prev[c]);
    }
    out.push_back(std::move(o));
  }
  return out;
}

struct InterpolationOutput {
  SeriesCube frames;                       // augmented states (2L channels) at the query timestamps
  std::vector<double> final_objective;     // per pixel
  std::vector<std::vector<float>> latent;  // z1* per pixel
  std::uint32_t origin = 0;
};

/// Per pixel: assimilate on the sample frames, then forecast at the query timestamps.
template <class T>
InterpolationOutput interpolate_by_assimilation(const KoopmanModel<T>& model,
                                                const SeriesCube& samples,
                                                const std::vector<std::uint32_t>& queries,
                                                const AssimOptions& options, int threads = 1) {
  if (samples.bands() != model.config().bands) {
    throw ShapeError("interpolate_by_assimilation: cube has " + std::to_string(samples.bands()) +
                     " bands, model expects " + std::to_string(model.config().bands));
  }
  const std::uint32_t origin = assimilation_origin(samples.timestamps(), queries);
  const std::size_t n = samples.pixels();
  const std::size_t d = 2 * samples.bands();
  std::vector<std::size_t> horizons;
  for (auto q : queries) horizons.push_back(q - origin);

  InterpolationOutput out;
  out.origin = origin;
  out.final_objective.assign(n, 0.0);
  out.latent.assign(n, {});
  std::vector<float> data(queries.size() * n * d);
  parallel_for(n, threads, [&](std::size_t i) {
    AssimProblem problem{pixel_observations(samples, i, origin), options};
    if (problem.observations.empty()) {
      throw NoDataError("interpolate_by_assimilation: pixel has no usable observation");
    }
    auto res = assimilate(model, problem);
    out.final_objective[i] = res.final_objective;
    out.latent[i].assign(res.z1_star.begin(), res.z1_star.end());
    const auto states = forecast_from_latent(model, res.z1_star, horizons);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      std::copy_n(states[q].begin(), d, data.begin() + static_cast<std::ptrdiff_t>((q * n + i) * d));
    }
  });
  out.frames = SeriesCube(samples.height(), samples.width(), d, queries, std::move(data));
  return out;
}

}  // namespace koopman
