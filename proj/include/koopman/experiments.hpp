#pragma once

// End-to-end experiment pipelines shared by the CLI and the acceptance suite.

#include <numeric>
#include <vector>

#include "koopman/assimilation.hpp"
#include "koopman/config_json.hpp"
#include "koopman/cressman.hpp"
#include "koopman/metrics.hpp"
#include "koopman/residual_cnn.hpp"
#include "koopman/trainer.hpp"

namespace koopman {

/// Four-row forecasting table plus the constant reference.
struct ForecastTable {
  double baseline = 0.0;
  double prediction = 0.0;
  double prediction_cnn = 0.0;
  double assimilation = 0.0;
  double assimilation_cnn = 0.0;
  std::vector<double> prediction_frames, prediction_cnn_frames;  // per validation frame
};

inline json to_json(const ForecastTable& t) {
  return {{"baseline", t.baseline},
          {"rows",
           json::array({{{"method", "prediction_from_t0"}, {"mse", t.prediction}},
                        {{"method", "prediction_from_t0+cnn"}, {"mse", t.prediction_cnn}},
                        {{"method", "assimilation"}, {"mse", t.assimilation}},
                        {{"method", "assimilation+cnn"}, {"mse", t.assimilation_cnn}}})}};
}

/// Intermediate products of a forecasting run, for reports.
struct ForecastArtifacts {
  SeriesCube truth;       // band frames stamped 2..T
  SeriesCube prediction;  // augmented, same stamps
  SeriesCube prediction_corrected;
  SeriesCube assimilation;
  SeriesCube assimilation_corrected;
  std::vector<std::size_t> val_frames;  // indices into the cubes above
};

inline ConvSpec default_conv_spec(std::size_t bands) {
  ConvSpec s;
  s.in_channels = 2 * bands;
  s.filters.back() = bands;
  return s;
}

/// Scores a trained model on a regular cube: prediction from the first
/// augmented state, assimilation over all training states, and both with a
/// residual network fitted on training frames.
template <class T>
ForecastTable forecast_table(const KoopmanModel<T>& model, const SeriesCube& cube, const ExperimentConfig& cfg,
                             int threads = 1, ForecastArtifacts* artifacts = nullptr) {
  if (!cube.regular()) throw PreconditionError("forecast_table: cube must be regular");
  const std::size_t frames = cube.frames();
  const auto& sp = cfg.split;
  if (sp.t_train < 2 || sp.t_train + sp.t_val > frames) {
    throw PreconditionError("forecast_table: split does not fit the cube");
  }
  ForecastTable out;
  out.baseline = constant_baseline(cube, sp).overall;

  std::vector<std::size_t> later(frames - 1);
  std::iota(later.begin(), later.end(), std::size_t{1});
  const SeriesCube truth = cube.select(later);
  std::vector<std::size_t> val;
  for (std::size_t j = frames - 1 - sp.t_val; j < frames - 1; ++j) val.push_back(j);
  const std::size_t cnn_frames = sp.t_train - 1;

  auto corrected = [&](const SeriesCube& pred, std::uint64_t salt) {
    ResidualTrainConfig rc = cfg.cnn;
    rc.threads = threads;
    rc.seed = mix_seed(cfg.cnn.seed, salt);
    auto cnn = ResidualCnn<T>::initialize(default_conv_spec(cube.bands()), rc.seed);
    train_residual(cnn, pred, truth, cnn_frames, rc);
    return apply_correction(cnn, pred, threads);
  };

  const SeriesCube pred = predict_from_first(model, cube, frames - 1, threads);
  const SeriesCube pred_c = corrected(pred, 1);
  const auto pr = mse_cubes(pred, truth, val);
  const auto pcr = mse_cubes(pred_c, truth, val);
  out.prediction = pr.overall;
  out.prediction_cnn = pcr.overall;
  out.prediction_frames = pr.per_frame;
  out.prediction_cnn_frames = pcr.per_frame;

  const SeriesCube train_cube = cube.slice(0, sp.t_train);
  const auto assim = interpolate_by_assimilation(model, train_cube, truth.timestamps(), cfg.assim, threads);
  const SeriesCube assim_c = corrected(assim.frames, 2);
  out.assimilation = mse_cubes(assim.frames, truth, val).overall;
  out.assimilation_cnn = mse_cubes(assim_c, truth, val).overall;

  if (artifacts) {
    *artifacts = ForecastArtifacts{truth, pred, pred_c, assim.frames, assim_c, val};
  }
  return out;
}

/// One holdout draw of the irregular interpolation protocol.
struct InterpolationTrial {
  std::uint64_t seed = 0;
  std::size_t kept = 0, removed = 0;
  double assimilation = 0.0;
  SweepResult cressman;
};

inline json to_json(const InterpolationTrial& t) {
  return {{"seed", t.seed},
          {"kept", t.kept},
          {"removed", t.removed},
          {"assimilation_mse", t.assimilation},
          {"cressman", to_json(t.cressman)}};
}

/// Splits an irregular cube by a seeded keep/remove draw, interpolates the
/// removed frames by assimilation and by the best-radius Cressman sweep.
template <class T>
InterpolationTrial interpolation_trial(const KoopmanModel<T>& model, const SeriesCube& irregular, double keep_prob,
                                       std::uint64_t seed, const AssimOptions& options, int threads = 1) {
  auto part = subsample_irregular(irregular, keep_prob, seed);
  if (part.removed.empty()) throw EmptyDrawError("interpolation_trial: seed " + std::to_string(seed) + " removed no frame");
  InterpolationTrial r;
  r.seed = seed;
  r.kept = part.kept.frames();
  r.removed = part.removed.frames();
  const auto est = interpolate_by_assimilation(model, part.kept, part.removed.timestamps(), options, threads);
  r.assimilation = mse_cubes(est.frames, part.removed).overall;
  r.cressman = radius_sweep(part.kept, part.removed);
  return r;
}

}  // namespace koopman
