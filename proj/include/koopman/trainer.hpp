#pragma once

// Two-stage curriculum training: the short-horizon objective first, then the
// long-horizon objective starting from the short-stage parameters.
//
// Each optimizer step draws `batch_pixels` pixels (seeded shuffle per epoch)
// and uses every valid source time of those pixels. A batch is evaluated in
// shards of `shard_pixels` pixels on independent tapes; shard gradients are
// summed in shard order, so results do not depend on the thread count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "koopman/koopman_model.hpp"
#include "koopman/metrics.hpp"
#include "koopman/optim.hpp"
#include "koopman/parallel.hpp"

namespace koopman {

struct TrainConfig {
  std::size_t epochs_short = 200;
  std::size_t epochs_long = 300;
  std::size_t batch_pixels = 32;
  std::size_t shard_pixels = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  LossWeights weights;
  Horizons horizons;
  int threads = 1;
  bool track_validation = true;
  bool verbose = false;
};

/// Per-epoch curves. Short-stage terms have epochs_short entries, long-stage
/// terms epochs_long, and `orth` / `val_mse` one entry per epoch of both stages.
struct TrainReport {
  std::map<std::string, std::vector<double>> curves;
  double long_initial = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

namespace detail {

inline void check_finite_term(double v, std::size_t epoch, const std::string& stage,
                              const std::string& term) {
  if (!std::isfinite(v)) {
    throw DivergenceError(stage + " stage diverged at epoch " + std::to_string(epoch + 1) +
                          ": term " + term + " is not finite");
  }
}

}  // namespace detail

/// Validation MSE on band channels: forecast from the train cube's first
/// augmented state to every validation timestamp.
template <class T>
double validation_mse(const KoopmanModel<T>& model, const SeriesCube& train_cube,
                      const SeriesCube& val_cube, int threads = 1) {
  if (val_cube.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::uint32_t origin = train_cube.timestamps().front();
  const std::size_t steps = val_cube.timestamps().back() - origin;
  SeriesCube pred = band_channels(predict_from_first(model, train_cube, steps, threads));
  return mse_cubes(frames_at(pred, val_cube.timestamps()), val_cube).overall;
}

/// Long-rollout objective of a model over all pixels of a cube (no update).
template <class T>
double long_objective(const KoopmanModel<T>& model, const SeriesCube& cube, const LossWeights& w,
                      const Horizons& h, std::size_t shard_pixels = 4, int threads = 1) {
  const std::size_t n = cube.pixels();
  const std::size_t shards = (n + shard_pixels - 1) / shard_pixels;
  std::vector<double> data_part(shards, 0.0);
  parallel_for(shards, threads, [&](std::size_t s) {
    std::vector<std::size_t> idx;
    for (std::size_t i = s * shard_pixels; i < std::min(n, (s + 1) * shard_pixels); ++i) idx.push_back(i);
    auto batch = make_batch<T>(cube, idx);
    ad::Tape<T> tape;
    auto bm = model.bind_frozen(tape);
    auto lt = long_terms(tape, bm, batch, h.tau2);
    double sum = 0.0;
    for (std::size_t k = 0; k < lt.pred.size(); ++k) {
      sum += tape.value(lt.pred[k]).item() + tape.value(lt.lin[k]).item();
    }
    data_part[s] = sum * static_cast<double>(idx.size()) / static_cast<double>(n);
  });
  ad::Tape<T> tape;
  auto bm = model.bind_frozen(tape);
  const double orth = tape.value(ad::frobenius_orth_penalty(tape, bm.K)).item();
  return w.beta2 * orth + std::accumulate(data_part.begin(), data_part.end(), 0.0);
}

template <class T>
class Trainer {
 public:
  Trainer(KoopmanModel<T>& model, const SeriesCube& train_cube, const SeriesCube& val_cube,
          TrainConfig cfg)
      : model_(model), train_(train_cube), val_(val_cube), cfg_(std::move(cfg)) {}

  TrainReport run() {
    validate();
    const auto start = std::chrono::steady_clock::now();
    Rng rng(mix_seed(cfg_.seed, 0x21u));
    std::vector<std::size_t> order(train_.pixels());
    std::iota(order.begin(), order.end(), std::size_t{0});

    run_stage(Stage::Short, cfg_.epochs_short, rng, order);
    if (cfg_.epochs_long > 0) {
      report_.long_initial = long_objective(model_, train_, cfg_.weights, cfg_.horizons,
                                            cfg_.shard_pixels, cfg_.threads);
    }
    run_stage(Stage::Long, cfg_.epochs_long, rng, order);
    report_.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report_;
  }

 private:
  enum class Stage { Short, Long };

  void validate() const {
    if (cfg_.batch_pixels == 0 || cfg_.shard_pixels == 0) {
      throw PreconditionError("train: batch_pixels and shard_pixels must be positive");
    }
    if (!(cfg_.lr > 0.0)) throw PreconditionError("train: lr must be positive");
    if (!(cfg_.horizons.tau1 > 0 && cfg_.horizons.tau1 < cfg_.horizons.tau2)) {
      throw PreconditionError("train: horizons must satisfy 0 < tau1 < tau2");
    }
    if (!train_.regular()) throw PreconditionError("train: training cube must be regular");
    if (train_.bands() != model_.config().bands) {
      throw ShapeError("train: cube has " + std::to_string(train_.bands()) + " bands, model " +
                       std::to_string(model_.config().bands));
    }
    if (cfg_.epochs_short > 0 && train_.frames() < cfg_.horizons.tau1 + 2) {
      throw HorizonError("train: short stage needs at least tau1 + 2 frames");
    }
    if (cfg_.epochs_long > 0 && train_.frames() < cfg_.horizons.tau2 + 2) {
      throw HorizonError("train: long stage needs T_train >= tau2 + 2 = " +
                         std::to_string(cfg_.horizons.tau2 + 2) + ", got " +
                         std::to_string(train_.frames()));
    }
  }

  // Term values of one shard, already scaled by the shard's share of the batch.
  using TermValues = std::vector<double>;

  static std::vector<std::string> term_names(Stage stage) {
    if (stage == Stage::Short) return {"pred_0", "pred_1", "pred_tau1", "lin_1", "lin_tau1"};
    return {"long_pred", "long_lin"};
  }

  TermValues eval_shard(Stage stage, const std::vector<std::size_t>& pixels, double share,
                        ad::ParamStore<T>& grads) const {
    auto batch = make_batch<T>(train_, pixels);
    ad::Tape<T> tape;
    auto bm = model_.bind(tape, grads);
    std::vector<ad::Var> parts;
    TermValues values;
    if (stage == Stage::Short) {
      auto st = short_terms(tape, bm, batch, cfg_.horizons.tau1);
      parts = {st.pred_0, st.pred_1, st.pred_tau1, st.lin_1, st.lin_tau1};
      for (auto v : parts) values.push_back(share * tape.value(v).item());
    } else {
      auto lt = long_terms(tape, bm, batch, cfg_.horizons.tau2);
      double pred = 0.0, lin = 0.0;
      for (std::size_t k = 0; k < lt.pred.size(); ++k) {
        pred += tape.value(lt.pred[k]).item();
        lin += tape.value(lt.lin[k]).item();
        parts.push_back(lt.pred[k]);
        parts.push_back(lt.lin[k]);
      }
      values = {share * pred, share * lin};
    }
    ad::Var total = parts.front();
    for (std::size_t k = 1; k < parts.size(); ++k) total = ad::add(tape, total, parts[k]);
    tape.backward(total, static_cast<T>(share));
    return values;
  }

  void run_stage(Stage stage, std::size_t epochs, Rng& rng, std::vector<std::size_t>& order) {
    const std::string stage_name = stage == Stage::Short ? "short" : "long";
    const double beta = stage == Stage::Short ? cfg_.weights.beta1 : cfg_.weights.beta2;
    const auto names = term_names(stage);
    Adam<T> adam(model_.params(), AdamConfig{cfg_.lr});
    auto& params = model_.params();
    const std::size_t n = order.size();

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<double> epoch_terms(names.size(), 0.0);
      double epoch_orth = 0.0;
      for (std::size_t start = 0; start < n; start += cfg_.batch_pixels) {
        const std::size_t stop = std::min(n, start + cfg_.batch_pixels);
        const std::size_t batch_n = stop - start;
        const std::size_t shards = (batch_n + cfg_.shard_pixels - 1) / cfg_.shard_pixels;
        std::vector<ad::ParamStore<T>> shard_grads(shards, params);
        std::vector<TermValues> shard_values(shards);
        parallel_for(shards, cfg_.threads, [&](std::size_t s) {
          shard_grads[s].zero_grad();
          std::vector<std::size_t> pix(order.begin() + static_cast<std::ptrdiff_t>(start + s * cfg_.shard_pixels),
                                       order.begin() + static_cast<std::ptrdiff_t>(
                                                           std::min(stop, start + (s + 1) * cfg_.shard_pixels)));
          const double share = static_cast<double>(pix.size()) / static_cast<double>(batch_n);
          shard_values[s] = eval_shard(stage, pix, share, shard_grads[s]);
        });

        params.zero_grad();
        for (const auto& g : shard_grads) params.accumulate_grads(g);
        double orth = 0.0;
        {
          ad::Tape<T> tape;
          ad::Var K = tape.param(params, "K");
          ad::Var pen = ad::frobenius_orth_penalty(tape, K);
          orth = tape.value(pen).item();
          tape.backward(pen, static_cast<T>(beta));
        }

        const double weight = static_cast<double>(batch_n) / static_cast<double>(n);
        for (std::size_t k = 0; k < names.size(); ++k) {
          double v = 0.0;
          for (const auto& sv : shard_values) v += sv[k];
          detail::check_finite_term(v, epoch, stage_name, names[k]);
          epoch_terms[k] += weight * v;
        }
        detail::check_finite_term(orth, epoch, stage_name, "orth");
        epoch_orth += weight * orth;
        adam.step(params);
      }

      for (std::size_t k = 0; k < names.size(); ++k) report_.curves[names[k]].push_back(epoch_terms[k]);
      report_.curves["orth"].push_back(epoch_orth);
      if (stage == Stage::Long) {
        report_.curves["long_total"].push_back(epoch_terms[0] + epoch_terms[1] + beta * epoch_orth);
      }
      double val = std::numeric_limits<double>::quiet_NaN();
      if (cfg_.track_validation) val = validation_mse(model_, train_, val_, cfg_.threads);
      report_.curves["val_mse"].push_back(val);
      if (cfg_.verbose) {
        double total = beta * epoch_orth;
        for (double v : epoch_terms) total += v;
        std::fprintf(stderr, "[%s %zu/%zu] loss %.6g val_mse %.6g\n", stage_name.c_str(), epoch + 1,
                     epochs, total, val);
      }
    }
  }

  KoopmanModel<T>& model_;
  const SeriesCube& train_;
  const SeriesCube& val_;
  TrainConfig cfg_;
  TrainReport report_;
};

/// Trains `model` in place and returns the per-epoch report.
template <class T>
TrainReport train(KoopmanModel<T>& model, const SeriesCube& train_cube, const SeriesCube& val_cube,
                  const TrainConfig& cfg) {
  return Trainer<T>(model, train_cube, val_cube, cfg).run();
}

/// Forecast MSE on band channels over the last t_val frames, from y_1 alone.
template <class T>
double evaluate_forecast(const KoopmanModel<T>& model, const SeriesCube& cube,
                         const SplitSpec& split_spec, int threads = 1) {
  if (!cube.regular()) throw PreconditionError("evaluate_forecast: cube must be regular");
  auto [train_part, val_part] = split(cube, split_spec);
  return validation_mse(model, cube, val_part, threads);
}

}  // namespace koopman
