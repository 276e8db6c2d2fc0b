#pragma once

// Koopman autoencoder: encoder phi (2L -> k), decoder psi (k -> 2L) and a k x k
// matrix K advancing latent codes by one time step, plus the training losses.
//
// Batches are stored time-major: row t * pixels + i holds the augmented state
// of pixel i at (0-based) augmented index t. With that layout every source set
// {t <= steps - tau} is a row prefix and every target set {t >= tau} a suffix.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "koopman/autodiff.hpp"
#include "koopman/data_model.hpp"
#include "koopman/parallel.hpp"

namespace koopman {

struct ModelConfig {
  std::size_t bands = 10;
  std::size_t latent = 32;
  std::vector<std::size_t> hidden{64, 128, 64};

  std::size_t state_dim() const { return 2 * bands; }
};

struct LossWeights {
  double beta1 = 0.01;  // orthogonality weight in the short-horizon objective
  double beta2 = 0.01;  // orthogonality weight in the long-horizon objective
};

struct Horizons {
  std::size_t tau1 = 5;
  std::size_t tau2 = 100;
};

/// Augmented states of a set of pixels, time-major (see file comment).
template <class T>
struct PixelBatch {
  std::size_t pixels = 0;
  std::size_t steps = 0;  // augmented states per pixel
  ad::Tensor<T> states;   // [steps * pixels x 2L]
};

/// Builds the augmented batch for the given pixel indices of a regular cube.
template <class T>
PixelBatch<T> make_batch(const SeriesCube& cube, std::span<const std::size_t> pixel_indices) {
  if (cube.frames() < 2) {
    throw DegenerateSeriesError("make_batch: need at least 2 frames, got " +
                                std::to_string(cube.frames()));
  }
  const std::size_t l = cube.bands();
  PixelBatch<T> b;
  b.pixels = pixel_indices.size();
  b.steps = cube.frames() - 1;
  b.states = ad::Tensor<T>({b.steps * b.pixels, 2 * l});
  for (std::size_t t = 0; t < b.steps; ++t) {
    for (std::size_t i = 0; i < b.pixels; ++i) {
      auto prev = cube.pixel(t, pixel_indices[i]);
      auto curr = cube.pixel(t + 1, pixel_indices[i]);
      T* row = b.states.data.data() + (t * b.pixels + i) * 2 * l;
      for (std::size_t c = 0; c < l; ++c) {
        row[c] = static_cast<T>(curr[c]);
        row[l + c] = static_cast<T>(curr[c]) - static_cast<T>(prev[c]);
      }
    }
  }
  return b;
}

/// Model parameters bound to one tape.
struct BoundModel {
  std::vector<ad::Var> enc_w, enc_b, dec_w, dec_b;
  ad::Var K;
};

template <class T>
class KoopmanModel {
 public:
  KoopmanModel() = default;

  /// Fresh model: He-scaled Gaussian hidden weights, zero biases, K = I + N(0, k_noise^2).
  static KoopmanModel initialize(const ModelConfig& cfg, std::uint64_t seed, double k_noise = 0.01) {
    KoopmanModel m;
    m.cfg_ = cfg;
    Rng rng(mix_seed(seed, 0x11u));
    auto widths = layer_widths(cfg);
    auto add_mlp = [&](const std::string& prefix, const std::vector<std::size_t>& w) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const bool last = i + 2 == w.size();
        const double sd = std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(w[i]));
        ad::Tensor<T> W({w[i + 1], w[i]});
        for (auto& v : W.data) v = static_cast<T>(sd * normal01(rng));
        m.params_.add(prefix + "." + std::to_string(i) + ".W", std::move(W));
        m.params_.add(prefix + "." + std::to_string(i) + ".b", ad::Tensor<T>({w[i + 1]}));
      }
    };
    add_mlp("enc", widths.first);
    ad::Tensor<T> K({cfg.latent, cfg.latent});
    for (std::size_t r = 0; r < cfg.latent; ++r) {
      for (std::size_t c = 0; c < cfg.latent; ++c) {
        K.data[r * cfg.latent + c] = static_cast<T>((r == c ? 1.0 : 0.0) + k_noise * normal01(rng));
      }
    }
    m.params_.add("K", std::move(K));
    add_mlp("dec", widths.second);
    return m;
  }

  /// Wraps an existing parameter store, checking names and shapes against cfg.
  static KoopmanModel from_params(const ModelConfig& cfg, ad::ParamStore<T> params) {
    KoopmanModel m;
    m.cfg_ = cfg;
    m.params_ = std::move(params);
    auto widths = layer_widths(cfg);
    auto check = [&](const std::string& prefix, const std::vector<std::size_t>& w) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        const auto& W = m.params_.value(prefix + "." + std::to_string(i) + ".W");
        const auto& b = m.params_.value(prefix + "." + std::to_string(i) + ".b");
        if (W.shape != std::vector<std::size_t>{w[i + 1], w[i]} ||
            b.shape != std::vector<std::size_t>{w[i + 1]}) {
          throw ShapeError("KoopmanModel: layer " + prefix + "." + std::to_string(i) +
                           " does not match the configured widths");
        }
      }
    };
    check("enc", widths.first);
    check("dec", widths.second);
    if (m.params_.value("K").shape != std::vector<std::size_t>{cfg.latent, cfg.latent}) {
      throw ShapeError("KoopmanModel: K is not latent x latent");
    }
    const std::size_t expected = 2 * (widths.first.size() - 1) * 2 + 1;
    if (m.params_.size() != expected) throw FormatError("KoopmanModel: unexpected extra parameters");
    return m;
  }

  /// Recovers the architecture from a checkpoint's parameter shapes.
  static ModelConfig infer_config(const ad::ParamStore<T>& params) {
    ModelConfig cfg;
    cfg.hidden.clear();
    std::size_t layers = 0;
    while (params.find("enc." + std::to_string(layers) + ".W")) ++layers;
    if (layers == 0 || !params.find("K")) throw FormatError("checkpoint is not a Koopman model");
    const auto& first = params.value("enc.0.W");
    if (first.shape[1] % 2 != 0) throw FormatError("encoder input width must be even");
    cfg.bands = first.shape[1] / 2;
    for (std::size_t i = 0; i + 1 < layers; ++i) {
      cfg.hidden.push_back(params.value("enc." + std::to_string(i) + ".W").shape[0]);
    }
    cfg.latent = params.value("K").shape.at(0);
    return cfg;
  }

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }
  std::size_t layers() const { return cfg_.hidden.size() + 1; }

  template <class U>
  KoopmanModel<U> cast() const {
    return KoopmanModel<U>::from_params(cfg_, params_.template cast<U>());
  }

  /// Puts every parameter on the tape as a trainable leaf whose gradient flows into `store`.
  BoundModel bind(ad::Tape<T>& tape, ad::ParamStore<T>& store) const {
    return bind_with([&](const std::string& name) { return tape.param(store, name); });
  }

  BoundModel bind(ad::Tape<T>& tape) { return bind(tape, params_); }

  /// Frozen binding: parameters enter the tape as constants and receive no gradient.
  BoundModel bind_frozen(ad::Tape<T>& tape) const {
    return bind_with([&](const std::string& name) { return tape.constant(params_.value(name)); });
  }

  static ad::Var mlp(ad::Tape<T>& tape, const std::vector<ad::Var>& w,
                     const std::vector<ad::Var>& b, ad::Var x) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      x = ad::affine(tape, x, w[i], b[i]);
      if (i + 1 < w.size()) x = ad::relu(tape, x);
    }
    return x;
  }

  static ad::Var encode(ad::Tape<T>& tape, const BoundModel& bm, ad::Var y) {
    return mlp(tape, bm.enc_w, bm.enc_b, y);
  }

  static ad::Var decode(ad::Tape<T>& tape, const BoundModel& bm, ad::Var z) {
    return mlp(tape, bm.dec_w, bm.dec_b, z);
  }

  // --- inference without a tape -------------------------------------------

  /// Encodes each row of Y ([n x 2L]) into a latent row ([n x k]).
  ad::RowMatrix<T> encode_rows(const ad::RowMatrix<T>& Y) const { return run_mlp("enc", Y); }

  ad::RowMatrix<T> decode_rows(const ad::RowMatrix<T>& Z) const { return run_mlp("dec", Z); }

  std::vector<T> encode(std::span<const T> y) const {
    check_width(y.size(), cfg_.state_dim(), "encode");
    return to_vec(encode_rows(as_row(y)));
  }

  std::vector<T> decode(std::span<const T> z) const {
    check_width(z.size(), cfg_.latent, "decode");
    return to_vec(decode_rows(as_row(z)));
  }

  /// psi(K^tau phi(y)).
  std::vector<T> predict(std::span<const T> y, std::size_t tau) const {
    check_width(y.size(), cfg_.state_dim(), "predict");
    ad::RowMatrix<T> z = encode_rows(as_row(y));
    const auto K = params_.value("K").mat();
    for (std::size_t s = 0; s < tau; ++s) z = z * K.transpose();
    return to_vec(decode_rows(z));
  }

  /// psi(K^{j} phi(y)) for j = 0..steps-1, one row per step.
  ad::RowMatrix<T> rollout(std::span<const T> y, std::size_t steps) const {
    check_width(y.size(), cfg_.state_dim(), "rollout");
    return rollout_latent(encode(y), steps);
  }

  /// psi(K^{j} z) for j = 0..steps-1, computed with steps-1 matrix-vector products.
  ad::RowMatrix<T> rollout_latent(std::span<const T> z, std::size_t steps) const {
    check_width(z.size(), cfg_.latent, "rollout_latent");
    ad::RowMatrix<T> Z(steps, cfg_.latent);
    if (steps == 0) return ad::RowMatrix<T>(0, cfg_.state_dim());
    const auto K = params_.value("K").mat();
    Z.row(0) = as_row(z);
    for (std::size_t j = 1; j < steps; ++j) Z.row(j).noalias() = Z.row(j - 1) * K.transpose();
    return decode_rows(Z);
  }

 private:
  template <class Leaf>
  BoundModel bind_with(Leaf&& leaf) const {
    BoundModel bm;
    for (std::size_t i = 0; i < layers(); ++i) {
      bm.enc_w.push_back(leaf("enc." + std::to_string(i) + ".W"));
      bm.enc_b.push_back(leaf("enc." + std::to_string(i) + ".b"));
    }
    bm.K = leaf("K");
    for (std::size_t i = 0; i < layers(); ++i) {
      bm.dec_w.push_back(leaf("dec." + std::to_string(i) + ".W"));
      bm.dec_b.push_back(leaf("dec." + std::to_string(i) + ".b"));
    }
    return bm;
  }

  static std::pair<std::vector<std::size_t>, std::vector<std::size_t>> layer_widths(
      const ModelConfig& cfg) {
    std::vector<std::size_t> enc{cfg.state_dim()};
    enc.insert(enc.end(), cfg.hidden.begin(), cfg.hidden.end());
    enc.push_back(cfg.latent);
    std::vector<std::size_t> dec(enc.rbegin(), enc.rend());
    return {enc, dec};
  }

  static void check_width(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
      throw ShapeError(std::string(what) + ": width " + std::to_string(got) + ", expected " +
                       std::to_string(want));
    }
  }

  static ad::RowMatrix<T> as_row(std::span<const T> v) {
    return ad::ConstMatrixMap<T>(v.data(), 1, static_cast<Eigen::Index>(v.size()));
  }

  static std::vector<T> to_vec(const ad::RowMatrix<T>& m) {
    return std::vector<T>(m.data(), m.data() + m.size());
  }

  ad::RowMatrix<T> run_mlp(const std::string& prefix, ad::RowMatrix<T> x) const {
    for (std::size_t i = 0; i < layers(); ++i) {
      const auto W = params_.value(prefix + "." + std::to_string(i) + ".W").mat();
      const auto b = params_.value(prefix + "." + std::to_string(i) + ".b").mat();
      ad::RowMatrix<T> y = x * W.transpose();
      y.rowwise() += b.row(0);
      if (i + 1 < layers()) y = y.cwiseMax(T(0));
      x = std::move(y);
    }
    return x;
  }

  ModelConfig cfg_;
  ad::ParamStore<T> params_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void require_pairs(const PixelBatch<T>& batch, std::size_t tau) {
  if (batch.pixels == 0 || batch.steps <= tau) {
    throw EmptyBatchError("no valid (pixel, t) pair for tau = " + std::to_string(tau) + " with " +
                          std::to_string(batch.steps) + " augmented states per pixel");
  }
}

}  // namespace detail

/// Prediction loss: mean over valid (i, t) of mse(y_{t+tau}, psi(K^tau phi(y_t))).
template <class T>
ad::Var loss_pred(ad::Tape<T>& tape, const BoundModel& bm, const PixelBatch<T>& batch,
                  std::size_t tau) {
  detail::require_pairs(batch, tau);
  const std::size_t n = batch.pixels;
  ad::Var y = tape.constant(batch.states);
  ad::Var src = ad::slice_rows(tape, y, 0, (batch.steps - tau) * n);
  ad::Var z = ad::matpow_apply(tape, bm.K, KoopmanModel<T>::encode(tape, bm, src), tau);
  ad::Var target = ad::slice_rows(tape, y, tau * n, batch.steps * n);
  return ad::mse(tape, KoopmanModel<T>::decode(tape, bm, z), target);
}

/// Linearity loss: mean over valid (i, t) of mse(phi(y_{t+tau}), K^tau phi(y_t)).
template <class T>
ad::Var loss_lin(ad::Tape<T>& tape, const BoundModel& bm, const PixelBatch<T>& batch,
                 std::size_t tau) {
  detail::require_pairs(batch, tau);
  const std::size_t n = batch.pixels;
  ad::Var z0 = KoopmanModel<T>::encode(tape, bm, tape.constant(batch.states));
  ad::Var src = ad::slice_rows(tape, z0, 0, (batch.steps - tau) * n);
  ad::Var target = ad::slice_rows(tape, z0, tau * n, batch.steps * n);
  return ad::mse(tape, ad::matpow_apply(tape, bm.K, src, tau), target);
}

/// The five data terms of the short-horizon objective (shared encoding).
struct ShortTerms {
  ad::Var pred_0, pred_1, pred_tau1, lin_1, lin_tau1;
};

template <class T>
ShortTerms short_terms(ad::Tape<T>& tape, const BoundModel& bm, const PixelBatch<T>& batch,
                       std::size_t tau1) {
  detail::require_pairs(batch, std::max<std::size_t>(tau1, 1));
  using M = KoopmanModel<T>;
  const std::size_t n = batch.pixels, s = batch.steps;
  ad::Var y = tape.constant(batch.states);
  ad::Var z0 = M::encode(tape, bm, y);
  auto prefix = [&](ad::Var v, std::size_t tau) { return ad::slice_rows(tape, v, 0, (s - tau) * n); };
  auto suffix = [&](ad::Var v, std::size_t tau) { return ad::slice_rows(tape, v, tau * n, s * n); };

  ShortTerms out;
  out.pred_0 = ad::mse(tape, M::decode(tape, bm, z0), y);
  ad::Var z1 = ad::apply_matrix(tape, bm.K, prefix(z0, 1));
  out.pred_1 = ad::mse(tape, M::decode(tape, bm, z1), suffix(y, 1));
  out.lin_1 = ad::mse(tape, z1, suffix(z0, 1));
  ad::Var zt = tau1 == 1 ? z1 : ad::matpow_apply(tape, bm.K, prefix(z1, tau1), tau1 - 1);
  out.pred_tau1 = ad::mse(tape, M::decode(tape, bm, zt), suffix(y, tau1));
  out.lin_tau1 = ad::mse(tape, zt, suffix(z0, tau1));
  return out;
}

/// beta1 * L_orth + pred_0 + pred_1 + pred_tau1 + lin_1 + lin_tau1.
template <class T>
ad::Var loss_short(ad::Tape<T>& tape, const BoundModel& bm, const PixelBatch<T>& batch,
                   const LossWeights& w, const Horizons& h = {}) {
  ShortTerms st = short_terms(tape, bm, batch, h.tau1);
  ad::Var total = ad::scale(tape, ad::frobenius_orth_penalty(tape, bm.K), static_cast<T>(w.beta1));
  for (ad::Var v : {st.pred_0, st.pred_1, st.pred_tau1, st.lin_1, st.lin_tau1}) {
    total = ad::add(tape, total, v);
  }
  return total;
}

/// pred_tau and lin_tau for tau = 0..tau2, sharing one encoding per source state.
struct LongTerms {
  std::vector<ad::Var> pred, lin;
};

/// Long-horizon data terms. The latent codes are advanced incrementally: the
/// codes at horizon tau are K times the surviving prefix of those at tau - 1.
template <class T>
LongTerms long_terms(ad::Tape<T>& tape, const BoundModel& bm, const PixelBatch<T>& batch,
                     std::size_t tau2) {
  if (batch.pixels == 0 || batch.steps < tau2 + 1) {
    throw HorizonError("long-horizon loss needs at least tau2 + 2 = " + std::to_string(tau2 + 2) +
                       " frames per series, got " + std::to_string(batch.steps + 1));
  }
  using M = KoopmanModel<T>;
  const std::size_t n = batch.pixels, s = batch.steps;
  ad::Var y = tape.constant(batch.states);
  ad::Var z0 = M::encode(tape, bm, y);
  LongTerms out;
  ad::Var z = z0;
  for (std::size_t tau = 0; tau <= tau2; ++tau) {
    if (tau > 0) z = ad::apply_matrix(tape, bm.K, ad::slice_rows(tape, z, 0, (s - tau) * n));
    ad::Var y_target = ad::slice_rows(tape, y, tau * n, s * n);
    ad::Var z_target = ad::slice_rows(tape, z0, tau * n, s * n);
    out.pred.push_back(ad::mse(tape, M::decode(tape, bm, z), y_target));
    out.lin.push_back(ad::mse(tape, z, z_target));
  }
  return out;
}

/// beta2 * L_orth + sum_{tau=0}^{tau2} (pred_tau + lin_tau).
template <class T>
ad::Var loss_long(ad::Tape<T>& tape, const BoundModel& bm, const PixelBatch<T>& batch,
                  const LossWeights& w, const Horizons& h = {}) {
  LongTerms lt = long_terms(tape, bm, batch, h.tau2);
  ad::Var total = ad::scale(tape, ad::frobenius_orth_penalty(tape, bm.K), static_cast<T>(w.beta2));
  for (std::size_t i = 0; i < lt.pred.size(); ++i) {
    total = ad::add(tape, total, ad::add(tape, lt.pred[i], lt.lin[i]));
  }
  return total;
}

/// Forecast from the first augmented state of every pixel.
///
/// Returns a cube with 2L channels whose frame j (1-based, j = 1..steps) holds
/// psi(K^{j-1} phi(y_1)), stamped with the timestamp of the frame it predicts
/// (ts_1 + j).
template <class T>
SeriesCube predict_from_first(const KoopmanModel<T>& model, const SeriesCube& cube,
                              std::size_t steps, int threads = 1) {
  if (cube.frames() < 2) {
    throw DegenerateSeriesError("predict_from_first: need the first two frames");
  }
  if (cube.timestamps()[1] != cube.timestamps()[0] + 1) {
    throw PreconditionError("predict_from_first: first two frames must be consecutive");
  }
  const std::size_t l = cube.bands();
  const std::size_t d = 2 * l;
  if (d != model.config().state_dim()) {
    throw ShapeError("predict_from_first: cube has " + std::to_string(l) +
                     " bands, model expects " + std::to_string(model.config().bands));
  }
  const std::size_t n = cube.pixels();
  std::vector<float> data(steps * n * d);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<T> y(d);
    auto prev = cube.pixel(0, i);
    auto curr = cube.pixel(1, i);
    for (std::size_t c = 0; c < l; ++c) {
      y[c] = static_cast<T>(curr[c]);
      y[l + c] = static_cast<T>(curr[c]) - static_cast<T>(prev[c]);
    }
    const auto rows = model.rollout(y, steps);
    for (std::size_t j = 0; j < steps; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        data[(j * n + i) * d + c] = static_cast<float>(rows(static_cast<Eigen::Index>(j),
                                                            static_cast<Eigen::Index>(c)));
      }
    }
  });
  std::vector<std::uint32_t> ts(steps);
  for (std::size_t j = 0; j < steps; ++j) {
    ts[j] = cube.timestamps()[0] + static_cast<std::uint32_t>(j + 1);
  }
  return SeriesCube(cube.height(), cube.width(), d, std::move(ts), std::move(data));
}

}  // namespace koopman
