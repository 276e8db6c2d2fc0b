#pragma once

// Convolutional residual correction of predicted images.
//
// The network maps a predicted augmented frame (2L channels) to an L-channel
// residual; the corrected frame is the predicted band channels plus that residual.
// Images are stored channel-last, shape [N x H x W x C].

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "koopman/autodiff.hpp"
#include "koopman/data_model.hpp"
#include "koopman/optim.hpp"
#include "koopman/parallel.hpp"
#include "koopman/random.hpp"

namespace koopman {

struct ConvSpec {
  std::size_t in_channels = 20;
  std::vector<std::size_t> filters{64, 64, 32, 32, 10};
  std::size_t kernel = 3;

  std::size_t out_channels() const { return filters.empty() ? in_channels : filters.back(); }
};

inline std::size_t param_count(const ConvSpec& spec) {
  std::size_t total = 0;
  std::size_t c_in = spec.in_channels;
  for (auto c_out : spec.filters) {
    total += spec.kernel * spec.kernel * c_in * c_out + c_out;
    c_in = c_out;
  }
  return total;
}

namespace ad {

/// Stride-1 cross-correlation with zero padding k/2 of x [N x H x W x Cin] by
/// W [Cout x Cin x k x k] plus b [Cout]; output [N x H x W x Cout].
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var W, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(W);
  const auto& bv = tape.value(b);
  if (xv.rank() != 4 || wv.rank() != 4 || wv.shape[2] != wv.shape[3] || wv.shape[2] % 2 == 0 ||
      bv.size() != wv.shape[0]) {
    throw ShapeError("conv2d: bad shapes x" + shape_str(xv.shape) + " W" + shape_str(wv.shape) +
                     " b" + shape_str(bv.shape));
  }
  if (xv.shape[3] != wv.shape[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xv.shape[3]) + " channels, kernel expects " +
                     std::to_string(wv.shape[1]));
  }
  const std::size_t n = xv.shape[0], h = xv.shape[1], w = xv.shape[2], cin = xv.shape[3];
  const std::size_t cout = wv.shape[0], k = wv.shape[2];
  const std::size_t pad = k / 2;
  const std::size_t patch = cin * k * k;
  const std::size_t rows = n * h * w;

  // column order (c, dy, dx) matches the row-major weight layout
  auto im2col = [=](const Buffer<T>& src) {
    RowMatrix<T> cols = RowMatrix<T>::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(patch));
    for (std::size_t img = 0; img < n; ++img) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x0 = 0; x0 < w; ++x0) {
          T* dst = cols.data() + ((img * h + y) * w + x0) * patch;
          for (std::size_t dy = 0; dy < k; ++dy) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x0 + dx) - static_cast<std::ptrdiff_t>(pad);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
              const T* s = src.data() + ((img * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)) * cin;
              for (std::size_t c = 0; c < cin; ++c) dst[(c * k + dy) * k + dx] = s[c];
            }
          }
        }
      }
    }
    return cols;
  };

  const RowMatrix<T> cols = im2col(xv.data);
  const ConstMatrixMap<T> wm(wv.data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
  Tensor<T> out({n, h, w, cout});
  MatrixMap<T> om(out.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
  om.noalias() = cols * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data.data(), static_cast<Eigen::Index>(cout));

  return tape.record(std::move(out), {x, W, b}, [=](Tape<T>& t, Var self) {
    const auto& g = t.grad_slot(self).data;
    const ConstMatrixMap<T> gm(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cout));
    if (t.requires_grad(b)) {
      auto& gb = t.grad_slot(b).data;
      const Eigen::Matrix<T, 1, Eigen::Dynamic> s = gm.colwise().sum();
      for (std::size_t c = 0; c < cout; ++c) gb[c] += s[static_cast<Eigen::Index>(c)];
    }
    if (t.requires_grad(W)) {
      const RowMatrix<T> c2 = im2col(t.value(x).data);
      MatrixMap<T> gw(t.grad_slot(W).data.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
      gw.noalias() += gm.transpose() * c2;
    }
    if (t.requires_grad(x)) {
      const auto& wd = t.value(W).data;
      const ConstMatrixMap<T> wm2(wd.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
      const RowMatrix<T> dcols = gm * wm2;
      auto& gx = t.grad_slot(x).data;
      for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x0 = 0; x0 < w; ++x0) {
            const T* src = dcols.data() + ((img * h + y) * w + x0) * patch;
            for (std::size_t dy = 0; dy < k; ++dy) {
              const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
              if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t dx = 0; dx < k; ++dx) {
                const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x0 + dx) - static_cast<std::ptrdiff_t>(pad);
                if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                T* d = gx.data() + ((img * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)) * cin;
                for (std::size_t c = 0; c < cin; ++c) d[c] += src[(c * k + dy) * k + dx];
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace ad

struct ResidualTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_frames = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int threads = 1;
};

template <class T>
class ResidualCnn {
 public:
  ResidualCnn() = default;

  /// He-normal hidden layers, zero biases; the last layer starts at zero so the
  /// untrained correction is the identity.
  static ResidualCnn initialize(const ConvSpec& spec, std::uint64_t seed) {
    ResidualCnn cnn;
    cnn.spec_ = spec;
    Rng rng(mix_seed(seed, 0xC0));
    std::size_t c_in = spec.in_channels;
    for (std::size_t i = 0; i < spec.filters.size(); ++i) {
      const std::size_t c_out = spec.filters[i];
      ad::Tensor<T> W({c_out, c_in, spec.kernel, spec.kernel});
      const bool last = i + 1 == spec.filters.size();
      if (!last) {
        const double sd = std::sqrt(2.0 / static_cast<double>(c_in * spec.kernel * spec.kernel));
        for (auto& v : W.data) v = static_cast<T>(sd * normal01(rng));
      }
      cnn.params_.add("conv." + std::to_string(i) + ".W", std::move(W));
      cnn.params_.add("conv." + std::to_string(i) + ".b", ad::Tensor<T>({c_out}));
      c_in = c_out;
    }
    return cnn;
  }

  /// Rebuilds a network from checkpoint parameters; layer shapes define the spec.
  static ResidualCnn from_params(ad::ParamStore<T> params) {
    ResidualCnn cnn;
    std::size_t i = 0;
    std::size_t c_prev = 0;
    while (auto wi = params.find("conv." + std::to_string(i) + ".W")) {
      const auto& w = params.value(*wi);
      auto bi = params.find("conv." + std::to_string(i) + ".b");
      if (w.rank() != 4 || w.shape[2] != w.shape[3] || !bi || params.value(*bi).size() != w.shape[0] ||
          (i > 0 && w.shape[1] != c_prev) || (i > 0 && w.shape[2] != cnn.spec_.kernel)) {
        throw ShapeError("ResidualCnn: inconsistent shapes at layer " + std::to_string(i));
      }
      if (i == 0) {
        cnn.spec_.in_channels = w.shape[1];
        cnn.spec_.kernel = w.shape[2];
        cnn.spec_.filters.clear();
      }
      cnn.spec_.filters.push_back(w.shape[0]);
      c_prev = w.shape[0];
      ++i;
    }
    if (i == 0) throw ShapeError("ResidualCnn: no conv.0.W parameter");
    if (params.size() != 2 * i) throw ShapeError("ResidualCnn: unexpected extra parameters");
    cnn.params_ = std::move(params);
    return cnn;
  }

  const ConvSpec& spec() const { return spec_; }
  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }

  /// Network output on tape for images x [N x H x W x Cin].
  static ad::Var forward(ad::Tape<T>& tape, ad::ParamStore<T>& store, ad::Var x, std::size_t layers) {
    for (std::size_t i = 0; i < layers; ++i) {
      ad::Var W = tape.param(store, "conv." + std::to_string(i) + ".W");
      ad::Var b = tape.param(store, "conv." + std::to_string(i) + ".b");
      x = ad::conv2d(tape, x, W, b);
      if (i + 1 < layers) x = ad::relu(tape, x);
    }
    return x;
  }

  /// Tape-free forward pass of a frozen network.
  ad::Tensor<T> conv_forward(const ad::Tensor<T>& images) const {
    ad::Tape<T> tape;
    ad::Var x = tape.constant(images);
    const std::size_t layers = spec_.filters.size();
    for (std::size_t i = 0; i < layers; ++i) {
      const std::string p = "conv." + std::to_string(i);
      x = ad::conv2d(tape, x, tape.constant(params_.value(p + ".W")), tape.constant(params_.value(p + ".b")));
      if (i + 1 < layers) x = ad::relu(tape, x);
    }
    return tape.value(x);
  }

 private:
  ConvSpec spec_;
  ad::ParamStore<T> params_;
};

namespace detail {

template <class T>
ad::Tensor<T> frames_tensor(const SeriesCube& cube, const std::vector<std::size_t>& frames) {
  ad::Tensor<T> t({frames.size(), cube.height(), cube.width(), cube.bands()});
  const std::size_t fs = cube.pixels() * cube.bands();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto f = cube.frame(frames[i]);
    std::transform(f.begin(), f.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * fs),
                   [](float v) { return static_cast<T>(v); });
  }
  return t;
}

inline void check_residual_pair(const SeriesCube& predicted, const SeriesCube& truth, std::size_t in_channels) {
  if (predicted.frames() != truth.frames() || predicted.height() != truth.height() ||
      predicted.width() != truth.width() || predicted.timestamps() != truth.timestamps()) {
    throw MisalignmentError("train_residual: predicted and truth cubes are not aligned");
  }
  if (predicted.bands() != in_channels || predicted.bands() < truth.bands()) {
    throw MisalignmentError("train_residual: predicted cube has " + std::to_string(predicted.bands()) +
                            " channels, network expects " + std::to_string(in_channels));
  }
}

}  // namespace detail

/// Residual targets X - X_hat on the band channels for the given frames.
template <class T>
ad::Tensor<T> residual_targets(const SeriesCube& predicted, const SeriesCube& truth,
                               const std::vector<std::size_t>& frames) {
  const std::size_t l = truth.bands();
  ad::Tensor<T> r({frames.size(), truth.height(), truth.width(), l});
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < truth.pixels(); ++i) {
      auto p = predicted.pixel(frames[f], i);
      auto x = truth.pixel(frames[f], i);
      for (std::size_t c = 0; c < l; ++c) {
        r.data[(f * truth.pixels() + i) * l + c] = static_cast<T>(x[c]) - static_cast<T>(p[c]);
      }
    }
  }
  return r;
}

/// Fits the network to the residuals of the first `train_frames` frames by
/// mini-batch Adam on the mean squared error. Returns the per-epoch loss.
template <class T>
std::vector<double> train_residual(ResidualCnn<T>& cnn, const SeriesCube& predicted, const SeriesCube& truth,
                                   std::size_t train_frames, const ResidualTrainConfig& cfg) {
  detail::check_residual_pair(predicted, truth, cnn.spec().in_channels);
  if (truth.bands() != cnn.spec().out_channels()) {
    throw MisalignmentError("train_residual: truth has " + std::to_string(truth.bands()) +
                            " bands, network outputs " + std::to_string(cnn.spec().out_channels()));
  }
  if (train_frames == 0 || train_frames > truth.frames()) {
    throw PreconditionError("train_residual: train_frames must be in [1, " + std::to_string(truth.frames()) + "]");
  }
  if (cfg.batch_frames == 0) throw PreconditionError("train_residual: batch_frames must be positive");

  auto& params = cnn.params();
  Adam<T> adam(params, AdamConfig{cfg.lr});
  Rng rng(mix_seed(cfg.seed, 0xC1));
  std::vector<std::size_t> order(train_frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t layers = cnn.spec().filters.size();
  const double per_frame = static_cast<double>(truth.pixels() * truth.bands());
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_frames; start += cfg.batch_frames) {
      const std::size_t stop = std::min(train_frames, start + cfg.batch_frames);
      const std::size_t nb = stop - start;
      const double norm = 1.0 / (static_cast<double>(nb) * per_frame);
      // one shard per frame, summed in frame order
      std::vector<ad::ParamStore<T>> grads(nb, params);
      std::vector<double> losses(nb, 0.0);
      parallel_for(nb, cfg.threads, [&](std::size_t s) {
        const std::vector<std::size_t> fr{order[start + s]};
        grads[s].zero_grad();
        ad::Tape<T> tape;
        ad::Var x = tape.constant(detail::frames_tensor<T>(predicted, fr));
        ad::Var y = ResidualCnn<T>::forward(tape, grads[s], x, layers);
        ad::Var target = tape.constant(residual_targets<T>(predicted, truth, fr));
        ad::Var loss = ad::scale(tape, ad::sse(tape, y, target), static_cast<T>(norm));
        losses[s] = static_cast<double>(tape.value(loss).item());
        tape.backward(loss);
      });
      params.zero_grad();
      for (const auto& g : grads) params.accumulate_grads(g);
      adam.step(params);
      for (double v : losses) epoch_loss += v * static_cast<double>(nb);
    }
    epoch_loss /= static_cast<double>(train_frames);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("train_residual: loss became non-finite at epoch " + std::to_string(epoch + 1));
    }
    curve.push_back(epoch_loss);
  }
  return curve;
}

/// Band channels of each predicted frame plus the network's residual estimate.
template <class T>
SeriesCube apply_correction(const ResidualCnn<T>& cnn, const SeriesCube& predicted, int threads = 1) {
  if (predicted.bands() != cnn.spec().in_channels) {
    throw ShapeError("apply_correction: predicted cube has " + std::to_string(predicted.bands()) +
                     " channels, network expects " + std::to_string(cnn.spec().in_channels));
  }
  const std::size_t l = cnn.spec().out_channels();
  if (l > predicted.bands()) throw ShapeError("apply_correction: network outputs more channels than input");
  const std::size_t np = predicted.pixels();
  std::vector<float> data(predicted.frames() * np * l);
  parallel_for(predicted.frames(), threads, [&](std::size_t f) {
    const auto r = cnn.conv_forward(detail::frames_tensor<T>(predicted, {f}));
    for (std::size_t i = 0; i < np; ++i) {
      auto p = predicted.pixel(f, i);
      for (std::size_t c = 0; c < l; ++c) {
        data[(f * np + i) * l + c] = static_cast<float>(static_cast<T>(p[c]) + r.data[i * l + c]);
      }
    }
  });
  return SeriesCube(predicted.height(), predicted.width(), l, predicted.timestamps(), std::move(data));
}

}  // namespace koopman
