#pragma once

#include <cmath>
#include <vector>

#include "koopman/autodiff.hpp"

namespace koopman {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias-corrected first/second moments per parameter entry.
template <class T>
class Adam {
 public:
  Adam(const ad::ParamStore<T>& params, AdamConfig cfg) : cfg_(cfg) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.value(i).size(), 0.0);
      v_.emplace_back(params.value(i).size(), 0.0);
    }
  }

  /// One update from the gradients currently stored in `params`.
  void step(ad::ParamStore<T>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params.value(p).data;
      const auto& g = params.grad(p).data;
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double update = cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace koopman
