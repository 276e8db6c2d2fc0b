#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// A Tape records every operation of one evaluation together with a backward
// rule; Tape::backward replays the rules in exact reverse order and sums the
// contributions each value receives from all of its uses. Tapes are cheap and
// are rebuilt per evaluation. Parameters live in a ParamStore and receive
// their gradients when the tape is flushed at the end of backward().

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "koopman/binary_io.hpp"
#include "koopman/error.hpp"
#include "koopman/random.hpp"

namespace koopman::ad {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
// aligned storage: Eigen kernels peel differently on differently aligned
// buffers, which changes rounding from one allocation to the next
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense tensor: shape plus flat row-major data.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  Buffer<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(product(shape), T(0)) {}

  template <class A>
    requires(!std::is_same_v<A, Eigen::aligned_allocator<T>>)
  Tensor(std::vector<std::size_t> s, const std::vector<T, A>& d) : Tensor(std::move(s), Buffer<T>(d.begin(), d.end())) {}

  Tensor(std::vector<std::size_t> s, Buffer<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (product(shape) != data.size()) {
      throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  }

  static Tensor vector(std::vector<T> d) {
    const std::size_t n = d.size();
    return Tensor({n}, std::move(d));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> d) {
    return Tensor({rows, cols}, std::move(d));
  }

  static Tensor scalar(T v) { return Tensor({1}, Buffer<T>{v}); }

  static std::size_t product(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  /// Rows when viewed as a matrix: rank-1 tensors are a single row.
  std::size_t rows() const { return rank() >= 2 ? shape[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : size() / rows(); }

  MatrixMap<T> mat() { return MatrixMap<T>(data.data(), rows(), cols()); }
  ConstMatrixMap<T> mat() const { return ConstMatrixMap<T>(data.data(), rows(), cols()); }

  T item() const {
    if (size() != 1) throw ShapeError("Tensor::item on tensor of shape " + shape_str(shape));
    return data[0];
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, Buffer<U>(data.begin(), data.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

/// Named parameters with stable insertion order and one gradient slot each.
template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    if (find(name)) throw FormatError("ParamStore: duplicate parameter '" + name + "'");
    Tensor<T> grad(value.shape);
    entries_.push_back({std::move(name), std::move(value), std::move(grad)});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  Tensor<T>& value(std::size_t i) { return entries_.at(i).value; }
  const Tensor<T>& value(std::size_t i) const { return entries_.at(i).value; }
  Tensor<T>& grad(std::size_t i) { return entries_.at(i).grad; }
  const Tensor<T>& grad(std::size_t i) const { return entries_.at(i).grad; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t index(const std::string& name) const {
    auto i = find(name);
    if (!i) throw FormatError("ParamStore: no parameter named '" + name + "'");
    return *i;
  }

  Tensor<T>& value(const std::string& name) { return value(index(name)); }
  const Tensor<T>& value(const std::string& name) const { return value(index(name)); }

  void zero_grad() {
    for (auto& e : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// Adds another store's gradients slot by slot (shapes must agree).
  void accumulate_grads(const ParamStore& other) {
    if (other.size() != size()) throw ShapeError("accumulate_grads: store size mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      auto& g = entries_[i].grad.data;
      const auto& o = other.entries_[i].grad.data;
      if (g.size() != o.size()) throw ShapeError("accumulate_grads: shape mismatch at " + name(i));
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += o[j];
    }
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value))
        return false;
    }
    return true;
  }

 private:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };
  std::vector<Entry> entries_;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// A free leaf whose gradient is readable after backward().
  Var variable(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// A leaf bound to a parameter; its gradient is added to the store on backward().
  Var param(ParamStore<T>& store, std::size_t index) {
    Var v = push(store.value(index), true, {});
    nodes_[v.id].store = &store;
    nodes_[v.id].store_index = index;
    return v;
  }

  Var param(ParamStore<T>& store, const std::string& name) { return param(store, store.index(name)); }

  /// Records an op output. Its backward rule only runs when an input needs gradients.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() target with respect to v (zeros if untouched).
  const Tensor<T>& grad(Var v) {
    return grad_slot(v);
  }

  /// Mutable gradient slot, allocated on first use; for backward rules.
  Tensor<T>& grad_slot(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.shape != n.value.shape) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_[v.id].grad.data.empty(); }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output; param gradients are added to their stores.
  void backward(Var out, T seed = T(1)) {
    if (nodes_[out.id].value.size() != 1) {
      throw ShapeError("backward: output must be a scalar, got " +
                       shape_str(nodes_[out.id].value.shape));
    }
    grad_slot(out).data[0] += seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      if (n.backward) n.backward(*this, Var{i});
    }
    for (auto& n : nodes_) {
      if (n.store && !n.grad.data.empty()) {
        auto& g = n.store->grad(n.store_index).data;
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad.data[j];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    ParamStore<T>* store = nullptr;
    std::size_t store_index = 0;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn), nullptr, 0});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// y = x W^T + b for x of shape [n] or [B x n], W [m x n], b [m].
template <class T>
Var affine(Tape<T>& tape, Var x, Var W, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(W);
  const auto& bv = tape.value(b);
  if (wv.rank() != 2 || bv.rank() != 1 || xv.rank() < 1 || xv.rank() > 2 ||
      xv.shape.back() != wv.shape[1] || bv.shape[0] != wv.shape[0]) {
    throw ShapeError("affine: incompatible operands x" + shape_str(xv.shape) + ", W" +
                     shape_str(wv.shape) + ", b" + shape_str(bv.shape));
  }
  const std::size_t m = wv.shape[0];
  Tensor<T> y(xv.rank() == 1 ? std::vector<std::size_t>{m}
                             : std::vector<std::size_t>{xv.shape[0], m});
  auto ym = y.mat();
  ym.noalias() = xv.mat() * wv.mat().transpose();
  ym.rowwise() += bv.mat().row(0);
  return tape.record(std::move(y), {x, W, b}, [x, W, b](Tape<T>& t, Var self) {
    const auto g = t.grad_slot(self).mat();
    if (t.requires_grad(W)) t.grad_slot(W).mat().noalias() += g.transpose() * t.value(x).mat();
    if (t.requires_grad(b)) t.grad_slot(b).mat().row(0) += g.colwise().sum();
    if (t.requires_grad(x)) t.grad_slot(x).mat().noalias() += g * t.value(W).mat();
  });
}

/// Elementwise max(0, x); the subgradient at 0 is taken as 0.
template <class T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, Var self) {
    const auto& xv = t.value(x).data;
    const auto& g = t.grad_slot(self).data;
    auto& gx = t.grad_slot(x).data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

/// Applies K to z (shape [k]) or to every row of z (shape [B x k]): z K^T.
template <class T>
Var apply_matrix(Tape<T>& tape, Var K, Var z) {
  const auto& kv = tape.value(K);
  const auto& zv = tape.value(z);
  if (kv.rank() != 2 || kv.shape[0] != kv.shape[1] || zv.shape.back() != kv.shape[0]) {
    throw ShapeError("apply_matrix: K" + shape_str(kv.shape) + " incompatible with z" +
                     shape_str(zv.shape));
  }
  Tensor<T> y(zv.shape);
  y.mat().noalias() = zv.mat() * kv.mat().transpose();
  return tape.record(std::move(y), {K, z}, [K, z](Tape<T>& t, Var self) {
    const auto g = t.grad_slot(self).mat();
    if (t.requires_grad(K)) t.grad_slot(K).mat().noalias() += g.transpose() * t.value(z).mat();
    if (t.requires_grad(z)) t.grad_slot(z).mat().noalias() += g * t.value(K).mat();
  });
}

/// K^tau z by tau sequential matrix-vector products; K^tau is never formed.
template <class T>
Var matpow_apply(Tape<T>& tape, Var K, Var z, std::size_t tau) {
  for (std::size_t s = 0; s < tau; ++s) z = apply_matrix(tape, K, z);
  return z;
}

/// Rows z, Kz, ..., K^steps z of a single latent vector z ([k] -> [steps+1 x k]).
///
/// One tape node; backward runs the adjoint recurrence a_j = g_j + K^T a_{j+1}.
template <class T>
Var trajectory(Tape<T>& tape, Var K, Var z, std::size_t steps) {
  const auto& kv = tape.value(K);
  const auto& zv = tape.value(z);
  const std::size_t k = kv.shape.at(0);
  if (kv.rank() != 2 || kv.shape[1] != k || zv.size() != k) {
    throw ShapeError("trajectory: K" + shape_str(kv.shape) + " incompatible with z" +
                     shape_str(zv.shape));
  }
  Tensor<T> out({steps + 1, k});
  auto om = out.mat();
  const auto km = kv.mat();
  om.row(0) = zv.mat().row(0);
  for (std::size_t j = 1; j <= steps; ++j) om.row(j).noalias() = om.row(j - 1) * km.transpose();
  return tape.record(std::move(out), {K, z}, [K, z, steps](Tape<T>& t, Var self) {
    const auto g = t.grad_slot(self).mat();
    const auto zs = t.value(self).mat();
    const auto km = t.value(K).mat();
    const bool want_k = t.requires_grad(K);
    Eigen::Matrix<T, 1, Eigen::Dynamic> adj = g.row(steps);
    RowMatrix<T> dk;
    if (want_k) dk = RowMatrix<T>::Zero(km.rows(), km.cols());
    for (std::size_t j = steps; j-- > 0;) {
      if (want_k) dk.noalias() += adj.transpose() * zs.row(j);
      Eigen::Matrix<T, 1, Eigen::Dynamic> next = g.row(j);
      next.noalias() += adj * km;
      adj.swap(next);
    }
    if (want_k) t.grad_slot(K).mat() += dk;
    if (t.requires_grad(z)) t.grad_slot(z).mat().row(0) += adj;
  });
}

/// Rows [begin, end) of a rank-2 tensor.
template <class T>
Var slice_rows(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 2 || begin > end || end > xv.shape[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(xv.shape));
  }
  const std::size_t cols = xv.shape[1];
  Tensor<T> y({end - begin, cols},
              std::vector<T>(xv.data.begin() + begin * cols, xv.data.begin() + end * cols));
  return tape.record(std::move(y), {x}, [x, begin, cols](Tape<T>& t, Var self) {
    const auto& g = t.grad_slot(self).data;
    auto& gx = t.grad_slot(x).data;
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
  });
}

/// Selected rows (duplicates allowed) of a rank-2 tensor, in the given order.
template <class T>
Var gather_rows(Tape<T>& tape, Var x, std::vector<std::size_t> rows) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 2) throw ShapeError("gather_rows: expects a rank-2 tensor");
  const std::size_t cols = xv.shape[1];
  Tensor<T> y({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= xv.shape[0]) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(xv.data.begin() + rows[r] * cols, cols, y.data.begin() + r * cols);
  }
  return tape.record(std::move(y), {x}, [x, rows = std::move(rows), cols](Tape<T>& t, Var self) {
    const auto& g = t.grad_slot(self).data;
    auto& gx = t.grad_slot(x).data;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[rows[r] * cols + c] += g[r * cols + c];
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape != bv.shape) {
    throw ShapeError("add: shapes " + shape_str(av.shape) + " and " + shape_str(bv.shape));
  }
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv.data[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, Var self) {
    const auto& g = t.grad_slot(self).data;
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      auto& gi = t.grad_slot(in).data;
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T c) {
  Tensor<T> y = tape.value(a);
  for (auto& v : y.data) v *= c;
  return tape.record(std::move(y), {a}, [a, c](Tape<T>& t, Var self) {
    const auto& g = t.grad_slot(self).data;
    auto& ga = t.grad_slot(a).data;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

/// Sum of squares of all entries, returned as a scalar.
template <class T>
Var sum_squares(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  T s = 0;
  for (T v : av.data) s += v * v;
  return tape.record(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, Var self) {
    const T g = t.grad_slot(self).data[0];
    const auto& av = t.value(a).data;
    auto& ga = t.grad_slot(a).data;
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += T(2) * g * av[i];
  });
}

/// Weighted sum of squared differences: sum_i w_i (a_i - b_i)^2, w may be empty (all ones).
template <class T>
Var weighted_sse(Tape<T>& tape, Var a, Var b, std::vector<T> w = {}) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape != bv.shape) {
    throw ShapeError("sse: shapes " + shape_str(av.shape) + " and " + shape_str(bv.shape));
  }
  if (!w.empty() && w.size() != av.size()) throw ShapeError("sse: weight length mismatch");
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av.data[i] - bv.data[i];
    s += (w.empty() ? T(1) : w[i]) * d * d;
  }
  return tape.record(Tensor<T>::scalar(s), {a, b}, [a, b, w = std::move(w)](Tape<T>& t, Var self) {
    const T g = t.grad_slot(self).data[0];
    const auto& av = t.value(a).data;
    const auto& bv = t.value(b).data;
    const bool ga_on = t.requires_grad(a), gb_on = t.requires_grad(b);
    T* ga = ga_on ? t.grad_slot(a).data.data() : nullptr;
    T* gb = gb_on ? t.grad_slot(b).data.data() : nullptr;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = T(2) * g * (w.empty() ? T(1) : w[i]) * (av[i] - bv[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

template <class T>
Var sse(Tape<T>& tape, Var a, Var b) {
  return weighted_sse(tape, a, b);
}

/// Mean of squared componentwise differences.
template <class T>
Var mse(Tape<T>& tape, Var a, Var b) {
  const std::size_t n = tape.value(a).size();
  if (n == 0) throw ShapeError("mse: empty operands");
  return scale(tape, weighted_sse(tape, a, b), T(1) / static_cast<T>(n));
}

/// ||K K^T - I||_F^2 for square K.
template <class T>
Var frobenius_orth_penalty(Tape<T>& tape, Var K) {
  const auto& kv = tape.value(K);
  if (kv.rank() != 2 || kv.shape[0] != kv.shape[1]) {
    throw ShapeError("frobenius_orth_penalty: K must be square, got " + shape_str(kv.shape));
  }
  const auto km = kv.mat();
  RowMatrix<T> resid = km * km.transpose();
  resid.diagonal().array() -= T(1);
  const T value = resid.squaredNorm();
  return tape.record(Tensor<T>::scalar(value), {K}, [K](Tape<T>& t, Var self) {
    const T g = t.grad_slot(self).data[0];
    const auto km = t.value(K).mat();
    RowMatrix<T> resid = km * km.transpose();
    resid.diagonal().array() -= T(1);
    t.grad_slot(K).mat().noalias() += (T(4) * g) * resid * km;
  });
}

/// Throws InstabilityError when x holds NaN/Inf; otherwise passes x through.
template <class T>
Var check_finite(Tape<T>& tape, Var x, const std::string& what) {
  if (!tape.value(x).all_finite()) throw InstabilityError("non-finite values in " + what);
  return x;
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

/// Central-difference check of the gradient of a scalar objective.
///
/// `objective(tape, params)` must build the scalar on `tape` reading parameters
/// through tape.param(). Tensors with more than `coords_per_param` entries are
/// checked on a seeded random sample of that many coordinates. Returns the max
/// over checked coordinates of |g_ad - g_fd| / max(floor, |g_ad| + |g_fd|).
template <class Objective>
double finite_diff_check(Objective&& objective, ParamStore<double>& params, double eps,
                         std::size_t coords_per_param = 100, std::uint64_t seed = 0,
                         double floor = 1e-12) {
  params.zero_grad();
  {
    Tape<double> tape;
    Var out = objective(tape, params);
    if (!std::isfinite(tape.value(out).item())) {
      throw InstabilityError("finite_diff_check: objective is not finite");
    }
    tape.backward(out);
  }
  auto eval = [&]() {
    Tape<double> tape;
    const double v = tape.value(objective(tape, params)).item();
    if (!std::isfinite(v)) throw InstabilityError("finite_diff_check: objective is not finite");
    return v;
  };
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& data = params.value(p).data;
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coords_per_param);
    }
    for (std::size_t c : coords) {
      const double saved = data[c];
      data[c] = saved + eps;
      const double up = eval();
      data[c] = saved - eps;
      const double down = eval();
      data[c] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double an = params.grad(p).data[c];
      worst = std::max(worst, std::abs(an - fd) / std::max(floor, std::abs(an) + std::abs(fd)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// KPM1 parameter checkpoints
// ---------------------------------------------------------------------------

/// Serializes parameters as KPM1 (values stored as 32-bit floats).
template <class T>
std::vector<char> encode_params(const ParamStore<T>& store) {
  detail::ByteWriter w;
  w.put_bytes("KPM1");
  w.put_u32(static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    const auto& v = store.value(i);
    w.put_u32(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put_u32(static_cast<std::uint32_t>(v.rank()));
    for (auto d : v.shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (T x : v.data) w.put_f32(static_cast<float>(x));
  }
  return w.bytes();
}

template <class T>
void save_params(const ParamStore<T>& store, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_params(store);
  w.put_bytes(std::string_view(bytes.data(), bytes.size()));
  w.write_file(path);
}

inline ParamStore<float> decode_params(detail::ByteReader r) {
  if (r.get_bytes(4, "magic") != "KPM1") throw FormatError("bad magic: expected KPM1");
  const std::uint32_t count = r.get_u32("parameter count");
  ParamStore<float> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.get_u32("name length");
    std::string name = r.get_bytes(len, "parameter name");
    const std::uint32_t rank = r.get_u32("rank of " + name);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get_u32("dims of " + name);
    std::vector<float> data(Tensor<float>::product(shape));
    for (auto& x : data) x = r.get_f32("values of " + name);
    store.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("KPM1: trailing bytes after last parameter");
  return store;
}

inline ParamStore<float> load_params(const std::string& path) {
  return decode_params(detail::ByteReader::from_file(path));
}

}  // namespace koopman::ad
