#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "voxelbridge/error.hpp"

// Reverse-mode differentiation over row-major Eigen matrices. A Graph records
// one forward evaluation; backward() replays it in reverse and accumulates
// gradients into nodes and into the gradient sinks of the parameters used.
namespace voxelbridge::ad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;
  std::size_t slot = 0;  // position inside its ParamStore

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns named parameters with stable addresses, in registration order.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other) { *this = other; }
  ParamStore& operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<T>& add(std::string name, Matrix<T> value) {
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->value = std::move(value);
    p->slot = params_.size();
    p->zero_grad();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  Parameter<T>& get(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    fail(ErrorKind::invalid_argument, "no parameter named " + name);
  }
  const Parameter<T>& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }
  void set_trainable(bool on) {
    for (auto& p : params_) p->trainable = on;
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p->name, p->value.template cast<U>()).trainable = p->trainable;
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

struct Var {
  std::size_t id = 0;
};

template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  Var input(Matrix<T> value, bool needs_grad = false) { return push(std::move(value), needs_grad, nullptr, {}); }

  Var param(Parameter<T>& p) { return push(p.value, p.trainable, &p, {}); }

  Var make(Matrix<T> value, bool needs_grad, Backward backward) {
    return push(std::move(value), needs_grad, nullptr, needs_grad ? std::move(backward) : Backward{});
  }

  const Matrix<T>& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer of a node, allocated as zeros on first touch.
  Matrix<T>& grad(Var v) { return grad(v.id); }
  Matrix<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_[v.id].grad.size() != 0; }

  /// Seeds d(root)/d(root) = seed and propagates. Parameter gradients are added
  /// to `sink[param.slot]` when a sink is given, else to `param.grad`.
  void backward(Var root, T seed = T(1), std::vector<Matrix<T>>* sink = nullptr) {
    require(nodes_[root.id].value.size() == 1, ErrorKind::shape, "backward root must be a scalar");
    grad(root.id)(0, 0) += seed;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& dst = sink ? (*sink)[n.param->slot] : n.param->grad;
        if (dst.size() == 0) dst.setZero(n.value.rows(), n.value.cols());
        dst += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Matrix<T> value, bool needs_grad, Parameter<T>* p, Backward b) {
    nodes_.push_back(Node{std::move(value), Matrix<T>{}, p, needs_grad, std::move(b)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  Matrix<T> y = g.value(a) * g.value(b);
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.make(std::move(y), ng, [a, b](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    if (g.needs_grad(a)) g.grad(a).noalias() += dy * g.value(b).transpose();
    if (g.needs_grad(b)) g.grad(b).noalias() += g.value(a).transpose() * dy;
  });
}

/// y = x W + b, with b a 1 x out row broadcast over rows.
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  Matrix<T> y = g.value(x) * g.value(w);
  y.rowwise() += g.value(b).row(0);
  const bool ng = g.needs_grad(x) || g.needs_grad(w) || g.needs_grad(b);
  return g.make(std::move(y), ng, [x, w, b](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    if (g.needs_grad(x)) g.grad(x).noalias() += dy * g.value(w).transpose();
    if (g.needs_grad(w)) g.grad(w).noalias() += g.value(x).transpose() * dy;
    if (g.needs_grad(b)) g.grad(b) += dy.colwise().sum();
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  require(g.value(a).rows() == g.value(b).rows() && g.value(a).cols() == g.value(b).cols(), ErrorKind::shape,
          "add: shape mismatch");
  Matrix<T> y = g.value(a) + g.value(b);
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.make(std::move(y), ng, [a, b](Graph<T>& g, std::size_t self) {
    if (g.needs_grad(a)) g.grad(a) += g.grad(self);
    if (g.needs_grad(b)) g.grad(b) += g.grad(self);
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s) {
  Matrix<T> y = g.value(a) * s;
  return g.make(std::move(y), g.needs_grad(a), [a, s](Graph<T>& g, std::size_t self) { g.grad(a) += g.grad(self) * s; });
}

namespace detail {
template <class T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2 / pi)
template <class T>
constexpr T kGeluA = T(0.044715);
}  // namespace detail

/// tanh-approximated GELU.
template <class T>
Var gelu(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  Matrix<T> y(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const T v = xv.data()[i];
    const T th = std::tanh(detail::kGeluC<T> * (v + detail::kGeluA<T> * v * v * v));
    y.data()[i] = T(0.5) * v * (T(1) + th);
  }
  return g.make(std::move(y), g.needs_grad(x), [x](Graph<T>& g, std::size_t self) {
    const auto& xv = g.value(x);
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const T v = xv.data()[i];
      const T inner = detail::kGeluC<T> * (v + detail::kGeluA<T> * v * v * v);
      const T th = std::tanh(inner);
      const T dinner = detail::kGeluC<T> * (T(1) + T(3) * detail::kGeluA<T> * v * v);
      dx.data()[i] += dy.data()[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * dinner);
    }
  });
}

/// Row-wise layer normalization with learned gain and bias (1 x D each).
template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  const auto& xv = g.value(x);
  const auto rows = xv.rows(), cols = xv.cols();
  auto xhat = std::make_shared<Matrix<T>>(rows, cols);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  Matrix<T> y(rows, cols);
  const auto& gv = g.value(gamma);
  const auto& bv = g.value(beta);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    xhat->row(r) = (xv.row(r).array() - mean) * is;
    y.row(r) = xhat->row(r).cwiseProduct(gv.row(0)) + bv.row(0);
  }
  const bool ng = g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta);
  return g.make(std::move(y), ng, [x, gamma, beta, xhat, inv_std](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    if (g.needs_grad(gamma)) g.grad(gamma) += dy.cwiseProduct(*xhat).colwise().sum();
    if (g.needs_grad(beta)) g.grad(beta) += dy.colwise().sum();
    if (g.needs_grad(x)) {
      auto& dx = g.grad(x);
      const auto& gv = g.value(gamma);
      const T n = static_cast<T>(dy.cols());
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const auto dxhat = dy.row(r).cwiseProduct(gv.row(0));
        const T mean_d = dxhat.sum() / n;
        const T mean_dx = dxhat.cwiseProduct(xhat->row(r)).sum() / n;
        dx.row(r).array() +=
            (*inv_std)[static_cast<std::size_t>(r)] * (dxhat.array() - mean_d - xhat->row(r).array() * mean_dx);
      }
    }
  });
}

/// Multi-head scaled dot-product attention over a fused T x 3D [Q | K | V]
/// input. With `causal`, position i attends to positions <= i only.
template <class T>
Var attention(Graph<T>& g, Var qkv, int heads, bool causal) {
  const auto& in = g.value(qkv);
  const auto rows = in.rows();
  require(in.cols() % 3 == 0, ErrorKind::shape, "attention: input width must be 3*D");
  const Eigen::Index D = in.cols() / 3;
  require(heads > 0 && D % heads == 0, ErrorKind::shape, "attention: D must be divisible by heads");
  const Eigen::Index dh = D / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<Matrix<T>>>(static_cast<std::size_t>(heads));
  Matrix<T> y(rows, D);
  for (int h = 0; h < heads; ++h) {
    const auto q = in.block(0, h * dh, rows, dh);
    const auto k = in.block(0, D + h * dh, rows, dh);
    const auto v = in.block(0, 2 * D + h * dh, rows, dh);
    Matrix<T> s = (q * k.transpose()) * sc;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index valid = causal ? i + 1 : rows;
      const T mx = s.row(i).head(valid).maxCoeff();
      T z = T(0);
      for (Eigen::Index j = 0; j < valid; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        z += s(i, j);
      }
      for (Eigen::Index j = 0; j < valid; ++j) s(i, j) /= z;
      for (Eigen::Index j = valid; j < rows; ++j) s(i, j) = T(0);
    }
    y.block(0, h * dh, rows, dh).noalias() = s * v;
    (*probs)[static_cast<std::size_t>(h)] = std::move(s);
  }
  return g.make(std::move(y), g.needs_grad(qkv), [qkv, heads, D, dh, sc, probs](Graph<T>& g, std::size_t self) {
    const auto& in = g.value(qkv);
    const auto& dy = g.grad(self);
    auto& din = g.grad(qkv);
    const auto rows = in.rows();
    for (int h = 0; h < heads; ++h) {
      const auto& p = (*probs)[static_cast<std::size_t>(h)];
      const auto q = in.block(0, h * dh, rows, dh);
      const auto k = in.block(0, D + h * dh, rows, dh);
      const auto v = in.block(0, 2 * D + h * dh, rows, dh);
      const auto dout = dy.block(0, h * dh, rows, dh);
      din.block(0, 2 * D + h * dh, rows, dh).noalias() += p.transpose() * dout;
      Matrix<T> dp = dout * v.transpose();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
      Matrix<T> ds = p.cwiseProduct(dp.colwise() - rowdot) * sc;
      din.block(0, h * dh, rows, dh).noalias() += ds * k;
      din.block(0, D + h * dh, rows, dh).noalias() += ds.transpose() * q;
    }
  });
}

/// Inverted dropout with a caller-supplied mask draw; identity when rate is 0.
template <class T, class Uniform>
Var dropout(Graph<T>& g, Var x, double rate, Uniform&& uniform01) {
  if (rate <= 0.0) return x;
  const auto& xv = g.value(x);
  auto keep = std::make_shared<Matrix<T>>(xv.rows(), xv.cols());
  const T kept = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < keep->size(); ++i) keep->data()[i] = uniform01() < rate ? T(0) : kept;
  Matrix<T> y = xv.cwiseProduct(*keep);
  return g.make(std::move(y), g.needs_grad(x),
                [x, keep](Graph<T>& g, std::size_t self) { g.grad(x) += g.grad(self).cwiseProduct(*keep); });
}

template <class T>
Var concat_rows(Graph<T>& g, std::span<const Var> parts) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = g.value(parts[0]).cols();
  bool ng = false;
  for (auto p : parts) {
    require(g.value(p).cols() == cols, ErrorKind::shape, "concat_rows: column mismatch");
    rows += g.value(p).rows();
    ng = ng || g.needs_grad(p);
  }
  Matrix<T> y(rows, cols);
  Eigen::Index at = 0;
  for (auto p : parts) {
    y.middleRows(at, g.value(p).rows()) = g.value(p);
    at += g.value(p).rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.make(std::move(y), ng, [saved](Graph<T>& g, std::size_t self) {
    Eigen::Index at = 0;
    for (auto p : saved) {
      const auto n = g.value(p).rows();
      if (g.needs_grad(p)) g.grad(p) += g.grad(self).middleRows(at, n);
      at += n;
    }
  });
}

template <class T>
Var concat_rows(Graph<T>& g, std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return concat_rows(g, std::span<const Var>(v));
}

template <class T>
Var slice_rows(Graph<T>& g, Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= g.value(x).rows(), ErrorKind::shape, "slice_rows out of range");
  Matrix<T> y = g.value(x).middleRows(start, count);
  return g.make(std::move(y), g.needs_grad(x), [x, start, count](Graph<T>& g, std::size_t self) {
    g.grad(x).middleRows(start, count) += g.grad(self);
  });
}

/// Row lookup: y[i] = table[indices[i]]; gradient scatter-adds back.
template <class T>
Var gather_rows(Graph<T>& g, Var table, std::vector<int> indices) {
  const auto& tv = g.value(table);
  Matrix<T> y(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < tv.rows(), ErrorKind::shape,
            "gather_rows: index " + std::to_string(indices[i]) + " outside table of " + std::to_string(tv.rows()));
    y.row(static_cast<Eigen::Index>(i)) = tv.row(indices[i]);
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(indices));
  return g.make(std::move(y), g.needs_grad(table), [table, idx](Graph<T>& g, std::size_t self) {
    auto& dt = g.grad(table);
    const auto& dy = g.grad(self);
    for (std::size_t i = 0; i < idx->size(); ++i) dt.row((*idx)[i]) += dy.row(static_cast<Eigen::Index>(i));
  });
}

/// Mean over components of (pred - target)^2; target is a constant.
template <class T>
Var mse(Graph<T>& g, Var pred, const Matrix<T>& target) {
  const auto& pv = g.value(pred);
  require(pv.rows() == target.rows() && pv.cols() == target.cols(), ErrorKind::shape,
          "mse: prediction " + std::to_string(pv.size()) + " vs target " + std::to_string(target.size()));
  const T n = static_cast<T>(pv.size());
  Matrix<T> y(1, 1);
  y(0, 0) = (pv - target).squaredNorm() / n;
  return g.make(std::move(y), g.needs_grad(pred), [pred, target, n](Graph<T>& g, std::size_t self) {
    g.grad(pred) += (g.value(pred) - target) * (T(2) * g.grad(self)(0, 0) / n);
  });
}

/// Cosine similarity between a 1 x d row and a constant row.
template <class T>
Var cosine(Graph<T>& g, Var a, const Matrix<T>& b) {
  const auto& av = g.value(a);
  require(av.size() == b.size(), ErrorKind::shape, "cosine: length mismatch");
  const T na = av.norm(), nb = b.norm();
  require(na > T(0) && nb > T(0), ErrorKind::invalid_argument, "cosine of a zero-norm vector");
  const T dot = av.cwiseProduct(b).sum();
  Matrix<T> y(1, 1);
  y(0, 0) = dot / (na * nb);
  return g.make(std::move(y), g.needs_grad(a), [a, b, na, nb, dot](Graph<T>& g, std::size_t self) {
    const T gy = g.grad(self)(0, 0);
    g.grad(a) += (b / (na * nb) - g.value(a) * (dot / (na * na * na * nb))) * gy;
  });
}

/// Mean next-token cross-entropy over selected (row, target) pairs of a
/// T x V logit matrix. Rows not selected receive exactly zero gradient.
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::vector<std::pair<int, int>> picks) {
  require(!picks.empty(), ErrorKind::invalid_argument, "cross_entropy: no positions selected");
  const auto& lv = g.value(logits);
  auto soft = std::make_shared<std::vector<Eigen::Matrix<T, 1, Eigen::Dynamic>>>();
  soft->reserve(picks.size());
  T total = T(0);
  for (const auto& [row, target] : picks) {
    require(row >= 0 && row < lv.rows() && target >= 0 && target < lv.cols(), ErrorKind::shape,
            "cross_entropy: pick out of range");
    const auto l = lv.row(row);
    const T mx = l.maxCoeff();
    Eigen::Matrix<T, 1, Eigen::Dynamic> e = (l.array() - mx).exp();
    const T z = e.sum();
    total += std::log(z) + mx - l(target);
    soft->push_back(e / z);
  }
  const T n = static_cast<T>(picks.size());
  Matrix<T> y(1, 1);
  y(0, 0) = total / n;
  auto saved = std::make_shared<std::vector<std::pair<int, int>>>(std::move(picks));
  return g.make(std::move(y), g.needs_grad(logits), [logits, saved, soft, n](Graph<T>& g, std::size_t self) {
    const T gy = g.grad(self)(0, 0) / n;
    auto& dl = g.grad(logits);
    for (std::size_t i = 0; i < saved->size(); ++i) {
      const auto [row, target] = (*saved)[i];
      dl.row(row) += (*soft)[i] * gy;
      dl(row, target) -= gy;
    }
  });
}

}  // namespace voxelbridge::ad
