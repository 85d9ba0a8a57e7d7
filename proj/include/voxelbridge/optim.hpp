#pragma once

#include <cmath>
#include <vector>

#include "voxelbridge/autograd.hpp"

namespace voxelbridge {

/// Adam over the trainable parameters of a ParamStore.
template <class T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ad::ParamStore<T>& store) {
    if (m_.size() != store.size()) {
      m_.assign(store.size(), {});
      v_.assign(store.size(), {});
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T step = static_cast<T>(lr_ / bc1);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      if (!p.trainable) continue;
      if (m_[i].size() == 0) {
        m_[i].setZero(p.value.rows(), p.value.cols());
        v_[i].setZero(p.value.rows(), p.value.cols());
      }
      m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      const T eps = static_cast<T>(eps_);
      p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() * denom_scale + eps);
    }
  }

  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<ad::Matrix<T>> m_;
  std::vector<ad::Matrix<T>> v_;
};

}  // namespace voxelbridge
