// SPDX-License-Identifier: Apache-2.0
#include "drnet/optim.hpp"

#include <cmath>

namespace drnet {

template <typename T>
Adam<T>::Adam(ParamStore<T>& store, const TrainConfig& cfg)
    : lr_(cfg.learning_rate), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps),
      wd_(cfg.weight_decay), decoupled_(cfg.decoupled_weight_decay) {
  for (auto* p : store.trainable())
    slots_.push_back({p, Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())});
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, double(t_));
  const double c2 = 1.0 - std::pow(b2_, double(t_));
  const T b1 = T(b1_), b2 = T(b2_), ob1 = T(1 - b1_), ob2 = T(1 - b2_);
  const T step = T(lr_ / c1);
  const T inv_sqrt_c2 = T(1.0 / std::sqrt(c2));
  const T eps = T(eps_), wd = T(wd_), decay = T(1.0 - lr_ * wd_);
  for (auto& s : slots_) {
    T* w = s.param->value.data();
    const T* g = s.param->grad.data();
    T* m = s.m.data();
    T* v = s.v.data();
    const std::size_t n = s.param->value.size();
    for (std::size_t i = 0; i < n; ++i) {
      T gi = g[i];
      if (decoupled_) w[i] *= decay;
      else gi += wd * w[i];
      m[i] = b1 * m[i] + ob1 * gi;
      v[i] = b2 * v[i] + ob2 * gi * gi;
      w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace drnet
