// SPDX-License-Identifier: Apache-2.0
#include "drnet/reasoning_head.hpp"

#include <cmath>

namespace drnet {

// ---------------------------------------------------------------------------
// Fusion

template <typename T>
Fusion<T>::Fusion(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng)
    : op_(cfg.fusion_op), use_cnn_(cfg.enable_cnn), use_vit_(cfg.enable_vit), d_(cfg.embed_dim) {
  if (!(use_cnn_ && use_vit_)) return;
  switch (op_) {
    case FusionOp::kAut:
    case FusionOp::kAutL1:
    case FusionOp::kAutL2:
      w_ = &store.add("fusion.weight", {2});
      w_->value.fill(T(0.5));
      break;
    case FusionOp::kLin:
      lin_ = nn::Linear<T>(store, "fusion.linear", 2 * d_, d_, rng);
      break;
    default:
      break;
  }
}

template <typename T>
std::pair<T, T> Fusion<T>::effective_weights() const {
  if (!w_) return {T{1}, T{1}};
  const T a = w_->value[0], b = w_->value[1];
  if (op_ == FusionOp::kAutL1) {
    const T s = std::abs(a) + std::abs(b);
    return {a / s, b / s};
  }
  if (op_ == FusionOp::kAutL2) {
    const T s = std::sqrt(a * a + b * b);
    return {a / s, b / s};
  }
  return {a, b};
}

template <typename T>
Tensor<T> Fusion<T>::forward(const Tensor<T>& cnn, const Tensor<T>& vit) {
  if (!use_vit_) return cnn;
  if (!use_cnn_) return vit;
  if (cnn.shape() != vit.shape() || cnn.rank() != 2 || cnn.dim(1) != std::size_t(d_))
    throw ConfigError("fusion: stream shapes " + shape_str(cnn.shape()) + " and " +
                      shape_str(vit.shape()) + " must both be (N, " + std::to_string(d_) + ")");
  u_ = cnn;
  v_ = vit;
  const std::size_t n = cnn.dim(0);
  Tensor<T> y(cnn.shape());
  switch (op_) {
    case FusionOp::kSum:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = cnn[i] + vit[i];
      break;
    case FusionOp::kMea:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = (cnn[i] + vit[i]) / T{2};
      break;
    case FusionOp::kAut:
    case FusionOp::kAutL1:
    case FusionOp::kAutL2: {
      if (op_ != FusionOp::kAut && w_->value[0] == T{0} && w_->value[1] == T{0})
        throw NumericError("fusion: normalised AUT weights are both zero");
      const auto [a, b] = effective_weights();
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = a * cnn[i] + b * vit[i];
      break;
    }
    case FusionOp::kLin: {
      Tensor<T> cat({n, std::size_t(2 * d_)});
      for (std::size_t r = 0; r < n; ++r)
        for (int j = 0; j < d_; ++j) {
          cat[r * 2 * d_ + j] = cnn[r * d_ + j];
          cat[r * 2 * d_ + d_ + j] = vit[r * d_ + j];
        }
      y = lin_.forward(cat);
      break;
    }
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Fusion<T>::backward(const Tensor<T>& dy) {
  if (!use_vit_) return {dy, Tensor<T>{}};
  if (!use_cnn_) return {Tensor<T>{}, dy};
  Tensor<T> du(dy.shape()), dv(dy.shape());
  switch (op_) {
    case FusionOp::kSum:
      du = dy;
      dv = dy;
      break;
    case FusionOp::kMea:
      for (std::size_t i = 0; i < dy.size(); ++i) du[i] = dv[i] = dy[i] / T{2};
      break;
    case FusionOp::kAut:
    case FusionOp::kAutL1:
    case FusionOp::kAutL2: {
      const auto [a, b] = effective_weights();
      double ga = 0, gb = 0;  // dL / d(effective weight)
      for (std::size_t i = 0; i < dy.size(); ++i) {
        du[i] = a * dy[i];
        dv[i] = b * dy[i];
        ga += double(dy[i]) * u_[i];
        gb += double(dy[i]) * v_[i];
      }
      const double w1 = w_->value[0], w2 = w_->value[1];
      double g1 = ga, g2 = gb;
      if (op_ == FusionOp::kAutL1) {
        const double s = std::abs(w1) + std::abs(w2);
        const double s1 = w1 > 0 ? 1.0 : (w1 < 0 ? -1.0 : 0.0);
        const double s2 = w2 > 0 ? 1.0 : (w2 < 0 ? -1.0 : 0.0);
        const double dot = ga * w1 + gb * w2;
        g1 = ga / s - dot * s1 / (s * s);
        g2 = gb / s - dot * s2 / (s * s);
      } else if (op_ == FusionOp::kAutL2) {
        const double n = std::sqrt(w1 * w1 + w2 * w2);
        const double dot = ga * w1 + gb * w2;
        g1 = ga / n - dot * w1 / (n * n * n);
        g2 = gb / n - dot * w2 / (n * n * n);
      }
      w_->grad[0] += static_cast<T>(g1);
      w_->grad[1] += static_cast<T>(g2);
      break;
    }
    case FusionOp::kLin: {
      Tensor<T> dcat = lin_.backward(dy);
      const std::size_t n = dy.dim(0);
      for (std::size_t r = 0; r < n; ++r)
        for (int j = 0; j < d_; ++j) {
          du[r * d_ + j] = dcat[r * 2 * d_ + j];
          dv[r * d_ + j] = dcat[r * 2 * d_ + d_ + j];
        }
      break;
    }
  }
  return {std::move(du), std::move(dv)};
}

// ---------------------------------------------------------------------------
// Candidate grouping

template <typename T>
Tensor<T> group_candidates(const Tensor<T>& fused) {
  if (fused.rank() != 2 || fused.dim(0) % kPanels != 0)
    throw ConfigError("group_candidates: expected (B*16, d), got " + shape_str(fused.shape()));
  const std::size_t b = fused.dim(0) / kPanels, d = fused.dim(1);
  Tensor<T> g({b * kCandidates, kContext + 1, d});
  for (std::size_t p = 0; p < b; ++p)
    for (int i = 0; i < kCandidates; ++i) {
      T* dst = g.data() + (p * kCandidates + i) * (kContext + 1) * d;
      for (int r = 0; r < kContext; ++r)
        std::copy_n(fused.data() + (p * kPanels + r) * d, d, dst + r * d);
      std::copy_n(fused.data() + (p * kPanels + kContext + i) * d, d, dst + kContext * d);
    }
  return g;
}

template <typename T>
Tensor<T> ungroup_candidates(const Tensor<T>& grouped) {
  const std::size_t b = grouped.dim(0) / kCandidates, d = grouped.dim(2);
  Tensor<T> f({b * kPanels, d});
  for (std::size_t p = 0; p < b; ++p)
    for (int i = 0; i < kCandidates; ++i) {
      const T* src = grouped.data() + (p * kCandidates + i) * (kContext + 1) * d;
      for (int r = 0; r < kContext; ++r) {
        T* dst = f.data() + (p * kPanels + r) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[r * d + j];
      }
      T* dst = f.data() + (p * kPanels + kContext + i) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[kContext * d + j];
    }
  return f;
}

// ---------------------------------------------------------------------------
// RuleExtractor

template <typename T>
RuleExtractor<T>::RuleExtractor(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng)
    : d_(cfg.embed_dim) {
  using G = typename nn::Conv2d<T>::Geometry;
  const int k = cfg.rule_kernel, p = k / 2;
  const auto& f = cfg.rule_filters;
  const int in = kContext + 1;
  b1_.conv1 = nn::Conv2d<T>(store, "rule.block1.conv1", G{in, f[0], 1, k, 1, 1, 0, p}, rng);
  b1_.bn1 = nn::BatchNorm<T>(store, "rule.block1.bn1", f[0]);
  b1_.conv2 = nn::Conv2d<T>(store, "rule.block1.conv2", G{f[0], f[1], 1, k, 1, 1, 0, p}, rng);
  b1_.bn2 = nn::BatchNorm<T>(store, "rule.block1.bn2", f[1]);
  b1_.shortcut = nn::Conv2d<T>(store, "rule.block1.shortcut", G{in, f[1], 1, 1, 1, 1, 0, 0}, rng);
  b2_.conv1 = nn::Conv2d<T>(store, "rule.block2.conv1", G{f[1], f[2], 1, k, 1, 1, 0, p}, rng);
  b2_.bn1 = nn::BatchNorm<T>(store, "rule.block2.bn1", f[2]);
  b2_.conv2 = nn::Conv2d<T>(store, "rule.block2.conv2", G{f[2], f[3], 1, k, 1, 1, 0, p}, rng);
  b2_.bn2 = nn::BatchNorm<T>(store, "rule.block2.bn2", f[3]);
  b2_.shortcut = nn::Conv2d<T>(store, "rule.block2.shortcut", G{f[1], f[3], 1, 1, 1, 1, 0, 0}, rng);
}

template <typename T>
Tensor<T> RuleExtractor<T>::block_forward(Block& b, const Tensor<T>& x, Mode mode) {
  Tensor<T> h = b.relu1.forward(b.bn1.forward(b.conv1.forward(x), mode));
  Tensor<T> out = b.relu2.forward(b.bn2.forward(b.conv2.forward(h), mode));
  nn::add_inplace(out, b.shortcut.forward(x));
  return out;
}

template <typename T>
Tensor<T> RuleExtractor<T>::block_backward(Block& b, const Tensor<T>& dy) {
  Tensor<T> dx = b.shortcut.backward(dy);
  Tensor<T> dh = b.conv2.backward(b.bn2.backward(b.relu2.backward(dy)));
  nn::add_inplace(dx, b.conv1.backward(b.bn1.backward(b.relu1.backward(dh))));
  return dx;
}

template <typename T>
Tensor<T> RuleExtractor<T>::forward(const Tensor<T>& groups, Mode mode) {
  if (groups.rank() != 3 || groups.dim(1) != std::size_t(kContext + 1) ||
      groups.dim(2) != std::size_t(d_))
    throw ConfigError("rule extractor: expected (M, 9, " + std::to_string(d_) + "), got " +
                      shape_str(groups.shape()));
  const std::size_t m = groups.dim(0);
  Tensor<T> x = groups.reshaped({m, std::size_t(kContext + 1), 1, std::size_t(d_)});
  Tensor<T> h = pool_.forward(block_forward(b1_, x, mode));
  if (!all_finite(h)) throw NumericError("non-finite activation in rule.block1");
  Tensor<T> o = block_forward(b2_, h, mode);
  if (!all_finite(o)) throw NumericError("non-finite activation in rule.block2");
  o.reshape({m, o.dim(1), o.dim(3)});
  Tensor<T> r = adapt_.forward(o);
  r.reshape({m, std::size_t(kRuleDim)});
  return r;
}

template <typename T>
Tensor<T> RuleExtractor<T>::backward(const Tensor<T>& dy) {
  const std::size_t m = dy.dim(0);
  Tensor<T> g = dy.reshaped({m, std::size_t(kRuleDim / kRuleLength), std::size_t(kRuleLength)});
  g = adapt_.backward(g);
  g.reshape({m, g.dim(1), 1, g.dim(2)});
  g = pool_.backward(block_backward(b2_, g));
  g = block_backward(b1_, g);
  g.reshape({m, std::size_t(kContext + 1), std::size_t(d_)});
  return g;
}

// ---------------------------------------------------------------------------
// Classifier

template <typename T>
Classifier<T>::Classifier(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  int in = kRuleDim;
  const std::size_t layers = cfg.classifier_dims.size();
  fc_.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    const int out = cfg.classifier_dims[i];
    const std::string idx = std::to_string(i + 1);
    fc_.emplace_back(store, "classifier.fc" + idx, in, out, rng);
    if (i + 1 < layers) {
      elu_.emplace_back();
      bn_.emplace_back(store, "classifier.bn" + idx, out);
      drop_.emplace_back(cfg.dropout);
    }
    in = out;
  }
}

template <typename T>
Tensor<T> Classifier<T>::forward(const Tensor<T>& rules, Mode mode, Rng& dropout_rng) {
  Tensor<T> h = rules;
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    h = fc_[i].forward(h);
    if (i < bn_.size())
      h = drop_[i].forward(bn_[i].forward(elu_[i].forward(h), mode), mode, dropout_rng);
  }
  if (!all_finite(h)) throw NumericError("non-finite activation in classifier");
  h.reshape({h.dim(0)});
  return h;
}

template <typename T>
Tensor<T> Classifier<T>::backward(const Tensor<T>& dy) {
  Tensor<T> g = dy.reshaped({dy.dim(0), 1});
  for (std::size_t i = fc_.size(); i-- > 0;) {
    if (i < bn_.size()) g = elu_[i].backward(bn_[i].backward(drop_[i].backward(g)));
    g = fc_[i].backward(g);
  }
  return g;
}

template <typename T>
std::vector<int> predict(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw ConfigError("predict: expected (B, 8) scores");
  const std::size_t b = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    int best = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const T v = scores[i * k + j];
      if (std::isnan(v))
        throw NumericError("NaN score for problem " + std::to_string(i) + ", candidate " +
                           std::to_string(j));
      if (v > scores[i * k + best]) best = int(j);
    }
    out[i] = best;
  }
  return out;
}

template class Fusion<float>;
template class Fusion<double>;
template Tensor<float> group_candidates(const Tensor<float>&);
template Tensor<double> group_candidates(const Tensor<double>&);
template Tensor<float> ungroup_candidates(const Tensor<float>&);
template Tensor<double> ungroup_candidates(const Tensor<double>&);
template class RuleExtractor<float>;
template class RuleExtractor<double>;
template class Classifier<float>;
template class Classifier<double>;
template std::vector<int> predict(const Tensor<float>&);
template std::vector<int> predict(const Tensor<double>&);

}  // namespace drnet
