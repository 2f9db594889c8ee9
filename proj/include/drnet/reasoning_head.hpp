// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "drnet/config.hpp"
#include "drnet/nn.hpp"

namespace drnet {

inline constexpr int kPanels = 16;
inline constexpr int kContext = 8;
inline constexpr int kCandidates = 8;
inline constexpr int kRuleLength = 16;
inline constexpr int kRuleDim = 1024;

/// Merges the two per-panel streams. With one stream disabled the operator
/// is the identity on the enabled stream and owns no parameters.
template <typename T>
class Fusion {
 public:
  Fusion() = default;
  Fusion(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  /// `cnn` or `vit` may be empty when that stream is disabled. Output (N, d).
  Tensor<T> forward(const Tensor<T>& cnn, const Tensor<T>& vit);
  /// Returns (d_cnn, d_vit); an entry is empty when its stream is disabled.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy);

  /// Effective AUT-family weights after normalisation.
  std::pair<T, T> effective_weights() const;

 private:
  FusionOp op_ = FusionOp::kLin;
  bool use_cnn_ = true, use_vit_ = true;
  int d_ = 0;
  Parameter<T>* w_ = nullptr;  // AUT family: (2)
  nn::Linear<T> lin_;
  Tensor<T> u_, v_;
};

/// (B*16, d) fused panels -> (B*8, 9, d): group i is [context 0..7, candidate i].
template <typename T>
Tensor<T> group_candidates(const Tensor<T>& fused);
/// Adjoint of group_candidates: (B*8, 9, d) -> (B*16, d).
template <typename T>
Tensor<T> ungroup_candidates(const Tensor<T>& grouped);

/// Two 1D residual blocks over 9-channel, d-length sequences, then adaptive
/// average pooling to 16 and flattening to 1024.
template <typename T>
class RuleExtractor {
 public:
  RuleExtractor() = default;
  RuleExtractor(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  /// (M, 9, d) -> (M, 1024)
  Tensor<T> forward(const Tensor<T>& groups, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  struct Block {
    nn::Conv2d<T> conv1, conv2, shortcut;
    nn::BatchNorm<T> bn1, bn2;
    nn::Relu<T> relu1, relu2;
  };
  Tensor<T> block_forward(Block& b, const Tensor<T>& x, Mode mode);
  Tensor<T> block_backward(Block& b, const Tensor<T>& dy);

  int d_ = 0;
  Block b1_, b2_;
  nn::MaxPool2d<T> pool_{1, 4, 1, 4};
  nn::AdaptiveAvgPool1d<T> adapt_{kRuleLength};
};

/// Per-candidate MLP: linear -> ELU -> BN -> dropout between linears.
template <typename T>
class Classifier {
 public:
  Classifier() = default;
  Classifier(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  /// (M, 1024) -> (M)
  Tensor<T> forward(const Tensor<T>& rules, Mode mode, Rng& dropout_rng);
  Tensor<T> backward(const Tensor<T>& dy);

 private:
  std::vector<nn::Linear<T>> fc_;
  std::vector<nn::Elu<T>> elu_;
  std::vector<nn::BatchNorm<T>> bn_;
  std::vector<nn::Dropout<T>> drop_;
};

/// Argmax per row of (B, 8) scores; ties resolve to the lowest index.
/// Throws NumericError on NaN.
template <typename T>
std::vector<int> predict(const Tensor<T>& scores);

}  // namespace drnet
