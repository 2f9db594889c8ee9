// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drnet/config.hpp"
#include "drnet/dual_encoder.hpp"
#include "drnet/nn.hpp"
#include "drnet/reasoning_head.hpp"

namespace drnet {

/// Per-module learnable parameter counts.
struct ParamCounts {
  std::size_t cnn = 0, vit = 0, fusion = 0, rule = 0, classifier = 0;
  std::size_t total() const { return cnn + vit + fusion + rule + classifier; }
};

/// Full pipeline: dual encoder -> fusion -> candidate grouping -> rule
/// extractor -> classifier. Not thread-safe: forward() caches activations for
/// backward(). Concurrent eval needs one instance per thread (copy).
template <typename T>
class DrNet {
 public:
  explicit DrNet(const ModelConfig& cfg, std::uint64_t seed = 0);
  DrNet(const DrNet& other);
  DrNet& operator=(const DrNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  ParamCounts param_counts() const;

  /// panels: (B, 16, S, S) in [0, 1]. Returns scores (B, 8).
  Tensor<T> forward(const Tensor<T>& panels, Mode mode);
  /// Accumulates parameter gradients for dL/dscores.
  void backward(const Tensor<T>& dscores);

  /// Re-seeds the dropout stream; forward in train mode is then reproducible.
  void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  // Intermediates of the last forward call.
  const Tensor<T>& cnn_embedding() const { return cnn_out_; }  // (B*16, d) or empty
  const Tensor<T>& vit_embedding() const { return vit_out_; }  // (B*16, d) or empty
  const Tensor<T>& fused() const { return fused_; }            // (B*16, d)
  const Tensor<T>& rule_embedding() const { return rules_; }   // (B*8, 1024)

  bool has_cnn() const { return cnn_.has_value(); }
  bool has_vit() const { return vit_.has_value(); }
  const CnnStream<T>& cnn() const { return *cnn_; }
  const VitStream<T>& vit() const { return *vit_; }
  Fusion<T>& fusion() { return fusion_; }

  /// Encode panels (N, 1, S, S) with the given stream only.
  Tensor<T> cnn_forward(const Tensor<T>& panels, Mode mode) { return cnn_->forward(panels, mode); }
  Tensor<T> vit_forward(const Tensor<T>& panels, Mode mode) { return vit_->forward(panels, mode); }

 private:
  void build(std::uint64_t seed);

  ModelConfig cfg_;
  ParamStore<T> store_;
  Rng dropout_rng_;
  std::optional<CnnStream<T>> cnn_;
  std::optional<VitStream<T>> vit_;
  Fusion<T> fusion_;
  RuleExtractor<T> rule_;
  Classifier<T> classifier_;
  std::size_t batch_ = 0;
  Tensor<T> cnn_out_, vit_out_, fused_, rules_;
};

/// Attention of the last ViT forward, reshaped to (depth, N, heads, T, T).
template <typename T>
Tensor<T> attention_weights(const DrNet<T>& model);

/// Mean softmax cross-entropy over candidate scores. Writes dL/dscores into
/// `grad` when non-null.
template <typename T>
double cross_entropy(const Tensor<T>& scores, const std::vector<int>& targets,
                     Tensor<T>* grad = nullptr);

}  // namespace drnet
