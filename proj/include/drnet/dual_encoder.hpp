// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drnet/config.hpp"
#include "drnet/nn.hpp"

namespace drnet {

/// Residual block of the convolutional stream:
///   branch   = ReLU(BN(conv2(ReLU(BN(conv1(x))))))   both convs stride 2
///   shortcut = [1x1 projection](maxpool(maxpool(x)))
///   out      = branch + shortcut
template <typename T>
class ConvResBlock {
 public:
  ConvResBlock() = default;
  ConvResBlock(ParamStore<T>& store, const std::string& name, int cin, int mid, int cout,
               int kernel, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);

  /// Intermediate activations of the last forward, keyed by local name
  /// ("conv1", "conv2", "out").
  const Tensor<T>& activation(const std::string& local) const;

 private:
  nn::Conv2d<T> conv1_, conv2_;
  nn::BatchNorm<T> bn1_, bn2_;
  nn::Relu<T> relu1_, relu2_;
  nn::MaxPool2d<T> pool1_, pool2_;
  std::optional<nn::Conv2d<T>> proj_;
  Tensor<T> conv1_out_, conv2_out_, out_;
};

/// Local-feature stream: two ConvResBlocks, flattened channel-major to (N, d).
template <typename T>
class CnnStream {
 public:
  CnnStream() = default;
  CnnStream(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  Tensor<T> forward(const Tensor<T>& panels, Mode mode);
  /// Returns the panel gradient only when `need_dx` is set.
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);

  /// Valid names for feature_map().
  static std::vector<std::string> layer_names();
  /// Activation (N, C, H, W) recorded at `layer` during the last forward.
  const Tensor<T>& feature_map(const std::string& layer) const;

 private:
  ModelConfig cfg_;
  ConvResBlock<T> block1_, block2_;
};

/// Pre-norm transformer encoder block with GELU feed-forward.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParamStore<T>& store, const std::string& name, int dim, int heads,
                   int mlp_ratio, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  const Tensor<T>& attention() const { return attn_.attention(); }

 private:
  nn::LayerNorm<T> norm1_, norm2_;
  nn::MultiHeadSelfAttention<T> attn_;
  nn::Linear<T> fc1_, fc2_;
  nn::Gelu<T> gelu_;
};

/// Spatial-attention stream: patch embedding, learned 1D positional table,
/// encoder blocks, mean over tokens. No class token.
template <typename T>
class VitStream {
 public:
  VitStream() = default;
  VitStream(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng);

  Tensor<T> forward(const Tensor<T>& panels, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);

  /// Attention of the last forward: (depth, N, heads, T, T) flattened per layer.
  std::vector<const Tensor<T>*> attention() const;

 private:
  ModelConfig cfg_;
  nn::Conv2d<T> patch_;
  Parameter<T>* pos_ = nullptr;
  std::vector<TransformerBlock<T>> blocks_;
};

}  // namespace drnet
