// SPDX-License-Identifier: Apache-2.0
//
// Layer primitives with hand-written backward passes. Every layer caches what
// its backward pass needs during forward, so a backward call must follow the
// matching forward call on the same instance.
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "drnet/rng.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

enum class Mode { kTrain, kEval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;  // false for running statistics
};

/// Owns every named array of a model. Insertion order is stable and is the
/// order used for serialisation.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Shape shape, bool trainable = true);

  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>& at(const std::string& name);

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  std::vector<Parameter<T>*> trainable();
  std::vector<std::string> names() const;

  /// Learnable scalar count, optionally restricted to names starting with prefix.
  std::size_t count(const std::string& prefix = "") const;

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::map<std::string, Parameter<T>*> by_name_;
};

namespace nn {

template <typename T>
void trunc_normal(Tensor<T>& t, double std, Rng& rng);

/// 2D convolution over (N, C, H, W). A 1D convolution is the H = 1, kh = 1 case.
template <typename T>
class Conv2d {
 public:
  struct Geometry {
    int cin, cout, kh, kw, sh, sw, ph, pw;
  };
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, Geometry g, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients. The input gradient is skipped (empty
  /// result) when `need_dx` is false.
  Tensor<T> backward(const Tensor<T>& dy, bool need_dx = true);

  int out_h(int h) const { return (h + 2 * g_.ph - g_.kh) / g_.sh + 1; }
  int out_w(int w) const { return (w + 2 * g_.pw - g_.kw) / g_.sw + 1; }
  const Geometry& geometry() const { return g_; }

 private:
  void im2col(const T* x, std::size_t n0, std::size_t chunk, int h, int w, int ho, int wo,
              T* col, std::size_t ld = 0) const;
  void col2im(const T* col, std::size_t n0, std::size_t chunk, int h, int w, int ho, int wo,
              T* dx) const;
  std::size_t chunk_size(std::size_t cols_per_sample) const;

  Geometry g_{};
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
  Tensor<T> x_;
};

/// Batch normalisation over axis 1 of an (N, C, ...) tensor.
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int c_ = 0;
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  Parameter<T>* mean_ = nullptr;
  Parameter<T>* var_ = nullptr;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  Mode mode_ = Mode::kEval;
};

/// Layer normalisation over the last axis.
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, int dim);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  static constexpr double kEps = 1e-5;

 private:
  int d_ = 0;
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

/// y = x W^T + b over the last axis; W is (out, in).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  Parameter<T>& weight() { return *weight_; }
  Parameter<T>& bias() { return *bias_; }

 private:
  int in_ = 0, out_ = 0;
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
  Tensor<T> x_;
};

template <typename T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> y_;
};

template <typename T>
class Elu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> y_;
};

/// Exact (erf) GELU.
template <typename T>
class Gelu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> x_;
};

template <typename T>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double p) : p_(p) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  double p_ = 0.0;
  std::vector<T> mask_;  // empty when the layer acted as identity
};

/// Max pooling over the last two axes of (N, C, H, W); no padding; ties pick
/// the first element in row-major window order.
template <typename T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(int kh, int kw, int sh, int sw) : kh_(kh), kw_(kw), sh_(sh), sw_(sw) {}

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  int kh_ = 2, kw_ = 2, sh_ = 2, sw_ = 2;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Adaptive average pooling of the last axis to a fixed length.
template <typename T>
class AdaptiveAvgPool1d {
 public:
  AdaptiveAvgPool1d() = default;
  explicit AdaptiveAvgPool1d(int out) : out_(out) {}

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  int out_ = 16;
  Shape in_shape_;
};

/// Multi-head self-attention over (N, T, d) with a fused QKV projection.
template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamStore<T>& store, const std::string& name, int dim, int heads,
                         Rng& rng);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  /// Softmax weights of the last forward call, shape (N, heads, T, T).
  const Tensor<T>& attention() const { return probs_; }

 private:
  int d_ = 0, h_ = 0;
  Linear<T> qkv_;
  Linear<T> proj_;
  Tensor<T> qkv_out_;  // (N, T, 3d)
  Tensor<T> probs_;
};

/// Adds `src` into `dst` elementwise.
template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src);

}  // namespace nn
}  // namespace drnet
