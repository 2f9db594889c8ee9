// SPDX-License-Identifier: Apache-2.0
#include "drnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drnet/blas.hpp"

namespace drnet {

// ---------------------------------------------------------------------------
// ParamStore

template <typename T>
Parameter<T>& ParamStore<T>::add(const std::string& name, Shape shape, bool trainable) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = Tensor<T>(shape);
  if (trainable) p->grad = Tensor<T>(shape);
  p->trainable = trainable;
  Parameter<T>& ref = *p;
  by_name_[name] = p.get();
  items_.push_back(std::move(p));
  return ref;
}

template <typename T>
Parameter<T>* ParamStore<T>::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <typename T>
const Parameter<T>* ParamStore<T>::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

template <typename T>
Parameter<T>& ParamStore<T>::at(const std::string& name) {
  auto* p = find(name);
  if (!p) throw ConfigError("no parameter named " + name);
  return *p;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParamStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : items_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::trainable() {
  std::vector<Parameter<T>*> out;
  for (auto& p : items_)
    if (p->trainable) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  for (const auto& p : items_) out.push_back(p->name);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (p->trainable && p->name.rfind(prefix, 0) == 0) n += p->value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : items_)
    if (p->trainable) p->grad.zero();
}

namespace nn {

template <typename T>
void trunc_normal(Tensor<T>& t, double std, Rng& rng) {
  for (auto& v : t.vec()) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(z * std);
  }
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.size() != src.size())
    throw ConfigError("add: shape " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, Geometry g, Rng& rng) : g_(g) {
  weight_ = &store.add(name + ".weight", {std::size_t(g.cout), std::size_t(g.cin),
                                          std::size_t(g.kh), std::size_t(g.kw)});
  bias_ = &store.add(name + ".bias", {std::size_t(g.cout)});
  // Kaiming normal, fan-out mode.
  const double std = std::sqrt(2.0 / (double(g.cout) * g.kh * g.kw));
  for (auto& v : weight_->value.vec()) v = static_cast<T>(rng.normal() * std);
}

template <typename T>
std::size_t Conv2d<T>::chunk_size(std::size_t cols_per_sample) const {
  constexpr std::size_t kBudget = std::size_t{1} << 22;  // elements in the column buffer
  const std::size_t rows = std::size_t(g_.cin) * g_.kh * g_.kw;
  return std::max<std::size_t>(1, kBudget / std::max<std::size_t>(1, rows * cols_per_sample));
}

template <typename T>
void Conv2d<T>::im2col(const T* x, std::size_t n0, std::size_t chunk, int h, int w, int ho,
                       int wo, T* col, std::size_t ld) const {
  const std::size_t hw_out = std::size_t(ho) * wo;
  const std::size_t ncols = chunk * hw_out;
  if (ld == 0) ld = ncols;
  std::size_t row = 0;
  for (int c = 0; c < g_.cin; ++c) {
    for (int ki = 0; ki < g_.kh; ++ki) {
      for (int kj = 0; kj < g_.kw; ++kj, ++row) {
        T* dst = col + row * ld;
        std::fill(dst + ncols, dst + ld, T{0});
        for (std::size_t s = 0; s < chunk; ++s) {
          const T* src = x + ((n0 + s) * g_.cin + c) * std::size_t(h) * w;
          T* d = dst + s * hw_out;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * g_.sh - g_.ph + ki;
            T* drow = d + std::size_t(oh) * wo;
            if (ih < 0 || ih >= h) {
              std::fill(drow, drow + wo, T{0});
              continue;
            }
            const T* srow = src + std::size_t(ih) * w;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * g_.sw - g_.pw + kj;
              drow[ow] = (iw >= 0 && iw < w) ? srow[iw] : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, std::size_t n0, std::size_t chunk, int h, int w, int ho,
                       int wo, T* dx) const {
  const std::size_t hw_out = std::size_t(ho) * wo;
  const std::size_t ncols = chunk * hw_out;
  std::size_t row = 0;
  for (int c = 0; c < g_.cin; ++c) {
    for (int ki = 0; ki < g_.kh; ++ki) {
      for (int kj = 0; kj < g_.kw; ++kj, ++row) {
        const T* src = col + row * ncols;
        for (std::size_t s = 0; s < chunk; ++s) {
          T* dst = dx + ((n0 + s) * g_.cin + c) * std::size_t(h) * w;
          const T* sc = src + s * hw_out;
          for (int oh = 0; oh < ho; ++oh) {
            const int ih = oh * g_.sh - g_.ph + ki;
            if (ih < 0 || ih >= h) continue;
            T* drow = dst + std::size_t(ih) * w;
            const T* srow = sc + std::size_t(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) {
              const int iw = ow * g_.sw - g_.pw + kj;
              if (iw >= 0 && iw < w) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != std::size_t(g_.cin))
    throw ConfigError("conv: expected (N, " + std::to_string(g_.cin) + ", H, W), got " +
                      shape_str(x.shape()));
  x_ = x;
  const std::size_t n = x.dim(0);
  const int h = int(x.dim(2)), w = int(x.dim(3));
  const int ho = out_h(h), wo = out_w(w);
  const std::size_t hw_out = std::size_t(ho) * wo;
  const std::size_t rows = std::size_t(g_.cin) * g_.kh * g_.kw;
  Tensor<T> y({n, std::size_t(g_.cout), std::size_t(ho), std::size_t(wo)});
  const std::size_t chunk = chunk_size(hw_out);
  // Columns are padded to the batch block so that a panel's output bits do
  // not depend on its position in the batch (see blas::BatchAxis).
  const std::size_t max_ld = blas::batch_padded(std::min(chunk, n) * hw_out);
  std::vector<T> col(rows * max_ld);
  std::vector<T> out(std::size_t(g_.cout) * max_ld);
  const T* b = bias_->value.data();
  for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
    const std::size_t cn = std::min(chunk, n - n0);
    const std::size_t ld = blas::batch_padded(cn * hw_out);
    im2col(x.data(), n0, cn, h, w, ho, wo, col.data(), ld);
    blas::gemm<T>(false, false, g_.cout, ld, rows, T{1}, weight_->value.data(), rows, col.data(),
                  ld, T{0}, out.data(), ld);
    for (std::size_t s = 0; s < cn; ++s)
      for (int co = 0; co < g_.cout; ++co) {
        const T* src = out.data() + std::size_t(co) * ld + s * hw_out;
        T* dst = y.data() + ((n0 + s) * g_.cout + co) * hw_out;
        for (std::size_t i = 0; i < hw_out; ++i) dst[i] = src[i] + b[co];
      }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_dx) {
  const std::size_t n = x_.dim(0);
  const int h = int(x_.dim(2)), w = int(x_.dim(3));
  const int ho = out_h(h), wo = out_w(w);
  const std::size_t hw_out = std::size_t(ho) * wo;
  const std::size_t rows = std::size_t(g_.cin) * g_.kh * g_.kw;
  Tensor<T> dx;
  if (need_dx) dx.resize(x_.shape());
  const std::size_t chunk = chunk_size(hw_out);
  std::vector<T> col(rows * std::min(chunk, n) * hw_out);
  std::vector<T> dout(std::size_t(g_.cout) * std::min(chunk, n) * hw_out);
  T* db = bias_->grad.data();
  for (std::size_t n0 = 0; n0 < n; n0 += chunk) {
    const std::size_t cn = std::min(chunk, n - n0);
    const std::size_t ncols = cn * hw_out;
    for (std::size_t s = 0; s < cn; ++s)
      for (int co = 0; co < g_.cout; ++co) {
        const T* src = dy.data() + ((n0 + s) * g_.cout + co) * hw_out;
        T* dst = dout.data() + std::size_t(co) * ncols + s * hw_out;
        T acc{0};
        for (std::size_t i = 0; i < hw_out; ++i) {
          dst[i] = src[i];
          acc += src[i];
        }
        db[co] += acc;
      }
    im2col(x_.data(), n0, cn, h, w, ho, wo, col.data());
    blas::gemm<T>(false, true, g_.cout, rows, ncols, T{1}, dout.data(), ncols, col.data(), ncols,
                  T{1}, weight_->grad.data(), rows);
    if (!need_dx) continue;
    blas::gemm<T>(true, false, rows, ncols, g_.cout, T{1}, weight_->value.data(), rows,
                  dout.data(), ncols, T{0}, col.data(), ncols);
    col2im(col.data(), n0, cn, h, w, ho, wo, dx.data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(ParamStore<T>& store, const std::string& name, int channels)
    : c_(channels) {
  const Shape s{std::size_t(channels)};
  gamma_ = &store.add(name + ".weight", s);
  beta_ = &store.add(name + ".bias", s);
  mean_ = &store.add(name + ".running_mean", s, false);
  var_ = &store.add(name + ".running_var", s, false);
  gamma_->value.fill(T{1});
  var_->value.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() < 2 || x.dim(1) != std::size_t(c_))
    throw ConfigError("batchnorm: expected channel axis of size " + std::to_string(c_) +
                      ", got " + shape_str(x.shape()));
  mode_ = mode;
  const std::size_t n = x.dim(0);
  const std::size_t spatial = x.size() / (n * c_);
  const std::size_t m = n * spatial;
  Tensor<T> y(x.shape());
  xhat_.resize(x.shape());
  inv_std_.assign(c_, T{0});
  for (int c = 0; c < c_; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double s = 0, ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c_ + c) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) s += p[j];
      }
      mean = s / double(m);
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.data() + (i * c_ + c) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) {
          const double d = p[j] - mean;
          ss += d * d;
        }
      }
      var = ss / double(m);
      const double unbiased = m > 1 ? ss / double(m - 1) : var;
      mean_->value[c] = static_cast<T>((1 - kMomentum) * mean_->value[c] + kMomentum * mean);
      var_->value[c] = static_cast<T>((1 - kMomentum) * var_->value[c] + kMomentum * unbiased);
    } else {
      mean = mean_->value[c];
      var = var_->value[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
    const T mu = static_cast<T>(mean);
    inv_std_[c] = inv;
    const T g = gamma_->value[c], b = beta_->value[c];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c_ + c) * spatial;
      const T* p = x.data() + off;
      T* xh = xhat_.data() + off;
      T* q = y.data() + off;
      for (std::size_t j = 0; j < spatial; ++j) {
        xh[j] = (p[j] - mu) * inv;
        q[j] = g * xh[j] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy) {
  const std::size_t n = dy.dim(0);
  const std::size_t spatial = dy.size() / (n * c_);
  const double m = double(n * spatial);
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < c_; ++c) {
    double sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c_ + c) * spatial;
      for (std::size_t j = 0; j < spatial; ++j) {
        sum_dy += dy[off + j];
        sum_dy_xh += double(dy[off + j]) * xhat_[off + j];
      }
    }
    gamma_->grad[c] += static_cast<T>(sum_dy_xh);
    beta_->grad[c] += static_cast<T>(sum_dy);
    const T g = gamma_->value[c];
    const T inv = inv_std_[c];
    if (mode_ == Mode::kTrain) {
      const T mean_dy = static_cast<T>(sum_dy / m);
      const T mean_dy_xh = static_cast<T>(sum_dy_xh / m);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c_ + c) * spatial;
        for (std::size_t j = 0; j < spatial; ++j)
          dx[off + j] = g * inv * (dy[off + j] - mean_dy - xhat_[off + j] * mean_dy_xh);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c_ + c) * spatial;
        for (std::size_t j = 0; j < spatial; ++j) dx[off + j] = g * inv * dy[off + j];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, int dim) : d_(dim) {
  gamma_ = &store.add(name + ".weight", {std::size_t(dim)});
  beta_ = &store.add(name + ".bias", {std::size_t(dim)});
  gamma_->value.fill(T{1});
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) {
  const std::size_t rows = x.size() / d_;
  Tensor<T> y(x.shape());
  xhat_.resize(x.shape());
  inv_std_.assign(rows, T{0});
  const T* g = gamma_->value.data();
  const T* b = beta_->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * d_;
    double s = 0, ss = 0;
    for (int j = 0; j < d_; ++j) s += p[j];
    const double mean = s / d_;
    for (int j = 0; j < d_; ++j) ss += (p[j] - mean) * (p[j] - mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(ss / d_ + kEps));
    inv_std_[r] = inv;
    T* xh = xhat_.data() + r * d_;
    T* q = y.data() + r * d_;
    for (int j = 0; j < d_; ++j) {
      xh[j] = (p[j] - static_cast<T>(mean)) * inv;
      q[j] = g[j] * xh[j] + b[j];
    }
  }
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& dy) {
  const std::size_t rows = dy.size() / d_;
  Tensor<T> dx(dy.shape());
  const T* g = gamma_->value.data();
  T* dg = gamma_->grad.data();
  T* db = beta_->grad.data();
  std::vector<T> dxh(d_);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* d = dy.data() + r * d_;
    const T* xh = xhat_.data() + r * d_;
    double s1 = 0, s2 = 0;
    for (int j = 0; j < d_; ++j) {
      dg[j] += d[j] * xh[j];
      db[j] += d[j];
      dxh[j] = d[j] * g[j];
      s1 += dxh[j];
      s2 += double(dxh[j]) * xh[j];
    }
    const T m1 = static_cast<T>(s1 / d_), m2 = static_cast<T>(s2 / d_);
    T* o = dx.data() + r * d_;
    for (int j = 0; j < d_; ++j) o[j] = inv_std_[r] * (dxh[j] - m1 - xh[j] * m2);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng)
    : in_(in), out_(out) {
  weight_ = &store.add(name + ".weight", {std::size_t(out), std::size_t(in)});
  bias_ = &store.add(name + ".bias", {std::size_t(out)});
  trunc_normal(weight_->value, 0.02, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() != std::size_t(in_))
    throw ConfigError("linear: expected last axis " + std::to_string(in_) + ", got " +
                      shape_str(x.shape()));
  x_ = x;
  const std::size_t m = x.size() / in_;
  Shape ys = x.shape();
  ys.back() = out_;
  Tensor<T> y(ys);
  blas::gemm<T>(false, true, m, out_, in_, T{1}, x.data(), in_, weight_->value.data(), in_, T{0},
                y.data(), out_, blas::BatchAxis::kRows);
  const T* b = bias_->value.data();
  for (std::size_t r = 0; r < m; ++r) {
    T* row = y.data() + r * out_;
    for (int j = 0; j < out_; ++j) row[j] += b[j];
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const std::size_t m = x_.size() / in_;
  blas::gemm<T>(true, false, out_, in_, m, T{1}, dy.data(), out_, x_.data(), in_, T{1},
                weight_->grad.data(), in_);
  T* db = bias_->grad.data();
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = dy.data() + r * out_;
    for (int j = 0; j < out_; ++j) db[j] += row[j];
  }
  Tensor<T> dx(x_.shape());
  blas::gemm<T>(false, false, m, in_, out_, T{1}, dy.data(), out_, weight_->value.data(), in_,
                T{0}, dx.data(), in_);
  return dx;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
  y_ = x;
  for (auto& v : y_.vec()) v = v > T{0} ? v : T{0};
  return y_;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y_[i] > T{0} ? dy[i] : T{0};
  return dx;
}

template <typename T>
Tensor<T> Elu<T>::forward(const Tensor<T>& x) {
  y_ = x;
  for (auto& v : y_.vec()) v = v > T{0} ? v : std::expm1(v);
  return y_;
}

template <typename T>
Tensor<T> Elu<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y_[i] > T{0} ? dy[i] : dy[i] * (y_[i] + T{1});
  return dx;
}

template <typename T>
Tensor<T> Gelu<T>::forward(const Tensor<T>& x) {
  x_ = x;
  Tensor<T> y(x.shape());
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = T(0.5) * x[i] * (T{1} + std::erf(x[i] * kInvSqrt2));
  return y;
}

template <typename T>
Tensor<T> Gelu<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape());
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T v = x_[i];
    const T cdf = T(0.5) * (T{1} + std::erf(v * kInvSqrt2));
    const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode, Rng& rng) {
  if (mode == Mode::kEval || p_ <= 0.0) {
    mask_.clear();
    return x;
  }
  mask_.resize(x.size());
  const T keep = static_cast<T>(1.0 / (1.0 - p_));
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng.uniform() < p_ ? T{0} : keep;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) const {
  if (mask_.empty()) return dy;
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 4) throw ConfigError("maxpool: expected rank-4 input, got " + shape_str(x.shape()));
  in_shape_ = x.shape();
  const std::size_t nc = x.dim(0) * x.dim(1);
  const int h = int(x.dim(2)), w = int(x.dim(3));
  const int ho = (h - kh_) / sh_ + 1, wo = (w - kw_) / sw_ + 1;
  if (ho < 1 || wo < 1) throw ConfigError("maxpool: input " + shape_str(x.shape()) + " too small");
  Tensor<T> y({x.dim(0), x.dim(1), std::size_t(ho), std::size_t(wo)});
  argmax_.resize(y.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < nc; ++p) {
    const std::size_t base = p * std::size_t(h) * w;
    for (int oh = 0; oh < ho; ++oh)
      for (int ow = 0; ow < wo; ++ow, ++o) {
        std::size_t best = base + std::size_t(oh * sh_) * w + ow * sw_;
        T bv = x[best];
        for (int i = 0; i < kh_; ++i)
          for (int j = 0; j < kw_; ++j) {
            const std::size_t idx = base + std::size_t(oh * sh_ + i) * w + (ow * sw_ + j);
            if (x[idx] > bv) {
              bv = x[idx];
              best = idx;
            }
          }
        y[o] = bv;
        argmax_[o] = best;
      }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
  return dx;
}

template <typename T>
Tensor<T> AdaptiveAvgPool1d<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape();
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  Shape ys = x.shape();
  ys.back() = out_;
  Tensor<T> y(ys);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * len;
    for (int i = 0; i < out_; ++i) {
      const std::size_t s = (std::size_t(i) * len) / out_;
      const std::size_t e = ((std::size_t(i) + 1) * len + out_ - 1) / out_;
      T acc{0};
      for (std::size_t k = s; k < e; ++k) acc += p[k];
      y[r * out_ + i] = acc / static_cast<T>(e - s);
    }
  }
  return y;
}

template <typename T>
Tensor<T> AdaptiveAvgPool1d<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_);
  const std::size_t len = in_shape_.back();
  const std::size_t rows = dx.size() / len;
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = dx.data() + r * len;
    for (int i = 0; i < out_; ++i) {
      const std::size_t s = (std::size_t(i) * len) / out_;
      const std::size_t e = ((std::size_t(i) + 1) * len + out_ - 1) / out_;
      const T g = dy[r * out_ + i] / static_cast<T>(e - s);
      for (std::size_t k = s; k < e; ++k) p[k] += g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(ParamStore<T>& store, const std::string& name,
                                                  int dim, int heads, Rng& rng)
    : d_(dim), h_(heads), qkv_(store, name + ".qkv", dim, 3 * dim, rng),
      proj_(store, name + ".proj", dim, dim, rng) {}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::forward(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), t = x.dim(1);
  const std::size_t dh = d_ / h_;
  const std::size_t ld = 3 * std::size_t(d_);
  const T scale = static_cast<T>(1.0 / std::sqrt(double(dh)));
  qkv_out_ = qkv_.forward(x);
  probs_.resize({n, std::size_t(h_), t, t});
  Tensor<T> merged({n, t, std::size_t(d_)});
  for (std::size_t b = 0; b < n; ++b) {
    const T* base = qkv_out_.data() + b * t * ld;
    for (int hh = 0; hh < h_; ++hh) {
      const T* q = base + hh * dh;
      const T* k = base + d_ + hh * dh;
      const T* v = base + 2 * d_ + hh * dh;
      T* p = probs_.data() + (b * h_ + hh) * t * t;
      blas::gemm<T>(false, true, t, t, dh, scale, q, ld, k, ld, T{0}, p, t);
      for (std::size_t i = 0; i < t; ++i) {
        T* row = p + i * t;
        const T mx = *std::max_element(row, row + t);
        T sum{0};
        for (std::size_t j = 0; j < t; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < t; ++j) row[j] /= sum;
      }
      blas::gemm<T>(false, false, t, dh, t, T{1}, p, t, v, ld, T{0},
                    merged.data() + b * t * d_ + hh * dh, d_);
    }
  }
  return proj_.forward(merged);
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::backward(const Tensor<T>& dy) {
  const std::size_t n = probs_.dim(0), t = probs_.dim(2);
  const std::size_t dh = d_ / h_;
  const std::size_t ld = 3 * std::size_t(d_);
  const T scale = static_cast<T>(1.0 / std::sqrt(double(dh)));
  Tensor<T> dmerged = proj_.backward(dy);
  Tensor<T> dqkv(qkv_out_.shape());
  std::vector<T> dp(t * t);
  for (std::size_t b = 0; b < n; ++b) {
    const T* base = qkv_out_.data() + b * t * ld;
    T* dbase = dqkv.data() + b * t * ld;
    for (int hh = 0; hh < h_; ++hh) {
      const T* q = base + hh * dh;
      const T* k = base + d_ + hh * dh;
      const T* v = base + 2 * d_ + hh * dh;
      const T* p = probs_.data() + (b * h_ + hh) * t * t;
      const T* dout = dmerged.data() + b * t * d_ + hh * dh;
      // dP = dO V^T, dV = P^T dO
      blas::gemm<T>(false, true, t, t, dh, T{1}, dout, d_, v, ld, T{0}, dp.data(), t);
      blas::gemm<T>(true, false, t, dh, t, T{1}, p, t, dout, d_, T{0}, dbase + 2 * d_ + hh * dh, ld);
      // softmax backward, then fold in the logit scale
      for (std::size_t i = 0; i < t; ++i) {
        T dot{0};
        for (std::size_t j = 0; j < t; ++j) dot += dp[i * t + j] * p[i * t + j];
        for (std::size_t j = 0; j < t; ++j) dp[i * t + j] = p[i * t + j] * (dp[i * t + j] - dot) * scale;
      }
      blas::gemm<T>(false, false, t, dh, t, T{1}, dp.data(), t, k, ld, T{0}, dbase + hh * dh, ld);
      blas::gemm<T>(true, false, t, dh, t, T{1}, dp.data(), t, q, ld, T{0}, dbase + d_ + hh * dh, ld);
    }
  }
  return qkv_.backward(dqkv);
}

#define DRNET_INSTANTIATE(T)                          \
  template void trunc_normal<T>(Tensor<T>&, double, Rng&); \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&); \
  template class Conv2d<T>;                           \
  template class BatchNorm<T>;                        \
  template class LayerNorm<T>;                        \
  template class Linear<T>;                           \
  template class Relu<T>;                             \
  template class Elu<T>;                              \
  template class Gelu<T>;                             \
  template class Dropout<T>;                          \
  template class MaxPool2d<T>;                        \
  template class AdaptiveAvgPool1d<T>;                \
  template class MultiHeadSelfAttention<T>;
DRNET_INSTANTIATE(float)
DRNET_INSTANTIATE(double)
#undef DRNET_INSTANTIATE

}  // namespace nn

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace drnet
