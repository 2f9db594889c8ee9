// SPDX-License-Identifier: Apache-2.0
#include "drnet/dual_encoder.hpp"

#include <algorithm>

namespace drnet {

// ---------------------------------------------------------------------------
// ConvResBlock

template <typename T>
ConvResBlock<T>::ConvResBlock(ParamStore<T>& store, const std::string& name, int cin, int mid,
                              int cout, int kernel, Rng& rng)
    : conv1_(store, name + ".conv1", {cin, mid, kernel, kernel, 2, 2, kernel / 2, kernel / 2}, rng),
      conv2_(store, name + ".conv2", {mid, cout, kernel, kernel, 2, 2, kernel / 2, kernel / 2}, rng),
      bn1_(store, name + ".bn1", mid),
      bn2_(store, name + ".bn2", cout) {
  if (cin != cout) proj_.emplace(store, name + ".shortcut", typename nn::Conv2d<T>::Geometry{cin, cout, 1, 1, 1, 1, 0, 0}, rng);
}

template <typename T>
Tensor<T> ConvResBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  conv1_out_ = conv1_.forward(x);
  Tensor<T> h = relu1_.forward(bn1_.forward(conv1_out_, mode));
  conv2_out_ = conv2_.forward(h);
  out_ = relu2_.forward(bn2_.forward(conv2_out_, mode));
  Tensor<T> s = pool2_.forward(pool1_.forward(x));
  if (proj_) s = proj_->forward(s);
  if (s.shape() != out_.shape())
    throw ConfigError("resblock shortcut " + shape_str(s.shape()) + " does not match branch " +
                      shape_str(out_.shape()));
  nn::add_inplace(out_, s);
  return out_;
}

template <typename T>
Tensor<T> ConvResBlock<T>::backward(const Tensor<T>& dy, bool need_dx) {
  Tensor<T> ds = proj_ ? proj_->backward(dy, need_dx) : dy;
  Tensor<T> dh = conv2_.backward(bn2_.backward(relu2_.backward(dy)));
  Tensor<T> dc = conv1_.backward(bn1_.backward(relu1_.backward(dh)), need_dx);
  if (!need_dx) return {};
  Tensor<T> dx = pool1_.backward(pool2_.backward(ds));
  nn::add_inplace(dx, dc);
  return dx;
}

template <typename T>
const Tensor<T>& ConvResBlock<T>::activation(const std::string& local) const {
  if (local == "conv1") return conv1_out_;
  if (local == "conv2") return conv2_out_;
  return out_;
}

// ---------------------------------------------------------------------------
// CnnStream

template <typename T>
CnnStream<T>::CnnStream(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      block1_(store, "cnn.block1", 1, cfg.cnn_filters[0], cfg.cnn_filters[1], cfg.cnn_kernel, rng),
      block2_(store, "cnn.block2", cfg.cnn_filters[1], cfg.cnn_filters[2], cfg.cnn_filters[3],
              cfg.cnn_kernel, rng) {}

template <typename T>
Tensor<T> CnnStream<T>::forward(const Tensor<T>& panels, Mode mode) {
  const std::size_t s = std::size_t(cfg_.image_size);
  if (panels.rank() != 4 || panels.dim(1) != 1 || panels.dim(2) != s || panels.dim(3) != s)
    throw ConfigError("cnn: expected panels (N, 1, " + std::to_string(s) + ", " +
                      std::to_string(s) + "), got " + shape_str(panels.shape()));
  if (!all_finite(panels)) throw NumericError("cnn: non-finite input panels");
  Tensor<T> h = block1_.forward(panels, mode);
  if (!all_finite(h)) throw NumericError("non-finite activation in cnn.block1");
  Tensor<T> out = block2_.forward(h, mode);
  if (!all_finite(out)) throw NumericError("non-finite activation in cnn.block2");
  out.reshape({panels.dim(0), std::size_t(cfg_.embed_dim)});
  return out;
}

template <typename T>
Tensor<T> CnnStream<T>::backward(const Tensor<T>& dy, bool need_dx) {
  const std::size_t side = std::size_t(cfg_.cnn_out_side());
  Tensor<T> g = dy.reshaped({dy.dim(0), std::size_t(cfg_.cnn_filters[3]), side, side});
  return block1_.backward(block2_.backward(g), need_dx);
}

template <typename T>
std::vector<std::string> CnnStream<T>::layer_names() {
  return {"cnn.block1.conv1", "cnn.block1.conv2", "cnn.block1", "cnn.block2.conv1",
          "cnn.block2.conv2", "cnn.block2"};
}

template <typename T>
const Tensor<T>& CnnStream<T>::feature_map(const std::string& layer) const {
  const auto names = layer_names();
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown layer '" + layer + "'; valid layers: " + valid);
  }
  const ConvResBlock<T>& b = layer.rfind("cnn.block1", 0) == 0 ? block1_ : block2_;
  const std::string local = layer.size() > 10 ? layer.substr(11) : "out";
  return b.activation(local);
}

// ---------------------------------------------------------------------------
// TransformerBlock

template <typename T>
TransformerBlock<T>::TransformerBlock(ParamStore<T>& store, const std::string& name, int dim,
                                      int heads, int mlp_ratio, Rng& rng)
    : norm1_(store, name + ".norm1", dim),
      norm2_(store, name + ".norm2", dim),
      attn_(store, name + ".attn", dim, heads, rng),
      fc1_(store, name + ".mlp.fc1", dim, dim * mlp_ratio, rng),
      fc2_(store, name + ".mlp.fc2", dim * mlp_ratio, dim, rng) {}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = x;
  nn::add_inplace(h, attn_.forward(norm1_.forward(x)));
  Tensor<T> out = h;
  nn::add_inplace(out, fc2_.forward(gelu_.forward(fc1_.forward(norm2_.forward(h)))));
  return out;
}

template <typename T>
Tensor<T> TransformerBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dh = dy;
  nn::add_inplace(dh, norm2_.backward(fc1_.backward(gelu_.backward(fc2_.backward(dy)))));
  Tensor<T> dx = dh;
  nn::add_inplace(dx, norm1_.backward(attn_.backward(dh)));
  return dx;
}

// ---------------------------------------------------------------------------
// VitStream

template <typename T>
VitStream<T>::VitStream(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg),
      patch_(store, "vit.patch_embed",
             {1, cfg.embed_dim, cfg.patch_size, cfg.patch_size, cfg.patch_size, cfg.patch_size, 0, 0},
             rng) {
  pos_ = &store.add("vit.pos_embed", {std::size_t(cfg.tokens()), std::size_t(cfg.embed_dim)});
  nn::trunc_normal(pos_->value, 0.02, rng);
  blocks_.reserve(cfg.vit_depth);
  for (int i = 0; i < cfg.vit_depth; ++i)
    blocks_.emplace_back(store, "vit.blocks." + std::to_string(i), cfg.embed_dim, cfg.vit_heads,
                         cfg.vit_mlp_ratio, rng);
}

template <typename T>
Tensor<T> VitStream<T>::forward(const Tensor<T>& panels, Mode /*mode*/) {
  const std::size_t s = std::size_t(cfg_.image_size);
  if (panels.rank() != 4 || panels.dim(1) != 1 || panels.dim(2) != s || panels.dim(3) != s)
    throw ConfigError("vit: expected panels (N, 1, " + std::to_string(s) + ", " +
                      std::to_string(s) + "), got " + shape_str(panels.shape()));
  if (!all_finite(panels)) throw NumericError("vit: non-finite input panels");
  const std::size_t n = panels.dim(0);
  const std::size_t t = std::size_t(cfg_.tokens());
  const std::size_t d = std::size_t(cfg_.embed_dim);
  Tensor<T> e = patch_.forward(panels);  // (N, d, g, g)
  Tensor<T> x({n, t, d});
  const T* pos = pos_->value.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t k = 0; k < t; ++k)
        x[(b * t + k) * d + c] = e[(b * d + c) * t + k] + pos[k * d + c];
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x);
    if (!all_finite(x))
      throw NumericError("non-finite activation in vit.blocks." + std::to_string(i));
  }
  Tensor<T> out({n, d});
  const T inv = static_cast<T>(1.0 / double(t));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t c = 0; c < d; ++c) out[b * d + c] += x[(b * t + k) * d + c] * inv;
  return out;
}

template <typename T>
Tensor<T> VitStream<T>::backward(const Tensor<T>& dy, bool need_dx) {
  const std::size_t n = dy.dim(0);
  const std::size_t t = std::size_t(cfg_.tokens());
  const std::size_t d = std::size_t(cfg_.embed_dim);
  const std::size_t g = std::size_t(cfg_.image_size / cfg_.patch_size);
  Tensor<T> dx({n, t, d});
  const T inv = static_cast<T>(1.0 / double(t));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t c = 0; c < d; ++c) dx[(b * t + k) * d + c] = dy[b * d + c] * inv;
  for (std::size_t i = blocks_.size(); i-- > 0;) dx = blocks_[i].backward(dx);
  Tensor<T> de({n, d, g, g});
  T* dpos = pos_->grad.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t c = 0; c < d; ++c) {
        const T v = dx[(b * t + k) * d + c];
        de[(b * d + c) * t + k] = v;
        dpos[k * d + c] += v;
      }
  return patch_.backward(de, need_dx);
}

template <typename T>
std::vector<const Tensor<T>*> VitStream<T>::attention() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& b : blocks_) out.push_back(&b.attention());
  return out;
}

template class ConvResBlock<float>;
template class ConvResBlock<double>;
template class CnnStream<float>;
template class CnnStream<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class VitStream<float>;
template class VitStream<double>;

}  // namespace drnet
