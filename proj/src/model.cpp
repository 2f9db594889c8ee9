// SPDX-License-Identifier: Apache-2.0
#include "drnet/model.hpp"

#include <cmath>

namespace drnet {

template <typename T>
DrNet<T>::DrNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build(seed);
}

template <typename T>
DrNet<T>::DrNet(const DrNet& other) : cfg_(other.cfg_) {
  build(0);
  for (auto* p : store_.all()) p->value = other.store_.find(p->name)->value;
  dropout_rng_ = other.dropout_rng_;
}

template <typename T>
void DrNet<T>::build(std::uint64_t seed) {
  Rng init(Rng::derive(seed, 1));
  dropout_rng_ = Rng(Rng::derive(seed, 2));
  if (cfg_.enable_cnn) cnn_.emplace(store_, cfg_, init);
  if (cfg_.enable_vit) vit_.emplace(store_, cfg_, init);
  fusion_ = Fusion<T>(store_, cfg_, init);
  rule_ = RuleExtractor<T>(store_, cfg_, init);
  classifier_ = Classifier<T>(store_, cfg_, init);
}

template <typename T>
ParamCounts DrNet<T>::param_counts() const {
  ParamCounts c;
  c.cnn = store_.count("cnn.");
  c.vit = store_.count("vit.");
  c.fusion = store_.count("fusion.");
  c.rule = store_.count("rule.");
  c.classifier = store_.count("classifier.");
  return c;
}

template <typename T>
Tensor<T> DrNet<T>::forward(const Tensor<T>& panels, Mode mode) {
  const std::size_t s = std::size_t(cfg_.image_size);
  if (panels.rank() != 4 || panels.dim(1) != std::size_t(kPanels) || panels.dim(2) != s ||
      panels.dim(3) != s)
    throw ConfigError("model: expected panels (B, 16, " + std::to_string(s) + ", " +
                      std::to_string(s) + "), got " + shape_str(panels.shape()));
  batch_ = panels.dim(0);
  const Tensor<T> flat = panels.reshaped({batch_ * kPanels, 1, s, s});
  cnn_out_ = cnn_ ? cnn_->forward(flat, mode) : Tensor<T>{};
  vit_out_ = vit_ ? vit_->forward(flat, mode) : Tensor<T>{};
  fused_ = fusion_.forward(cnn_out_, vit_out_);
  rules_ = rule_.forward(group_candidates(fused_), mode);
  Tensor<T> scores = classifier_.forward(rules_, mode, dropout_rng_);
  scores.reshape({batch_, std::size_t(kCandidates)});
  return scores;
}

template <typename T>
void DrNet<T>::backward(const Tensor<T>& dscores) {
  Tensor<T> g = dscores.reshaped({batch_ * kCandidates});
  Tensor<T> dfused = ungroup_candidates(rule_.backward(classifier_.backward(g)));
  auto [dcnn, dvit] = fusion_.backward(dfused);
  if (cnn_) cnn_->backward(dcnn, false);
  if (vit_) vit_->backward(dvit, false);
}

template <typename T>
Tensor<T> attention_weights(const DrNet<T>& model) {
  if (!model.has_vit()) throw ConfigError("attention weights require the ViT stream");
  const auto layers = model.vit().attention();
  if (layers.empty() || layers.front()->empty())
    throw ConfigError("attention weights: run a forward pass first");
  Shape s = layers.front()->shape();
  s.insert(s.begin(), layers.size());
  Tensor<T> out(s);
  std::size_t off = 0;
  for (const auto* l : layers) {
    std::copy(l->data(), l->data() + l->size(), out.data() + off);
    off += l->size();
  }
  return out;
}

template <typename T>
double cross_entropy(const Tensor<T>& scores, const std::vector<int>& targets, Tensor<T>* grad) {
  const std::size_t b = scores.dim(0), k = scores.dim(1);
  if (targets.size() != b) throw ConfigError("cross_entropy: target count mismatch");
  if (grad) grad->resize(scores.shape());
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int t = targets[i];
    if (t < 0 || std::size_t(t) >= k) throw ConfigError("cross_entropy: target out of range");
    const T* row = scores.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, double(row[j]));
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(double(row[j]) - mx);
    const double lse = mx + std::log(z);
    total += lse - double(row[t]);
    if (grad)
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(double(row[j]) - lse);
        (*grad)[i * k + j] = static_cast<T>((p - (int(j) == t ? 1.0 : 0.0)) / double(b));
      }
  }
  return total / double(b);
}

template class DrNet<float>;
template class DrNet<double>;
template Tensor<float> attention_weights(const DrNet<float>&);
template Tensor<double> attention_weights(const DrNet<double>&);
template double cross_entropy(const Tensor<float>&, const std::vector<int>&, Tensor<float>*);
template double cross_entropy(const Tensor<double>&, const std::vector<int>&, Tensor<double>*);

}  // namespace drnet
