// SPDX-License-Identifier: Apache-2.0
#include "drnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "drnet/reasoning_head.hpp"

namespace drnet {

namespace {

// Eval-mode forward over problems [begin, end).
template <typename T>
void forward_eval(DrNet<T>& model, std::span<const RpmProblem> problems, std::size_t begin,
                  std::size_t end) {
  std::vector<const RpmProblem*> ptrs;
  for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&problems[i]);
  model.forward(to_tensor<T>(ptrs), Mode::kEval);
}

std::uint8_t to_byte(double v01) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v01, 0.0, 1.0) * 255.0));
}

}  // namespace

// ---------------------------------------------------------------------------
// Rule embeddings

template <typename T>
EmbeddingDump export_rule_embeddings(DrNet<T>& model, std::span<const RpmProblem> problems,
                                     int batch_size, std::span<const std::string> ids) {
  if (batch_size <= 0) throw ConfigError("export_rule_embeddings: batch_size must be positive");
  if (!ids.empty() && ids.size() != problems.size())
    throw ConfigError("export_rule_embeddings: id count does not match problem count");
  for (std::size_t i = 0; i < problems.size(); ++i)
    if (problems[i].rules.empty())
      throw ConfigError("export_rule_embeddings: sample " + std::to_string(i) +
                        " has no rule metadata");
  EmbeddingDump dump;
  dump.rows.reserve(problems.size());
  for (std::size_t b0 = 0; b0 < problems.size(); b0 += std::size_t(batch_size)) {
    const std::size_t b1 = std::min(problems.size(), b0 + std::size_t(batch_size));
    forward_eval(model, problems, b0, b1);
    const Tensor<T>& r = model.rule_embedding();
    for (std::size_t i = b0; i < b1; ++i) {
      const std::size_t row = (i - b0) * kCandidates + std::size_t(problems[i].target);
      const T* e = r.data() + row * kRuleDim;
      EmbeddingRow out;
      out.id = ids.empty() ? std::to_string(i) : ids[i];
      out.rule = problems[i].rule_label();
      out.embedding.assign(e, e + kRuleDim);
      dump.rows.push_back(std::move(out));
    }
  }
  return dump;
}

void write_embedding_csv(const EmbeddingDump& dump, std::ostream& out) {
  out << "id,rule";
  for (int i = 0; i < kRuleDim; ++i) out << ",e" << i;
  out << '\n';
  out << std::setprecision(9);
  for (const auto& row : dump.rows) {
    out << row.id << ',' << row.rule;
    for (double v : row.embedding) out << ',' << v;
    out << '\n';
  }
}

RuleCosineStats rule_cosine_stats(const EmbeddingDump& dump) {
  RuleCosineStats s;
  double intra = 0, inter = 0;
  for (std::size_t i = 0; i < dump.rows.size(); ++i)
    for (std::size_t j = i + 1; j < dump.rows.size(); ++j) {
      const auto c = cosine(dump.rows[i].embedding, dump.rows[j].embedding);
      if (!c) continue;
      if (dump.rows[i].rule == dump.rows[j].rule) {
        intra += *c;
        ++s.intra_pairs;
      } else {
        inter += *c;
        ++s.inter_pairs;
      }
    }
  if (s.intra_pairs) s.intra = intra / double(s.intra_pairs);
  if (s.inter_pairs) s.inter = inter / double(s.inter_pairs);
  return s;
}

// ---------------------------------------------------------------------------
// Dual-stream similarity

std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("cosine: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  // Rounding can push |cos| a hair past 1.
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

int similarity_bin(double v) {
  const int bin = int(std::floor((v + 1.0) / 2.0 * SimilarityReport::kBins));
  return std::clamp(bin, 0, SimilarityReport::kBins - 1);
}

SimilarityReport similarity_report(std::vector<double> values, std::size_t skipped) {
  SimilarityReport r;
  r.skipped = skipped;
  for (double v : values) ++r.histogram[std::size_t(similarity_bin(v))];
  if (!values.empty()) {
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  r.values = std::move(values);
  return r;
}

template <typename T>
SimilarityReport stream_similarity(DrNet<T>& model, std::span<const RpmProblem> problems,
                                   int batch_size) {
  if (!model.has_cnn() || !model.has_vit())
    throw ConfigError("stream similarity requires both streams enabled");
  if (batch_size <= 0) throw ConfigError("stream_similarity: batch_size must be positive");
  const std::size_t d = std::size_t(model.config().embed_dim);
  std::vector<double> values;
  std::size_t skipped = 0;
  std::vector<double> a(d), b(d);
  for (std::size_t b0 = 0; b0 < problems.size(); b0 += std::size_t(batch_size)) {
    const std::size_t b1 = std::min(problems.size(), b0 + std::size_t(batch_size));
    forward_eval(model, problems, b0, b1);
    const Tensor<T>& c = model.cnn_embedding();
    const Tensor<T>& v = model.vit_embedding();
    for (std::size_t p = 0; p < c.dim(0); ++p) {
      std::copy(c.data() + p * d, c.data() + (p + 1) * d, a.begin());
      std::copy(v.data() + p * d, v.data() + (p + 1) * d, b.begin());
      if (auto cs = cosine(a, b)) values.push_back(*cs);
      else ++skipped;
    }
  }
  return similarity_report(std::move(values), skipped);
}

void write_histogram_csv(const SimilarityReport& r, std::ostream& out) {
  out << "bin_lo,bin_hi,count\n" << std::setprecision(6);
  for (int i = 0; i < SimilarityReport::kBins; ++i) {
    const double lo = -1.0 + 2.0 * i / SimilarityReport::kBins;
    const double hi = -1.0 + 2.0 * (i + 1) / SimilarityReport::kBins;
    out << lo << ',' << hi << ',' << r.histogram[std::size_t(i)] << '\n';
  }
}

void write_similarity_values_csv(const SimilarityReport& r, std::ostream& out) {
  out << "index,cosine\n" << std::setprecision(9);
  for (std::size_t i = 0; i < r.values.size(); ++i) out << i << ',' << r.values[i] << '\n';
}

// ---------------------------------------------------------------------------
// Attention rollout

Tensor<double> rollout_matrix(const Tensor<double>& attn, std::optional<int> layer) {
  if (attn.rank() != 4 || attn.dim(2) != attn.dim(3))
    throw ConfigError("rollout: expected (depth, heads, T, T), got " + shape_str(attn.shape()));
  const std::size_t depth = attn.dim(0), heads = attn.dim(1), t = attn.dim(2);
  if (layer && (*layer < 0 || std::size_t(*layer) >= depth))
    throw ConfigError("rollout: layer " + std::to_string(*layer) + " out of range [0, " +
                      std::to_string(depth) + ")");
  Tensor<double> acc({t, t});
  for (std::size_t i = 0; i < t; ++i) acc[i * t + i] = 1.0;
  Tensor<double> a({t, t}), next({t, t});
  const std::size_t first = layer ? std::size_t(*layer) : 0;
  const std::size_t last = layer ? first + 1 : depth;
  for (std::size_t l = first; l < last; ++l) {
    a.zero();
    for (std::size_t h = 0; h < heads; ++h) {
      const double* src = attn.data() + (l * heads + h) * t * t;
      for (std::size_t i = 0; i < t * t; ++i) a[i] += src[i] / double(heads);
    }
    for (std::size_t i = 0; i < t; ++i) {
      a[i * t + i] += 1.0;
      double sum = 0;
      for (std::size_t j = 0; j < t; ++j) sum += a[i * t + j];
      for (std::size_t j = 0; j < t; ++j) a[i * t + j] /= sum;
    }
    // Later layers act on the output of earlier ones: acc <- a * acc.
    next.zero();
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = 0; k < t; ++k) {
        const double v = a[i * t + k];
        for (std::size_t j = 0; j < t; ++j) next[i * t + j] += v * acc[k * t + j];
      }
    std::swap(acc, next);
  }
  return acc;
}

std::vector<double> rollout_saliency(const Tensor<double>& rollout) {
  const std::size_t t = rollout.dim(0);
  std::vector<double> s(t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) s[j] += rollout[i * t + j] / double(t);
  return s;
}

template <typename T>
std::vector<PanelSaliency> attention_rollout(DrNet<T>& model, const RpmProblem& problem,
                                             std::optional<int> layer) {
  if (!model.has_vit()) throw ConfigError("attention rollout requires the ViT stream");
  const RpmProblem* ptr = &problem;
  model.forward(to_tensor<T>(std::span<const RpmProblem* const>(&ptr, 1)), Mode::kEval);
  const Tensor<T> attn = attention_weights(model);  // (depth, 16, heads, T, T)
  const std::size_t depth = attn.dim(0), panels = attn.dim(1), heads = attn.dim(2),
                    t = attn.dim(3);
  const int grid = model.config().image_size / model.config().patch_size;
  std::vector<PanelSaliency> out;
  Tensor<double> one({depth, heads, t, t});
  const std::size_t per = heads * t * t;
  for (std::size_t p = 0; p < panels; ++p) {
    for (std::size_t l = 0; l < depth; ++l) {
      const T* src = attn.data() + (l * panels + p) * per;
      std::copy(src, src + per, one.data() + l * per);
    }
    PanelSaliency ps;
    ps.grid = grid;
    ps.tokens = rollout_saliency(rollout_matrix(one, layer));
    const double mx = *std::max_element(ps.tokens.begin(), ps.tokens.end());
    ps.image.width = problem.width;
    ps.image.height = problem.height;
    ps.image.pixels.resize(std::size_t(problem.width) * std::size_t(problem.height));
    for (int y = 0; y < problem.height; ++y)
      for (int x = 0; x < problem.width; ++x) {
        const int ty = y * grid / problem.height, tx = x * grid / problem.width;
        const double v = ps.tokens[std::size_t(ty * grid + tx)];
        ps.image.pixels[std::size_t(y) * problem.width + x] = to_byte(mx > 0 ? v / mx : 0.0);
      }
    out.push_back(std::move(ps));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CNN feature maps

std::vector<GrayImage> normalize_channels(std::span<const double> act, int channels, int h,
                                          int w) {
  const std::size_t hw = std::size_t(h) * std::size_t(w);
  if (act.size() != std::size_t(channels) * hw)
    throw ConfigError("normalize_channels: activation size does not match shape");
  std::vector<GrayImage> out;
  for (int c = 0; c < channels; ++c) {
    auto ch = act.subspan(std::size_t(c) * hw, hw);
    const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
    GrayImage img{w, h, std::vector<std::uint8_t>(hw, 0)};
    const double range = *hi - *lo;
    if (range > 0)
      for (std::size_t i = 0; i < hw; ++i) img.pixels[i] = to_byte((ch[i] - *lo) / range);
    out.push_back(std::move(img));
  }
  return out;
}

template <typename T>
std::vector<GrayImage> cnn_feature_maps(DrNet<T>& model, const RpmProblem& problem,
                                        const std::string& layer, int panel) {
  if (!model.has_cnn()) throw ConfigError("feature maps require the CNN stream");
  if (panel < 0 || panel >= kPanels)
    throw ConfigError("feature maps: panel must be in [0, " + std::to_string(kPanels) + ")");
  // Validate the name before paying for a forward pass.
  model.cnn().feature_map(layer);
  const RpmProblem* ptr = &problem;
  model.forward(to_tensor<T>(std::span<const RpmProblem* const>(&ptr, 1)), Mode::kEval);
  const Tensor<T>& fm = model.cnn().feature_map(layer);
  const int c = int(fm.dim(1)), h = int(fm.dim(2)), w = int(fm.dim(3));
  const std::size_t per = std::size_t(c) * h * w;
  std::vector<double> act(fm.data() + std::size_t(panel) * per,
                          fm.data() + std::size_t(panel + 1) * per);
  return normalize_channels(act, c, h, w);
}

#define DRNET_INSTANTIATE(T)                                                                 \
  template EmbeddingDump export_rule_embeddings(DrNet<T>&, std::span<const RpmProblem>, int, \
                                                std::span<const std::string>);               \
  template SimilarityReport stream_similarity(DrNet<T>&, std::span<const RpmProblem>, int);   \
  template std::vector<PanelSaliency> attention_rollout(DrNet<T>&, const RpmProblem&,         \
                                                        std::optional<int>);                  \
  template std::vector<GrayImage> cnn_feature_maps(DrNet<T>&, const RpmProblem&,              \
                                                   const std::string&, int);
DRNET_INSTANTIATE(float)
DRNET_INSTANTIATE(double)
#undef DRNET_INSTANTIATE

}  // namespace drnet
