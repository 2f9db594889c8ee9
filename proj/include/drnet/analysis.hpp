// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "drnet/image_io.hpp"
#include "drnet/model.hpp"
#include "drnet/rpm_data.hpp"

namespace drnet {

// --- Rule embeddings --------------------------------------------------------

struct EmbeddingRow {
  std::string id;
  std::string rule;
  std::vector<double> embedding;  // kRuleDim values
};

struct EmbeddingDump {
  std::vector<EmbeddingRow> rows;
};

/// Eval-mode rule embedding of the correct candidate for every problem.
/// Throws ConfigError when a problem carries no rule labels. `ids` defaults
/// to the position in `problems`.
template <typename T>
EmbeddingDump export_rule_embeddings(DrNet<T>& model, std::span<const RpmProblem> problems,
                                     int batch_size,
                                     std::span<const std::string> ids = {});

/// Header `id,rule,e0,...,e1023`, one row per sample.
void write_embedding_csv(const EmbeddingDump& dump, std::ostream& out);

struct RuleCosineStats {
  double intra = 0.0;  // mean cosine over pairs sharing a rule label
  double inter = 0.0;  // mean cosine over pairs with different labels
  std::size_t intra_pairs = 0, inter_pairs = 0;
};

/// Mean pairwise cosine similarity within and across rule labels.
RuleCosineStats rule_cosine_stats(const EmbeddingDump& dump);

// --- Dual-stream similarity ---------------------------------------------------

/// Cosine similarity, or nullopt when either vector has zero norm.
std::optional<double> cosine(std::span<const double> a, std::span<const double> b);

struct SimilarityReport {
  static constexpr int kBins = 50;
  std::vector<double> values;  // one per panel with non-zero embeddings
  std::array<std::size_t, kBins> histogram{};  // uniform bins over [-1, 1]
  double mean = 0.0, median = 0.0;
  std::size_t skipped = 0;  // panels with a zero-norm embedding
};

/// Histogram bin of a value in [-1, 1]; 1.0 falls in the last bin.
int similarity_bin(double v);

SimilarityReport similarity_report(std::vector<double> values, std::size_t skipped);

/// Per-panel cosine between the CNN and ViT embeddings (eval mode).
template <typename T>
SimilarityReport stream_similarity(DrNet<T>& model, std::span<const RpmProblem> problems,
                                   int batch_size);

/// `bin_lo,bin_hi,count` with kBins rows.
void write_histogram_csv(const SimilarityReport& r, std::ostream& out);
/// `index,cosine` per retained panel.
void write_similarity_values_csv(const SimilarityReport& r, std::ostream& out);

// --- Attention rollout ---------------------------------------------------------

/// Rollout for one panel. `attn` is (depth, heads, T, T). Each layer is
/// head-averaged, added to the identity and row-normalised; the layers are
/// multiplied first-to-last, or only `layer` is used when given. Returns the
/// (T, T) token-to-token matrix.
Tensor<double> rollout_matrix(const Tensor<double>& attn, std::optional<int> layer = {});

/// Token saliency from a rollout matrix: the mean over output tokens (the
/// readout averages tokens), shape (T).
std::vector<double> rollout_saliency(const Tensor<double>& rollout);

struct PanelSaliency {
  int grid = 0;                 // tokens per side
  std::vector<double> tokens;   // grid * grid saliency values, sums to 1
  GrayImage image;              // nearest-neighbour upsampled to panel size
};

/// Eval-mode rollout maps for all 16 panels of one problem.
template <typename T>
std::vector<PanelSaliency> attention_rollout(DrNet<T>& model, const RpmProblem& problem,
                                             std::optional<int> layer = {});

// --- CNN feature maps --------------------------------------------------------

/// Per-channel min-max normalisation to [0, 255]; a constant channel maps to 0.
/// `act` is (C, H, W).
std::vector<GrayImage> normalize_channels(std::span<const double> act, int channels, int h,
                                          int w);

/// Eval-mode activations at `layer` for one panel of a problem, one image per
/// channel. Unknown layer names raise ConfigError listing the valid names.
template <typename T>
std::vector<GrayImage> cnn_feature_maps(DrNet<T>& model, const RpmProblem& problem,
                                        const std::string& layer, int panel = 0);

}  // namespace drnet
