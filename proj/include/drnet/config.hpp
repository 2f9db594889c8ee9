// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drnet {

enum class FusionOp { kSum, kMea, kAut, kAutL1, kAutL2, kLin };

std::string to_string(FusionOp op);
FusionOp parse_fusion_op(std::string_view s);

/// Architectural hyperparameters. The single source of truth for every
/// tensor shape in the model.
struct ModelConfig {
  int image_size = 80;
  int patch_size = 20;
  int embed_dim = 400;
  int vit_depth = 12;
  int vit_heads = 8;
  int vit_mlp_ratio = 4;
  int cnn_kernel = 7;
  std::vector<int> cnn_filters{64, 64, 64, 16};
  bool enable_cnn = true;
  bool enable_vit = true;
  FusionOp fusion_op = FusionOp::kLin;
  std::vector<int> rule_filters{64, 128, 128, 64};
  int rule_kernel = 7;
  std::vector<int> classifier_dims{512, 256, 1};
  double dropout = 0.5;

  int tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
  int cnn_out_side() const { return image_size / 16; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Optimisation and loop settings.
struct TrainConfig {
  int batch_size = 256;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-6;
  // false: classic Adam L2 (decay folded into the gradient). true: AdamW.
  bool decoupled_weight_decay = false;
  double flip_p = 0.3;
  int early_stop_patience = 20;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  // 0 disables. Training stops after the epoch in which the budget runs out.
  double time_budget_seconds = 0.0;
  // Evaluate eval-mode accuracy on the training split every epoch.
  bool eval_train = false;
  // Stop as soon as eval-mode training accuracy reaches this value (0 = off).
  double target_train_accuracy = 0.0;
  // Stop as soon as validation accuracy reaches this value (0 = off).
  double target_val_accuracy = 0.0;
  int workers = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Named model presets: "default", "micro", "drnet-p", "desk".
ModelConfig model_preset(std::string_view name);
std::vector<std::string> model_preset_names();
/// Batch size and related loop defaults that accompany a model preset.
TrainConfig train_preset(std::string_view name);

/// Flat, ordered key-value document: `section.key = value`, `#` comments.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);
KeyValues read_key_values_file(const std::string& path);

KeyValues to_key_values(const ModelConfig& m);
KeyValues to_key_values(const TrainConfig& t);
KeyValues to_key_values(const ExperimentConfig& e);

/// Applies `kv` on top of `base`. Keys outside the model./train. namespaces
/// or naming unknown fields are rejected with ConfigError. A `model.preset`
/// key, if present, replaces the base model before other keys are applied.
ExperimentConfig apply_key_values(ExperimentConfig base, const KeyValues& kv);

/// Parses `key=value` override strings and applies them.
ExperimentConfig apply_overrides(ExperimentConfig base, const std::vector<std::string>& overrides);

/// First field (as `model.<name>`) where the two configs differ, if any.
std::optional<std::string> first_difference(const ModelConfig& a, const ModelConfig& b);

/// Canonical text form of the model config; stored in checkpoints.
std::string fingerprint(const ModelConfig& m);

}  // namespace drnet
