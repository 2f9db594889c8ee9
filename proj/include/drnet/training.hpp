// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drnet/checkpoint.hpp"
#include "drnet/model.hpp"
#include "drnet/optim.hpp"
#include "drnet/rpm_data.hpp"

namespace drnet {

/// Stops when the monitored loss has not strictly improved for `patience`
/// consecutive epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Feed one epoch's validation loss; true means stop now.
  bool update(double loss);
  double best() const { return best_; }
  int epochs_without_improvement() const { return since_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_ = 0;
};

struct RuleAccuracy {
  std::size_t correct = 0, total = 0;
  double accuracy() const { return total ? double(correct) / double(total) : 0.0; }
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t n = 0;
  std::vector<int> predictions;
  std::map<std::string, RuleAccuracy> per_rule;  // keyed by RpmProblem::rule_label()
};

/// Accuracy and per-rule breakdown computed from given scores (B, 8).
EvalResult evaluate_scores(const Tensor<double>& scores, std::span<const RpmProblem> problems);

/// Eval-mode accuracy, mean loss and per-rule breakdown.
template <typename T>
EvalResult evaluate(DrNet<T>& model, std::span<const RpmProblem> problems, int batch_size);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  std::optional<double> train_eval_accuracy;
  double seconds = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> metrics_csv;   // appended, header written if new
  std::optional<std::filesystem::path> checkpoint_dir; // best.ckpt and last.ckpt
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_accuracy = -1.0;
  std::vector<Tensor<T>> best_params;  // snapshot in ParamStore order
  std::string stop_reason;
};

/// Adam training with flip augmentation on the training split, per-epoch
/// validation, best-accuracy snapshot and early stopping on validation loss.
/// Throws NumericError on a non-finite loss.
template <typename T>
TrainResult<T> train(DrNet<T>& model, std::span<const RpmProblem> train_set,
                     std::span<const RpmProblem> val_set, const TrainConfig& cfg,
                     const TrainOptions& opts = {});

/// Restores a snapshot taken by train().
template <typename T>
void restore_params(DrNet<T>& model, const std::vector<Tensor<T>>& snapshot);

/// True when DRNET_DETERMINISTIC is set to a non-empty value other than "0".
bool deterministic_mode();

}  // namespace drnet
