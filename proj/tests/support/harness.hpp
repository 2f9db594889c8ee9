// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the unit tests and the acceptance runner.
#pragma once

#include <string>
#include <vector>

#include "drnet/model.hpp"
#include "drnet/rpm_data.hpp"
#include "drnet/training.hpp"

namespace drnet::testing {

struct GradCheckResult {
  std::size_t checked = 0;  // entries compared against the analytic gradient
  std::size_t kinks = 0;    // entries skipped as non-differentiable
  std::size_t groups = 0;   // parameter tensors covered
  double worst = 0.0;
  std::string worst_name;
};

/// Central finite differences of the train-mode cross-entropy against the
/// analytic gradient. Entries are drawn `per_tensor` at a time from every
/// trainable tensor, then uniformly, until `min_total` have been compared.
///
/// Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps
/// gradients that are exactly zero analytically (a conv bias feeding batch
/// norm) from dividing finite-difference roundoff by zero.
///
/// ReLU and max pooling make the loss only piecewise smooth, and a step can
/// straddle a kink. Each entry is therefore differenced at `step` and
/// `step / 10`; when the two estimates disagree by more than `kink_tol` the
/// loss is not differentiable there at that resolution and the entry is
/// counted as a kink instead of compared. This test never looks at the
/// analytic gradient, so it cannot hide a wrong backward pass.
template <typename T>
GradCheckResult gradient_check(const ModelConfig& cfg, std::size_t per_tensor,
                               std::size_t min_total, std::uint64_t seed, double step,
                               double floor, double kink_tol);

/// Spec used by the overfit and embedding tests: constant and progression
/// over size and shade, small panels.
MiniRpmSpec overfit_spec(int image_size, std::uint64_t n_samples);

std::vector<RpmProblem> generate(const MiniRpmSpec& spec, std::uint64_t begin,
                                 std::uint64_t end);

struct OverfitRun {
  std::vector<RpmProblem> data;
  TrainResult<float> result;
  double final_train_accuracy = 0.0;
};

/// Trains `model` on `n` samples until eval-mode training accuracy is 1.0 or
/// `max_epochs` pass.
OverfitRun overfit(DrNet<float>& model, std::uint64_t n, int max_epochs);

}  // namespace drnet::testing
