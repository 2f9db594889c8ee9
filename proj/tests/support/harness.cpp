// SPDX-License-Identifier: Apache-2.0
#include "harness.hpp"

#include <algorithm>
#include <cmath>

namespace drnet::testing {

namespace {

template <typename T>
double train_loss(DrNet<T>& m, const Tensor<T>& x, const std::vector<int>& t, Tensor<T>* g) {
  m.seed_dropout(17);
  return cross_entropy(m.forward(x, Mode::kTrain), t, g);
}

}  // namespace

template <typename T>
GradCheckResult gradient_check(const ModelConfig& cfg, std::size_t per_tensor,
                               std::size_t min_total, std::uint64_t seed, double step,
                               double floor, double kink_tol) {
  DrNet<T> model(cfg, seed);
  Rng rng(Rng::derive(seed, 1));
  const std::size_t s = std::size_t(cfg.image_size);
  Tensor<T> x({2, kPanels, s, s});
  for (auto& v : x.vec()) v = static_cast<T>(rng.uniform());
  const std::vector<int> targets{3, 5};

  Tensor<T> g;
  train_loss(model, x, targets, &g);
  model.params().zero_grad();
  model.backward(g);

  auto params = model.params().trainable();
  auto central = [&](Parameter<T>* p, std::size_t i, double h) {
    const T old = p->value[i];
    p->value[i] = static_cast<T>(double(old) + h);
    const double lp = train_loss<T>(model, x, targets, nullptr);
    p->value[i] = static_cast<T>(double(old) - h);
    const double lm = train_loss<T>(model, x, targets, nullptr);
    p->value[i] = old;
    return (lp - lm) / (2 * h);
  };
  auto rel = [floor](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
  };

  GradCheckResult r;
  r.groups = params.size();
  std::size_t drawn = 0;
  const std::size_t max_draws = 4 * std::max(min_total, per_tensor * params.size());
  while ((r.checked < min_total || drawn < per_tensor * params.size()) && drawn < max_draws) {
    Parameter<T>* p = drawn < per_tensor * params.size() ? params[drawn / per_tensor]
                                                         : params[rng.below(params.size())];
    const std::size_t i = rng.below(p->value.size());
    ++drawn;
    const double n1 = central(p, i, step);
    const double n2 = central(p, i, step / 10);
    if (rel(n1, n2) > kink_tol) {
      ++r.kinks;
      continue;
    }
    const double e = rel(double(p->grad[i]), n1);
    ++r.checked;
    if (e > r.worst) {
      r.worst = e;
      r.worst_name = p->name + "[" + std::to_string(i) + "]";
    }
  }
  return r;
}

template GradCheckResult gradient_check<float>(const ModelConfig&, std::size_t, std::size_t,
                                               std::uint64_t, double, double, double);
template GradCheckResult gradient_check<double>(const ModelConfig&, std::size_t, std::size_t,
                                                std::uint64_t, double, double, double);

MiniRpmSpec overfit_spec(int image_size, std::uint64_t n_samples) {
  MiniRpmSpec spec;
  spec.n_samples = n_samples;
  spec.seed = 11;
  spec.image_size = image_size;
  spec.attributes = {Attribute::kSize, Attribute::kShade};
  spec.rules = {Rule::kConstant, Rule::kProgression};
  return spec;
}

std::vector<RpmProblem> generate(const MiniRpmSpec& spec, std::uint64_t begin,
                                 std::uint64_t end) {
  std::vector<RpmProblem> out;
  out.reserve(end - begin);
  for (std::uint64_t i = begin; i < end; ++i) out.push_back(generate_minirpm(spec, i));
  return out;
}

OverfitRun overfit(DrNet<float>& model, std::uint64_t n, int max_epochs) {
  OverfitRun run;
  run.data = generate(overfit_spec(model.config().image_size, n), 0, n);
  TrainConfig tc = train_preset("micro");
  tc.batch_size = int(n);
  tc.learning_rate = 1e-3;
  tc.max_epochs = max_epochs;
  tc.early_stop_patience = max_epochs;
  tc.flip_p = 0.0;
  tc.eval_train = true;
  tc.target_train_accuracy = 1.0;
  run.result = train(model, run.data, run.data, tc);
  const auto& last = run.result.history.back();
  run.final_train_accuracy = last.train_eval_accuracy.value_or(0.0);
  return run;
}

}  // namespace drnet::testing
