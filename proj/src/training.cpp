// SPDX-License-Identifier: Apache-2.0
#include "drnet/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

namespace drnet {

bool EarlyStopping::update(double loss) {
  if (loss < best_) {
    best_ = loss;
    since_ = 0;
    return false;
  }
  return ++since_ >= patience_;
}

bool deterministic_mode() {
  const char* v = std::getenv("DRNET_DETERMINISTIC");
  return v && *v && std::string(v) != "0";
}

EvalResult evaluate_scores(const Tensor<double>& scores, std::span<const RpmProblem> problems) {
  EvalResult r;
  r.n = problems.size();
  if (r.n == 0) return r;
  std::vector<int> targets;
  for (const auto& p : problems) targets.push_back(p.target);
  r.loss = cross_entropy(scores, targets);
  r.predictions = predict(scores);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const bool ok = r.predictions[i] == targets[i];
    correct += ok;
    auto& bucket = r.per_rule[problems[i].rules.empty() ? "unlabelled" : problems[i].rule_label()];
    bucket.total++;
    bucket.correct += ok;
  }
  r.accuracy = double(correct) / double(r.n);
  return r;
}

template <typename T>
EvalResult evaluate(DrNet<T>& model, std::span<const RpmProblem> problems, int batch_size) {
  Tensor<double> all({problems.size(), std::size_t(kCandidates)});
  for (std::size_t b0 = 0; b0 < problems.size(); b0 += std::size_t(batch_size)) {
    const std::size_t bn = std::min<std::size_t>(batch_size, problems.size() - b0);
    std::vector<const RpmProblem*> ptrs;
    for (std::size_t i = 0; i < bn; ++i) ptrs.push_back(&problems[b0 + i]);
    const Tensor<T> s = model.forward(to_tensor<T>(ptrs), Mode::kEval);
    for (std::size_t i = 0; i < s.size(); ++i) all[b0 * kCandidates + i] = double(s[i]);
  }
  return evaluate_scores(all, problems);
}

template <typename T>
void restore_params(DrNet<T>& model, const std::vector<Tensor<T>>& snapshot) {
  auto params = model.params().all();
  if (params.size() != snapshot.size()) throw ConfigError("snapshot does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snapshot[i];
}

template <typename T>
TrainResult<T> train(DrNet<T>& model, std::span<const RpmProblem> train_set,
                     std::span<const RpmProblem> val_set, const TrainConfig& cfg,
                     const TrainOptions& opts) {
  using Clock = std::chrono::steady_clock;
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");
  Adam<T> opt(model.params(), cfg);
  Rng rng(Rng::derive(cfg.seed, 7));
  EarlyStopping stopper(cfg.early_stop_patience);
  TrainResult<T> result;

  std::ofstream csv;
  if (opts.metrics_csv) {
    if (opts.metrics_csv->has_parent_path())
      std::filesystem::create_directories(opts.metrics_csv->parent_path());
    const bool fresh = !std::filesystem::exists(*opts.metrics_csv);
    csv.open(*opts.metrics_csv, std::ios::app);
    if (!csv) throw IoError("cannot open metrics log " + opts.metrics_csv->string());
    if (fresh) csv << "epoch,split,loss,accuracy,seconds\n";
  }
  if (opts.checkpoint_dir) std::filesystem::create_directories(*opts.checkpoint_dir);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto start = Clock::now();
  const std::size_t bs = std::size_t(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0;
    std::size_t correct = 0;
    std::size_t step = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs, ++step) {
      const std::size_t bn = std::min(bs, order.size() - b0);
      std::vector<RpmProblem> batch;
      batch.reserve(bn);
      std::vector<int> targets;
      for (std::size_t i = 0; i < bn; ++i) {
        const RpmProblem& p = train_set[order[b0 + i]];
        batch.push_back(cfg.flip_p > 0 ? augment_flip(p, cfg.flip_p, rng) : p);
        targets.push_back(p.target);
      }
      std::vector<const RpmProblem*> ptrs;
      for (const auto& p : batch) ptrs.push_back(&p);
      const Tensor<T> scores = model.forward(to_tensor<T>(ptrs), Mode::kTrain);
      Tensor<T> grad;
      const double loss = cross_entropy(scores, targets, &grad);
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      const auto pred = predict(scores);
      for (std::size_t i = 0; i < bn; ++i) correct += pred[i] == targets[i];
      loss_sum += loss * double(bn);
      model.params().zero_grad();
      model.backward(grad);
      opt.step();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(order.size());
    rec.train_accuracy = double(correct) / double(order.size());
    const EvalResult val = evaluate(model, val_set, cfg.batch_size);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    if (cfg.eval_train) rec.train_eval_accuracy = evaluate(model, train_set, cfg.batch_size).accuracy;
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    result.history.push_back(rec);

    if (csv) {
      csv << epoch << ",train," << rec.train_loss << "," << rec.train_accuracy << "," << rec.seconds << "\n";
      csv << epoch << ",val," << rec.val_loss << "," << rec.val_accuracy << "," << rec.seconds << "\n";
      if (rec.train_eval_accuracy)
        csv << epoch << ",train_eval,," << *rec.train_eval_accuracy << "," << rec.seconds << "\n";
      csv.flush();
    }
    CheckpointMeta meta{epoch, rec.val_loss, rec.val_accuracy, cfg};
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.best_params.clear();
      for (const auto* p : model.params().all()) result.best_params.push_back(p->value);
      if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir / "best.ckpt", model, &opt, meta);
    }
    if (opts.checkpoint_dir) save_checkpoint(*opts.checkpoint_dir / "last.ckpt", model, &opt, meta);
    if (opts.on_epoch) opts.on_epoch(rec);

    if (stopper.update(rec.val_loss)) {
      result.stop_reason = "early stopping: validation loss did not improve for " +
                           std::to_string(cfg.early_stop_patience) + " epochs";
      break;
    }
    if (cfg.target_train_accuracy > 0 && rec.train_eval_accuracy &&
        *rec.train_eval_accuracy >= cfg.target_train_accuracy) {
      result.stop_reason = "reached target training accuracy";
      break;
    }
    if (cfg.target_val_accuracy > 0 && rec.val_accuracy >= cfg.target_val_accuracy) {
      result.stop_reason = "reached target validation accuracy";
      break;
    }
    if (cfg.time_budget_seconds > 0 &&
        std::chrono::duration<double>(Clock::now() - start).count() >= cfg.time_budget_seconds) {
      result.stop_reason = "time budget exhausted";
      break;
    }
    if (epoch == cfg.max_epochs) result.stop_reason = "reached max_epochs";
  }
  return result;
}

template EvalResult evaluate(DrNet<float>&, std::span<const RpmProblem>, int);
template EvalResult evaluate(DrNet<double>&, std::span<const RpmProblem>, int);
template void restore_params(DrNet<float>&, const std::vector<Tensor<float>>&);
template void restore_params(DrNet<double>&, const std::vector<Tensor<double>>&);
template TrainResult<float> train(DrNet<float>&, std::span<const RpmProblem>,
                                  std::span<const RpmProblem>, const TrainConfig&,
                                  const TrainOptions&);
template TrainResult<double> train(DrNet<double>&, std::span<const RpmProblem>,
                                   std::span<const RpmProblem>, const TrainConfig&,
                                   const TrainOptions&);

}  // namespace drnet
