// SPDX-License-Identifier: Apache-2.0
// drnet: generate mini-RPM data, train, evaluate, analyze and inspect models.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drnet/analysis.hpp"
#include "drnet/checkpoint.hpp"
#include "drnet/error.hpp"
#include "drnet/training.hpp"

namespace fs = std::filesystem;
using namespace drnet;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct GenArgs {
  std::string spec, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int workers = 1;
};

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string checkpoint, data, split = "test";
  int batch = 64;
};

struct AnalyzeArgs {
  std::string checkpoint, data, which, out, split = "test";
  std::string layer = "cnn.block1.conv1";
  std::optional<int> rollout_layer;
  std::size_t sample = 0;
  std::optional<std::size_t> limit;
  int panel = 0;
  int batch = 64;
};

struct InspectArgs {
  std::string config;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) cfg = apply_key_values(cfg, read_key_values_file(path));
  cfg = apply_overrides(cfg, overrides);
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<RpmProblem> load(const std::string& data, const std::string& split) {
  const fs::path dir = fs::path(data) / split;
  if (!fs::is_directory(dir)) throw IoError("data split directory not found: " + dir.string());
  auto problems = load_split(dir, parse_split(split));
  if (problems.empty()) throw IoError("no .rpmx samples in " + dir.string());
  return problems;
}

DrNet<float> load_model(const std::string& checkpoint) {
  DrNet<float> model(checkpoint_model_config(checkpoint));
  load_checkpoint(checkpoint, model);
  return model;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  return f;
}

int cmd_gen(const GenArgs& a) {
  KeyValues kv = read_key_values_file(a.spec);
  for (const auto& o : a.overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    kv[o.substr(0, eq)] = o.substr(eq + 1);
  }
  MiniRpmSpec spec = spec_from_key_values(kv);
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const int workers = deterministic_mode() ? 1 : a.workers;
  const auto s = write_dataset(spec, a.out, workers);
  std::printf("train %llu\nval %llu\ntest %llu\nmanifest %016llx\n",
              static_cast<unsigned long long>(s.train), static_cast<unsigned long long>(s.val),
              static_cast<unsigned long long>(s.test),
              static_cast<unsigned long long>(s.manifest_hash));
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = resolve_config(a.config, a.overrides);
  if (a.seed) cfg.train.seed = *a.seed;
  const auto train_set = load(a.data, "train");
  const auto val_set = load(a.data, "val");
  fs::create_directories(a.out);
  {
    auto f = open_out(fs::path(a.out) / "config.cfg");
    f << format_key_values(to_key_values(cfg));
  }
  DrNet<float> model(cfg.model, cfg.train.seed);
  TrainOptions opts;
  opts.metrics_csv = fs::path(a.out) / "metrics.csv";
  opts.checkpoint_dir = fs::path(a.out);
  opts.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %d  train loss %.4f acc %.4f  val loss %.4f acc %.4f  %.1fs\n", r.epoch,
                r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.seconds);
    std::fflush(stdout);
  };
  const auto res = train(model, train_set, val_set, cfg.train, opts);
  std::printf("best val accuracy %.4f at epoch %d (%s)\n", res.best_val_accuracy,
              res.best_epoch, res.stop_reason.c_str());
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  DrNet<float> model = load_model(a.checkpoint);
  const auto problems = load(a.data, a.split);
  const auto r = evaluate(model, std::span<const RpmProblem>(problems), a.batch);
  std::printf("samples %zu\naccuracy %.4f\nloss %.4f\n", r.n, r.accuracy, r.loss);
  std::printf("%-48s %8s %8s %9s\n", "rule", "correct", "total", "accuracy");
  for (const auto& [rule, acc] : r.per_rule)
    std::printf("%-48s %8zu %8zu %9.4f\n", rule.c_str(), acc.correct, acc.total, acc.accuracy());
  return kOk;
}

int cmd_analyze(const AnalyzeArgs& a) {
  DrNet<float> model = load_model(a.checkpoint);
  auto problems = load(a.data, a.split);
  if (a.limit && *a.limit < problems.size()) problems.resize(*a.limit);
  const fs::path out(a.out);
  fs::create_directories(out);
  if (a.which == "embeddings") {
    const auto dump = export_rule_embeddings(model, std::span<const RpmProblem>(problems), a.batch);
    auto f = open_out(out / "embeddings.csv");
    write_embedding_csv(dump, f);
    const auto stats = rule_cosine_stats(dump);
    std::printf("rows %zu\nintra-rule cosine %.6f\ninter-rule cosine %.6f\n", dump.rows.size(),
                stats.intra, stats.inter);
    return kOk;
  }
  if (a.which == "similarity") {
    const auto r = stream_similarity(model, std::span<const RpmProblem>(problems), a.batch);
    auto h = open_out(out / "similarity_histogram.csv");
    write_histogram_csv(r, h);
    auto v = open_out(out / "similarity_values.csv");
    write_similarity_values_csv(r, v);
    std::printf("panels %zu\nskipped %zu\nmean %.6f\nmedian %.6f\n", r.values.size(), r.skipped,
                r.mean, r.median);
    return kOk;
  }
  if (a.sample >= problems.size())
    throw ConfigError("--sample " + std::to_string(a.sample) + " out of range (" +
                      std::to_string(problems.size()) + " samples)");
  const RpmProblem& p = problems[a.sample];
  const std::string stem = "sample" + std::to_string(a.sample);
  if (a.which == "rollout") {
    const auto maps = attention_rollout(model, p, a.rollout_layer);
    for (std::size_t i = 0; i < maps.size(); ++i)
      write_pgm(maps[i].image, out / (stem + "_panel" + std::to_string(i) + ".pgm"));
    std::printf("wrote %zu rollout maps (%dx%d tokens)\n", maps.size(), maps[0].grid,
                maps[0].grid);
    return kOk;
  }
  // features
  const auto maps = cnn_feature_maps(model, p, a.layer, a.panel);
  for (std::size_t c = 0; c < maps.size(); ++c)
    write_pgm(maps[c], out / (stem + "_panel" + std::to_string(a.panel) + "_" + a.layer +
                              "_ch" + std::to_string(c) + ".pgm"));
  std::printf("wrote %zu feature maps of %dx%d\n", maps.size(), maps[0].width, maps[0].height);
  return kOk;
}

int cmd_inspect(const InspectArgs& a) {
  const ExperimentConfig cfg = resolve_config(a.config, a.overrides);
  std::cout << format_key_values(to_key_values(cfg));
  DrNet<float> model(cfg.model);
  const ParamCounts c = model.param_counts();
  std::printf("\nparameters\n");
  std::printf("  cnn         %12zu\n  vit         %12zu\n  fusion      %12zu\n", c.cnn, c.vit,
              c.fusion);
  std::printf("  rule        %12zu\n  classifier  %12zu\n  total       %12zu\n", c.rule,
              c.classifier, c.total());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DRNet: dual-stream reasoning network for Raven's Progressive Matrices"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage or config error, 2 data/format error, "
             "3 numeric failure.\nSet DRNET_DETERMINISTIC=1 to pin data workers to one.");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a mini-RPM dataset (RPMX files + manifest)");
  g->add_option("--spec", gen.spec, "Generator spec file (data.* keys)")->required();
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--override", gen.overrides, "data.key=value, repeatable");
  g->add_option("--seed", gen.seed, "Overrides data.seed");
  g->add_option("--workers", gen.workers, "Generator threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes metrics.csv and checkpoints");
  t->add_option("--config", tr.config, "Experiment config file (model.* and train.* keys)");
  t->add_option("--data", tr.data, "Dataset directory with train/ and val/")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--override", tr.overrides, "model.key=value or train.key=value, repeatable");
  t->add_option("--seed", tr.seed, "Overrides train.seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Accuracy and per-rule table of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--batch", ev.batch, "Evaluation batch size")->check(CLI::PositiveNumber);

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Export embeddings, similarity, rollout or features");
  a->add_option("--checkpoint", an.checkpoint, "Checkpoint file")->required();
  a->add_option("--data", an.data, "Dataset directory")->required();
  a->add_option("--which", an.which, "embeddings, similarity, rollout or features")
      ->required()
      ->check(CLI::IsMember({"embeddings", "similarity", "rollout", "features"}));
  a->add_option("--out", an.out, "Output directory")->required();
  a->add_option("--split", an.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  a->add_option("--limit", an.limit, "Use only the first N samples");
  a->add_option("--sample", an.sample, "Sample index for rollout/features");
  a->add_option("--layer", an.layer, "CNN layer for features");
  a->add_option("--rollout-layer", an.rollout_layer, "Single ViT layer for rollout (default: all)");
  a->add_option("--panel", an.panel, "Panel index for features");
  a->add_option("--batch", an.batch, "Batch size")->check(CLI::PositiveNumber);

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Print resolved config and parameter counts");
  i->add_option("--config", in.config, "Experiment config file");
  i->add_option("--override", in.overrides, "model.key=value or train.key=value, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*a) return cmd_analyze(an);
    return cmd_inspect(in);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  }
}
