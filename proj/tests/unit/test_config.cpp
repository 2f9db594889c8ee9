// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "drnet/config.hpp"
#include "drnet/error.hpp"

using namespace drnet;

TEST_CASE("presets validate and target their parameter budgets") {
  for (const auto& name : model_preset_names()) {
    CAPTURE(name);
    CHECK_NOTHROW(model_preset(name).validate());
  }
  CHECK_THROWS_AS(model_preset("huge"), ConfigError);
  CHECK(train_preset("micro").batch_size == 32);
  CHECK(train_preset("desk").batch_size == 32);
  CHECK(train_preset("drnet-p").batch_size == 64);
  CHECK(train_preset("default").batch_size == 256);
}

TEST_CASE("defaults match the stated hyperparameters") {
  const ModelConfig m;
  CHECK(m.image_size == 80);
  CHECK(m.patch_size == 20);
  CHECK(m.embed_dim == 400);
  CHECK(m.tokens() == 16);
  CHECK(m.cnn_filters[3] * m.cnn_out_side() * m.cnn_out_side() == m.embed_dim);
  const TrainConfig t;
  CHECK(t.learning_rate == 3e-4);
  CHECK(t.beta1 == 0.9);
  CHECK(t.beta2 == 0.999);
  CHECK(t.weight_decay == 1e-6);
  CHECK(t.flip_p == 0.3);
  CHECK(t.early_stop_patience == 20);
  CHECK_FALSE(t.decoupled_weight_decay);
}

TEST_CASE("invalid model configs name the violated constraint") {
  ModelConfig m;
  m.image_size = 81;
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("divisible"), ConfigError);
  m = ModelConfig{};
  m.patch_size = 30;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = ModelConfig{};
  m.enable_cnn = m.enable_vit = false;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = ModelConfig{};
  m.cnn_filters = {64, 64, 64, 8};  // 8 * 25 != 400
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = ModelConfig{};
  m.embed_dim = 402;  // not divisible by 4 for the rule extractor pooling
  m.enable_cnn = false;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = ModelConfig{};
  m.vit_heads = 7;
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("key-value round trip reproduces the experiment config") {
  ExperimentConfig e;
  e.model = model_preset("desk");
  e.model.fusion_op = FusionOp::kAutL2;
  e.train.learning_rate = 1.25e-3;
  e.train.seed = 99;
  const std::string text = format_key_values(to_key_values(e));
  const ExperimentConfig back = apply_key_values(ExperimentConfig{}, parse_key_values(text));
  CHECK(back.model == e.model);
  CHECK(back.train == e.train);
  CHECK(text.find("train.learning_rate = 0.00125") != std::string::npos);
}

TEST_CASE("parser handles comments and rejects malformed or unknown keys") {
  const auto kv = parse_key_values("# header\nmodel.vit_depth = 4  # ablation\n\n  train.seed=3\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("model.vit_depth") == "4");
  CHECK(kv.at("train.seed") == "3");
  CHECK_THROWS_AS(parse_key_values("model.vit_depth 4\n"), ConfigError);
  CHECK_THROWS_WITH_AS(apply_key_values({}, {{"model.vit_width", "4"}}),
                       doctest::Contains("model.vit_width"), ConfigError);
  CHECK_THROWS_AS(apply_key_values({}, {{"optim.lr", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_key_values({}, {{"model.vit_depth", "four"}}), ConfigError);
  CHECK_THROWS_AS(apply_key_values({}, {{"model.enable_vit", "maybe"}}), ConfigError);
  CHECK_THROWS_AS(apply_key_values({}, {{"model.fusion_op", "MAX"}}), ConfigError);
}

TEST_CASE("preset key applies before individual overrides") {
  const auto e = apply_key_values({}, {{"model.preset", "micro"}, {"model.vit_depth", "3"}});
  CHECK(e.model.embed_dim == 64);
  CHECK(e.model.vit_depth == 3);
  CHECK(e.train.batch_size == 32);
}

TEST_CASE("overrides win over file values and reject unknown keys") {
  ExperimentConfig base;
  base = apply_key_values(base, {{"model.vit_depth", "6"}});
  const auto e = apply_overrides(base, {"model.vit_depth=4", "model.enable_vit=false"});
  CHECK(e.model.vit_depth == 4);
  CHECK_FALSE(e.model.enable_vit);
  CHECK_THROWS_AS(apply_overrides(base, {"model.depth=4"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"model.vit_depth"}), ConfigError);
}

TEST_CASE("first_difference and fingerprint") {
  ModelConfig a, b;
  CHECK_FALSE(first_difference(a, b).has_value());
  CHECK(fingerprint(a) == fingerprint(b));
  b.vit_heads = 4;
  REQUIRE(first_difference(a, b).has_value());
  CHECK(*first_difference(a, b) == "model.vit_heads");
  CHECK(fingerprint(a) != fingerprint(b));
}

TEST_CASE("fusion operator names round trip") {
  for (auto op : {FusionOp::kSum, FusionOp::kMea, FusionOp::kAut, FusionOp::kAutL1,
                  FusionOp::kAutL2, FusionOp::kLin})
    CHECK(parse_fusion_op(to_string(op)) == op);
}
