// SPDX-License-Identifier: Apache-2.0
#include "drnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "drnet/error.hpp"

namespace drnet {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt_double(double d) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename C>
struct Field {
  std::string name;
  std::function<std::string(const C&)> get;
  std::function<void(C&, const std::string& key, const std::string&)> set;
};

#define DRNET_INT(C, f)                                                               \
  Field<C> {                                                                          \
    #f, [](const C& c) { return std::to_string(c.f); },                               \
        [](C& c, const std::string& k, const std::string& v) { c.f = parse_int(k, v); } \
  }
#define DRNET_DBL(C, f)                                                                  \
  Field<C> {                                                                             \
    #f, [](const C& c) { return fmt_double(c.f); },                                      \
        [](C& c, const std::string& k, const std::string& v) { c.f = parse_double(k, v); } \
  }
#define DRNET_BOOL(C, f)                                                               \
  Field<C> {                                                                           \
    #f, [](const C& c) { return fmt_bool(c.f); },                                      \
        [](C& c, const std::string& k, const std::string& v) { c.f = parse_bool(k, v); } \
  }
#define DRNET_LIST(C, f)                                                                   \
  Field<C> {                                                                               \
    #f, [](const C& c) { return fmt_list(c.f); },                                          \
        [](C& c, const std::string& k, const std::string& v) { c.f = parse_int_list(k, v); } \
  }

const std::vector<Field<ModelConfig>>& model_fields() {
  static const std::vector<Field<ModelConfig>> fields = {
      DRNET_INT(ModelConfig, image_size),
      DRNET_INT(ModelConfig, patch_size),
      DRNET_INT(ModelConfig, embed_dim),
      DRNET_INT(ModelConfig, vit_depth),
      DRNET_INT(ModelConfig, vit_heads),
      DRNET_INT(ModelConfig, vit_mlp_ratio),
      DRNET_INT(ModelConfig, cnn_kernel),
      DRNET_LIST(ModelConfig, cnn_filters),
      DRNET_BOOL(ModelConfig, enable_cnn),
      DRNET_BOOL(ModelConfig, enable_vit),
      Field<ModelConfig>{"fusion_op", [](const ModelConfig& c) { return to_string(c.fusion_op); },
                         [](ModelConfig& c, const std::string&, const std::string& v) {
                           c.fusion_op = parse_fusion_op(v);
                         }},
      DRNET_LIST(ModelConfig, rule_filters),
      DRNET_INT(ModelConfig, rule_kernel),
      DRNET_LIST(ModelConfig, classifier_dims),
      DRNET_DBL(ModelConfig, dropout),
  };
  return fields;
}

const std::vector<Field<TrainConfig>>& train_fields() {
  static const std::vector<Field<TrainConfig>> fields = {
      DRNET_INT(TrainConfig, batch_size),
      DRNET_DBL(TrainConfig, learning_rate),
      DRNET_DBL(TrainConfig, beta1),
      DRNET_DBL(TrainConfig, beta2),
      DRNET_DBL(TrainConfig, adam_eps),
      DRNET_DBL(TrainConfig, weight_decay),
      DRNET_BOOL(TrainConfig, decoupled_weight_decay),
      DRNET_DBL(TrainConfig, flip_p),
      DRNET_INT(TrainConfig, early_stop_patience),
      DRNET_INT(TrainConfig, max_epochs),
      Field<TrainConfig>{"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                         [](TrainConfig& c, const std::string& k, const std::string& v) {
                           c.seed = parse_u64(k, v);
                         }},
      DRNET_DBL(TrainConfig, time_budget_seconds),
      DRNET_BOOL(TrainConfig, eval_train),
      DRNET_DBL(TrainConfig, target_train_accuracy),
      DRNET_DBL(TrainConfig, target_val_accuracy),
      DRNET_INT(TrainConfig, workers),
  };
  return fields;
}

#undef DRNET_INT
#undef DRNET_DBL
#undef DRNET_BOOL
#undef DRNET_LIST

template <typename C>
bool set_field(const std::vector<Field<C>>& fields, C& c, const std::string& name,
               const std::string& full_key, const std::string& value) {
  for (const auto& f : fields) {
    if (f.name == name) {
      f.set(c, full_key, value);
      return true;
    }
  }
  return false;
}

}  // namespace

std::string to_string(FusionOp op) {
  switch (op) {
    case FusionOp::kSum: return "SUM";
    case FusionOp::kMea: return "MEA";
    case FusionOp::kAut: return "AUT";
    case FusionOp::kAutL1: return "AUT_L1";
    case FusionOp::kAutL2: return "AUT_L2";
    case FusionOp::kLin: return "LIN";
  }
  return "?";
}

FusionOp parse_fusion_op(std::string_view s) {
  std::string u(s);
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  std::replace(u.begin(), u.end(), '-', '_');
  if (u == "SUM") return FusionOp::kSum;
  if (u == "MEA") return FusionOp::kMea;
  if (u == "AUT") return FusionOp::kAut;
  if (u == "AUT_L1") return FusionOp::kAutL1;
  if (u == "AUT_L2") return FusionOp::kAutL2;
  if (u == "LIN") return FusionOp::kLin;
  throw ConfigError("unknown fusion operator '" + std::string(s) +
                    "' (expected SUM, MEA, AUT, AUT_L1, AUT_L2, LIN)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (!enable_cnn && !enable_vit) fail("at least one of enable_cnn, enable_vit must be true");
  if (image_size <= 0) fail("image_size must be positive");
  if (embed_dim <= 0) fail("embed_dim must be positive");
  if (image_size % 16 != 0)
    fail("image_size " + std::to_string(image_size) +
         " must be divisible by 16 (four stride-2 stages)");
  if (embed_dim % 4 != 0)
    fail("embed_dim " + std::to_string(embed_dim) + " must be divisible by 4 (rule max-pool)");
  if (enable_cnn) {
    if (cnn_filters.size() != 4) fail("cnn_filters must list 4 counts");
    for (int f : cnn_filters)
      if (f <= 0) fail("cnn_filters entries must be positive");
    if (cnn_kernel <= 0 || cnn_kernel % 2 == 0) fail("cnn_kernel must be a positive odd number");
    const int side = cnn_out_side();
    if (cnn_filters[3] * side * side != embed_dim)
      fail("cnn_filters[3] * (image_size/16)^2 = " + std::to_string(cnn_filters[3] * side * side) +
           " must equal embed_dim " + std::to_string(embed_dim));
  }
  if (enable_vit) {
    if (patch_size <= 0 || image_size % patch_size != 0)
      fail("image_size " + std::to_string(image_size) + " must be divisible by patch_size " +
           std::to_string(patch_size));
    if (vit_depth < 1) fail("vit_depth must be at least 1");
    if (vit_heads < 1 || embed_dim % vit_heads != 0)
      fail("embed_dim " + std::to_string(embed_dim) + " must be divisible by vit_heads " +
           std::to_string(vit_heads));
    if (vit_mlp_ratio < 1) fail("vit_mlp_ratio must be at least 1");
  }
  if (rule_filters.size() != 4) fail("rule_filters must list 4 counts");
  for (int f : rule_filters)
    if (f <= 0) fail("rule_filters entries must be positive");
  if (rule_filters[3] * 16 != 1024)
    fail("rule_filters[3] must be 64 so the rule embedding has 1024 entries");
  if (rule_kernel <= 0 || rule_kernel % 2 == 0) fail("rule_kernel must be a positive odd number");
  if (classifier_dims.empty() || classifier_dims.back() != 1)
    fail("classifier_dims must end with 1");
  for (int f : classifier_dims)
    if (f <= 0) fail("classifier_dims entries must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(flip_p >= 0 && flip_p <= 1)) fail("flip_p must lie in [0, 1]");
  if (early_stop_patience < 1) fail("early_stop_patience must be at least 1");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (workers < 1) fail("workers must be at least 1");
}

ModelConfig model_preset(std::string_view name) {
  ModelConfig m;
  if (name == "default" || name == "drnet") return m;
  if (name == "micro") {
    m.image_size = 32;
    m.patch_size = 8;
    m.embed_dim = 64;
    m.vit_depth = 1;
    m.vit_heads = 4;
    m.cnn_filters = {8, 8, 8, 16};
    return m;
  }
  if (name == "drnet-p") {
    // Targets the ~3.4M budget of the small model; layout chosen here.
    m.vit_depth = 1;
    m.vit_mlp_ratio = 3;
    return m;
  }
  if (name == "desk") {
    m.image_size = 32;
    m.patch_size = 8;
    m.embed_dim = 64;
    m.vit_depth = 2;
    m.vit_heads = 4;
    m.cnn_filters = {16, 16, 16, 16};
    m.rule_filters = {32, 64, 64, 64};
    return m;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> model_preset_names() { return {"default", "micro", "drnet-p", "desk"}; }

TrainConfig train_preset(std::string_view name) {
  TrainConfig t;
  if (name == "micro" || name == "desk") t.batch_size = 32;
  else if (name == "drnet-p") t.batch_size = 64;
  else model_preset(name);  // validates the name
  return t;
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (kv.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + key);
    kv[key] = value;
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

KeyValues read_key_values_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

KeyValues to_key_values(const ModelConfig& m) {
  KeyValues kv;
  for (const auto& f : model_fields()) kv["model." + f.name] = f.get(m);
  return kv;
}

KeyValues to_key_values(const TrainConfig& t) {
  KeyValues kv;
  for (const auto& f : train_fields()) kv["train." + f.name] = f.get(t);
  return kv;
}

KeyValues to_key_values(const ExperimentConfig& e) {
  KeyValues kv = to_key_values(e.model);
  kv.merge(to_key_values(e.train));
  return kv;
}

ExperimentConfig apply_key_values(ExperimentConfig base, const KeyValues& kv) {
  if (auto it = kv.find("model.preset"); it != kv.end()) {
    base.model = model_preset(it->second);
    base.train.batch_size = train_preset(it->second).batch_size;
  }
  for (const auto& [key, value] : kv) {
    if (key == "model.preset") continue;
    bool ok = false;
    if (key.rfind("model.", 0) == 0) ok = set_field(model_fields(), base.model, key.substr(6), key, value);
    else if (key.rfind("train.", 0) == 0) ok = set_field(train_fields(), base.train, key.substr(6), key, value);
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }
  return base;
}

ExperimentConfig apply_overrides(ExperimentConfig base, const std::vector<std::string>& overrides) {
  KeyValues kv;
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    kv[trim(std::string_view(o).substr(0, eq))] = trim(std::string_view(o).substr(eq + 1));
  }
  return apply_key_values(std::move(base), kv);
}

std::optional<std::string> first_difference(const ModelConfig& a, const ModelConfig& b) {
  for (const auto& f : model_fields())
    if (f.get(a) != f.get(b)) return "model." + f.name;
  return std::nullopt;
}

std::string fingerprint(const ModelConfig& m) { return format_key_values(to_key_values(m)); }

}  // namespace drnet
