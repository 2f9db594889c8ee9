// SPDX-License-Identifier: Apache-2.0
#include "drnet/rpm_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <set>
#include <sstream>
#include <thread>

#include "drnet/error.hpp"

namespace drnet {

namespace {

constexpr int kCandidatesPerProblem = 8;
constexpr std::array<double, kNumLevels> kRadius80{8, 12, 16, 20, 24};
constexpr std::array<std::uint8_t, kNumLevels> kShade{51, 102, 153, 204, 255};

struct Vertex {
  double x, y;
};

// Unit circumradius vertices in image coordinates (y down), first vertex up.
// Literal tables keep rasterisation independent of the platform libm.
constexpr Vertex kTriangle[] = {{0.0, -1.0}, {0.86602540378443865, 0.5}, {-0.86602540378443865, 0.5}};
constexpr Vertex kSquare[] = {{-0.70710678118654752, -0.70710678118654752},
                              {0.70710678118654752, -0.70710678118654752},
                              {0.70710678118654752, 0.70710678118654752},
                              {-0.70710678118654752, 0.70710678118654752}};
constexpr Vertex kPentagon[] = {{0.0, -1.0},
                                {0.95105651629515357, -0.30901699437494742},
                                {0.58778525229247314, 0.80901699437494743},
                                {-0.58778525229247314, 0.80901699437494743},
                                {-0.95105651629515357, -0.30901699437494742}};
constexpr Vertex kHexagon[] = {{0.0, -1.0}, {0.86602540378443865, -0.5}, {0.86602540378443865, 0.5},
                               {0.0, 1.0},  {-0.86602540378443865, 0.5}, {-0.86602540378443865, -0.5}};

std::span<const Vertex> polygon(int shape) {
  switch (shape) {
    case 0: return kTriangle;
    case 1: return kSquare;
    case 2: return kPentagon;
    case 3: return kHexagon;
    default: return {};  // circle
  }
}

bool inside(int shape, double cx, double cy, double r, double px, double py) {
  const double dx = px - cx, dy = py - cy;
  auto poly = polygon(shape);
  if (poly.empty()) return dx * dx + dy * dy <= r * r;
  bool pos = false, neg = false;
  for (std::size_t k = 0; k < poly.size(); ++k) {
    const Vertex a = poly[k], b = poly[(k + 1) % poly.size()];
    const double ax = a.x * r, ay = a.y * r, bx = b.x * r, by = b.y * r;
    const double cross = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
    if (cross > 0) pos = true;
    if (cross < 0) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

bool is_enabled(const MiniRpmSpec& s, Attribute a) {
  return std::find(s.attributes.begin(), s.attributes.end(), a) != s.attributes.end();
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

bool row_satisfies(Rule rule, const std::array<int, 3>& row) {
  switch (rule) {
    case Rule::kConstant: return row[0] == row[1] && row[1] == row[2];
    case Rule::kProgression: return row[1] == row[0] + 1 && row[2] == row[1] + 1;
    case Rule::kDistributeThree:
      return row[0] != row[1] && row[1] != row[2] && row[0] != row[2];
  }
  return false;
}

}  // namespace

std::string to_string(Attribute a) {
  switch (a) {
    case Attribute::kShape: return "shape";
    case Attribute::kSize: return "size";
    case Attribute::kShade: return "shade";
    case Attribute::kCount: return "count";
  }
  return "?";
}

std::string to_string(Rule r) {
  switch (r) {
    case Rule::kConstant: return "constant";
    case Rule::kProgression: return "progression";
    case Rule::kDistributeThree: return "distribute_three";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "?";
}

Attribute parse_attribute(const std::string& s) {
  for (int i = 0; i < kNumAttributes; ++i)
    if (to_string(Attribute(i)) == s) return Attribute(i);
  throw ConfigError("unknown attribute '" + s + "' (expected shape, size, shade, count)");
}

Rule parse_rule(const std::string& s) {
  for (int i = 0; i < 3; ++i)
    if (to_string(Rule(i)) == s) return Rule(i);
  throw ConfigError("unknown rule '" + s + "' (expected constant, progression, distribute_three)");
}

// ---------------------------------------------------------------------------
// RpmProblem

std::span<const std::uint8_t> RpmProblem::panel(int i) const {
  const std::size_t n = std::size_t(height) * width;
  return {pixels.data() + std::size_t(i) * n, n};
}

std::span<std::uint8_t> RpmProblem::panel(int i) {
  const std::size_t n = std::size_t(height) * width;
  return {pixels.data() + std::size_t(i) * n, n};
}

std::string RpmProblem::rule_label() const {
  std::string s;
  for (const auto& r : rules) {
    if (!s.empty()) s += ";";
    s += to_string(r.attribute) + "=" + to_string(r.rule);
  }
  return s;
}

void RpmProblem::validate() const {
  if (height <= 0 || width <= 0 || height > 65535 || width > 65535)
    throw ConfigError("problem: invalid panel size");
  if (pixels.size() != std::size_t(16) * height * width)
    throw ConfigError("problem: expected 16 panels of " + std::to_string(height) + "x" +
                      std::to_string(width));
  if (target < 0 || target >= 8) throw ConfigError("problem: target must lie in 0..7");
  if (rules.size() > 255) throw ConfigError("problem: too many rule labels");
}

// ---------------------------------------------------------------------------
// Spec

void MiniRpmSpec::validate() const {
  if (n_samples == 0) throw ConfigError("data spec: n_samples must be positive");
  if (image_size < 8) throw ConfigError("data spec: image_size must be at least 8");
  if (attributes.empty()) throw ConfigError("data spec: enable at least one attribute");
  if (rules.empty()) throw ConfigError("data spec: enable at least one rule");
  if (min_perturbed < 1 || max_perturbed < min_perturbed || max_perturbed > kNumAttributes)
    throw ConfigError("data spec: need 1 <= min_perturbed <= max_perturbed <= 4");
  if (max_retries < 1) throw ConfigError("data spec: max_retries must be positive");
  double s = 0;
  for (double r : split_ratios) {
    if (r < 0) throw ConfigError("data spec: split ratios must be non-negative");
    s += r;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("data spec: split ratios must sum to 1");
}

KeyValues to_key_values(const MiniRpmSpec& s) {
  KeyValues kv;
  kv["data.n_samples"] = std::to_string(s.n_samples);
  kv["data.seed"] = std::to_string(s.seed);
  kv["data.image_size"] = std::to_string(s.image_size);
  std::string a, r;
  for (auto x : s.attributes) a += (a.empty() ? "" : ",") + to_string(x);
  for (auto x : s.rules) r += (r.empty() ? "" : ",") + to_string(x);
  kv["data.attributes"] = a;
  kv["data.rules"] = r;
  kv["data.min_perturbed"] = std::to_string(s.min_perturbed);
  kv["data.max_perturbed"] = std::to_string(s.max_perturbed);
  kv["data.max_retries"] = std::to_string(s.max_retries);
  std::ostringstream os;
  os << s.split_ratios[0] << "," << s.split_ratios[1] << "," << s.split_ratios[2];
  kv["data.split"] = os.str();
  return kv;
}

MiniRpmSpec spec_from_key_values(const KeyValues& kv) {
  MiniRpmSpec s;
  auto num = [](const std::string& k, const std::string& v) -> long long {
    try {
      std::size_t used = 0;
      long long x = std::stoll(v, &used);
      if (used != v.size() || x < 0) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(k + ": expected a non-negative integer, got '" + v + "'");
    }
  };
  for (const auto& [k, v] : kv) {
    if (k == "data.n_samples") s.n_samples = std::uint64_t(num(k, v));
    else if (k == "data.seed") s.seed = std::stoull(v);
    else if (k == "data.image_size") s.image_size = int(num(k, v));
    else if (k == "data.min_perturbed") s.min_perturbed = int(num(k, v));
    else if (k == "data.max_perturbed") s.max_perturbed = int(num(k, v));
    else if (k == "data.max_retries") s.max_retries = int(num(k, v));
    else if (k == "data.attributes") {
      s.attributes.clear();
      for (const auto& x : split_list(v)) s.attributes.push_back(parse_attribute(x));
    } else if (k == "data.rules") {
      s.rules.clear();
      for (const auto& x : split_list(v)) s.rules.push_back(parse_rule(x));
    } else if (k == "data.split") {
      auto parts = split_list(v);
      if (parts.size() != 3) throw ConfigError("data.split: expected three ratios");
      for (int i = 0; i < 3; ++i) {
        try {
          s.split_ratios[i] = std::stod(parts[i]);
        } catch (const std::exception&) {
          throw ConfigError("data.split: bad ratio '" + parts[i] + "'");
        }
      }
    } else {
      throw ConfigError("unknown data spec key '" + k + "'");
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Generation

void render_panel(const AttributeVector& attrs, int size, std::span<std::uint8_t> out) {
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  const double scale = double(size) / 80.0;
  const int shape = attrs[0];
  const int count = attrs[3] + 1;
  double radius = kRadius80[attrs[1]] * scale;
  const std::uint8_t shade = kShade[attrs[2]];
  std::vector<Vertex> centers;
  if (count == 1) {
    centers.push_back({size / 2.0, size / 2.0});
  } else {
    // 2x3 anchor grid, filled row-major; shapes shrink to fit a cell.
    radius *= 0.5;
    for (int k = 0; k < count; ++k) {
      const int r = k / 3, c = k % 3;
      centers.push_back({(c + 0.5) * size / 3.0, (r + 0.5) * size / 2.0});
    }
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      for (const auto& c : centers)
        if (inside(shape, c.x, c.y, radius, px, py)) {
          out[std::size_t(y) * size + x] = shade;
          break;
        }
    }
}

RpmProblem generate_minirpm(const MiniRpmSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng(Rng::derive(spec.seed, index));
  // grid[a][r][c]
  std::array<std::array<std::array<int, 3>, 3>, kNumAttributes> grid{};
  RpmProblem p;
  for (int a = 0; a < kNumAttributes; ++a) {
    auto& g = grid[a];
    if (!is_enabled(spec, Attribute(a))) {
      const int v = int(rng.below(kNumLevels));
      for (auto& row : g) row = {v, v, v};
      continue;
    }
    const Rule rule = spec.rules[rng.below(spec.rules.size())];
    p.rules.push_back({Attribute(a), rule});
    switch (rule) {
      case Rule::kConstant:
        for (auto& row : g) {
          const int v = int(rng.below(kNumLevels));
          row = {v, v, v};
        }
        break;
      case Rule::kProgression:
        for (auto& row : g) {
          const int s = int(rng.below(kNumLevels - 2));
          row = {s, s + 1, s + 2};
        }
        break;
      case Rule::kDistributeThree: {
        std::array<int, kNumLevels> values{0, 1, 2, 3, 4};
        rng.shuffle(std::span<int>(values));
        static constexpr std::array<std::array<int, 3>, 6> kPerms{
            {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
        std::array<int, 6> order{0, 1, 2, 3, 4, 5};
        rng.shuffle(std::span<int>(order));
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) g[r][c] = values[kPerms[order[r]][c]];
        break;
      }
    }
  }
  std::sort(p.rules.begin(), p.rules.end(),
            [](const RuleLabel& x, const RuleLabel& y) { return x.attribute < y.attribute; });

  auto cell = [&](int r, int c) {
    AttributeVector v{};
    for (int a = 0; a < kNumAttributes; ++a) v[a] = std::uint8_t(grid[a][r][c]);
    return v;
  };
  const AttributeVector answer = cell(2, 2);

  std::vector<int> perturbable;
  for (int a = 0; a < kNumAttributes; ++a)
    if (is_enabled(spec, Attribute(a))) perturbable.push_back(a);
  // One enabled attribute cannot yield 7 distinct distractors on its own.
  if (perturbable.size() < 2) perturbable = {0, 1, 2, 3};
  const int max_k = std::min<int>(spec.max_perturbed, int(perturbable.size()));
  const int min_k = std::min(spec.min_perturbed, max_k);

  std::vector<AttributeVector> candidates{answer};
  std::set<AttributeVector> seen{answer};
  int attempts = 0;
  while (candidates.size() < std::size_t(kCandidatesPerProblem)) {
    if (++attempts > spec.max_retries)
      throw GenerationError("could not find 7 distinct distractors after " +
                                std::to_string(spec.max_retries) + " attempts",
                            index);
    AttributeVector d = answer;
    std::vector<int> attrs = perturbable;
    rng.shuffle(std::span<int>(attrs));
    const int k = rng.uniform_int(min_k, max_k);
    for (int i = 0; i < k; ++i) {
      const int a = attrs[i];
      const int shift = 1 + int(rng.below(kNumLevels - 1));
      d[a] = std::uint8_t((d[a] + shift) % kNumLevels);
    }
    if (seen.insert(d).second) candidates.push_back(d);
  }
  std::array<int, kCandidatesPerProblem> order{0, 1, 2, 3, 4, 5, 6, 7};
  rng.shuffle(std::span<int>(order));

  p.height = p.width = spec.image_size;
  p.pixels.assign(std::size_t(16) * spec.image_size * spec.image_size, 0);
  p.attributes.resize(16);
  for (int i = 0; i < 8; ++i) p.attributes[i] = cell(i / 3, i % 3);
  for (int pos = 0; pos < kCandidatesPerProblem; ++pos) {
    p.attributes[8 + pos] = candidates[order[pos]];
    if (order[pos] == 0) p.target = pos;
  }
  for (int i = 0; i < 16; ++i) render_panel(p.attributes[i], spec.image_size, p.panel(i));
  return p;
}

std::vector<int> rule_satisfying_candidates(const RpmProblem& p) {
  if (p.attributes.size() != 16) throw ConfigError("rule check needs attribute metadata");
  std::vector<int> ok;
  for (int cand = 0; cand < 8; ++cand) {
    bool good = true;
    for (int a = 0; a < kNumAttributes && good; ++a) {
      std::array<std::array<int, 3>, 3> g{};
      for (int i = 0; i < 9; ++i) {
        const auto& v = i < 8 ? p.attributes[i] : p.attributes[8 + cand];
        g[i / 3][i % 3] = v[a];
      }
      auto it = std::find_if(p.rules.begin(), p.rules.end(),
                             [&](const RuleLabel& r) { return int(r.attribute) == a; });
      if (it == p.rules.end()) {
        // unlabelled attributes are fixed across the whole matrix
        for (int i = 0; i < 9; ++i) good = good && g[i / 3][i % 3] == g[0][0];
        continue;
      }
      for (const auto& row : g) good = good && row_satisfies(it->rule, row);
      if (good && it->rule == Rule::kDistributeThree) {
        auto sorted = [](std::array<int, 3> r) {
          std::sort(r.begin(), r.end());
          return r;
        };
        good = sorted(g[0]) == sorted(g[1]) && sorted(g[1]) == sorted(g[2]) && g[0] != g[1] &&
               g[1] != g[2] && g[0] != g[2];
      }
    }
    if (good) ok.push_back(cand);
  }
  return ok;
}

// ---------------------------------------------------------------------------
// RPMX

std::vector<std::uint8_t> encode_rpmx(const RpmProblem& p) {
  p.validate();
  std::vector<std::uint8_t> out{'R', 'P', 'M', 'X'};
  out.reserve(12 + 2 * p.rules.size() + p.pixels.size());
  out.push_back(1);   // version
  out.push_back(16);  // panels
  put_u16(out, std::uint16_t(p.height));
  put_u16(out, std::uint16_t(p.width));
  out.push_back(std::uint8_t(p.target));
  out.push_back(std::uint8_t(p.rules.size()));
  for (const auto& r : p.rules) {
    out.push_back(std::uint8_t(r.attribute));
    out.push_back(std::uint8_t(r.rule));
  }
  out.insert(out.end(), p.pixels.begin(), p.pixels.end());
  return out;
}

RpmProblem decode_rpmx(std::span<const std::uint8_t> b) {
  auto need = [&](std::size_t off, std::size_t n, const char* what) {
    if (b.size() < off + n) throw FormatError(std::string("truncated RPMX ") + what, b.size());
  };
  need(0, 12, "header");
  if (std::memcmp(b.data(), "RPMX", 4) != 0) throw FormatError("bad RPMX magic", 0);
  if (b[4] != 1) throw FormatError("unsupported RPMX version " + std::to_string(b[4]), 4);
  if (b[5] != 16) throw FormatError("RPMX panel count must be 16", 5);
  RpmProblem p;
  p.height = b[6] | (b[7] << 8);
  p.width = b[8] | (b[9] << 8);
  if (p.height == 0) throw FormatError("RPMX height is zero", 6);
  if (p.width == 0) throw FormatError("RPMX width is zero", 8);
  p.target = b[10];
  if (p.target >= 8) throw FormatError("RPMX target out of range", 10);
  const std::size_t n_rules = b[11];
  std::size_t off = 12;
  need(off, 2 * n_rules, "rule table");
  for (std::size_t i = 0; i < n_rules; ++i, off += 2) {
    if (b[off] >= kNumAttributes) throw FormatError("RPMX attribute id out of range", off);
    if (b[off + 1] >= 3) throw FormatError("RPMX rule id out of range", off + 1);
    p.rules.push_back({Attribute(b[off]), Rule(b[off + 1])});
  }
  const std::size_t payload = std::size_t(16) * p.height * p.width;
  need(off, payload, "pixel payload");
  p.pixels.assign(b.begin() + off, b.begin() + off + payload);
  off += payload;
  if (off != b.size()) throw FormatError("trailing bytes after RPMX payload", off);
  return p;
}

void write_rpmx(const RpmProblem& p, std::ostream& out) {
  const auto bytes = encode_rpmx(p);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing RPMX stream");
}

RpmProblem read_rpmx(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_rpmx(bytes);
}

void write_rpmx_file(const RpmProblem& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path.string());
  write_rpmx(p, out);
}

RpmProblem read_rpmx_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_rpmx(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Augmentation

void flip_horizontal(RpmProblem& p) {
  for (int i = 0; i < 16; ++i) {
    auto px = p.panel(i);
    for (int y = 0; y < p.height; ++y)
      std::reverse(px.begin() + std::ptrdiff_t(y) * p.width, px.begin() + std::ptrdiff_t(y + 1) * p.width);
  }
}

void flip_vertical(RpmProblem& p) {
  for (int i = 0; i < 16; ++i) {
    auto px = p.panel(i);
    for (int y = 0; y < p.height / 2; ++y)
      std::swap_ranges(px.begin() + std::ptrdiff_t(y) * p.width,
                       px.begin() + std::ptrdiff_t(y + 1) * p.width,
                       px.begin() + std::ptrdiff_t(p.height - 1 - y) * p.width);
  }
}

RpmProblem augment_flip(const RpmProblem& p, double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  RpmProblem out = p;
  const bool h = rng.bernoulli(prob);
  const bool v = rng.bernoulli(prob);
  if (h) flip_horizontal(out);
  if (v) flip_vertical(out);
  return out;
}

// ---------------------------------------------------------------------------
// Splits and datasets

DatasetSplits make_splits(const MiniRpmSpec& spec, std::array<double, 3> ratios) {
  double sum = 0;
  for (double r : ratios) {
    if (r < 0) throw ConfigError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const std::uint64_t n = spec.n_samples;
  const auto n_train = std::uint64_t(std::llround(double(n) * ratios[0]));
  const auto n_val = std::min<std::uint64_t>(n - std::min(n, n_train),
                                             std::uint64_t(std::llround(double(n) * ratios[1])));
  DatasetSplits s;
  s.train = {Split::kTrain, 0, std::min(n, n_train)};
  s.val = {Split::kVal, s.train.end, s.train.end + n_val};
  s.test = {Split::kTest, s.val.end, n};
  for (const auto* r : {&s.train, &s.val, &s.test})
    if (r->size() == 0) throw ConfigError("split '" + to_string(r->split) + "' would be empty");
  return s;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (auto c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

GenerationSummary write_dataset(const MiniRpmSpec& spec, const std::filesystem::path& root,
                                int workers) {
  namespace fs = std::filesystem;
  spec.validate();
  const DatasetSplits splits = make_splits(spec, spec.split_ratios);
  std::error_code ec;
  for (const auto* r : {&splits.train, &splits.val, &splits.test}) {
    fs::create_directories(root / to_string(r->split), ec);
    if (ec) throw IoError("cannot create " + (root / to_string(r->split)).string());
  }
  const std::uint64_t n = spec.n_samples;
  std::vector<std::uint64_t> sizes(n), hashes(n);
  auto split_of = [&](std::uint64_t i) {
    return i < splits.train.end ? Split::kTrain : (i < splits.val.end ? Split::kVal : Split::kTest);
  };
  auto work = [&](std::uint64_t first, std::uint64_t stride) {
    for (std::uint64_t i = first; i < n; i += stride) {
      RpmProblem p = generate_minirpm(spec, i);
      const auto bytes = encode_rpmx(p);
      const fs::path path = root / to_string(split_of(i)) / (std::to_string(i) + ".rpmx");
      std::ofstream out(path, std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
      if (!out) throw IoError("failed writing " + path.string());
      sizes[i] = bytes.size();
      hashes[i] = fnv1a64(bytes);
    }
  };
  workers = std::max(1, workers);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(std::uint64_t(w), std::uint64_t(workers));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::ostringstream manifest;
  manifest << "# split/index size fnv1a64\n";
  for (std::uint64_t i = 0; i < n; ++i)
    manifest << to_string(split_of(i)) << "/" << i << ".rpmx " << sizes[i] << " " << std::hex
             << std::setw(16) << std::setfill('0') << hashes[i] << std::dec << "\n";
  const std::string text = manifest.str();
  {
    std::ofstream out(root / "manifest.txt", std::ios::binary);
    out << text;
    if (!out) throw IoError("failed writing manifest");
  }
  {
    std::ofstream out(root / "spec.cfg", std::ios::binary);
    out << format_key_values(to_key_values(spec));
    if (!out) throw IoError("failed writing spec.cfg");
  }
  GenerationSummary g;
  g.train = splits.train.size();
  g.val = splits.val.size();
  g.test = splits.test.size();
  g.manifest_hash = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return g;
}

std::vector<RpmProblem> load_split(const std::filesystem::path& dir, Split split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".rpmx") continue;
    const std::string stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    files.emplace_back(std::stoull(stem), e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RpmProblem> out;
  out.reserve(files.size());
  for (const auto& [idx, path] : files) {
    out.push_back(read_rpmx_file(path));
    out.back().split = split;
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(std::span<const RpmProblem* const> batch) {
  if (batch.empty()) throw ConfigError("to_tensor: empty batch");
  const int h = batch.front()->height, w = batch.front()->width;
  Tensor<T> t({batch.size(), 16, std::size_t(h), std::size_t(w)});
  const std::size_t per = std::size_t(16) * h * w;
  constexpr T kInv = T(1) / T(255);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto* p = batch[i];
    if (p->height != h || p->width != w) throw ConfigError("to_tensor: mixed panel sizes in batch");
    T* dst = t.data() + i * per;
    for (std::size_t j = 0; j < per; ++j) dst[j] = T(p->pixels[j]) * kInv;
  }
  return t;
}

template Tensor<float> to_tensor<float>(std::span<const RpmProblem* const>);
template Tensor<double> to_tensor<double>(std::span<const RpmProblem* const>);

}  // namespace drnet
