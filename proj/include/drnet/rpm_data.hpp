// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "drnet/config.hpp"
#include "drnet/rng.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

// Attribute ids and rule ids are part of the RPMX format.
enum class Attribute : std::uint8_t { kShape = 0, kSize = 1, kShade = 2, kCount = 3 };
enum class Rule : std::uint8_t { kConstant = 0, kProgression = 1, kDistributeThree = 2 };

inline constexpr int kNumAttributes = 4;
inline constexpr int kNumLevels = 5;  // every attribute uses ordinals 0..4

std::string to_string(Attribute a);
std::string to_string(Rule r);
Attribute parse_attribute(const std::string& s);
Rule parse_rule(const std::string& s);

/// Ordinal value of every attribute for one panel.
using AttributeVector = std::array<std::uint8_t, kNumAttributes>;

struct RuleLabel {
  Attribute attribute;
  Rule rule;
  bool operator==(const RuleLabel&) const = default;
};

enum class Split { kTrain, kVal, kTest, kUnassigned };
std::string to_string(Split s);

/// One puzzle: 8 context panels then 8 candidates, 8-bit grayscale.
struct RpmProblem {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // 16 * height * width, panel-major
  int target = 0;
  std::vector<RuleLabel> rules;
  Split split = Split::kUnassigned;
  /// Generator metadata (not serialised): attributes of the 16 panels.
  std::vector<AttributeVector> attributes;

  std::span<const std::uint8_t> panel(int i) const;
  std::span<std::uint8_t> panel(int i);
  /// Composite rule label, e.g. "size=progression;shade=constant".
  std::string rule_label() const;
  void validate() const;
};

/// Procedural generator settings.
struct MiniRpmSpec {
  std::uint64_t n_samples = 10000;
  std::uint64_t seed = 0;
  int image_size = 80;
  std::vector<Attribute> attributes{Attribute::kShape, Attribute::kSize, Attribute::kShade,
                                    Attribute::kCount};
  std::vector<Rule> rules{Rule::kConstant, Rule::kProgression, Rule::kDistributeThree};
  // Distractors are the answer with this many attribute values changed.
  int min_perturbed = 1;
  int max_perturbed = 2;
  int max_retries = 1000;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};

  void validate() const;
};

KeyValues to_key_values(const MiniRpmSpec& s);
MiniRpmSpec spec_from_key_values(const KeyValues& kv);

/// Pure function of (spec, index).
RpmProblem generate_minirpm(const MiniRpmSpec& spec, std::uint64_t index);

/// Renders one panel from its attribute ordinals into `out` (size x size).
void render_panel(const AttributeVector& attrs, int size, std::span<std::uint8_t> out);

/// Independent check over attribute metadata: indices of the candidates that
/// complete every row rule. A sound problem yields exactly {target}.
std::vector<int> rule_satisfying_candidates(const RpmProblem& p);

// --- RPMX container -------------------------------------------------------

std::vector<std::uint8_t> encode_rpmx(const RpmProblem& p);
RpmProblem decode_rpmx(std::span<const std::uint8_t> bytes);
void write_rpmx(const RpmProblem& p, std::ostream& out);
RpmProblem read_rpmx(std::istream& in);
void write_rpmx_file(const RpmProblem& p, const std::filesystem::path& path);
RpmProblem read_rpmx_file(const std::filesystem::path& path);

// --- Augmentation ---------------------------------------------------------

void flip_horizontal(RpmProblem& p);
void flip_vertical(RpmProblem& p);
/// Independently flips horizontally and vertically, each with probability p;
/// the same flips apply to all 16 panels.
RpmProblem augment_flip(const RpmProblem& p, double prob, Rng& rng);

// --- Splits and on-disk datasets -------------------------------------------

struct SplitRange {
  Split split;
  std::uint64_t begin = 0, end = 0;
  std::uint64_t size() const { return end - begin; }
};

struct DatasetSplits {
  SplitRange train, val, test;
};

/// Contiguous disjoint index ranges covering [0, n_samples).
DatasetSplits make_splits(const MiniRpmSpec& spec, std::array<double, 3> ratios);

struct GenerationSummary {
  std::uint64_t train = 0, val = 0, test = 0;
  std::uint64_t manifest_hash = 0;
};

/// Writes `<root>/<split>/<index>.rpmx`, `<root>/spec.cfg` and
/// `<root>/manifest.txt`.
GenerationSummary write_dataset(const MiniRpmSpec& spec, const std::filesystem::path& root,
                                int workers = 1);

/// Loads every `<index>.rpmx` under `dir`, ordered by index.
std::vector<RpmProblem> load_split(const std::filesystem::path& dir, Split split);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Stacks problems into (B, 16, S, S) scaled to [0, 1].
template <typename T>
Tensor<T> to_tensor(std::span<const RpmProblem* const> batch);

}  // namespace drnet
