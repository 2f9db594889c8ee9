// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container, version 1. All integers little-endian.
//
//   "DRCK"  u32 version  u8 dtype (4 = float32, 8 = float64)
//   u32 len + model config text     (key = value lines; the fingerprint)
//   u32 len + train config text
//   i32 epoch  f64 val_loss  f64 val_accuracy  u64 optimizer_steps
//   u32 n_arrays, then per array:
//     u8 kind (0 parameter, 1 buffer, 2 adam m, 3 adam v)
//     u16 name_len + name  u8 rank  u32 dims[rank]  raw values
//   u64 FNV-1a of every preceding byte
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "drnet/model.hpp"
#include "drnet/optim.hpp"

namespace drnet {

struct CheckpointMeta {
  int epoch = 0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  TrainConfig train;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const DrNet<T>& model, const Adam<T>* opt,
                                            const CheckpointMeta& meta);

/// Loads into `model` (and `opt` when given and the file holds moments).
/// Config mismatch raises ConfigError naming the first differing field;
/// damaged bytes raise FormatError.
template <typename T>
CheckpointMeta decode_checkpoint(std::span<const std::uint8_t> bytes, DrNet<T>& model,
                                 Adam<T>* opt = nullptr);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DrNet<T>& model, const Adam<T>* opt,
                     const CheckpointMeta& meta);

template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, DrNet<T>& model,
                               Adam<T>* opt = nullptr);

/// Reads only the model config stored in a checkpoint.
ModelConfig checkpoint_model_config(const std::filesystem::path& path);

}  // namespace drnet
