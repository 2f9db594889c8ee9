// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "drnet/config.hpp"
#include "drnet/nn.hpp"

namespace drnet {

/// Adam with optional decoupled weight decay. Coupled mode (default) adds
/// weight_decay * theta to the gradient before the moment updates, i.e.
/// classic L2-regularised Adam.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& store, const TrainConfig& cfg);

  void step();
  std::uint64_t steps() const { return t_; }

  struct Slot {
    Parameter<T>* param;
    Tensor<T> m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  bool decoupled_;
  std::uint64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace drnet
