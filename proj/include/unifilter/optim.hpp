#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unifilter/nn.hpp"
#include "unifilter/tensor.hpp"

namespace unifilter::nn {

// AdamW with linear warmup followed by cosine decay to zero.
struct AdamConfig {
  double peak_lr = 3e-5;
  double warmup_frac = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t total_steps = 1;
};

// Learning rate used by update number `step` (1-based). Rises linearly to
// peak_lr at warmup_frac * total_steps, then follows a half cosine that
// reaches 0 at total_steps.
double learning_rate(const AdamConfig& cfg, std::size_t step);

struct OptimizerState {
  AdamConfig cfg;
  std::size_t step = 0;
  std::vector<Tensor2D> m;
  std::vector<Tensor2D> v;

  OptimizerState() = default;
  OptimizerState(const AdamConfig& c, std::span<const ParamRef> params);
};

// Applies one update to every param from its grad. Decay (decoupled, scaled
// by the learning rate) only touches params flagged with decay. Throws
// NumericError naming the parameter on a non-finite gradient.
void adam_step(std::span<const ParamRef> params, OptimizerState& state);

}  // namespace unifilter::nn
