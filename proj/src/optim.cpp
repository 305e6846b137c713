#include "unifilter/optim.hpp"

#include <cmath>
#include <numbers>

#include "unifilter/error.hpp"

namespace unifilter::nn {

double learning_rate(const AdamConfig& cfg, std::size_t step) {
  const double total = double(cfg.total_steps);
  const double s = std::min(double(step), total);
  const double warm = cfg.warmup_frac * total;
  if (warm > 0.0 && s <= warm) return cfg.peak_lr * s / warm;
  if (total <= warm) return cfg.peak_lr;
  const double progress = (s - warm) / (total - warm);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState::OptimizerState(const AdamConfig& c, std::span<const ParamRef> params) : cfg(c) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.emplace_back(p.value->rows(), p.value->cols());
    v.emplace_back(p.value->rows(), p.value->cols());
  }
}

void adam_step(std::span<const ParamRef> params, OptimizerState& state) {
  if (params.size() != state.m.size()) throw DataError("adam_step: optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (!p.value->same_shape(*p.grad) || !p.value->same_shape(state.m[k]))
      throw DataError("adam_step: shape mismatch for " + p.name);
    if (!p.grad->all_finite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
  if (state.step >= state.cfg.total_steps) throw DataError("adam_step: step budget exhausted");

  ++state.step;
  const auto& c = state.cfg;
  const double lr = learning_rate(c, state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor2D& w = *params[k].value;
    const Tensor2D& g = *params[k].grad;
    Tensor2D& m = state.m[k];
    Tensor2D& v = state.v[k];
    const double decay = params[k].decay ? c.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + decay * w[i]);
    }
  }
}

}  // namespace unifilter::nn
