#pragma once

// Transformer building blocks with hand-written reverse-mode gradients.
// Backward functions accumulate (+=) into parameter gradients and return the
// gradient with respect to the input.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unifilter/tensor.hpp"

namespace unifilter::nn {

inline constexpr double kLayerNormEps = 1e-6;

// ---- linear: y = x W + b ----

Tensor2D linear(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b);

struct LinearGrads {
  Tensor2D dx, dw, db;
};

LinearGrads linear_backward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& dy);
// Accumulating form used inside models.
Tensor2D linear_backward_acc(const Tensor2D& x, const Tensor2D& w, const Tensor2D& dy, Tensor2D& dw, Tensor2D& db);

// ---- GELU (tanh approximation) ----

double gelu(double x);
double gelu_grad(double x);
Tensor2D gelu(const Tensor2D& x);
Tensor2D gelu_backward(const Tensor2D& x, const Tensor2D& dy);

// ---- layer norm over each row ----

struct LayerNormCache {
  Tensor2D xhat;              // normalized input, before the affine
  std::vector<double> rstd;   // 1 / sqrt(var + eps) per row
};

Tensor2D layer_norm(const Tensor2D& x, const Tensor2D& gamma, const Tensor2D& beta, LayerNormCache* cache = nullptr);
Tensor2D layer_norm_backward(const LayerNormCache& cache, const Tensor2D& gamma, const Tensor2D& dy, Tensor2D& dgamma,
                             Tensor2D& dbeta);

// ---- named parameter plumbing ----

struct ParamRef {
  std::string name;
  Tensor2D* value;
  Tensor2D* grad;
  bool decay;
};

// ---- causal multi-head self-attention ----

struct AttentionParams {
  Tensor2D w_qkv;  // d x 3d, columns [q | k | v]
  Tensor2D b_qkv;  // 1 x 3d
  Tensor2D w_out;  // d x d
  Tensor2D b_out;  // 1 x d

  static AttentionParams zeros(std::size_t d);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "w_qkv", w_qkv, true);
    f(prefix + "b_qkv", b_qkv, false);
    f(prefix + "w_out", w_out, true);
    f(prefix + "b_out", b_out, false);
  }
};

struct AttentionCache {
  Tensor2D x;
  Tensor2D qkv;
  std::vector<Tensor2D> probs;  // one (L x L) matrix per (sequence, head)
  Tensor2D ctx;                 // concatenated head outputs before w_out
};

// Rows of x hold one or more sequences back to back; seq_offsets lists the
// start row of each sequence followed by x.rows(). Attention never crosses a
// sequence boundary and position i only sees positions <= i.
Tensor2D causal_self_attention(const Tensor2D& x, const AttentionParams& p, int n_heads,
                               std::span<const std::size_t> seq_offsets, AttentionCache* cache = nullptr);
Tensor2D causal_self_attention(const Tensor2D& x, const AttentionParams& p, int n_heads,
                               AttentionCache* cache = nullptr);
Tensor2D causal_self_attention_backward(const AttentionCache& cache, const AttentionParams& p, int n_heads,
                                        std::span<const std::size_t> seq_offsets, const Tensor2D& dy,
                                        AttentionParams& grads);

// ---- pre-LN transformer block ----

struct BlockParams {
  Tensor2D ln1_g, ln1_b;
  AttentionParams attn;
  Tensor2D ln2_g, ln2_b;
  Tensor2D w_fc, b_fc;      // d x 4d, 1 x 4d
  Tensor2D w_proj, b_proj;  // 4d x d, 1 x d

  static BlockParams zeros(std::size_t d);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1_g", ln1_g, false);
    f(prefix + "ln1_b", ln1_b, false);
    attn.visit(prefix + "attn.", f);
    f(prefix + "ln2_g", ln2_g, false);
    f(prefix + "ln2_b", ln2_b, false);
    f(prefix + "w_fc", w_fc, true);
    f(prefix + "b_fc", b_fc, false);
    f(prefix + "w_proj", w_proj, true);
    f(prefix + "b_proj", b_proj, false);
  }
};

struct BlockCache {
  LayerNormCache ln1;
  AttentionCache attn;
  LayerNormCache ln2;
  Tensor2D h2;   // ln2 output
  Tensor2D fc;   // pre-activation
  Tensor2D act;  // gelu(fc)
};

Tensor2D transformer_block(const Tensor2D& x, const BlockParams& p, int n_heads,
                           std::span<const std::size_t> seq_offsets, BlockCache* cache = nullptr);
Tensor2D transformer_block(const Tensor2D& x, const BlockParams& p, int n_heads, BlockCache* cache = nullptr);
Tensor2D transformer_block_backward(const BlockCache& cache, const BlockParams& p, int n_heads,
                                    std::span<const std::size_t> seq_offsets, const Tensor2D& dy, BlockParams& grads);

// ---- finite-difference verification ----

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Compares each param's analytic gradient (already filled in ParamRef::grad)
// against central differences of loss_fn. loss_fn must evaluate the loss at
// the current parameter values without touching the grads. `floor` is the
// magnitude below which a gradient counts as zero.
GradCheckResult grad_check(const std::function<double()>& loss_fn, std::span<const ParamRef> params, double eps = 1e-5,
                           double floor = 1e-6);

}  // namespace unifilter::nn
