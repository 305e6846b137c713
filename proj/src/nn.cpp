#include "unifilter/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "unifilter/error.hpp"

namespace unifilter::nn {

Tensor2D linear(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw DataError("linear: dimension mismatch x " + x.shape_str() + ", W " + w.shape_str() + ", b " + b.shape_str());
  Tensor2D y(x.rows(), w.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) std::copy(b.data(), b.data() + b.cols(), y.row(i).data());
  matmul_acc(x, w, y);
  return y;
}

Tensor2D linear_backward_acc(const Tensor2D& x, const Tensor2D& w, const Tensor2D& dy, Tensor2D& dw, Tensor2D& db) {
  if (dy.rows() != x.rows() || dy.cols() != w.cols() || x.cols() != w.rows())
    throw DataError("linear_backward: dimension mismatch");
  matmul_at_b_acc(x, dy, dw);
  sum_rows_acc(dy, db);
  Tensor2D dx(x.rows(), x.cols());
  matmul_a_bt_acc(dy, w, dx);
  return dx;
}

LinearGrads linear_backward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& dy) {
  LinearGrads g{Tensor2D(), Tensor2D(w.rows(), w.cols()), Tensor2D(1, w.cols())};
  g.dx = linear_backward_acc(x, w, dy, g.dw, g.db);
  return g;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Tensor2D gelu(const Tensor2D& x) {
  Tensor2D y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

Tensor2D gelu_backward(const Tensor2D& x, const Tensor2D& dy) {
  Tensor2D dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * gelu_grad(x[i]);
  return dx;
}

Tensor2D layer_norm(const Tensor2D& x, const Tensor2D& gamma, const Tensor2D& beta, LayerNormCache* cache) {
  const std::size_t n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || !gamma.same_shape(beta)) throw DataError("layer_norm: dimension mismatch");
  Tensor2D y(x.rows(), n);
  if (cache) {
    cache->xhat.resize(x.rows(), n);
    cache->rstd.assign(x.rows(), 0.0);
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    double mean = 0.0;
    for (double v : xi) mean += v;
    mean /= double(n);
    double var = 0.0;
    for (double v : xi) var += (v - mean) * (v - mean);
    var /= double(n);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    auto yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xi[j] - mean) * rstd;
      if (cache) cache->xhat(i, j) = xh;
      yi[j] = xh * gamma[j] + beta[j];
    }
    if (cache) cache->rstd[i] = rstd;
  }
  return y;
}

Tensor2D layer_norm_backward(const LayerNormCache& cache, const Tensor2D& gamma, const Tensor2D& dy, Tensor2D& dgamma,
                             Tensor2D& dbeta) {
  const std::size_t n = dy.cols();
  Tensor2D dx(dy.rows(), n);
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const auto dyi = dy.row(i);
    const auto xh = cache.xhat.row(i);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dgamma[j] += dyi[j] * xh[j];
      dbeta[j] += dyi[j];
      dxhat[j] = dyi[j] * gamma[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    mean_dxhat /= double(n);
    mean_dxhat_xhat /= double(n);
    auto dxi = dx.row(i);
    for (std::size_t j = 0; j < n; ++j) dxi[j] = cache.rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
  }
  return dx;
}

// ---- attention ----

AttentionParams AttentionParams::zeros(std::size_t d) {
  return {Tensor2D(d, 3 * d), Tensor2D(1, 3 * d), Tensor2D(d, d), Tensor2D(1, d)};
}

namespace {

void check_attention(const Tensor2D& x, const AttentionParams& p, int n_heads, std::span<const std::size_t> offsets) {
  const std::size_t d = x.cols();
  if (n_heads < 1 || d % std::size_t(n_heads) != 0)
    throw DataError("attention: embedding size " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                    " heads");
  if (p.w_qkv.rows() != d || p.w_qkv.cols() != 3 * d || p.w_out.rows() != d || p.w_out.cols() != d)
    throw DataError("attention: parameter shape mismatch for d=" + std::to_string(d));
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.rows())
    throw DataError("attention: bad sequence offsets");
}

}  // namespace

Tensor2D causal_self_attention(const Tensor2D& x, const AttentionParams& p, int n_heads,
                               std::span<const std::size_t> seq_offsets, AttentionCache* cache) {
  check_attention(x, p, n_heads, seq_offsets);
  const std::size_t d = x.cols();
  const std::size_t dh = d / std::size_t(n_heads);
  const double scale = 1.0 / std::sqrt(double(dh));

  Tensor2D qkv = linear(x, p.w_qkv, p.b_qkv);
  Tensor2D ctx(x.rows(), d);
  if (cache) cache->probs.clear();

  std::vector<double> scores;
  for (std::size_t s = 0; s + 1 < seq_offsets.size(); ++s) {
    const std::size_t a = seq_offsets[s];
    const std::size_t len = seq_offsets[s + 1] - a;
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t qo = std::size_t(h) * dh, ko = d + qo, vo = 2 * d + qo;
      Tensor2D probs(len, len);
      for (std::size_t i = 0; i < len; ++i) {
        const double* q = qkv.data() + (a + i) * 3 * d + qo;
        double mx = -INFINITY;
        scores.assign(i + 1, 0.0);
        for (std::size_t j = 0; j <= i; ++j) {
          const double* k = qkv.data() + (a + j) * 3 * d + ko;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[c] * k[c];
          scores[j] = dot * scale;
          mx = std::max(mx, scores[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        double* out = ctx.data() + (a + i) * d + qo;
        for (std::size_t j = 0; j <= i; ++j) {
          const double pij = scores[j] / sum;
          probs(i, j) = pij;
          const double* v = qkv.data() + (a + j) * 3 * d + vo;
          for (std::size_t c = 0; c < dh; ++c) out[c] += pij * v[c];
        }
      }
      if (cache) cache->probs.push_back(std::move(probs));
    }
  }

  Tensor2D y = linear(ctx, p.w_out, p.b_out);
  if (cache) {
    cache->x = x;
    cache->qkv = std::move(qkv);
    cache->ctx = std::move(ctx);
  }
  return y;
}

Tensor2D causal_self_attention(const Tensor2D& x, const AttentionParams& p, int n_heads, AttentionCache* cache) {
  const std::array<std::size_t, 2> offsets{0, x.rows()};
  return causal_self_attention(x, p, n_heads, offsets, cache);
}

Tensor2D causal_self_attention_backward(const AttentionCache& cache, const AttentionParams& p, int n_heads,
                                        std::span<const std::size_t> seq_offsets, const Tensor2D& dy,
                                        AttentionParams& grads) {
  const std::size_t d = cache.x.cols();
  const std::size_t dh = d / std::size_t(n_heads);
  const double scale = 1.0 / std::sqrt(double(dh));

  Tensor2D dctx = linear_backward_acc(cache.ctx, p.w_out, dy, grads.w_out, grads.b_out);
  Tensor2D dqkv(cache.x.rows(), 3 * d);
  const Tensor2D& qkv = cache.qkv;

  std::size_t pi = 0;
  std::vector<double> dp;
  for (std::size_t s = 0; s + 1 < seq_offsets.size(); ++s) {
    const std::size_t a = seq_offsets[s];
    const std::size_t len = seq_offsets[s + 1] - a;
    for (int h = 0; h < n_heads; ++h, ++pi) {
      const Tensor2D& probs = cache.probs[pi];
      const std::size_t qo = std::size_t(h) * dh, ko = d + qo, vo = 2 * d + qo;
      for (std::size_t i = 0; i < len; ++i) {
        const double* dout = dctx.data() + (a + i) * d + qo;
        dp.assign(i + 1, 0.0);
        double row_dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* v = qkv.data() + (a + j) * 3 * d + vo;
          double* dv = dqkv.data() + (a + j) * 3 * d + vo;
          const double pij = probs(i, j);
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            dot += dout[c] * v[c];
            dv[c] += pij * dout[c];
          }
          dp[j] = dot;
          row_dot += pij * dot;
        }
        const double* q = qkv.data() + (a + i) * 3 * d + qo;
        double* dq = dqkv.data() + (a + i) * 3 * d + qo;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = probs(i, j) * (dp[j] - row_dot) * scale;
          if (ds == 0.0) continue;
          const double* k = qkv.data() + (a + j) * 3 * d + ko;
          double* dk = dqkv.data() + (a + j) * 3 * d + ko;
          for (std::size_t c = 0; c < dh; ++c) {
            dq[c] += ds * k[c];
            dk[c] += ds * q[c];
          }
        }
      }
    }
  }
  return linear_backward_acc(cache.x, p.w_qkv, dqkv, grads.w_qkv, grads.b_qkv);
}

// ---- block ----

BlockParams BlockParams::zeros(std::size_t d) {
  BlockParams b;
  b.ln1_g = Tensor2D(1, d);
  b.ln1_b = Tensor2D(1, d);
  b.attn = AttentionParams::zeros(d);
  b.ln2_g = Tensor2D(1, d);
  b.ln2_b = Tensor2D(1, d);
  b.w_fc = Tensor2D(d, 4 * d);
  b.b_fc = Tensor2D(1, 4 * d);
  b.w_proj = Tensor2D(4 * d, d);
  b.b_proj = Tensor2D(1, d);
  return b;
}

Tensor2D transformer_block(const Tensor2D& x, const BlockParams& p, int n_heads,
                           std::span<const std::size_t> seq_offsets, BlockCache* cache) {
  if (p.ln1_g.cols() != x.cols()) throw DataError("transformer_block: dimension mismatch " + x.shape_str());
  Tensor2D h1 = layer_norm(x, p.ln1_g, p.ln1_b, cache ? &cache->ln1 : nullptr);
  Tensor2D x1 = causal_self_attention(h1, p.attn, n_heads, seq_offsets, cache ? &cache->attn : nullptr);
  add_inplace(x1, x);
  Tensor2D h2 = layer_norm(x1, p.ln2_g, p.ln2_b, cache ? &cache->ln2 : nullptr);
  Tensor2D fc = linear(h2, p.w_fc, p.b_fc);
  Tensor2D act = gelu(fc);
  Tensor2D out = linear(act, p.w_proj, p.b_proj);
  add_inplace(out, x1);
  if (cache) {
    cache->h2 = std::move(h2);
    cache->fc = std::move(fc);
    cache->act = std::move(act);
  }
  return out;
}

Tensor2D transformer_block(const Tensor2D& x, const BlockParams& p, int n_heads, BlockCache* cache) {
  const std::array<std::size_t, 2> offsets{0, x.rows()};
  return transformer_block(x, p, n_heads, offsets, cache);
}

Tensor2D transformer_block_backward(const BlockCache& cache, const BlockParams& p, int n_heads,
                                    std::span<const std::size_t> seq_offsets, const Tensor2D& dy, BlockParams& grads) {
  Tensor2D dact = linear_backward_acc(cache.act, p.w_proj, dy, grads.w_proj, grads.b_proj);
  Tensor2D dfc = gelu_backward(cache.fc, dact);
  Tensor2D dh2 = linear_backward_acc(cache.h2, p.w_fc, dfc, grads.w_fc, grads.b_fc);
  Tensor2D dx1 = layer_norm_backward(cache.ln2, p.ln2_g, dh2, grads.ln2_g, grads.ln2_b);
  add_inplace(dx1, dy);
  Tensor2D dh1 = causal_self_attention_backward(cache.attn, p.attn, n_heads, seq_offsets, dx1, grads.attn);
  Tensor2D dx = layer_norm_backward(cache.ln1, p.ln1_g, dh1, grads.ln1_g, grads.ln1_b);
  add_inplace(dx, dx1);
  return dx;
}

// ---- gradient check ----

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double()>& loss_fn, std::span<const ParamRef> params, double eps,
                           double floor) {
  GradCheckResult res;
  for (const auto& pr : params) {
    Tensor2D& value = *pr.value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double fp = loss_fn();
      value[i] = saved - eps;
      const double fm = loss_fn();
      value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = (*pr.grad)[i];
      const double err = relative_error(analytic, numeric, floor);
      ++res.checked;
      if (res.checked == 1 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = pr.name;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace unifilter::nn
