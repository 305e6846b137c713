#include "unifilter/encoder.hpp"

#include <cmath>

#include "unifilter/error.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::encoder {

void EncoderConfig::validate() const {
  if (channels < 1 || patch_size < 1 || d_v < 1) throw DataError("encoder config: channels, patch_size, d_v must be >= 1");
  if (t < 1) throw DataError("encoder config: t must be >= 1");
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"channels", c.channels}, {"patch_size", c.patch_size}, {"d_v", c.d_v}, {"t", c.t}, {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.channels = j.value("channels", c.channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.d_v = j.value("d_v", c.d_v);
  c.t = j.value("t", c.t);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

FrozenPatchEmbedder::FrozenPatchEmbedder(const EncoderConfig& cfg)
    : cfg_(cfg), weight_(std::size_t(cfg.patch_dim()), std::size_t(cfg.d_v)), bias_(1, std::size_t(cfg.d_v)) {
  cfg_.validate();
  Rng rng(derive_seed(cfg.seed, fnv1a("frozen-patch-embed")));
  const double scale = 1.0 / std::sqrt(double(cfg.patch_dim()));
  for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = rng.normal(0.0, scale);
  for (std::size_t i = 0; i < bias_.size(); ++i) bias_[i] = rng.normal(0.0, 0.1);
}

PatchGrid FrozenPatchEmbedder::embed(const ImagePayload& image) const {
  if (!image.is_pixels()) {
    const PatchGrid& g = image.patch_grid();
    if (g.dim != cfg_.d_v)
      throw DataError("patch grid dim " + std::to_string(g.dim) + " does not match encoder d_v " + std::to_string(cfg_.d_v));
    return g;
  }
  const PixelImage& px = image.pixels();
  const int p = cfg_.patch_size;
  if (px.channels != cfg_.channels)
    throw DataError("image has " + std::to_string(px.channels) + " channels, encoder expects " +
                    std::to_string(cfg_.channels));
  if (px.height % p != 0 || px.width % p != 0)
    throw DataError("image " + std::to_string(px.height) + "x" + std::to_string(px.width) +
                    " not divisible by patch size " + std::to_string(p));
  const int gh = px.height / p, gw = px.width / p;
  PatchGrid out(gh, gw, cfg_.d_v);
  Tensor2D patches(std::size_t(gh) * gw, std::size_t(cfg_.patch_dim()));
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      auto row = patches.row(std::size_t(i) * gw + j);
      std::size_t k = 0;
      for (int c = 0; c < px.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx)
            row[k++] = px.data[(std::size_t(c) * px.height + std::size_t(i * p + dy)) * px.width + std::size_t(j * p + dx)];
    }
  Tensor2D emb = nn::linear(patches, weight_, bias_);
  out.data = emb.vec();
  return out;
}

PatchGrid patchify_embed(const ImagePayload& image, const EncoderConfig& cfg) {
  return FrozenPatchEmbedder(cfg).embed(image);
}

PatchGrid adaptive_avg_pool_2d(const PatchGrid& grid, int t) {
  if (t < 1) throw DataError("pool side must be >= 1");
  if (grid.h < t || grid.w < t)
    throw DataError("grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) + " smaller than pool side " +
                    std::to_string(t));
  PatchGrid out(t, t, grid.dim);
  for (int i = 0; i < t; ++i) {
    const int r0 = (i * grid.h) / t;
    const int r1 = ((i + 1) * grid.h + t - 1) / t;
    for (int j = 0; j < t; ++j) {
      const int c0 = (j * grid.w) / t;
      const int c1 = ((j + 1) * grid.w + t - 1) / t;
      auto dst = out.cell(i, j);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
          const auto src = grid.cell(r, c);
          for (int k = 0; k < grid.dim; ++k) dst[k] += src[k];
        }
      const double n = double((r1 - r0) * (c1 - c0));
      for (auto& v : dst) v /= n;
    }
  }
  return out;
}

Tensor2D grid_rows(const PatchGrid& grid) {
  return Tensor2D(std::size_t(grid.h) * grid.w, std::size_t(grid.dim), grid.data);
}

ProjectorParams ProjectorParams::zeros(std::size_t d_v, std::size_t d) {
  return {Tensor2D(d_v, d), Tensor2D(1, d), Tensor2D(d, d), Tensor2D(1, d)};
}

Tensor2D project(const Tensor2D& pooled, const ProjectorParams& p, ProjectorCache* cache) {
  if (pooled.cols() != p.w1.rows())
    throw DataError("project: pooled features have dim " + std::to_string(pooled.cols()) + ", projector expects " +
                    std::to_string(p.w1.rows()));
  Tensor2D pre = nn::linear(pooled, p.w1, p.b1);
  Tensor2D hidden = nn::gelu(pre);
  Tensor2D out = nn::linear(hidden, p.w2, p.b2);
  if (cache) {
    cache->in = pooled;
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Tensor2D project(const PatchGrid& pooled, const ProjectorParams& p) { return project(grid_rows(pooled), p); }

void project_backward(const ProjectorCache& cache, const ProjectorParams& p, const Tensor2D& dy, ProjectorParams& grads) {
  Tensor2D dhidden = nn::linear_backward_acc(cache.hidden, p.w2, dy, grads.w2, grads.b2);
  Tensor2D dpre = nn::gelu_backward(cache.hidden_pre, dhidden);
  nn::linear_backward_acc(cache.in, p.w1, dpre, grads.w1, grads.b1);
}

}  // namespace unifilter::encoder
