#pragma once

// Frozen toy vision encoder and trainable projector:
// pixels -> P x P patches -> fixed seeded linear map (d_v) -> adaptive
// average pool to t x t -> 2-layer GELU MLP into the backbone width.

#include <cstdint>
#include <string>

#include "json.hpp"
#include "unifilter/io_formats.hpp"
#include "unifilter/nn.hpp"
#include "unifilter/tensor.hpp"

namespace unifilter::encoder {

struct EncoderConfig {
  int channels = 3;
  int patch_size = 4;
  int d_v = 32;
  int t = 4;  // pooled grid side; t*t image tokens per image
  std::uint64_t seed = 1234;

  int tokens_per_image() const { return t * t; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// The frozen patch embedding. Its weights are a pure function of the config
// and are never part of the trainable parameter set.
class FrozenPatchEmbedder {
 public:
  explicit FrozenPatchEmbedder(const EncoderConfig& cfg);

  // Pixel payloads are cut into non-overlapping patches (flattened channel,
  // row, column) and embedded; patch-grid payloads are returned unchanged.
  PatchGrid embed(const ImagePayload& image) const;

  const EncoderConfig& config() const { return cfg_; }
  const Tensor2D& weight() const { return weight_; }
  const Tensor2D& bias() const { return bias_; }

 private:
  EncoderConfig cfg_;
  Tensor2D weight_;  // patch_dim x d_v
  Tensor2D bias_;    // 1 x d_v
};

PatchGrid patchify_embed(const ImagePayload& image, const EncoderConfig& cfg);

// Output cell (i, j) averages input rows [floor(iH/t), ceil((i+1)H/t)) and
// columns [floor(jW/t), ceil((j+1)W/t)).
PatchGrid adaptive_avg_pool_2d(const PatchGrid& grid, int t);

// Flattens a grid to (h*w) x dim rows, row-major over cells.
Tensor2D grid_rows(const PatchGrid& grid);

struct ProjectorParams {
  Tensor2D w1, b1;  // d_v x d, 1 x d
  Tensor2D w2, b2;  // d x d, 1 x d

  static ProjectorParams zeros(std::size_t d_v, std::size_t d);
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "w1", w1, true);
    f(prefix + "b1", b1, false);
    f(prefix + "w2", w2, true);
    f(prefix + "b2", b2, false);
  }
};

struct ProjectorCache {
  Tensor2D in, hidden_pre, hidden;
};

// pooled: (t*t) x d_v rows -> (t*t) x d image-token embeddings, row-major over
// the pooled grid.
Tensor2D project(const Tensor2D& pooled, const ProjectorParams& p, ProjectorCache* cache = nullptr);
Tensor2D project(const PatchGrid& pooled, const ProjectorParams& p);
void project_backward(const ProjectorCache& cache, const ProjectorParams& p, const Tensor2D& dy, ProjectorParams& grads);

}  // namespace unifilter::encoder
