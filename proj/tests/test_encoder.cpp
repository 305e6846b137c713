#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "unifilter/encoder.hpp"
#include "unifilter/error.hpp"
#include "unifilter/nn.hpp"

using namespace unifilter;
using namespace unifilter::encoder;
using testutil::randn;

namespace {

PatchGrid grid_of(int h, int w, int dim, std::uint64_t seed) {
  PatchGrid g(h, w, dim);
  Rng rng(seed);
  for (auto& x : g.data) x = rng.normal(0.0, 1.0);
  return g;
}

// Bin bounds written out independently: [floor(i n / t), ceil((i + 1) n / t)).
std::pair<int, int> bin(int i, int n, int t) {
  return {int(std::floor(double(i) * n / t)), int(std::ceil(double(i + 1) * n / t))};
}

}  // namespace

TEST_CASE("pooling the 1..16 grid to 2x2") {
  PatchGrid g(4, 4, 1);
  for (int i = 0; i < 16; ++i) g.data[i] = i + 1;
  const auto p = adaptive_avg_pool_2d(g, 2);
  CHECK(p.h == 2);
  CHECK(p.w == 2);
  CHECK(p.data == std::vector<double>{3.5, 5.5, 11.5, 13.5});
}

TEST_CASE("pooling: identity, mean conservation, 144 tokens") {
  const auto g = grid_of(5, 5, 3, 1);
  CHECK(adaptive_avg_pool_2d(g, 5) == g);

  for (auto [h, w, t] : std::vector<std::tuple<int, int, int>>{{8, 8, 4}, {6, 12, 3}, {24, 24, 12}, {9, 6, 3}}) {
    const auto x = grid_of(h, w, 4, std::uint64_t(h * 100 + w));
    const auto p = adaptive_avg_pool_2d(x, t);
    for (int k = 0; k < 4; ++k) {
      double a = 0, b = 0;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) a += x.cell(i, j)[k];
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) b += p.cell(i, j)[k];
      CHECK(std::abs(a / (h * w) - b / (t * t)) <= 1e-9);
    }
  }

  const auto big = adaptive_avg_pool_2d(grid_of(24, 24, 2, 3), 12);
  CHECK(grid_rows(big).rows() == 144);
  EncoderConfig ec;
  ec.t = 12;
  CHECK(ec.tokens_per_image() == 144);
}

TEST_CASE("pooling: overlapping bins match an independent oracle") {
  for (auto [h, w, t] : std::vector<std::tuple<int, int, int>>{{5, 7, 3}, {6, 6, 4}, {7, 3, 2}, {11, 13, 5}}) {
    const auto x = grid_of(h, w, 2, std::uint64_t(h * 31 + w));
    const auto p = adaptive_avg_pool_2d(x, t);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        const auto [r0, r1] = bin(i, h, t);
        const auto [c0, c1] = bin(j, w, t);
        for (int k = 0; k < 2; ++k) {
          double s = 0;
          for (int r = r0; r < r1; ++r)
            for (int c = c0; c < c1; ++c) s += x.cell(r, c)[k];
          CHECK(p.cell(i, j)[k] == doctest::Approx(s / ((r1 - r0) * (c1 - c0))).epsilon(1e-12));
        }
      }
  }
  CHECK_THROWS_AS(adaptive_avg_pool_2d(grid_of(2, 2, 1, 0), 3), DataError);
  CHECK_THROWS_AS(adaptive_avg_pool_2d(grid_of(2, 2, 1, 0), 0), DataError);
}

TEST_CASE("patch embedding: flatten order (channel, row, column) and linear map") {
  EncoderConfig ec{2, 2, 3, 1, 77};
  FrozenPatchEmbedder emb(ec);
  PixelImage im{2, 2, 4, std::vector<double>(16)};
  for (int i = 0; i < 16; ++i) im.data[i] = i / 16.0;
  const auto g = emb.embed({im});
  REQUIRE(g.h == 1);
  REQUIRE(g.w == 2);
  for (int j = 0; j < 2; ++j) {
    std::vector<double> patch;
    for (int c = 0; c < 2; ++c)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) patch.push_back(im.data[std::size_t((c * 2 + dy) * 4 + j * 2 + dx)]);
    for (int k = 0; k < 3; ++k) {
      double s = emb.bias()(0, k);
      for (std::size_t q = 0; q < patch.size(); ++q) s += patch[q] * emb.weight()(q, k);
      CHECK(g.cell(0, j)[k] == doctest::Approx(s).epsilon(1e-12));
    }
  }
  // the weights are a pure function of the config
  CHECK(FrozenPatchEmbedder(ec).weight() == emb.weight());
  ec.seed = 78;
  CHECK_FALSE(FrozenPatchEmbedder(ec).weight() == emb.weight());
}

TEST_CASE("patch embedding: errors and patch-grid passthrough") {
  EncoderConfig ec{1, 4, 8, 2, 1};
  FrozenPatchEmbedder emb(ec);
  CHECK_THROWS_AS(emb.embed({PixelImage{1, 6, 8, std::vector<double>(48)}}), DataError);
  CHECK_THROWS_AS(emb.embed({PixelImage{3, 8, 8, std::vector<double>(192)}}), DataError);
  const auto g = grid_of(3, 3, 8, 9);
  CHECK(emb.embed({g}) == g);
  CHECK_THROWS_AS(emb.embed({grid_of(3, 3, 4, 9)}), DataError);
  EncoderConfig bad = ec;
  bad.t = 0;
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("projector backward matches finite differences") {
  const std::size_t dv = 5, d = 4;
  ProjectorParams p{randn(dv, d, 1, 0.5), randn(1, d, 2, 0.2), randn(d, d, 3, 0.5), randn(1, d, 4, 0.2)};
  ProjectorParams g = ProjectorParams::zeros(dv, d);
  Tensor2D in = randn(4, dv, 5);
  const Tensor2D r = randn(4, d, 6);
  auto loss = [&] {
    const auto y = project(in, p);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  ProjectorCache cache;
  project(in, p, &cache);
  project_backward(cache, p, r, g);
  std::vector<nn::ParamRef> refs;
  p.visit("", [&](const std::string& n, Tensor2D& t, bool decay) {
    Tensor2D* gt = n == "w1" ? &g.w1 : n == "b1" ? &g.b1 : n == "w2" ? &g.w2 : &g.b2;
    refs.push_back({n, &t, gt, decay});
  });
  const auto res = nn::grad_check(loss, refs, 1e-5);
  CHECK(res.max_rel_error <= 1e-6);
  CHECK(res.checked == dv * d + d + d * d + d);
  CHECK_THROWS_AS(project(randn(2, 3, 1), p), DataError);
}
