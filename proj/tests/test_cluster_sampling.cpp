#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "unifilter/cluster_sampling.hpp"
#include "unifilter/error.hpp"
#include "unifilter/rng.hpp"

using namespace unifilter;
using namespace unifilter::cluster;

namespace {

EmbeddingMatrix matrix(const std::vector<std::vector<double>>& rows) {
  EmbeddingMatrix m;
  for (std::size_t i = 0; i < rows.size(); ++i) m.add("p" + std::to_string(i), rows[i]);
  return m;
}

double sse(const EmbeddingMatrix& m, const std::vector<std::size_t>& a, std::size_t k) {
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> mean(m.dim, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (a[i] == c) {
        for (std::size_t d = 0; d < m.dim; ++d) mean[d] += m.row(i)[d];
        ++n;
      }
    if (n == 0) continue;
    for (auto& x : mean) x /= double(n);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (a[i] == c)
        for (std::size_t d = 0; d < m.dim; ++d) total += (m.row(i)[d] - mean[d]) * (m.row(i)[d] - mean[d]);
  }
  return total;
}

// Minimum SSE over every assignment of n points to k non-empty clusters.
double brute_force_sse(const EmbeddingMatrix& m, std::size_t k) {
  const std::size_t n = m.size();
  std::vector<std::size_t> a(n, 0);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    std::set<std::size_t> used(a.begin(), a.end());
    if (used.size() == k) best = std::min(best, sse(m, a, k));
    std::size_t i = 0;
    while (i < n && ++a[i] == k) a[i++] = 0;
    if (i == n) break;
  }
  return best;
}

// Same partition up to relabeling.
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

}  // namespace

TEST_CASE("four points, K=2: the brute-force optimum") {
  const auto m = matrix({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = kmeans(m, {2, 4, 100, seed});
    CHECK(same_partition(r.assignment, {0, 0, 1, 1}));
    CHECK(r.converged);
    CHECK(r.inertia.back() == doctest::Approx(brute_force_sse(m, 2)).epsilon(1e-12));
    CHECK(r.inertia.back() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("inertia is non-increasing on random instances") {
  Rng rng(99);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 5 + rng.below(40), dim = 1 + rng.below(4);
    std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
    for (auto& r : rows)
      for (auto& x : r) x = rng.normal(0.0, 1.0) + double(rng.below(3)) * 4.0;
    const auto m = matrix(rows);
    const std::size_t k = 1 + rng.below(std::min<std::uint64_t>(n, 6));
    const auto res = kmeans(m, {k, 2, 100, std::uint64_t(inst)});
    for (std::size_t i = 1; i < res.inertia.size(); ++i) CHECK(res.inertia[i] <= res.inertia[i - 1] + 1e-9);
    CHECK(res.assignment.size() == n);
    std::set<std::size_t> used(res.assignment.begin(), res.assignment.end());
    CHECK(used.size() == k);  // no empty cluster at the end
  }
}

TEST_CASE("converged results are Lloyd fixed points and never beat brute force") {
  Rng rng(5);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<std::vector<double>> rows(6, std::vector<double>(2));
    for (auto& r : rows)
      for (auto& x : r) x = rng.uniform() * 10.0;
    const auto m = matrix(rows);
    const auto r = kmeans(m, {3, 1, 100, std::uint64_t(inst)});
    REQUIRE(r.converged);
    CHECK(r.inertia.back() >= brute_force_sse(m, 3) - 1e-9);
    CHECK(r.inertia.back() == doctest::Approx(sse(m, r.assignment, 3)).epsilon(1e-9));
    // every point sits at its nearest centroid
    for (std::size_t i = 0; i < m.size(); ++i) {
      auto d2 = [&](std::size_t c) {
        double s = 0;
        for (std::size_t d = 0; d < 2; ++d) s += std::pow(m.row(i)[d] - r.centroids[c * 2 + d], 2);
        return s;
      };
      for (std::size_t c = 0; c < 3; ++c) CHECK(d2(r.assignment[i]) <= d2(c));
    }
  }
}

TEST_CASE("kmeans is deterministic per seed; duplicate points reseed empty clusters") {
  Rng rng(1);
  std::vector<std::vector<double>> rows(30, std::vector<double>(3));
  for (auto& r : rows)
    for (auto& x : r) x = rng.normal(0.0, 1.0);
  const auto m = matrix(rows);
  const auto a = kmeans(m, {4, 2, 100, 7});
  const auto b = kmeans(m, {4, 2, 100, 7});
  CHECK(a.assignment == b.assignment);
  CHECK(a.centroids == b.centroids);
  CHECK(a.inertia == b.inertia);

  // all identical but one: k-means++ has to fall back and repair
  const auto dup = matrix({{1, 1}, {1, 1}, {1, 1}, {1, 1}, {2, 2}});
  const auto r = kmeans(dup, {3, 1, 100, 0});
  std::set<std::size_t> used(r.assignment.begin(), r.assignment.end());
  CHECK(used.size() == 3);
}

TEST_CASE("kmeans input errors") {
  const auto m = matrix({{0, 0}, {1, 1}});
  CHECK_THROWS_AS(kmeans(m, {3, 1, 100, 0}), DataError);
  CHECK_THROWS_AS(kmeans(m, {0, 1, 100, 0}), DataError);
  CHECK_THROWS_AS(kmeans(m, {1, 1, 0, 0}), DataError);
  EmbeddingMatrix bad = m;
  bad.vecs[1] = std::nan("");
  CHECK_THROWS_AS(kmeans(bad, {1, 1, 100, 0}), DataError);
  EmbeddingMatrix dupid = m;
  dupid.ids[1] = dupid.ids[0];
  CHECK_THROWS_AS(dupid.validate(), DataError);
  EmbeddingMatrix e;
  e.add("a", std::vector<double>{1, 2});
  CHECK_THROWS_AS(e.add("b", std::vector<double>{1}), DataError);
}

TEST_CASE("per-cluster sampling") {
  EmbeddingMatrix m;
  for (int i = 0; i < 10; ++i) m.add("id" + std::to_string(i), std::vector<double>{double(i)});
  const std::vector<std::size_t> assign{0, 0, 0, 0, 0, 0, 1, 1, 2, 2};
  const auto s = sample_per_cluster(m, assign, {3, 4, 100, 11});
  CHECK(s.ids.size() == 4 + 2 + 2);
  CHECK(s.shortfall == 4);
  CHECK(std::is_sorted(s.ids.begin(), s.ids.end()));
  std::size_t from0 = 0;
  for (const auto& id : s.ids)
    if (std::stoi(id.substr(2)) < 6) ++from0;
  CHECK(from0 == 4);
  CHECK(s.ids == sample_per_cluster(m, assign, {3, 4, 100, 11}).ids);
  // some seed picks a different subset of the big cluster
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 20 && !differs; ++seed)
    differs = sample_per_cluster(m, assign, {3, 4, 100, seed}).ids != s.ids;
  CHECK(differs);
  CHECK_THROWS_AS(sample_per_cluster(m, std::vector<std::size_t>{0, 1}, {3, 4, 100, 0}), DataError);
}

TEST_CASE("embeddings are unit norm; all-zero images are rejected") {
  encoder::EncoderConfig ec{1, 2, 4, 1, 3};
  encoder::FrozenPatchEmbedder emb(ec);
  Rng rng(4);
  PixelImage im{1, 4, 4, std::vector<double>(16)};
  for (auto& x : im.data) x = rng.uniform();
  const auto e = image_embedding({im}, emb);
  double n2 = 0;
  for (double x : e) n2 += x * x;
  CHECK(e.size() == 4);
  CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));

  InterleavedDoc d{"d", {TextItem{"x"}, ImageItem{{im}}, ImageItem{{im}}}};
  const auto de = doc_embedding(d, emb);
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(de[i] == doctest::Approx(e[i]).epsilon(1e-12));
  CHECK_THROWS_AS(doc_embedding(InterleavedDoc{"t", {TextItem{"x"}}}, emb), DataError);
  PatchGrid zero(2, 2, 4);
  CHECK_THROWS_AS(image_embedding({zero}, emb), DataError);
}

TEST_CASE("clusters json") {
  const auto m = matrix({{0, 0}, {0, 1}, {10, 0}, {10, 1}});
  const auto r = kmeans(m, {2, 1, 100, 0});
  const auto j = clusters_json(m, r, true);
  CHECK(j.at("k") == 2);
  CHECK(j.at("assignments").size() == 4);
  CHECK(j.at("centroids").size() == 2);
  CHECK_FALSE(clusters_json(m, r, false).contains("centroids"));
}
