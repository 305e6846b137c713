#include "unifilter/cluster_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "unifilter/error.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::cluster {

namespace {

std::vector<double> normalized(std::vector<double> v, const char* what) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (!(n > 1e-12)) throw DataError(std::string(what) + ": degenerate embedding (zero vector)");
  for (double& x : v) x /= n;
  return v;
}

double sq_dist(std::span<const double> a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Nearest centroid, lowest index on ties.
std::size_t nearest(std::span<const double> x, const std::vector<double>& c, std::size_t k, double* dist) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    const double d = sq_dist(x, c.data() + j * x.size());
    if (d < bd) {
      bd = d;
      best = j;
    }
  }
  if (dist) *dist = bd;
  return best;
}

}  // namespace

void EmbeddingMatrix::add(const std::string& id, std::span<const double> v) {
  if (ids.empty() && dim == 0) dim = v.size();
  if (v.size() != dim) throw DataError("embedding for '" + id + "' has dim " + std::to_string(v.size()));
  ids.push_back(id);
  vecs.insert(vecs.end(), v.begin(), v.end());
}

void EmbeddingMatrix::validate() const {
  if (vecs.size() != ids.size() * dim) throw DataError("embedding matrix shape mismatch");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw DataError("duplicate embedding id '" + id + "'");
  for (double x : vecs)
    if (!std::isfinite(x)) throw DataError("non-finite embedding value");
}

std::vector<double> image_embedding(const ImagePayload& image, const encoder::FrozenPatchEmbedder& embedder) {
  const PatchGrid g = embedder.embed(image);
  std::vector<double> mean(std::size_t(g.dim), 0.0);
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) {
      const auto cell = g.cell(i, j);
      for (int k = 0; k < g.dim; ++k) mean[k] += cell[k];
    }
  for (double& x : mean) x /= double(g.h) * g.w;
  return normalized(std::move(mean), "image_embedding");
}

std::vector<double> doc_embedding(const InterleavedDoc& doc, const encoder::FrozenPatchEmbedder& embedder) {
  std::vector<double> sum;
  std::size_t n = 0;
  for (const auto& item : doc.items) {
    const auto* im = std::get_if<ImageItem>(&item);
    if (!im) continue;
    const auto e = image_embedding(im->image, embedder);
    if (sum.empty()) sum.assign(e.size(), 0.0);
    for (std::size_t k = 0; k < e.size(); ++k) sum[k] += e[k];
    ++n;
  }
  if (n == 0) throw DataError("doc_embedding: document '" + doc.id + "' has no images");
  for (double& x : sum) x /= double(n);
  return normalized(std::move(sum), "doc_embedding");
}

KMeansResult kmeans(const EmbeddingMatrix& m, const ClusterConfig& cfg) {
  m.validate();
  const std::size_t n = m.size(), k = cfg.k, dim = m.dim;
  if (k < 1) throw DataError("kmeans: K must be >= 1");
  if (k > n) throw DataError("kmeans: K = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
  if (cfg.max_iters < 1) throw DataError("kmeans: max_iters must be >= 1");

  KMeansResult r;
  r.centroids.assign(k * dim, 0.0);
  auto set_centroid = [&](std::size_t j, std::size_t point) {
    const auto p = m.row(point);
    std::copy(p.begin(), p.end(), r.centroids.begin() + std::ptrdiff_t(j * dim));
  };

  // k-means++
  Rng rng(derive_seed(cfg.seed, fnv1a("kmeans++")));
  set_centroid(0, std::size_t(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(m.row(i), r.centroids.data());
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && u < acc) {
          pick = i;
          break;
        }
      }
      while (d2[pick] == 0.0) --pick;  // rounding at the tail
    } else {
      pick = std::size_t(rng.below(n));
    }
    set_centroid(j, pick);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(m.row(i), r.centroids.data() + j * dim));
  }

  // Lloyd
  std::vector<std::size_t> assign(n, 0), next(n);
  std::vector<double> dist(n);
  for (int it = 0; it < cfg.max_iters; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = nearest(m.row(i), r.centroids, k, &dist[i]);
      inertia += dist[i];
    }
    r.inertia.push_back(inertia);
    r.iterations = it + 1;
    if (it > 0 && next == assign) {
      r.converged = true;
      break;
    }
    assign = next;

    std::vector<double> sum(k * dim, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = m.row(i);
      for (std::size_t c = 0; c < dim; ++c) sum[assign[i] * dim + c] += x[c];
      ++count[assign[i]];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (count[j] > 0)
        for (std::size_t c = 0; c < dim; ++c) r.centroids[j * dim + c] = sum[j * dim + c] / double(count[j]);
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] > 0) continue;
      // farthest point from its own (updated) centroid
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (count[assign[i]] <= 1) continue;  // do not empty another cluster
        const double d = sq_dist(m.row(i), r.centroids.data() + assign[i] * dim);
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      --count[assign[far]];
      assign[far] = j;
      count[j] = 1;
      set_centroid(j, far);
      ++r.reseeded;
    }
  }
  r.assignment = assign;
  return r;
}

Selection sample_per_cluster(const EmbeddingMatrix& m, std::span<const std::size_t> assignment,
                             const ClusterConfig& cfg) {
  if (assignment.size() != m.size()) throw DataError("sample_per_cluster: assignment size mismatch");
  if (cfg.per_cluster < 1) throw DataError("sample_per_cluster: per_cluster must be >= 1");
  std::size_t k = 0;
  for (auto a : assignment) k = std::max(k, a + 1);
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < assignment.size(); ++i) members[assignment[i]].push_back(i);

  Selection sel;
  for (std::size_t c = 0; c < k; ++c) {
    auto& mem = members[c];
    if (mem.empty()) continue;
    Rng rng(derive_seed(cfg.seed, fnv1a("cluster-sample"), c));
    rng.shuffle(mem);
    const std::size_t take = std::min(mem.size(), cfg.per_cluster);
    sel.shortfall += cfg.per_cluster - take;
    for (std::size_t i = 0; i < take; ++i) sel.ids.push_back(m.ids[mem[i]]);
  }
  std::sort(sel.ids.begin(), sel.ids.end());
  return sel;
}

nlohmann::json clusters_json(const EmbeddingMatrix& m, const KMeansResult& r, bool emit_centroids) {
  nlohmann::json assignments = nlohmann::json::object();
  for (std::size_t i = 0; i < m.size(); ++i) assignments[m.ids[i]] = r.assignment[i];
  const std::size_t k = m.dim ? r.centroids.size() / m.dim : 0;
  nlohmann::json j = {{"k", k},
                      {"n", m.size()},
                      {"iterations", r.iterations},
                      {"converged", r.converged},
                      {"reseeded", r.reseeded},
                      {"inertia", r.inertia},
                      {"assignments", assignments}};
  if (emit_centroids) {
    nlohmann::json cs = nlohmann::json::array();
    for (std::size_t c = 0; c < k; ++c)
      cs.push_back(std::vector<double>(r.centroids.begin() + std::ptrdiff_t(c * m.dim),
                                       r.centroids.begin() + std::ptrdiff_t((c + 1) * m.dim)));
    j["centroids"] = cs;
  }
  return j;
}

}  // namespace unifilter::cluster
