#pragma once

// Diversity-driven source selection: image / document embeddings, seeded
// k-means, and a per-cluster draw.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unifilter/encoder.hpp"
#include "unifilter/io_formats.hpp"

namespace unifilter::cluster {

struct EmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> vecs;  // ids.size() x dim, row-major

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {vecs.data() + i * dim, dim}; }
  void add(const std::string& id, std::span<const double> v);
  // Throws DataError on duplicate ids or non-finite values.
  void validate() const;
};

struct ClusterConfig {
  std::size_t k = 16;
  std::size_t per_cluster = 4;
  int max_iters = 100;
  std::uint64_t seed = 0;
};

// Mean over the patch grid, L2-normalized. An all-zero mean is an error.
std::vector<double> image_embedding(const ImagePayload& image, const encoder::FrozenPatchEmbedder& embedder);
// Unweighted mean of the document's image embeddings, L2-normalized.
std::vector<double> doc_embedding(const InterleavedDoc& doc, const encoder::FrozenPatchEmbedder& embedder);

struct KMeansResult {
  std::vector<std::size_t> assignment;  // per row
  std::vector<double> centroids;        // k x dim
  std::vector<double> inertia;          // after every assignment step
  int iterations = 0;
  bool converged = false;
  std::size_t reseeded = 0;  // empty clusters repaired
};

// k-means++ seeding, then Lloyd iterations until the assignment is stable or
// max_iters. Ties go to the lowest centroid index. An empty cluster is
// re-seeded with the point farthest from its centroid.
KMeansResult kmeans(const EmbeddingMatrix& m, const ClusterConfig& cfg);

struct Selection {
  std::vector<std::string> ids;  // sorted
  std::size_t shortfall = 0;     // clusters smaller than per_cluster, summed
};

// min(size, per_cluster) ids from every cluster, drawn without replacement.
Selection sample_per_cluster(const EmbeddingMatrix& m, std::span<const std::size_t> assignment,
                             const ClusterConfig& cfg);

// {"assignments": {id: cluster}, "k", "inertia", ...}; centroids on request.
nlohmann::json clusters_json(const EmbeddingMatrix& m, const KMeansResult& r, bool emit_centroids);

}  // namespace unifilter::cluster
