#pragma once

// Production path: batch scoring with a trained model, top-fraction
// selection, the image/paragraph similarity baseline, corpus statistics and
// a throughput harness.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unifilter/classifier.hpp"
#include "unifilter/io_formats.hpp"

namespace unifilter::filter {

struct ScoreConfig {
  std::size_t batch_size = 8;
  std::size_t threads = 0;  // 0: UNIFILTER_THREADS, else hardware concurrency
};

// Worker count: explicit value, then UNIFILTER_THREADS, then the hardware.
std::size_t resolve_threads(std::size_t requested);

struct Reject {
  std::string id;
  std::string reason;
};

struct ScoreResult {
  std::vector<ScoredRecord> scores;  // input order, rejects omitted
  std::vector<Reject> rejects;
};

// Batches fan out over worker threads; results are merged back in input
// order, so the output does not depend on batch size or worker count.
// Records that fail preparation (e.g. over-length) become rejects.
ScoreResult score_corpus(std::span<const Record> records, const classifier::QualityModel& model,
                         const ScoreConfig& cfg);

// ceil(f * n) with a guard against representation error in f.
std::size_t retained_count(std::size_t n, double fraction);

// Indices (ascending, i.e. corpus order) of the ceil(f * n) highest scores;
// equal scores are ranked by ascending id.
std::vector<std::size_t> select_top_fraction(std::span<const ScoredRecord> scores, double fraction);

// Score of the ceil(f * n)-th largest element.
double threshold_for_fraction(std::span<const double> scores, double fraction);

// Matches scores to records by id and keeps the selected records in corpus
// order. Throws DataError when the id sets differ.
std::vector<Record> filter_records(std::span<const Record> records, std::span<const ScoredRecord> scores,
                                   double fraction);

using TextEmbedFn = std::function<std::vector<double>(const std::string&)>;
using ImageEmbedFn = std::function<std::vector<double>(const ImagePayload&)>;

// L2-normalized signed hashed bag of words in `dim` buckets.
std::vector<double> hashed_text_embedding(const std::string& text, std::size_t dim);

struct DfnOutcome {
  std::optional<InterleavedDoc> doc;  // empty when no image survived
  std::size_t images_removed = 0;
};

// An image stays iff its best cosine similarity against the same document's
// text items is >= tau. Text items always stay.
DfnOutcome dfn_filter_doc(const InterleavedDoc& doc, const TextEmbedFn& text_embed, const ImageEmbedFn& image_embed,
                          double tau);

struct DfnCorpusResult {
  std::vector<InterleavedDoc> kept;
  std::vector<InterleavedDoc> dropped;  // lost every image
  std::size_t images_before = 0;
  std::size_t images_removed = 0;
};

DfnCorpusResult dfn_filter_corpus(std::span<const InterleavedDoc> docs, const TextEmbedFn& text_embed,
                                  const ImageEmbedFn& image_embed, double tau);

struct CorpusStats {
  std::size_t n_docs = 0;
  double avg_images = 0.0;
  double avg_text_len = 0.0;  // whitespace-separated words
  double avg_doc_len = 0.0;   // words + image_token_equiv per image
  double retained_fraction = 1.0;
  double image_token_equiv = 0.0;
};

std::size_t word_count(const std::string& text);

// Captions count as one image plus their text. Throws on an empty corpus.
CorpusStats corpus_stats(std::span<const Record> records, double image_token_equiv, double retained_fraction = 1.0);
CorpusStats corpus_stats(std::span<const InterleavedDoc> docs, double image_token_equiv,
                         double retained_fraction = 1.0);

nlohmann::json to_json(const CorpusStats& s);

struct BenchRow {
  std::size_t corpus_size = 0;
  std::size_t batch_size = 0;
  double seconds = 0.0;  // best of the repeats
  double samples_per_s = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::size_t threads = 1;
  int repeats = 1;
  nlohmann::json model_config;
};

// Scores the first `size` records of `pool` (cycled) for every
// (size, batch) pair and keeps the fastest of `repeats` runs; the repeats
// cycle through all pairs.
BenchReport throughput_bench(const classifier::QualityModel& model, std::span<const Record> pool,
                             std::span<const std::size_t> sizes, std::span<const std::size_t> batches,
                             std::size_t threads = 1, int repeats = 3);

nlohmann::json to_json(const BenchReport& r);

}  // namespace unifilter::filter
