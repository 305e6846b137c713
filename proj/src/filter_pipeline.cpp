#include "unifilter/filter_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "unifilter/error.hpp"
#include "unifilter/packing.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::filter {

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("UNIFILTER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw UsageError(std::string("bad UNIFILTER_THREADS: '") + env + "'");
    return std::size_t(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct BatchOut {
  std::vector<ScoredRecord> scores;
  std::vector<Reject> rejects;
};

BatchOut score_batch(std::span<const Record> records, std::size_t first, const classifier::QualityModel& model) {
  BatchOut out;
  std::vector<classifier::AssembledSequence> seqs;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      seqs.push_back(classifier::assemble(classifier::prepare(records[i], model), model));
      idx.push_back(first + i);
    } catch (const DataError& e) {
      out.rejects.push_back({record_id(records[i]), e.what()});
    }
  }
  const auto s = classifier::forward_scores(seqs, model);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& r = records[idx[i] - first];
    if (!std::isfinite(s[i])) throw NumericError("non-finite score for '" + record_id(r) + "'");
    out.scores.push_back({record_id(r), s[i], record_modality(r)});
  }
  return out;
}

}  // namespace

ScoreResult score_corpus(std::span<const Record> records, const classifier::QualityModel& model,
                         const ScoreConfig& cfg) {
  if (cfg.batch_size < 1) throw UsageError("batch size must be >= 1");
  const std::size_t n_batches = (records.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t workers = std::min(resolve_threads(cfg.threads), std::max<std::size_t>(n_batches, 1));

  std::vector<BatchOut> outs(n_batches);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_batches) return;
      const std::size_t lo = b * cfg.batch_size, hi = std::min(records.size(), lo + cfg.batch_size);
      try {
        outs[b] = score_batch(records.subspan(lo, hi - lo), lo, model);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = n_batches;
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // batches are contiguous, so concatenating in batch order is input order
  ScoreResult res;
  for (auto& o : outs) {
    for (auto& s : o.scores) res.scores.push_back(std::move(s));
    for (auto& r : o.rejects) res.rejects.push_back(std::move(r));
  }
  return res;
}

std::size_t retained_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("fraction must be in (0, 1]");
  const double x = fraction * double(n);
  const double r = std::round(x);
  const double c = std::abs(x - r) < 1e-9 * std::max(1.0, x) ? r : std::ceil(x);
  return std::min(n, std::size_t(c));
}

std::vector<std::size_t> select_top_fraction(std::span<const ScoredRecord> scores, double fraction) {
  const std::size_t keep = retained_count(scores.size(), fraction);
  for (const auto& s : scores)
    if (std::isnan(s.score)) throw NumericError("NaN score for '" + s.id + "'");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].score != scores[b].score) return scores[a].score > scores[b].score;
    return scores[a].id < scores[b].id;
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

double threshold_for_fraction(std::span<const double> scores, double fraction) {
  if (scores.empty()) throw DataError("threshold_for_fraction: no scores");
  const std::size_t keep = retained_count(scores.size(), fraction);
  std::vector<double> v(scores.begin(), scores.end());
  for (double x : v)
    if (std::isnan(x)) throw NumericError("NaN score");
  std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(keep - 1), v.end(), std::greater<>());
  return v[keep - 1];
}

std::vector<Record> filter_records(std::span<const Record> records, std::span<const ScoredRecord> scores,
                                   double fraction) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < records.size(); ++i) pos.emplace(record_id(records[i]), i);
  std::vector<bool> scored(records.size(), false);
  for (const auto& s : scores) {
    const auto it = pos.find(s.id);
    if (it == pos.end()) throw DataError("score for unknown id '" + s.id + "'");
    if (scored[it->second]) throw DataError("duplicate score for '" + s.id + "'");
    scored[it->second] = true;
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!scored[i]) throw DataError("no score for '" + record_id(records[i]) + "'");

  std::vector<std::size_t> keep_rec;
  for (std::size_t i : select_top_fraction(scores, fraction)) keep_rec.push_back(pos.at(scores[i].id));
  std::sort(keep_rec.begin(), keep_rec.end());
  std::vector<Record> out;
  out.reserve(keep_rec.size());
  for (std::size_t i : keep_rec) out.push_back(records[i]);
  return out;
}

std::vector<double> hashed_text_embedding(const std::string& text, std::size_t dim) {
  if (dim == 0) throw UsageError("embedding dim must be >= 1");
  std::vector<double> v(dim, 0.0);
  for (const auto& w : packing::split_words(text)) {
    const std::uint64_t h = fnv1a(w);
    v[h % dim] += (h >> 63) ? -1.0 : 1.0;
  }
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 > 0.0)
    for (double& x : v) x /= std::sqrt(n2);
  return v;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("embedding dims differ: " + std::to_string(a.size()) + " vs " +
                                            std::to_string(b.size()));
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace

DfnOutcome dfn_filter_doc(const InterleavedDoc& doc, const TextEmbedFn& text_embed, const ImageEmbedFn& image_embed,
                          double tau) {
  std::vector<std::vector<double>> texts;
  for (const auto& item : doc.items)
    if (const auto* t = std::get_if<TextItem>(&item)) texts.push_back(text_embed(t->text));

  DfnOutcome out;
  InterleavedDoc kept{doc.id, {}};
  std::size_t images = 0;
  for (const auto& item : doc.items) {
    const auto* im = std::get_if<ImageItem>(&item);
    if (!im) {
      kept.items.push_back(item);
      continue;
    }
    const auto e = image_embed(im->image);
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& t : texts) best = std::max(best, cosine(e, t));
    if (best >= tau) {
      kept.items.push_back(item);
      ++images;
    } else {
      ++out.images_removed;
    }
  }
  if (images > 0) out.doc = std::move(kept);
  return out;
}

DfnCorpusResult dfn_filter_corpus(std::span<const InterleavedDoc> docs, const TextEmbedFn& text_embed,
                                  const ImageEmbedFn& image_embed, double tau) {
  DfnCorpusResult r;
  for (const auto& d : docs) {
    r.images_before += d.image_count();
    auto o = dfn_filter_doc(d, text_embed, image_embed, tau);
    r.images_removed += o.images_removed;
    if (o.doc)
      r.kept.push_back(std::move(*o.doc));
    else
      r.dropped.push_back(d);
  }
  return r;
}

std::size_t word_count(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

namespace {

CorpusStats finish(std::size_t n, std::size_t images, std::size_t words, double equiv, double retained) {
  if (n == 0) throw DataError("corpus_stats: empty corpus");
  if (!(equiv >= 0.0)) throw UsageError("image_token_equiv must be >= 0");
  CorpusStats s;
  s.n_docs = n;
  s.avg_images = double(images) / double(n);
  s.avg_text_len = double(words) / double(n);
  s.avg_doc_len = (double(words) + equiv * double(images)) / double(n);
  s.retained_fraction = retained;
  s.image_token_equiv = equiv;
  return s;
}

std::size_t doc_words(const InterleavedDoc& d) {
  std::size_t w = 0;
  for (const auto& item : d.items)
    if (const auto* t = std::get_if<TextItem>(&item)) w += word_count(t->text);
  return w;
}

}  // namespace

CorpusStats corpus_stats(std::span<const Record> records, double image_token_equiv, double retained_fraction) {
  std::size_t images = 0, words = 0;
  for (const auto& r : records) {
    if (const auto* c = std::get_if<CaptionSample>(&r)) {
      images += 1;
      words += word_count(c->text);
    } else {
      const auto& d = std::get<InterleavedDoc>(r);
      images += d.image_count();
      words += doc_words(d);
    }
  }
  return finish(records.size(), images, words, image_token_equiv, retained_fraction);
}

CorpusStats corpus_stats(std::span<const InterleavedDoc> docs, double image_token_equiv, double retained_fraction) {
  std::size_t images = 0, words = 0;
  for (const auto& d : docs) {
    images += d.image_count();
    words += doc_words(d);
  }
  return finish(docs.size(), images, words, image_token_equiv, retained_fraction);
}

nlohmann::json to_json(const CorpusStats& s) {
  return {{"n_docs", s.n_docs},
          {"avg_images", s.avg_images},
          {"avg_text_len", s.avg_text_len},
          {"avg_doc_len", s.avg_doc_len},
          {"retained_fraction", s.retained_fraction},
          {"image_token_equiv", s.image_token_equiv}};
}

BenchReport throughput_bench(const classifier::QualityModel& model, std::span<const Record> pool,
                             std::span<const std::size_t> sizes, std::span<const std::size_t> batches,
                             std::size_t threads, int repeats) {
  if (pool.empty()) throw DataError("bench: empty record pool");
  if (repeats < 1) throw UsageError("bench: repeats must be >= 1");
  BenchReport rep;
  rep.threads = resolve_threads(threads);
  rep.repeats = repeats;
  rep.model_config = classifier::to_json(model.config());
  std::vector<std::vector<Record>> corpora;
  for (std::size_t size : sizes) {
    if (size == 0) throw UsageError("bench: corpus size must be >= 1");
    auto& corpus = corpora.emplace_back();
    corpus.reserve(size);
    for (std::size_t i = 0; i < size; ++i) corpus.push_back(pool[i % pool.size()]);
  }
  // repeats are interleaved across settings so a burst of machine noise
  // cannot land on one setting only
  std::vector<double> best(sizes.size() * batches.size(), std::numeric_limits<double>::infinity());
  for (int r = 0; r < repeats; ++r)
    for (std::size_t s = 0; s < sizes.size(); ++s)
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = score_corpus(corpora[s], model, {batches[b], rep.threads});
        const auto t1 = std::chrono::steady_clock::now();
        if (res.scores.empty()) throw DataError("bench: every record was rejected");
        double& slot = best[s * batches.size() + b];
        slot = std::min(slot, std::chrono::duration<double>(t1 - t0).count());
      }
  for (std::size_t s = 0; s < sizes.size(); ++s)
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const double secs = best[s * batches.size() + b];
      rep.rows.push_back({sizes[s], batches[b], secs, double(sizes[s]) / secs});
    }
  return rep;
}

nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"corpus_size", row.corpus_size},
                    {"batch_size", row.batch_size},
                    {"seconds", row.seconds},
                    {"samples_per_s", row.samples_per_s}});
  return {{"rows", rows},
          {"threads", r.threads},
          {"repeats", r.repeats},
          {"precision", "double"},
          {"model_config", r.model_config}};
}

}  // namespace unifilter::filter
