#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>

#include "doctest.h"
#include "unifilter/error.hpp"
#include "unifilter/filter_pipeline.hpp"
#include "unifilter/mock_generator.hpp"
#include "unifilter/rng.hpp"

using namespace unifilter;
using namespace unifilter::filter;

namespace {

std::vector<ScoredRecord> scored(const std::vector<double>& s) {
  std::vector<ScoredRecord> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "r%04zu", i);
    out.push_back({id, s[i], Modality::caption});
  }
  return out;
}

// Full sort on (score desc, id asc), take the first k ids.
std::set<std::string> oracle_keep(const std::vector<ScoredRecord>& s, std::size_t k) {
  auto v = s;
  std::sort(v.begin(), v.end(), [](const ScoredRecord& a, const ScoredRecord& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  std::set<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.insert(v[i].id);
  return out;
}

ImagePayload marker_image(double v) { return {PixelImage{1, 1, 1, {v}}}; }

std::vector<Record> mock_records(std::size_t n, std::uint64_t seed) {
  synthgen::MockConfig mc;
  const auto caps = synthgen::synth_caption_sources(n, mc, seed);
  const auto docs = synthgen::synth_doc_sources(n, mc, seed + 1);
  std::vector<Record> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(CaptionSample{caps[i].id, caps[i].image,
                                synthgen::mock_caption(synthgen::image_categories(caps[i].image, mc), mc, i)});
    const auto body =
        synthgen::mock_document(synthgen::image_categories(docs[i].images[0], mc), docs[i].images.size(), mc, i);
    out.push_back(synthgen::parse_interleaved_response(body, docs[i].images, docs[i].id));
  }
  return out;
}

classifier::QualityModel small_model(const std::vector<Record>& recs, int max_seq_len = 256) {
  auto vocab = packing::Vocab::build_from_records(recs);
  classifier::ModelConfig cfg;
  cfg.d = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.vocab_size = int(vocab.size());
  cfg.max_seq_len = max_seq_len;
  return classifier::QualityModel(cfg, vocab, classifier::ModelParams::init(cfg, 17));
}

}  // namespace

TEST_CASE("retained count is ceil(f n)") {
  CHECK(retained_count(1000, 0.30) == 300);
  CHECK(retained_count(1000, 0.15) == 150);
  CHECK(retained_count(10, 0.25) == 3);
  CHECK(retained_count(7, 1.0) == 7);
  CHECK(retained_count(3, 0.01) == 1);
  CHECK(retained_count(0, 0.5) == 0);
  CHECK_THROWS_AS(retained_count(10, 0.0), UsageError);
  CHECK_THROWS_AS(retained_count(10, 1.5), UsageError);
  CHECK_THROWS_AS(retained_count(10, std::nan("")), UsageError);
}

TEST_CASE("select_top_fraction matches a full-sort oracle with ties") {
  Rng rng(2024);
  for (int inst = 0; inst < 300; ++inst) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<double> s(n);
    // coarse grid -> plenty of ties
    for (auto& x : s) x = double(rng.below(8)) / 4.0;
    const auto recs = scored(s);
    const double f = 0.05 + 0.95 * rng.uniform();
    const auto idx = select_top_fraction(recs, f);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    std::set<std::string> got;
    for (auto i : idx) got.insert(recs[i].id);
    CHECK(got == oracle_keep(recs, retained_count(n, f)));
  }
}

TEST_CASE("select_top_fraction: 30 percent of 1000, identity at 1.0, all tied") {
  Rng rng(7);
  std::vector<double> s(1000);
  for (auto& x : s) x = rng.uniform();
  const auto recs = scored(s);
  CHECK(select_top_fraction(recs, 0.30).size() == 300);
  const auto all = select_top_fraction(recs, 1.0);
  REQUIRE(all.size() == 1000);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

  const auto tied = scored(std::vector<double>(10, 1.5));
  const auto t = select_top_fraction(tied, 0.3);
  CHECK(t == std::vector<std::size_t>{0, 1, 2});  // lowest ids win
}

TEST_CASE("NaN scores are rejected") {
  auto recs = scored({1.0, std::nan(""), 2.0});
  CHECK_THROWS_AS(select_top_fraction(recs, 0.5), NumericError);
  const std::vector<double> s{1.0, std::nan("")};
  CHECK_THROWS_AS(threshold_for_fraction(s, 0.5), NumericError);
}

TEST_CASE("threshold_for_fraction") {
  const std::vector<double> s{5, 1, 3, 3, 2};
  CHECK(threshold_for_fraction(s, 0.4) == 3.0);
  CHECK(threshold_for_fraction(s, 0.2) == 5.0);
  CHECK(threshold_for_fraction(s, 1.0) == 1.0);
  CHECK_THROWS_AS(threshold_for_fraction(std::vector<double>{}, 0.5), DataError);
}

TEST_CASE("filter_records keeps corpus order and checks ids") {
  std::vector<Record> recs;
  for (const char* id : {"c", "a", "d", "b"}) recs.push_back(CaptionSample{id, marker_image(0), "x"});
  std::vector<ScoredRecord> s{{"a", 0.1, Modality::caption},
                              {"b", 0.9, Modality::caption},
                              {"c", 0.8, Modality::caption},
                              {"d", 0.2, Modality::caption}};
  const auto kept = filter_records(recs, s, 0.5);
  REQUIRE(kept.size() == 2);
  CHECK(record_id(kept[0]) == "c");
  CHECK(record_id(kept[1]) == "b");

  auto extra = s;
  extra.push_back({"zz", 1.0, Modality::caption});
  CHECK_THROWS_AS(filter_records(recs, extra, 0.5), DataError);
  auto missing = s;
  missing.pop_back();
  CHECK_THROWS_AS(filter_records(recs, missing, 0.5), DataError);
  auto dup = missing;
  dup.push_back({"a", 0.3, Modality::caption});
  CHECK_THROWS_AS(filter_records(recs, dup, 0.5), DataError);
}

TEST_CASE("hashed text embedding") {
  const auto a = hashed_text_embedding("a red dog near the house .", 32);
  double n2 = 0;
  for (double x : a) n2 += x * x;
  CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a == hashed_text_embedding("a red dog near the house .", 32));
  CHECK(a != hashed_text_embedding("a blue cat near the house .", 32));
  for (double x : hashed_text_embedding("", 8)) CHECK(x == 0.0);
  CHECK_THROWS_AS(hashed_text_embedding("x", 0), UsageError);
}

TEST_CASE("dfn: per-image decision against the best paragraph") {
  // images and paragraphs carry prescribed unit vectors
  const double s = std::sqrt(1.0 - 0.2 * 0.2);
  const std::map<double, std::vector<double>> img{
      {1, {1, 0, 0}}, {2, {0, 1, 0}}, {3, {0.2, s, 0}}, {6, {3, 4, 0}}, {4, {0, 0, 1}}, {5, {-1, 0, 0}}};
  const std::map<std::string, std::vector<double>> txt{
      {"p-x", {1, 0, 0}}, {"p-y", {0, 1, 0}}, {"p-xz", {std::sqrt(0.5), 0, std::sqrt(0.5)}}};
  const TextEmbedFn te = [&](const std::string& t) { return txt.at(t); };
  const ImageEmbedFn ie = [&](const ImagePayload& p) { return img.at(p.pixels().data[0]); };
  auto doc = [](std::string id, std::vector<DocItem> items) { return InterleavedDoc{std::move(id), std::move(items)}; };
  auto I = [](double v) { return DocItem{ImageItem{marker_image(v)}}; };
  auto T = [](const char* t) { return DocItem{TextItem{t}}; };

  const std::vector<InterleavedDoc> corpus{
      doc("d1", {I(1), T("p-x")}),                // cos 1 -> keep
      doc("d2", {I(3), T("p-x")}),                // cos 0.2 -> keep
      doc("d3", {I(2), T("p-x"), I(1)}),          // first image 0 -> removed, second kept
      doc("d4", {T("p-y"), I(4), I(5)}),          // both images below -> doc dropped
      doc("d5", {I(4), T("p-x"), T("p-xz")}),     // best paragraph wins (0.707)
  };
  const auto r = dfn_filter_corpus(corpus, te, ie, 0.15);
  REQUIRE(r.kept.size() == 4);
  REQUIRE(r.dropped.size() == 1);
  CHECK(r.dropped[0].id == "d4");
  CHECK(r.kept[0] == corpus[0]);
  CHECK(r.kept[1] == corpus[1]);
  CHECK(r.kept[2] == doc("d3", {T("p-x"), I(1)}));
  CHECK(r.kept[3] == corpus[4]);
  CHECK(r.images_before == 7);
  CHECK(r.images_removed == 3);

  // tau = -1 keeps everything
  const auto all = dfn_filter_corpus(corpus, te, ie, -1.0);
  CHECK(all.kept == corpus);
  CHECK(all.images_removed == 0);

  // text items survive even when every image goes
  const auto strict = dfn_filter_doc(corpus[2], te, ie, 2.0);
  CHECK_FALSE(strict.doc.has_value());
  CHECK(strict.images_removed == 2);
  const auto loose = dfn_filter_doc(corpus[2], te, ie, 0.5);
  REQUIRE(loose.doc.has_value());
  CHECK(loose.doc->text_count() == 1);

  // the threshold itself is inclusive: cos((3,4,0), x) is exactly 0.6
  CHECK(dfn_filter_doc(doc("d7", {I(6), T("p-x")}), te, ie, 0.6).doc.has_value());
  CHECK_FALSE(dfn_filter_doc(doc("d7", {I(6), T("p-x")}), te, ie, std::nextafter(0.6, 1.0)).doc.has_value());

  // an image in a document without paragraphs has nothing to match
  CHECK_FALSE(dfn_filter_doc(doc("d6", {I(1)}), te, ie, -1.0).doc.has_value());
  // dimension mismatch
  const ImageEmbedFn bad = [](const ImagePayload&) { return std::vector<double>{1, 0}; };
  CHECK_THROWS_AS(dfn_filter_doc(corpus[0], te, bad, 0.0), DataError);
}

TEST_CASE("corpus stats on a hand-computed fixture") {
  auto I = [] { return DocItem{ImageItem{marker_image(0)}}; };
  auto T = [](const char* t) { return DocItem{TextItem{t}}; };
  const std::vector<InterleavedDoc> docs{
      {"a", {I(), T("one two three")}},              // 1 image, 3 words
      {"b", {T("four five"), I(), I(), T("six")}},  // 2 images, 3 words
      {"c", {T("  seven   eight nine ten  ")}},      // 0 images, 4 words
  };
  const auto s = corpus_stats(docs, 144.0, 0.5);
  CHECK(s.n_docs == 3);
  CHECK(s.avg_images == 1.0);
  CHECK(s.avg_text_len == 10.0 / 3.0);
  CHECK(s.avg_doc_len == (10.0 + 144.0 * 3.0) / 3.0);
  CHECK(s.retained_fraction == 0.5);
  const auto j = to_json(s);
  CHECK(j.at("avg_doc_len").get<double>() == s.avg_doc_len);
  CHECK(j.at("image_token_equiv").get<double>() == 144.0);

  // captions count one image
  const std::vector<Record> recs{CaptionSample{"x", marker_image(0), "a b c d"}, Record(docs[1])};
  const auto r = corpus_stats(recs, 10.0);
  CHECK(r.avg_images == 1.5);
  CHECK(r.avg_text_len == 3.5);
  CHECK(r.avg_doc_len == (7.0 + 30.0) / 2.0);

  CHECK_THROWS_AS(corpus_stats(std::vector<InterleavedDoc>{}, 144.0), DataError);
  CHECK(word_count("") == 0);
  CHECK(word_count(" a\tb\nc ") == 3);
}

TEST_CASE("score_corpus: order, batch size and worker count do not matter") {
  const auto recs = mock_records(10, 31);
  const auto model = small_model(recs);
  const auto ref = score_corpus(recs, model, {1, 1});
  REQUIRE(ref.scores.size() == recs.size());
  CHECK(ref.rejects.empty());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(ref.scores[i].id == record_id(recs[i]));
    CHECK(ref.scores[i].modality == record_modality(recs[i]));
    CHECK(ref.scores[i].score == classifier::score_record(recs[i], model));
  }
  for (std::size_t b : {3u, 8u, 64u})
    for (std::size_t w : {1u, 3u}) {
      const auto r = score_corpus(recs, model, {b, w});
      CHECK(r.scores == ref.scores);
    }
  CHECK_THROWS_AS(score_corpus(recs, model, {0, 1}), UsageError);
  CHECK(score_corpus(std::vector<Record>{}, model, {8, 2}).scores.empty());
}

TEST_CASE("score_corpus sends over-length records to rejects") {
  auto recs = mock_records(4, 5);
  // 16 image tokens fit in 20, two images do not
  const auto model = small_model(recs, 20);
  const auto r = score_corpus(recs, model, {3, 2});
  std::size_t two_image_docs = 0;
  for (const auto& x : recs)
    if (const auto* d = std::get_if<InterleavedDoc>(&x); d && d->image_count() > 1) ++two_image_docs;
  REQUIRE(two_image_docs > 0);
  CHECK(r.rejects.size() == two_image_docs);
  CHECK(r.scores.size() + r.rejects.size() == recs.size());
  for (const auto& rej : r.rejects) CHECK_FALSE(rej.reason.empty());
}

TEST_CASE("worker count resolution") {
  CHECK(resolve_threads(3) == 3);
  setenv("UNIFILTER_THREADS", "2", 1);
  CHECK(resolve_threads(0) == 2);
  setenv("UNIFILTER_THREADS", "zero", 1);
  CHECK_THROWS_AS(resolve_threads(0), UsageError);
  unsetenv("UNIFILTER_THREADS");
  CHECK(resolve_threads(0) >= 1);
}

TEST_CASE("throughput report is well formed") {
  const auto recs = mock_records(3, 77);
  const auto model = small_model(recs);
  const std::vector<std::size_t> sizes{4, 8}, batches{1, 8};
  const auto rep = throughput_bench(model, recs, sizes, batches, 1, 1);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].corpus_size == 4);
  CHECK(rep.rows[1].batch_size == 8);
  for (const auto& r : rep.rows) {
    CHECK(r.seconds > 0.0);
    CHECK(r.samples_per_s == doctest::Approx(double(r.corpus_size) / r.seconds));
  }
  const auto j = to_json(rep);
  CHECK(j.at("precision") == "double");
  CHECK(j.at("rows").size() == 4);
  CHECK(j.at("model_config").at("d") == 16);
  CHECK_THROWS_AS(throughput_bench(model, std::vector<Record>{}, sizes, batches), DataError);
}
