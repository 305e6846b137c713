#include <cmath>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "unifilter/error.hpp"
#include "unifilter/io_formats.hpp"

using namespace unifilter;

namespace {

CaptionSample caption(const std::string& id) {
  return {id, {PixelImage{1, 2, 2, {0.0, 0.25, 0.5, 1.0}}}, "a red dog ."};
}

InterleavedDoc doc(const std::string& id) {
  PatchGrid g(1, 2, 2);
  g.data = {0.1, -0.2, 3.5, 1e-17};
  return {id, {TextItem{"intro"}, ImageItem{{g}}, TextItem{"outro ."}}};
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST_CASE("records round trip through JSON") {
  const Record a = caption("c1"), b = doc("d1");
  CHECK(parse_record<Record>(to_json(a)) == a);
  CHECK(parse_record<Record>(to_json(b)) == b);
  const LabeledSample ls{b, QualityLevel::hard_negative, Provenance::nonsynthetic_positive};
  CHECK(parse_record<LabeledSample>(to_json(ls)) == ls);
  const ScoredRecord sr{"x", 2.718281828459045, Modality::interleaved};
  CHECK(parse_record<ScoredRecord>(to_json(sr)) == sr);
  CHECK(to_json(ls).at("level_name") == "hard_negative");
  CHECK(to_json(ls).at("label") == 2);
}

TEST_CASE("doubles survive a text round trip bitwise") {
  const ScoredRecord sr{"x", 0.1 + 0.2, Modality::caption};
  const auto text = to_json(sr).dump();
  CHECK(parse_record<ScoredRecord>(json::parse(text)).score == sr.score);
}

TEST_CASE("validation errors name the problem") {
  auto j = to_json(caption("c"));
  j["image"]["pixels"]["data"].push_back(0.5);
  CHECK_THROWS_WITH_AS(parse_record<Record>(j), doctest::Contains("shape mismatch"), DataError);

  j = to_json(caption("c"));
  j["image"]["pixels"]["data"][0] = 1.5;
  CHECK_THROWS_WITH_AS(parse_record<Record>(j), doctest::Contains("outside [0,1]"), DataError);

  j = to_json(caption("c"));
  j["text"] = "   ";
  CHECK_THROWS_WITH_AS(parse_record<Record>(j), doctest::Contains("empty text"), DataError);

  j = to_json(caption("c"));
  j.erase("id");
  CHECK_THROWS_WITH_AS(parse_record<Record>(j), doctest::Contains("'id'"), DataError);

  j = to_json(doc("d"));
  j["items"].erase(1);
  CHECK_THROWS_WITH_AS(parse_record<Record>(j), doctest::Contains("no image"), DataError);

  j = to_json(doc("d"));
  j["items"][0]["kind"] = "video";
  CHECK_THROWS_WITH_AS(parse_record<Record>(j), doctest::Contains("video"), DataError);

  j = to_json(doc("d"));
  j["kind"] = "audio";
  CHECK_THROWS_AS(parse_record<Record>(j), DataError);

  auto l = to_json(LabeledSample{caption("c"), QualityLevel::positive, Provenance::synthetic});
  l["label"] = 4;
  CHECK_THROWS_WITH_AS(parse_record<LabeledSample>(l), doctest::Contains("label out of range"), DataError);
  l["label"] = 2;
  CHECK_THROWS_WITH_AS(parse_record<LabeledSample>(l), doctest::Contains("inconsistent"), DataError);

  auto s = to_json(ScoredRecord{"x", 1.0, Modality::caption});
  s["score"] = "high";
  CHECK_THROWS_AS(parse_record<ScoredRecord>(s), DataError);
}

TEST_CASE("level and name tables") {
  for (int i = 0; i < kNumLevels; ++i) {
    const auto l = level_from_int(i);
    CHECK(level_from_name(level_name(l)) == l);
  }
  CHECK(static_cast<int>(QualityLevel::positive) == 3);
  CHECK(static_cast<int>(QualityLevel::easy_negative) == 0);
  CHECK_THROWS_AS(level_from_int(-1), DataError);
  CHECK_THROWS_AS(level_from_name("great"), DataError);
  CHECK(modality_from_name("interleaved") == Modality::interleaved);
  CHECK_THROWS_AS(modality_from_name("video"), DataError);
  CHECK(provenance_from_name(provenance_name(Provenance::nonsynthetic_positive)) == Provenance::nonsynthetic_positive);
  CHECK(std::string(error_kind_name(ErrorKind::numeric)) == "numeric");
}

TEST_CASE("jsonl: write, read in order, lenient and strict modes") {
  const auto dir = testutil::scratch_dir("io");
  const auto path = dir / "recs.jsonl";
  std::vector<Record> recs{caption("a"), doc("b"), caption("c")};
  CHECK(write_records(path, recs) == 3);
  const auto back = read_records<Record>(path, true);
  CHECK(back.records == recs);
  CHECK(back.errors.empty());

  // byte-stable output
  const auto path2 = dir / "recs2.jsonl";
  write_records(path2, recs);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  CHECK(s1.find('\r') == std::string::npos);
  CHECK(s1.back() == '\n');

  const auto bad = dir / "bad.jsonl";
  write_text(bad, to_json(Record(caption("a"))).dump() + "\n{not json\n\n" + to_json(Record(caption("a"))).dump() +
                      "\n" + to_json(Record(doc("z"))).dump() + "\r\n");
  const auto lenient = read_records<Record>(bad);
  REQUIRE(lenient.records.size() == 2);
  CHECK(record_id(lenient.records[1]) == "z");
  REQUIRE(lenient.errors.size() == 2);
  CHECK(lenient.errors[0].line == 2);
  CHECK(lenient.errors[1].line == 4);
  CHECK(lenient.errors[1].message.find("duplicate id") != std::string::npos);
  CHECK_THROWS_WITH_AS(read_records<Record>(bad, true), doctest::Contains(":2:"), DataError);

  CHECK_THROWS_AS(read_records<Record>(dir / "missing.jsonl"), IoError);
}

TEST_CASE("json side files") {
  const auto dir = testutil::scratch_dir("io_json");
  write_json_file(dir / "a.json", json{{"k", 1.5}});
  CHECK(read_json_file(dir / "a.json").at("k") == 1.5);
  write_text(dir / "b.json", "{oops");
  CHECK_THROWS_AS(read_json_file(dir / "b.json"), DataError);
  CHECK_THROWS_AS(read_json_file(dir / "none.json"), IoError);
}
