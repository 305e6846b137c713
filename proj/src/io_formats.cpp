#include "unifilter/io_formats.hpp"

#include <algorithm>
#include <cmath>

namespace unifilter {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::size_t InterleavedDoc::image_count() const {
  return std::size_t(std::count_if(items.begin(), items.end(),
                                   [](const DocItem& it) { return std::holds_alternative<ImageItem>(it); }));
}

std::size_t InterleavedDoc::text_count() const { return items.size() - image_count(); }

const std::string& record_id(const Record& r) {
  return std::visit([](const auto& x) -> const std::string& { return x.id; }, r);
}

Modality record_modality(const Record& r) {
  return std::holds_alternative<CaptionSample>(r) ? Modality::caption : Modality::interleaved;
}

std::string_view modality_name(Modality m) { return m == Modality::caption ? "caption" : "interleaved"; }

Modality modality_from_name(std::string_view s) {
  if (s == "caption") return Modality::caption;
  if (s == "interleaved") return Modality::interleaved;
  throw DataError("unknown modality '" + std::string(s) + "'");
}

namespace {
constexpr std::string_view kLevelNames[] = {"easy_negative", "medium_negative", "hard_negative", "positive"};
}

std::string_view level_name(QualityLevel level) { return kLevelNames[static_cast<int>(level)]; }

QualityLevel level_from_name(std::string_view name) {
  for (int i = 0; i < kNumLevels; ++i)
    if (kLevelNames[i] == name) return static_cast<QualityLevel>(i);
  throw DataError("unknown level name '" + std::string(name) + "'");
}

QualityLevel level_from_int(long long value) {
  if (value < 0 || value >= kNumLevels) throw DataError("label out of range: " + std::to_string(value));
  return static_cast<QualityLevel>(value);
}

std::string_view provenance_name(Provenance p) {
  return p == Provenance::synthetic ? "synthetic" : "nonsynthetic_positive";
}

Provenance provenance_from_name(std::string_view s) {
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "nonsynthetic_positive") return Provenance::nonsynthetic_positive;
  throw DataError("unknown provenance '" + std::string(s) + "'");
}

// ---- serialization ----

json to_json(const ImagePayload& p) {
  if (p.is_pixels()) {
    const auto& px = p.pixels();
    return json{{"pixels", {{"channels", px.channels}, {"height", px.height}, {"width", px.width}, {"data", px.data}}}};
  }
  const auto& g = p.patch_grid();
  return json{{"patch_grid", {{"h", g.h}, {"w", g.w}, {"dim", g.dim}, {"data", g.data}}}};
}

json to_json(const CaptionSample& s) {
  return json{{"id", s.id}, {"kind", "caption"}, {"image", to_json(s.image)}, {"text", s.text}};
}

json to_json(const InterleavedDoc& d) {
  json items = json::array();
  for (const auto& it : d.items) {
    if (const auto* t = std::get_if<TextItem>(&it))
      items.push_back({{"kind", "text"}, {"text", t->text}});
    else
      items.push_back({{"kind", "image"}, {"image", to_json(std::get<ImageItem>(it).image)}});
  }
  return json{{"id", d.id}, {"kind", "interleaved"}, {"items", std::move(items)}};
}

json to_json(const Record& r) {
  return std::visit([](const auto& x) { return to_json(x); }, r);
}

json to_json(const LabeledSample& s) {
  return json{{"record", to_json(s.record)},
              {"label", s.label_value()},
              {"level_name", level_name(s.label)},
              {"provenance", provenance_name(s.provenance)}};
}

json to_json(const ScoredRecord& s) {
  return json{{"id", s.id}, {"score", s.score}, {"modality", modality_name(s.modality)}};
}

// ---- parsing ----

namespace {

const json& field(const json& j, const char* name) {
  if (!j.is_object()) throw DataError("expected JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw DataError(std::string("missing field '") + name + "'");
  return *it;
}

std::string get_string(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw DataError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

long long get_int(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_integer()) throw DataError(std::string("field '") + name + "' must be an integer");
  return v.get<long long>();
}

std::vector<double> get_doubles(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array()) throw DataError(std::string("field '") + name + "' must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw DataError(std::string("field '") + name + "' must contain numbers");
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw DataError(std::string("non-finite value in '") + name + "'");
    out.push_back(d);
  }
  return out;
}

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string get_id(const json& j) {
  std::string id = get_string(j, "id");
  if (id.empty()) throw DataError("empty id");
  return id;
}

void check_kind(const json& j, std::string_view expected) {
  auto it = j.find("kind");
  if (it != j.end() && (!it->is_string() || it->get<std::string>() != expected))
    throw DataError("record kind must be '" + std::string(expected) + "'");
}

}  // namespace

template <>
ImagePayload parse_record<ImagePayload>(const json& j) {
  if (!j.is_object()) throw DataError("image payload must be an object");
  const bool has_px = j.contains("pixels");
  const bool has_grid = j.contains("patch_grid");
  if (has_px == has_grid) throw DataError("image payload needs exactly one of 'pixels' or 'patch_grid'");
  if (has_px) {
    const json& p = j["pixels"];
    PixelImage img;
    img.channels = int(get_int(p, "channels"));
    img.height = int(get_int(p, "height"));
    img.width = int(get_int(p, "width"));
    img.data = get_doubles(p, "data");
    if (img.channels < 1 || img.height < 1 || img.width < 1) throw DataError("pixel dims must be positive");
    if (img.data.size() != std::size_t(img.channels) * img.height * img.width)
      throw DataError("pixel payload shape mismatch: declared " + std::to_string(img.channels) + "x" +
                      std::to_string(img.height) + "x" + std::to_string(img.width) + ", got " +
                      std::to_string(img.data.size()) + " values");
    for (double v : img.data)
      if (v < 0.0 || v > 1.0) throw DataError("pixel value outside [0,1]");
    return ImagePayload{std::move(img)};
  }
  const json& g = j["patch_grid"];
  PatchGrid grid;
  grid.h = int(get_int(g, "h"));
  grid.w = int(get_int(g, "w"));
  grid.dim = int(get_int(g, "dim"));
  grid.data = get_doubles(g, "data");
  if (grid.h < 1 || grid.w < 1 || grid.dim < 1) throw DataError("patch grid dims must be positive");
  if (grid.data.size() != std::size_t(grid.h) * grid.w * grid.dim)
    throw DataError("patch grid shape mismatch: declared " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                    "x" + std::to_string(grid.dim) + ", got " + std::to_string(grid.data.size()) + " values");
  return ImagePayload{std::move(grid)};
}

template <>
CaptionSample parse_record<CaptionSample>(const json& j) {
  check_kind(j, "caption");
  CaptionSample s;
  s.id = get_id(j);
  s.image = parse_record<ImagePayload>(field(j, "image"));
  s.text = get_string(j, "text");
  if (blank(s.text)) throw DataError("empty text");
  return s;
}

template <>
InterleavedDoc parse_record<InterleavedDoc>(const json& j) {
  check_kind(j, "interleaved");
  InterleavedDoc d;
  d.id = get_id(j);
  const json& items = field(j, "items");
  if (!items.is_array()) throw DataError("field 'items' must be an array");
  for (const auto& it : items) {
    const std::string kind = get_string(it, "kind");
    if (kind == "text") {
      d.items.emplace_back(TextItem{get_string(it, "text")});
    } else if (kind == "image") {
      d.items.emplace_back(ImageItem{parse_record<ImagePayload>(field(it, "image"))});
    } else {
      throw DataError("unknown item kind '" + kind + "'");
    }
  }
  if (d.items.empty()) throw DataError("interleaved doc has no items");
  if (d.image_count() == 0) throw DataError("interleaved doc has no image item");
  if (d.text_count() == 0) throw DataError("interleaved doc has no text item");
  return d;
}

template <>
Record parse_record<Record>(const json& j) {
  if (!j.is_object()) throw DataError("expected JSON object");
  auto it = j.find("kind");
  if (it != j.end() && it->is_string()) {
    if (*it == "caption") return parse_record<CaptionSample>(j);
    if (*it == "interleaved") return parse_record<InterleavedDoc>(j);
    throw DataError("unknown record kind '" + it->get<std::string>() + "'");
  }
  if (j.contains("items")) return parse_record<InterleavedDoc>(j);
  return parse_record<CaptionSample>(j);
}

template <>
LabeledSample parse_record<LabeledSample>(const json& j) {
  LabeledSample s;
  s.record = parse_record<Record>(field(j, "record"));
  s.label = level_from_int(get_int(j, "label"));
  if (level_from_name(get_string(j, "level_name")) != s.label) throw DataError("level_name inconsistent with label");
  s.provenance = provenance_from_name(get_string(j, "provenance"));
  return s;
}

template <>
ScoredRecord parse_record<ScoredRecord>(const json& j) {
  ScoredRecord s;
  s.id = get_id(j);
  const json& v = field(j, "score");
  if (!v.is_number()) throw DataError("field 'score' must be a number");
  s.score = v.get<double>();
  if (!std::isfinite(s.score)) throw DataError("non-finite score");
  s.modality = modality_from_name(get_string(j, "modality"));
  return s;
}

std::string id_of(const CaptionSample& r) { return r.id; }
std::string id_of(const InterleavedDoc& r) { return r.id; }
std::string id_of(const Record& r) { return record_id(r); }
std::string id_of(const LabeledSample& r) { return record_id(r.record); }
std::string id_of(const ScoredRecord& r) { return r.id; }

// ---- writing ----

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open for writing: " + path.string());
}

void JsonlWriter::write_json(const json& j) {
  out_ << j.dump() << '\n';
  if (!out_) throw IoError("write failed: " + path_.string());
  ++count_;
}

void JsonlWriter::close() {
  out_.flush();
  if (!out_) throw IoError("write failed: " + path_.string());
  out_.close();
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace unifilter
