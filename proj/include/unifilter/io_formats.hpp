#pragma once

// On-disk record formats. Every corpus is line-delimited JSON, one record per
// line, UTF-8 with LF endings. Doubles are written with shortest round-trip
// precision so files can be compared byte-wise.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "json.hpp"
#include "unifilter/error.hpp"

namespace unifilter {

using json = nlohmann::json;

// Raw image, channels x height x width, row-major, values in [0, 1].
struct PixelImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  bool operator==(const PixelImage&) const = default;
};

// h x w grid of dim-sized vectors, stored row-major as [h][w][dim].
struct PatchGrid {
  int h = 0;
  int w = 0;
  int dim = 0;
  std::vector<double> data;

  PatchGrid() = default;
  PatchGrid(int h_, int w_, int dim_) : h(h_), w(w_), dim(dim_), data(std::size_t(h_) * w_ * dim_, 0.0) {}

  std::span<double> cell(int i, int j) { return {data.data() + (std::size_t(i) * w + j) * dim, std::size_t(dim)}; }
  std::span<const double> cell(int i, int j) const {
    return {data.data() + (std::size_t(i) * w + j) * dim, std::size_t(dim)};
  }

  bool operator==(const PatchGrid&) const = default;
};

struct ImagePayload {
  std::variant<PixelImage, PatchGrid> data;

  bool is_pixels() const { return std::holds_alternative<PixelImage>(data); }
  const PixelImage& pixels() const { return std::get<PixelImage>(data); }
  const PatchGrid& patch_grid() const { return std::get<PatchGrid>(data); }

  bool operator==(const ImagePayload&) const = default;
};

struct TextItem {
  std::string text;
  bool operator==(const TextItem&) const = default;
};

struct ImageItem {
  ImagePayload image;
  bool operator==(const ImageItem&) const = default;
};

using DocItem = std::variant<TextItem, ImageItem>;

struct CaptionSample {
  std::string id;
  ImagePayload image;
  std::string text;

  bool operator==(const CaptionSample&) const = default;
};

struct InterleavedDoc {
  std::string id;
  std::vector<DocItem> items;

  std::size_t image_count() const;
  std::size_t text_count() const;
  bool operator==(const InterleavedDoc&) const = default;
};

using Record = std::variant<CaptionSample, InterleavedDoc>;

enum class Modality { caption, interleaved };

const std::string& record_id(const Record& r);
Modality record_modality(const Record& r);
std::string_view modality_name(Modality m);
Modality modality_from_name(std::string_view s);

// Four ordered quality grades; the integer value is the regression target.
enum class QualityLevel : int { easy_negative = 0, medium_negative = 1, hard_negative = 2, positive = 3 };

inline constexpr int kNumLevels = 4;

std::string_view level_name(QualityLevel level);
QualityLevel level_from_name(std::string_view name);
// Throws DataError("label out of range") outside {0,1,2,3}.
QualityLevel level_from_int(long long value);

enum class Provenance { synthetic, nonsynthetic_positive };

std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view s);

struct LabeledSample {
  Record record;
  QualityLevel label = QualityLevel::easy_negative;
  Provenance provenance = Provenance::synthetic;

  int label_value() const { return static_cast<int>(label); }
  bool operator==(const LabeledSample&) const = default;
};

struct ScoredRecord {
  std::string id;
  double score = 0.0;
  Modality modality = Modality::caption;

  bool operator==(const ScoredRecord&) const = default;
};

// JSON mapping. Parsing validates every invariant of the type and throws
// DataError with a field-level message on violation.
json to_json(const ImagePayload& p);
json to_json(const CaptionSample& s);
json to_json(const InterleavedDoc& d);
json to_json(const Record& r);
json to_json(const LabeledSample& s);
json to_json(const ScoredRecord& s);

template <class T>
T parse_record(const json& j);

template <>
ImagePayload parse_record<ImagePayload>(const json& j);
template <>
CaptionSample parse_record<CaptionSample>(const json& j);
template <>
InterleavedDoc parse_record<InterleavedDoc>(const json& j);
template <>
Record parse_record<Record>(const json& j);
template <>
LabeledSample parse_record<LabeledSample>(const json& j);
template <>
ScoredRecord parse_record<ScoredRecord>(const json& j);

std::string id_of(const CaptionSample& r);
std::string id_of(const InterleavedDoc& r);
std::string id_of(const Record& r);
std::string id_of(const LabeledSample& r);
std::string id_of(const ScoredRecord& r);

struct RecordError {
  std::size_t line = 0;
  std::string message;
};

// Streams records from a JSONL file in file order. In the default lenient
// mode a malformed line is recorded in errors() and skipped; in strict mode
// it throws DataError naming the line.
template <class T>
class JsonlReader {
 public:
  explicit JsonlReader(const std::filesystem::path& path, bool strict = false)
      : path_(path), in_(path), strict_(strict) {
    if (!std::filesystem::exists(path)) throw IoError("missing file: " + path.string());
    if (!in_) throw IoError("cannot open: " + path.string());
  }

  std::optional<T> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      try {
        T value = parse_record<T>(json::parse(line));
        if (!seen_ids_.insert(id_of(value)).second) throw DataError("duplicate id '" + id_of(value) + "'");
        return value;
      } catch (const std::exception& e) {
        fail(e.what());
      }
    }
    return std::nullopt;
  }

  const std::vector<RecordError>& errors() const { return errors_; }
  std::size_t lines_read() const { return line_no_; }

 private:
  void fail(const std::string& what) {
    const std::string msg = path_.string() + ":" + std::to_string(line_no_) + ": " + what;
    if (strict_) throw DataError(msg);
    errors_.push_back({line_no_, what});
  }

  std::filesystem::path path_;
  std::ifstream in_;
  bool strict_;
  std::size_t line_no_ = 0;
  std::vector<RecordError> errors_;
  std::unordered_set<std::string> seen_ids_;
};

template <class T>
struct ReadResult {
  std::vector<T> records;
  std::vector<RecordError> errors;
};

template <class T>
ReadResult<T> read_records(const std::filesystem::path& path, bool strict = false) {
  JsonlReader<T> reader(path, strict);
  ReadResult<T> out;
  while (auto r = reader.next()) out.records.push_back(std::move(*r));
  out.errors = reader.errors();
  return out;
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);

  template <class T>
  void write(const T& value) {
    write_json(to_json(value));
  }
  void write_json(const json& j);
  std::size_t count() const { return count_; }
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

template <class T>
std::size_t write_records(const std::filesystem::path& path, std::span<const T> records) {
  JsonlWriter w(path);
  for (const auto& r : records) w.write(r);
  w.close();
  return w.count();
}

template <class T>
std::size_t write_records(const std::filesystem::path& path, const std::vector<T>& records) {
  return write_records(path, std::span<const T>(records));
}

// Small helpers shared by stages that write JSON side files.
void write_json_file(const std::filesystem::path& path, const json& j);
json read_json_file(const std::filesystem::path& path);

}  // namespace unifilter
