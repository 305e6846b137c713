#pragma once

// Labeled training-corpus construction: level-specific generation prompts,
// a pluggable text generator, response parsing, safety scanning, injection
// of non-synthetic positives, and the seeded train/validation split.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "unifilter/io_formats.hpp"

namespace unifilter::synthgen {

struct PromptConfig {
  Modality modality = Modality::caption;
  QualityLevel level = QualityLevel::positive;
  int num_words = 20;        // minimum caption length
  int min_doc_words = 500;   // minimum document length
};

// The level's quality-requirement text for the given modality.
std::string_view quality_requirement(Modality modality, QualityLevel level);

// Full generation prompt with the requirement substituted at its
// placeholder and the word counts interpolated. Byte-stable per config.
std::string build_prompt(const PromptConfig& cfg);

struct GeneratorRequest {
  std::string id;
  PromptConfig config;
  std::string prompt;
  std::vector<ImagePayload> images;
  std::uint64_t seed = 0;

  // Request envelope without pixel data (images are referenced by index).
  nlohmann::json to_json() const;
};

// The response is the JSON object the prompt asks for:
//   caption:     {"topic", "positive_caption", "negative_caption"}
//   interleaved: {"image_tags": [...], "document": "...<img>..</img>..."}
struct GeneratorResponse {
  nlohmann::json body;
};

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual GeneratorResponse generate(const GeneratorRequest& request) = 0;
  virtual std::string name() const = 0;
};

// Serves pre-computed responses keyed by request id from a JSONL file of
// {"id": ..., "response": {...}} lines, e.g. produced offline by a hosted
// multimodal model from the request envelopes.
class ReplayGenerator : public TextGenerator {
 public:
  explicit ReplayGenerator(const std::string& path);
  GeneratorResponse generate(const GeneratorRequest& request) override;
  std::string name() const override { return "replay"; }

 private:
  std::unordered_map<std::string, nlohmann::json> responses_;
};

// Parses a raw response string; throws DataError if it is not one JSON object.
nlohmann::json parse_response_text(std::string_view text);

// positive -> "positive_caption", otherwise "negative_caption".
std::string caption_from_response(const nlohmann::json& response, QualityLevel level);

// Splits the document at <img>...</img> tags; the i-th tag occurrence
// becomes the i-th image. Whitespace-only text fragments are dropped.
InterleavedDoc parse_interleaved_response(const nlohmann::json& response, std::span<const ImagePayload> images,
                                          const std::string& id);

using SafetyPredicate = std::function<bool(const std::string&)>;

// true = safe. An empty predicate passes everything.
bool scan_safety(const std::string& text, const SafetyPredicate& predicate);
SafetyPredicate banned_words_predicate(std::vector<std::string> banned);

struct SourceImage {
  std::string id;
  ImagePayload image;
};

struct SourceDoc {
  std::string id;
  std::vector<ImagePayload> images;
};

struct DatasetRequest {
  std::size_t caption_per_level = 0;
  std::size_t interleaved_per_level = 0;
  double val_fraction = 0.05;
  std::uint64_t seed = 0;
  int num_words = 20;
  int min_doc_words = 500;
};

struct GenerationReport {
  std::array<std::array<std::size_t, kNumLevels>, 2> generated{};  // [modality][level]
  std::size_t nonsynthetic_positives = 0;
  std::size_t safety_excluded = 0;
  std::size_t total = 0;
  std::size_t train = 0;
  std::size_t validation = 0;
  std::string generator;

  nlohmann::json to_json() const;
};

struct BuiltDataset {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> validation;
  GenerationReport report;
};

// floor(fraction * n), tolerant of representation error in the fraction.
std::size_t validation_count(std::size_t n, double fraction);

// Source images are consumed in order: the k-th sample of level L uses
// source L * per_level + k. Per-sample generator seeds derive from
// (seed, modality, sample index).
BuiltDataset build_dataset(std::span<const SourceImage> caption_sources, std::span<const SourceDoc> doc_sources,
                           const DatasetRequest& request, std::span<const CaptionSample> nonsynthetic_positives,
                           TextGenerator& generator, const SafetyPredicate& safety = {});

}  // namespace unifilter::synthgen
