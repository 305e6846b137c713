#pragma once

// Deterministic stand-in for the hosted text generator.
//
// Mock images are split into four quadrants (color, subject, place, time);
// each quadrant is tiled with the patch pattern of one of six categories per
// slot. The keyword of a slot is read back from the image by matching the
// quadrant's folded patch statistics against the category patterns. The
// generated text names one keyword per slot, and the quality level fixes how
// many of them are right:
//   positive        all K
//   hard_negative   K-1 (one slot swapped for its neighbour category)
//   medium_negative 1
//   easy_negative   0
// No other cue in the text depends on the level.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unifilter/io_formats.hpp"
#include "unifilter/synthgen.hpp"

namespace unifilter::synthgen {

inline constexpr int kSlots = 4;
inline constexpr int kCategories = 6;

struct MockConfig {
  int k = 4;  // keywords per image, 3..4 (the first k slots are used)
  int categories = kCategories;  // categories in use per slot, 3..6
  int channels = 3;
  int image_size = 24;  // square, divisible by 2 * patch_size
  int patch_size = 4;
  double noise = 0.08;
  int d_v = 32;  // direction length for patch-grid payloads
  std::uint64_t scheme_seed = 0x5eed;

  void validate() const;
};

// The slot/category word table.
const std::array<std::array<std::string, kCategories>, kSlots>& keyword_table();
// Filler words; disjoint from every keyword.
std::span<const std::string> filler_words();

// Category pattern for (slot, category): channels x P x P values in
// [0.15, 0.85], row-major (c, dy, dx).
std::vector<double> category_pattern(const MockConfig& cfg, int slot, int category);

// Category index per used slot recovered from the payload. Pixel payloads are
// matched against the category patterns, patch grids against seeded
// d_v-dim directions.
std::vector<int> image_categories(const ImagePayload& image, const MockConfig& cfg);
std::vector<std::string> image_keywords(const ImagePayload& image, const MockConfig& cfg);

// Renders a pixel image with the given category per slot.
ImagePayload render_scene(std::span<const int> categories, const MockConfig& cfg, std::uint64_t seed);

// Categories named by the text at the given level: exactly `correct` slots
// keep the true category (see the table above).
std::vector<int> level_categories(std::span<const int> truth, QualityLevel level, const MockConfig& cfg,
                                  std::uint64_t seed);

std::string mock_caption(std::span<const int> categories, const MockConfig& cfg, std::uint64_t seed);
// Each image tag is followed by a paragraph naming the categories (the same
// for every paragraph), then a closing paragraph.
nlohmann::json mock_document(std::span<const int> categories, std::size_t n_images, const MockConfig& cfg,
                             std::uint64_t seed);

class MockGenerator : public TextGenerator {
 public:
  explicit MockGenerator(MockConfig cfg = {});
  GeneratorResponse generate(const GeneratorRequest& request) override;
  std::string name() const override { return "mock"; }
  const MockConfig& config() const { return cfg_; }

 private:
  MockConfig cfg_;
};

// Source material with uniformly drawn categories. Images of one document
// share their categories and differ only in noise.
std::vector<SourceImage> synth_caption_sources(std::size_t n, const MockConfig& cfg, std::uint64_t seed);
std::vector<SourceDoc> synth_doc_sources(std::size_t n, const MockConfig& cfg, std::uint64_t seed,
                                         int max_images = 2);

}  // namespace unifilter::synthgen
