#include "unifilter/mock_generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "unifilter/error.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::synthgen {

namespace {

const std::array<std::array<std::string, kCategories>, kSlots> kKeywords = {{
    {"red", "blue", "green", "yellow", "orange", "purple"},
    {"dog", "car", "tree", "house", "boat", "horse"},
    {"beach", "city", "forest", "field", "river", "mountain"},
    {"morning", "night", "winter", "summer", "rain", "sunset"},
}};

const std::vector<std::string> kFiller = {
    "the",   "a",      "photo", "shows", "with",  "clear", "detail", "and",   "soft",  "light",
    "view",  "of",     "nice",  "calm",  "scene", "simple", "small", "bright", "frame", "shot",
    "there", "is",     "we",    "see",   "it",    "looks",  "very",  "quite",  "here",  "this",
};

int quadrant(int y, int x, int h, int w) { return (y >= h / 2 ? 2 : 0) + (x >= w / 2 ? 1 : 0); }

std::string filler_sentence(Rng& rng) {
  const int n = 4 + int(rng.below(3));
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += kFiller[rng.below(kFiller.size())];
  }
  return s + " .";
}

std::vector<double> patch_direction(const MockConfig& cfg, int slot, int category) {
  Rng rng(derive_seed(cfg.scheme_seed, fnv1a("direction"), std::uint64_t(slot * kCategories + category)));
  std::vector<double> v(std::size_t(cfg.d_v));
  for (auto& x : v) x = rng.normal();
  return v;
}

int argmax(const std::vector<double>& v) {
  return int(std::max_element(v.begin(), v.end()) - v.begin());  // first maximum
}

int other_category(int truth, int n, Rng& rng) { return (truth + 1 + int(rng.below(std::uint64_t(n - 1)))) % n; }

}  // namespace

void MockConfig::validate() const {
  if (k < 3 || k > kSlots) throw DataError("mock k must be in [3, 4]");
  if (channels < 1 || patch_size < 1 || image_size % (2 * patch_size) != 0)
    throw DataError("mock image_size must be divisible by 2 * patch_size");
  if (categories < 3 || categories > kCategories) throw DataError("mock categories must be in [3, 6]");
  if (!(noise >= 0.0)) throw DataError("mock noise must be >= 0");
  if (d_v < 1) throw DataError("mock d_v must be >= 1");
}

const std::array<std::array<std::string, kCategories>, kSlots>& keyword_table() { return kKeywords; }

std::span<const std::string> filler_words() { return kFiller; }

std::vector<double> category_pattern(const MockConfig& cfg, int slot, int category) {
  Rng rng(derive_seed(cfg.scheme_seed, fnv1a("pattern"), std::uint64_t(slot * kCategories + category)));
  std::vector<double> p(std::size_t(cfg.channels) * cfg.patch_size * cfg.patch_size);
  for (auto& x : p) x = rng.uniform(0.15, 0.85);
  return p;
}

std::vector<int> image_categories(const ImagePayload& image, const MockConfig& cfg) {
  std::vector<int> out;
  if (image.is_pixels()) {
    const PixelImage& im = image.pixels();
    const int P = cfg.patch_size;
    if (im.channels != cfg.channels || im.height % (2 * P) != 0 || im.width % (2 * P) != 0)
      throw DataError("mock keywords need a " + std::to_string(cfg.channels) + "-channel image with sides divisible by " +
                      std::to_string(2 * P));
    const std::size_t fold = std::size_t(cfg.channels) * P * P;
    std::vector<std::vector<double>> folded(kSlots, std::vector<double>(fold, 0.0));
    for (int c = 0; c < im.channels; ++c)
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
          folded[quadrant(y, x, im.height, im.width)][(std::size_t(c) * P + y % P) * P + x % P] +=
              im.data[(std::size_t(c) * im.height + y) * im.width + x];
    for (int s = 0; s < cfg.k; ++s) {
      auto& m = folded[s];
      double mean = 0.0;
      for (double v : m) mean += v;
      mean /= double(fold);
      std::vector<double> score(std::size_t(cfg.categories), 0.0);
      for (int cat = 0; cat < cfg.categories; ++cat) {
        const auto pat = category_pattern(cfg, s, cat);
        for (std::size_t i = 0; i < fold; ++i) score[cat] += (m[i] - mean) * (pat[i] - 0.5);
      }
      out.push_back(argmax(score));
    }
    return out;
  }
  const PatchGrid& g = image.patch_grid();
  if (g.dim != cfg.d_v) throw DataError("mock keywords: patch grid dim " + std::to_string(g.dim) + " != d_v");
  if (g.h < 2 || g.w < 2) throw DataError("mock keywords: patch grid smaller than 2x2");
  std::vector<std::vector<double>> mean(kSlots, std::vector<double>(std::size_t(g.dim), 0.0));
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j) {
      auto cell = g.cell(i, j);
      auto& m = mean[quadrant(i, j, g.h, g.w)];
      for (int k = 0; k < g.dim; ++k) m[k] += cell[k];
    }
  for (int s = 0; s < cfg.k; ++s) {
    std::vector<double> score(std::size_t(cfg.categories), 0.0);
    for (int cat = 0; cat < cfg.categories; ++cat) {
      const auto dir = patch_direction(cfg, s, cat);
      for (int k = 0; k < g.dim; ++k) score[cat] += mean[s][k] * dir[k];
    }
    out.push_back(argmax(score));
  }
  return out;
}

std::vector<std::string> image_keywords(const ImagePayload& image, const MockConfig& cfg) {
  std::vector<std::string> words;
  const auto cats = image_categories(image, cfg);
  for (std::size_t s = 0; s < cats.size(); ++s) words.push_back(kKeywords[s][cats[s]]);
  return words;
}

ImagePayload render_scene(std::span<const int> categories, const MockConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (categories.size() != kSlots) throw DataError("render_scene needs one category per slot");
  const int P = cfg.patch_size, S = cfg.image_size;
  std::array<std::vector<double>, kSlots> pats;
  for (int s = 0; s < kSlots; ++s) {
    if (categories[s] < 0 || categories[s] >= cfg.categories) throw DataError("category out of range");
    pats[s] = category_pattern(cfg, s, categories[s]);
  }
  PixelImage im{cfg.channels, S, S, std::vector<double>(std::size_t(cfg.channels) * S * S)};
  Rng rng(seed);
  for (int c = 0; c < cfg.channels; ++c)
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double v = pats[quadrant(y, x, S, S)][(std::size_t(c) * P + y % P) * P + x % P] + rng.normal(0.0, cfg.noise);
        v = std::clamp(v, 0.0, 1.0);
        im.data[(std::size_t(c) * S + y) * S + x] = std::round(v * 100.0) / 100.0;  // keeps files small
      }
  return ImagePayload{std::move(im)};
}

std::vector<int> level_categories(std::span<const int> truth, QualityLevel level, const MockConfig& cfg,
                                  std::uint64_t seed) {
  if (truth.size() != std::size_t(cfg.k)) throw DataError("level_categories: expected k categories");
  std::vector<int> out(truth.begin(), truth.end());
  Rng rng(seed);
  switch (level) {
    case QualityLevel::positive:
      break;
    case QualityLevel::hard_negative: {
      const auto j = rng.below(out.size());
      out[j] = (truth[j] + 1) % cfg.categories;
      break;
    }
    case QualityLevel::medium_negative: {
      const auto keep = rng.below(out.size());
      for (std::size_t s = 0; s < out.size(); ++s)
        if (s != keep) out[s] = other_category(truth[s], cfg.categories, rng);
      break;
    }
    case QualityLevel::easy_negative:
      for (std::size_t s = 0; s < out.size(); ++s) out[s] = other_category(truth[s], cfg.categories, rng);
      break;
  }
  return out;
}

std::string mock_caption(std::span<const int> categories, const MockConfig& cfg, std::uint64_t seed) {
  if (categories.size() != std::size_t(cfg.k)) throw DataError("mock_caption: expected k categories");
  std::string s = "a photo of a " + kKeywords[0][categories[0]] + " " + kKeywords[1][categories[1]] + " near the " +
                  kKeywords[2][categories[2]];
  if (cfg.k > 3) s += " in the " + kKeywords[3][categories[3]];
  Rng rng(seed);
  return s + " . " + filler_sentence(rng);
}

nlohmann::json mock_document(std::span<const int> categories, std::size_t n_images, const MockConfig& cfg,
                             std::uint64_t seed) {
  nlohmann::json tags = nlohmann::json::array();
  std::string doc;
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::string tag = "<img>image " + std::to_string(i + 1) + " " + kKeywords[1][categories[1]] + "</img>";
    tags.push_back(tag);
    doc += tag + "\n" + mock_caption(categories, cfg, derive_seed(seed, fnv1a("paragraph"), i)) + "\n";
  }
  Rng rng(derive_seed(seed, fnv1a("closing")));
  doc += filler_sentence(rng);
  return {{"image_tags", tags}, {"document", doc}};
}

MockGenerator::MockGenerator(MockConfig cfg) : cfg_(cfg) { cfg_.validate(); }

GeneratorResponse MockGenerator::generate(const GeneratorRequest& request) {
  if (request.images.empty()) throw DataError("mock generator request '" + request.id + "' has no images");
  const QualityLevel level = request.config.level;
  const auto truth = image_categories(request.images[0], cfg_);
  const auto named = level_categories(truth, level, cfg_, derive_seed(request.seed, fnv1a("level")));
  const std::uint64_t text_seed = derive_seed(request.seed, fnv1a("text"));
  if (request.config.modality == Modality::interleaved)
    return {mock_document(named, request.images.size(), cfg_, text_seed)};
  nlohmann::json body = {{"topic", kKeywords[1][truth[1]]}, {"positive_caption", mock_caption(truth, cfg_, text_seed)}};
  if (level != QualityLevel::positive) body["negative_caption"] = mock_caption(named, cfg_, text_seed);
  return {body};
}

namespace {

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, i);
  return buf;
}

std::vector<int> draw_categories(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> c(kSlots);
  for (auto& x : c) x = int(rng.below(std::uint64_t(n)));
  return c;
}

}  // namespace

std::vector<SourceImage> synth_caption_sources(std::size_t n, const MockConfig& cfg, std::uint64_t seed) {
  std::vector<SourceImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cats = draw_categories(cfg.categories, derive_seed(seed, fnv1a("scene"), i));
    out.push_back({numbered("img", i), render_scene(cats, cfg, derive_seed(seed, fnv1a("pixels"), i))});
  }
  return out;
}

std::vector<SourceDoc> synth_doc_sources(std::size_t n, const MockConfig& cfg, std::uint64_t seed, int max_images) {
  if (max_images < 1) throw DataError("max_images must be >= 1");
  std::vector<SourceDoc> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, fnv1a("doc-scene"), i);
    const auto cats = draw_categories(cfg.categories, s);
    Rng rng(derive_seed(s, fnv1a("count")));
    const std::size_t n_img = 1 + rng.below(std::uint64_t(max_images));
    SourceDoc d{numbered("src", i), {}};
    for (std::size_t k = 0; k < n_img; ++k) d.images.push_back(render_scene(cats, cfg, derive_seed(s, fnv1a("pixels"), k)));
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace unifilter::synthgen
