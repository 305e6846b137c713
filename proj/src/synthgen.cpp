#include "unifilter/synthgen.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "unifilter/error.hpp"
#include "unifilter/packing.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::synthgen {

namespace {

constexpr std::string_view kCaptionRequirements[kNumLevels] = {
    "a negative image caption which is completely unrelated to this image.",
    "a negative image caption which has remarkable errors in describing the image.",
    "a hard negative image caption which has subtle difference with the positive caption. The negative caption "
    "contains only one property error in describing the image.",
    "a high-quality, comprehensive, detail-enriched caption for this image.",
};

constexpr std::string_view kDocumentRequirements[kNumLevels] = {
    "This document should involve many errors in writing and the document itself is not fluent in reading. The "
    "images and the text in the document should be completely not related. The images are inserted in inappropriate "
    "and arbitrary places in the document. This document should be knowledge limited and has no educational value to "
    "be used as textbooks in primary school or grade school teaching.",
    "This document is readable but still contains several writing errors. The images and document text are under "
    "the same topic and the text contents are still not aligned well to the images. The document is knowledge sparse "
    "and has very limited educational value to be used as textbooks in primary school or grade school teaching.",
    "This document should involve several errors in writing. The images and the text in the document are partially "
    "related. However, the images cannot help the understanding of the text and cannot provide any additional "
    "information. The images are inserted in reasonable places in the document. This document should contain "
    "several factual or commonsense knowledge errors which makes it inappropriate for educational purposes.",
    "This document is a high-quality, comprehensive, detail-enriched document. The images are inserted in the "
    "appropriate places in the document to provide additional information to the statement or provide the "
    "background information.",
};

constexpr std::string_view kRequirementPlaceholder = "{multi-level quality requirements}";

constexpr std::string_view kCaptionTemplate =
    "You are a helpful assistant to help users write two opposite image captions for the given image in JSON "
    "format. The JSON object must contain the following keys:\n"
    "- \"topic\": a string, a topic word of this image\n"
    "- \"positive_caption\": a string, a high-quality, comprehensive, detail-enriched caption for this image.\n"
    "- \"negative_caption\": a string, {multi-level quality requirements}\n"
    "\n"
    "Please adhere to the following guidelines:\n"
    "- Both captions should be at least {num_words} words long.\n"
    "- Both captions should be in English.\n"
    "- Please avoid using complex or advanced words in the captions. Ensure that the language is suitable for a "
    "high school level audience or lower.\n"
    "\n"
    "Your output must always be a JSON object only, do not explain yourself or output anything else. Be creative!\n";

constexpr std::string_view kDocumentTemplate =
    "You are an assistant to help users to write a document given several images. These images are extracted from "
    "a paper, report, or article in which these images are inserted.\n"
    "\n"
    "<guideline>\n"
    "Please firstly generate a xml tag for each image in order for future generation. For each image, please "
    "generate a xml tag like \"<img>image description</img>\". You need to replace the image description with your "
    "generated short description of this image which is less than 5 words.\n"
    "\n"
    "For the second task, {multi-level quality requirements}\n"
    "\n"
    "Please adhere to the following guidelines when writing this document:\n"
    "- The paragraphs in the document should be in varied length.\n"
    "- The document should contain at least {min_doc_words} words.\n"
    "- You NEED to use xml tag as the placeholder to indicate the place where an image is inserted into.\n"
    "- You NEED to ensure that all given images are used and considered.\n"
    "- You MUST NOT use the image xml tag within your sentences. You should add them between sentences and "
    "paragraphs.\n"
    "- You MUST use each image for ONLY ONCE in the document.\n"
    "\n"
    "Your output must always be a JSON object only. The JSON object must contain the keys of \"image_tags\" and "
    "\"document\".\n"
    "\n"
    "</guideline>\n"
    "\n"
    "Now, it is your turn. Please strictly follow the above guidelines in <guideline> xml tags when writing the "
    "document.\n";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view quality_requirement(Modality modality, QualityLevel level) {
  const int i = static_cast<int>(level);
  return modality == Modality::caption ? kCaptionRequirements[i] : kDocumentRequirements[i];
}

std::string build_prompt(const PromptConfig& cfg) {
  if (cfg.num_words < 1) throw DataError("num_words must be >= 1");
  std::string p(cfg.modality == Modality::caption ? kCaptionTemplate : kDocumentTemplate);
  replace_all(p, kRequirementPlaceholder, quality_requirement(cfg.modality, cfg.level));
  replace_all(p, "{num_words}", std::to_string(cfg.num_words));
  replace_all(p, "{min_doc_words}", std::to_string(cfg.min_doc_words));
  return p;
}

nlohmann::json GeneratorRequest::to_json() const {
  return {{"id", id},
          {"modality", modality_name(config.modality)},
          {"level", static_cast<int>(config.level)},
          {"level_name", level_name(config.level)},
          {"prompt", prompt},
          {"num_images", images.size()},
          {"seed", seed}};
}

ReplayGenerator::ReplayGenerator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open replay responses: " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      responses_[j.at("id").get<std::string>()] = j.at("response");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

GeneratorResponse ReplayGenerator::generate(const GeneratorRequest& request) {
  auto it = responses_.find(request.id);
  if (it == responses_.end()) throw DataError("replay generator has no response for request '" + request.id + "'");
  return {it->second};
}

nlohmann::json parse_response_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("unparsable generator response: ") + e.what());
  }
  if (!j.is_object()) throw DataError("generator response is not a single JSON object");
  return j;
}

std::string caption_from_response(const nlohmann::json& response, QualityLevel level) {
  const char* key = level == QualityLevel::positive ? "positive_caption" : "negative_caption";
  if (!response.is_object() || !response.contains(key) || !response[key].is_string())
    throw DataError(std::string("caption response missing string '") + key + "'");
  std::string text = trim(response[key].get<std::string>());
  if (text.empty()) throw DataError("caption response has empty text");
  return text;
}

InterleavedDoc parse_interleaved_response(const nlohmann::json& response, std::span<const ImagePayload> images,
                                          const std::string& id) {
  if (!response.is_object() || !response.contains("image_tags") || !response.contains("document"))
    throw DataError("interleaved response needs keys 'image_tags' and 'document'");
  if (!response["document"].is_string() || !response["image_tags"].is_array())
    throw DataError("interleaved response has wrong types for 'image_tags'/'document'");
  const std::string doc = response["document"].get<std::string>();

  constexpr std::string_view open = "<img>", close = "</img>";
  std::vector<std::string> fragments;
  std::vector<std::string> tags;
  std::size_t pos = 0;
  while (true) {
    const std::size_t b = doc.find(open, pos);
    if (b == std::string::npos) break;
    const std::size_t e = doc.find(close, b + open.size());
    if (e == std::string::npos) throw DataError("unterminated <img> tag");
    fragments.push_back(doc.substr(pos, b - pos));
    tags.push_back(doc.substr(b, e + close.size() - b));
    pos = e + close.size();
  }
  fragments.push_back(doc.substr(pos));

  if (tags.size() != images.size() || response["image_tags"].size() != images.size())
    throw DataError("tag/image count mismatch: " + std::to_string(tags.size()) + " tags in document, " +
                    std::to_string(response["image_tags"].size()) + " declared, " + std::to_string(images.size()) +
                    " images");
  std::set<std::string> seen;
  for (const auto& t : tags)
    if (!seen.insert(t).second) throw DataError("duplicate tag use: " + t);

  InterleavedDoc out;
  out.id = id;
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    std::string text = trim(fragments[i]);
    if (!text.empty()) out.items.emplace_back(TextItem{std::move(text)});
    if (i < images.size()) out.items.emplace_back(ImageItem{images[i]});
  }
  if (out.text_count() == 0) throw DataError("interleaved response has no text");
  return out;
}

bool scan_safety(const std::string& text, const SafetyPredicate& predicate) {
  return !predicate || predicate(text);
}

SafetyPredicate banned_words_predicate(std::vector<std::string> banned) {
  std::set<std::string> words(banned.begin(), banned.end());
  return [words = std::move(words)](const std::string& text) {
    for (const auto& w : packing::split_words(text))
      if (words.count(w)) return false;
    return true;
  };
}

nlohmann::json GenerationReport::to_json() const {
  nlohmann::json counts = nlohmann::json::object();
  for (int m = 0; m < 2; ++m) {
    nlohmann::json per = nlohmann::json::object();
    for (int l = 0; l < kNumLevels; ++l) per[std::string(level_name(QualityLevel(l)))] = generated[m][l];
    counts[std::string(modality_name(Modality(m)))] = per;
  }
  return {{"generated", counts},
          {"nonsynthetic_positives", nonsynthetic_positives},
          {"safety_excluded", safety_excluded},
          {"total", total},
          {"train", train},
          {"validation", validation},
          {"generator", generator}};
}

std::size_t validation_count(std::size_t n, double fraction) {
  return std::size_t(std::floor(fraction * double(n) + 1e-9));
}

BuiltDataset build_dataset(std::span<const SourceImage> caption_sources, std::span<const SourceDoc> doc_sources,
                           const DatasetRequest& req, std::span<const CaptionSample> nonsynthetic_positives,
                           TextGenerator& generator, const SafetyPredicate& safety) {
  if (!(req.val_fraction > 0.0 && req.val_fraction < 1.0)) throw DataError("val_fraction must be in (0, 1)");
  if (caption_sources.size() < req.caption_per_level * kNumLevels)
    throw DataError("insufficient source images: need " + std::to_string(req.caption_per_level * kNumLevels) +
                    ", have " + std::to_string(caption_sources.size()));
  if (doc_sources.size() < req.interleaved_per_level * kNumLevels)
    throw DataError("insufficient source documents: need " + std::to_string(req.interleaved_per_level * kNumLevels) +
                    ", have " + std::to_string(doc_sources.size()));

  BuiltDataset out;
  out.report.generator = generator.name();
  std::vector<LabeledSample> all;

  for (int l = 0; l < kNumLevels; ++l) {
    const auto level = QualityLevel(l);
    const PromptConfig pc{Modality::caption, level, req.num_words, req.min_doc_words};
    for (std::size_t k = 0; k < req.caption_per_level; ++k) {
      const std::size_t index = std::size_t(l) * req.caption_per_level + k;
      const SourceImage& src = caption_sources[index];
      GeneratorRequest gr{"cap-" + src.id, pc, build_prompt(pc), {src.image},
                          derive_seed(req.seed, fnv1a("gen-caption"), index)};
      const std::string text = caption_from_response(generator.generate(gr).body, level);
      if (!scan_safety(text, safety)) {
        ++out.report.safety_excluded;
        continue;
      }
      all.push_back({CaptionSample{gr.id, src.image, text}, level, Provenance::synthetic});
      ++out.report.generated[0][l];
    }
  }
  for (int l = 0; l < kNumLevels; ++l) {
    const auto level = QualityLevel(l);
    const PromptConfig pc{Modality::interleaved, level, req.num_words, req.min_doc_words};
    for (std::size_t k = 0; k < req.interleaved_per_level; ++k) {
      const std::size_t index = std::size_t(l) * req.interleaved_per_level + k;
      const SourceDoc& src = doc_sources[index];
      GeneratorRequest gr{"doc-" + src.id, pc, build_prompt(pc), src.images,
                          derive_seed(req.seed, fnv1a("gen-interleaved"), index)};
      InterleavedDoc doc = parse_interleaved_response(generator.generate(gr).body, src.images, gr.id);
      bool safe = true;
      for (const auto& it : doc.items)
        if (const auto* t = std::get_if<TextItem>(&it); t && !scan_safety(t->text, safety)) safe = false;
      if (!safe) {
        ++out.report.safety_excluded;
        continue;
      }
      all.push_back({std::move(doc), level, Provenance::synthetic});
      ++out.report.generated[1][l];
    }
  }
  for (const auto& c : nonsynthetic_positives) {
    all.push_back({c, QualityLevel::positive, Provenance::nonsynthetic_positive});
    ++out.report.nonsynthetic_positives;
  }

  std::set<std::string> ids;
  for (const auto& s : all)
    if (!ids.insert(record_id(s.record)).second) throw DataError("duplicate record id '" + record_id(s.record) + "'");

  Rng rng(derive_seed(req.seed, fnv1a("split")));
  rng.shuffle(all);
  const std::size_t n_val = validation_count(all.size(), req.val_fraction);
  out.validation.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + long(n_val)));
  out.train.assign(std::make_move_iterator(all.begin() + long(n_val)), std::make_move_iterator(all.end()));
  out.report.total = all.size();
  out.report.train = out.train.size();
  out.report.validation = out.validation.size();
  return out;
}

}  // namespace unifilter::synthgen
