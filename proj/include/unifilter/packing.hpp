#pragma once

// Word-level toy tokenizer and pretraining-style sequence packing.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "unifilter/io_formats.hpp"

namespace unifilter::packing {

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEndOfChunk = 2;
  static constexpr int kImage = 3;
  static constexpr int kNumReserved = 4;

  Vocab();

  // Words with frequency >= min_freq, ids assigned in lexicographic order
  // after the reserved block.
  static Vocab build(std::span<const std::string> texts, std::size_t min_freq = 1);
  static Vocab build_from_records(std::span<const Record> records, std::size_t min_freq = 1);

  int id(std::string_view word) const;
  const std::string& word(int id) const;
  bool contains(std::string_view word) const;
  std::size_t size() const { return words_.size(); }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  bool operator==(const Vocab& o) const { return words_ == o.words_; }

 private:
  void add(std::string w);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Splits on whitespace; each ASCII punctuation character is its own token.
std::vector<std::string> split_words(std::string_view text);
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

struct ImageSlot {
  std::size_t pos = 0;  // index of the first image placeholder of the run
  std::string image_id;
  bool operator==(const ImageSlot&) const = default;
};

struct TokenStream {
  std::vector<int> ids;
  std::vector<ImageSlot> slots;
};

struct FlattenOptions {
  int t = 12;
  bool caption_end_of_chunk = false;
};

// Items in order; text -> ids; image -> <|endofchunk|> then t*t placeholders.
TokenStream flatten_doc(const InterleavedDoc& doc, const Vocab& vocab, int t);
// Caption: image run first, then text; end-of-chunk only when enabled.
TokenStream flatten_caption(const CaptionSample& s, const Vocab& vocab, const FlattenOptions& opt);
TokenStream flatten_record(const Record& r, const Vocab& vocab, const FlattenOptions& opt);

struct PackedSequence {
  std::vector<int> tokens;
  std::vector<ImageSlot> slots;
};

// Concatenates streams and cuts them into context_len sequences. An image
// unit (optional end-of-chunk plus its t*t placeholders) never straddles a
// boundary: the current sequence is padded out and the unit starts the next.
std::vector<PackedSequence> pack_streams(std::span<const TokenStream> streams, std::size_t context_len, int t);
std::vector<PackedSequence> pack(std::span<const Record> records, std::size_t context_len, const Vocab& vocab,
                                 const FlattenOptions& opt);

nlohmann::json to_json(const PackedSequence& s);

}  // namespace unifilter::packing
