#include "unifilter/packing.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "unifilter/error.hpp"

namespace unifilter::packing {

namespace {
const char* const kReservedWords[Vocab::kNumReserved] = {"<pad>", "<unk>", "<|endofchunk|>", "<image>"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }
}  // namespace

Vocab::Vocab() {
  for (const char* w : kReservedWords) add(w);
}

void Vocab::add(std::string w) {
  index_.emplace(w, int(words_.size()));
  words_.push_back(std::move(w));
}

Vocab Vocab::build(std::span<const std::string> texts, std::size_t min_freq) {
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) ++freq[w];
  Vocab v;
  for (const auto& [w, n] : freq)
    if (n >= min_freq) v.add(w);
  return v;
}

Vocab Vocab::build_from_records(std::span<const Record> records, std::size_t min_freq) {
  std::vector<std::string> texts;
  for (const auto& r : records) {
    if (const auto* c = std::get_if<CaptionSample>(&r)) {
      texts.push_back(c->text);
    } else {
      for (const auto& it : std::get<InterleavedDoc>(r).items)
        if (const auto* t = std::get_if<TextItem>(&it)) texts.push_back(t->text);
    }
  }
  return build(texts, min_freq);
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocab::word(int id) const {
  if (id < 0 || std::size_t(id) >= words_.size()) throw DataError("token id out of range: " + std::to_string(id));
  return words_[std::size_t(id)];
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json reserved = {{"pad", kPad}, {"unk", kUnk}, {"end_of_chunk", kEndOfChunk}, {"image_placeholder", kImage}};
  return {{"format", "unifilter-vocab-v1"},
          {"reserved", reserved},
          {"words", std::vector<std::string>(words_.begin() + kNumReserved, words_.end())}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "unifilter-vocab-v1") throw DataError("not a unifilter vocab (format header mismatch)");
  const auto& r = j.at("reserved");
  if (r.at("pad") != kPad || r.at("unk") != kUnk || r.at("end_of_chunk") != kEndOfChunk ||
      r.at("image_placeholder") != kImage)
    throw DataError("vocab reserved ids differ from this build");
  Vocab v;
  for (const auto& w : j.at("words")) {
    std::string s = w.get<std::string>();
    if (v.contains(s)) throw DataError("duplicate vocab word '" + s + "'");
    v.add(std::move(s));
  }
  return v;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (is_space(c) || is_punct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      if (is_punct(c)) out.emplace_back(1, char(c));
    } else {
      cur.push_back(char(c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.word(ids[i]);
  }
  return out;
}

namespace {
void append_image(TokenStream& s, const std::string& image_id, int t, bool marker) {
  if (marker) s.ids.push_back(Vocab::kEndOfChunk);
  s.slots.push_back({s.ids.size(), image_id});
  s.ids.insert(s.ids.end(), std::size_t(t) * std::size_t(t), Vocab::kImage);
}
}  // namespace

TokenStream flatten_doc(const InterleavedDoc& doc, const Vocab& vocab, int t) {
  TokenStream s;
  std::size_t image_index = 0;
  for (const auto& it : doc.items) {
    if (const auto* text = std::get_if<TextItem>(&it)) {
      auto ids = tokenize(text->text, vocab);
      s.ids.insert(s.ids.end(), ids.begin(), ids.end());
    } else {
      append_image(s, doc.id + "#" + std::to_string(image_index++), t, true);
    }
  }
  return s;
}

TokenStream flatten_caption(const CaptionSample& c, const Vocab& vocab, const FlattenOptions& opt) {
  TokenStream s;
  append_image(s, c.id + "#0", opt.t, opt.caption_end_of_chunk);
  auto ids = tokenize(c.text, vocab);
  s.ids.insert(s.ids.end(), ids.begin(), ids.end());
  return s;
}

TokenStream flatten_record(const Record& r, const Vocab& vocab, const FlattenOptions& opt) {
  if (const auto* c = std::get_if<CaptionSample>(&r)) return flatten_caption(*c, vocab, opt);
  return flatten_doc(std::get<InterleavedDoc>(r), vocab, opt.t);
}

std::vector<PackedSequence> pack_streams(std::span<const TokenStream> streams, std::size_t context_len, int t) {
  const std::size_t run = std::size_t(t) * std::size_t(t);
  if (context_len < 1) throw DataError("context_len must be positive");
  std::vector<PackedSequence> out;
  PackedSequence cur;
  auto flush = [&] {
    cur.tokens.resize(context_len, Vocab::kPad);
    out.push_back(std::move(cur));
    cur = PackedSequence{};
  };

  for (const auto& s : streams) {
    std::size_t next_slot = 0;
    std::size_t i = 0;
    while (i < s.ids.size()) {
      const bool at_marker = s.ids[i] == Vocab::kEndOfChunk && next_slot < s.slots.size() && s.slots[next_slot].pos == i + 1;
      const bool at_run = next_slot < s.slots.size() && s.slots[next_slot].pos == i;
      if (at_marker || at_run) {
        const std::size_t unit = run + (at_marker ? 1 : 0);
        if (unit > context_len)
          throw DataError("image run of " + std::to_string(unit) + " ids exceeds context_len " + std::to_string(context_len));
        if (cur.tokens.size() + unit > context_len) flush();
        if (at_marker) cur.tokens.push_back(Vocab::kEndOfChunk);
        cur.slots.push_back({cur.tokens.size(), s.slots[next_slot].image_id});
        cur.tokens.insert(cur.tokens.end(), run, Vocab::kImage);
        i += unit;
        ++next_slot;
      } else {
        cur.tokens.push_back(s.ids[i]);
        ++i;
      }
      if (cur.tokens.size() == context_len) flush();
    }
  }
  if (!cur.tokens.empty()) flush();
  return out;
}

std::vector<PackedSequence> pack(std::span<const Record> records, std::size_t context_len, const Vocab& vocab,
                                 const FlattenOptions& opt) {
  const std::size_t run = std::size_t(opt.t) * std::size_t(opt.t);
  if (context_len <= run + 1)
    throw DataError("context_len " + std::to_string(context_len) + " must exceed tokens per image + 1 (" +
                    std::to_string(run + 1) + ")");
  std::vector<TokenStream> streams;
  streams.reserve(records.size());
  for (const auto& r : records) streams.push_back(flatten_record(r, vocab, opt));
  return pack_streams(streams, context_len, opt.t);
}

nlohmann::json to_json(const PackedSequence& s) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& sl : s.slots) slots.push_back({{"pos", sl.pos}, {"image_id", sl.image_id}});
  return {{"tokens", s.tokens}, {"slots", std::move(slots)}};
}

}  // namespace unifilter::packing
