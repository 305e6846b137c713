#pragma once

// Unified quality regressor. Caption samples and interleaved documents are
// turned into one embedding sequence (image tokens from the frozen encoder +
// projector, text tokens from the embedding table, in item order), run
// through a causal pre-LN transformer, and the last position's final hidden
// state is mapped to one unclamped scalar score.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "unifilter/encoder.hpp"
#include "unifilter/io_formats.hpp"
#include "unifilter/nn.hpp"
#include "unifilter/packing.hpp"
#include "unifilter/tensor.hpp"

namespace unifilter::classifier {

struct ModelConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int vocab_size = 0;
  int max_seq_len = 256;
  encoder::EncoderConfig encoder;
  int pad_id = packing::Vocab::kPad;
  int end_of_chunk_id = packing::Vocab::kEndOfChunk;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ModelParams {
  Tensor2D tok_emb;  // vocab x d
  Tensor2D pos_emb;  // max_seq_len x d
  encoder::ProjectorParams projector;
  std::vector<nn::BlockParams> blocks;
  Tensor2D lnf_g, lnf_b;
  Tensor2D head_w;  // d x 1
  Tensor2D head_b;  // 1 x 1

  static ModelParams zeros(const ModelConfig& cfg);
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  // f(name, tensor, weight_decay)
  template <class F>
  void visit(F&& f) {
    f(std::string("tok_emb"), tok_emb, false);
    f(std::string("pos_emb"), pos_emb, false);
    projector.visit("projector.", f);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit("blocks." + std::to_string(l) + ".", f);
    f(std::string("lnf_g"), lnf_g, false);
    f(std::string("lnf_b"), lnf_b, false);
    f(std::string("head_w"), head_w, true);
    f(std::string("head_b"), head_b, false);
  }

  bool operator==(const ModelParams& o) const;
};

// Pairs every trainable tensor in `values` with its counterpart in `grads`.
std::vector<nn::ParamRef> param_refs(ModelParams& values, ModelParams& grads);
void zero_grads(ModelParams& grads);

class QualityModel {
 public:
  QualityModel(ModelConfig cfg, packing::Vocab vocab, ModelParams params);

  const ModelConfig& config() const { return cfg_; }
  const packing::Vocab& vocab() const { return vocab_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  const encoder::FrozenPatchEmbedder& embedder() const { return embedder_; }

 private:
  ModelConfig cfg_;
  packing::Vocab vocab_;
  ModelParams params_;
  encoder::FrozenPatchEmbedder embedder_;
};

// Frozen-side preparation: tokenized text and pooled image features, with
// the over-length policy applied (all image tokens kept, text truncated from
// the right; a record whose image tokens alone exceed max_seq_len is
// rejected). Reusable across epochs because nothing here is trained.
struct PreparedInput {
  struct Image {
    Tensor2D pooled;  // t*t x d_v
    std::size_t item;
  };
  struct Text {
    std::vector<int> ids;
    std::size_t item;
  };
  std::vector<std::variant<Image, Text>> segments;
  std::size_t length = 0;
  std::size_t truncated_text_tokens = 0;
};

// Caption items are indexed image = 0, text = 1.
PreparedInput prepare(const CaptionSample& sample, const QualityModel& model);
PreparedInput prepare(const InterleavedDoc& doc, const QualityModel& model);
PreparedInput prepare(const Record& record, const QualityModel& model);

enum class SegmentKind { image, text };

struct SegmentEntry {
  SegmentKind kind;
  std::size_t item;    // which record item
  std::size_t offset;  // which image token / text token within the item
  bool operator==(const SegmentEntry&) const = default;
};

struct AssembledSequence {
  Tensor2D embeddings;  // length x d, before position embeddings
  std::vector<SegmentEntry> segments;

  std::size_t length() const { return embeddings.rows(); }
};

AssembledSequence assemble(const PreparedInput& input, const QualityModel& model);
// [t*t image tokens] ++ [caption tokens]
AssembledSequence assemble_caption(const CaptionSample& sample, const QualityModel& model);
// items encoded independently and concatenated in document order
AssembledSequence assemble_interleaved(const InterleavedDoc& doc, const QualityModel& model);

double forward_score(const AssembledSequence& seq, const QualityModel& model);
// Ragged batch: sequences are stacked row-wise without padding and attention
// is confined to each sequence, so every score is bitwise identical to the
// single-sequence result.
std::vector<double> forward_scores(std::span<const AssembledSequence> batch, const QualityModel& model);
double score_record(const Record& record, const QualityModel& model);

// Final hidden states (after the last block, before the final norm) for
// inspection in tests.
Tensor2D hidden_states(const AssembledSequence& seq, const QualityModel& model);

// ---- training path ----

struct ForwardCache {
  std::vector<encoder::ProjectorCache> projector;
  std::vector<nn::BlockCache> blocks;
  nn::LayerNormCache lnf;
  Tensor2D last_hidden;  // 1 x d, final-norm output at the last position
  const PreparedInput* input = nullptr;
};

double forward_train(const PreparedInput& input, const ModelConfig& cfg, const ModelParams& params, ForwardCache& cache);
void backward(const ForwardCache& cache, const ModelConfig& cfg, const ModelParams& params, double dscore,
              ModelParams& grads);

struct LossGrad {
  double loss;
  double dpred;
};

// (pred - label)^2 and its derivative 2 (pred - label).
LossGrad mse_loss(double pred, QualityLevel label);
LossGrad mse_loss(double pred, int label);

// ---- checkpoints ----

inline constexpr const char* kModelFormat = "unifilter-model-v1";

void save_checkpoint(const std::filesystem::path& path, const QualityModel& model);
QualityModel load_checkpoint(const std::filesystem::path& path);

}  // namespace unifilter::classifier
