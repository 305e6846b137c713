#include "unifilter/classifier.hpp"

#include <cmath>

#include "unifilter/checkpoint.hpp"
#include "unifilter/error.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::classifier {

void ModelConfig::validate() const {
  if (d < 1 || n_layers < 0 || n_heads < 1) throw DataError("model config: d, n_heads must be >= 1");
  if (d % n_heads != 0)
    throw DataError("model config: d=" + std::to_string(d) + " not divisible by n_heads=" + std::to_string(n_heads));
  if (vocab_size < packing::Vocab::kNumReserved) throw DataError("model config: vocab_size too small");
  if (max_seq_len < 1) throw DataError("model config: max_seq_len must be >= 1");
  if (pad_id < 0 || pad_id >= vocab_size || end_of_chunk_id < 0 || end_of_chunk_id >= vocab_size ||
      pad_id == end_of_chunk_id)
    throw DataError("model config: special token ids must be distinct and < vocab_size");
  encoder.validate();
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"encoder", encoder::to_json(c.encoder)},
          {"special_tokens", {{"pad", c.pad_id}, {"end_of_chunk", c.end_of_chunk_id}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d = j.value("d", c.d);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    if (j.contains("encoder")) c.encoder = encoder::encoder_config_from_json(j.at("encoder"));
    if (j.contains("special_tokens")) {
      c.pad_id = j.at("special_tokens").value("pad", c.pad_id);
      c.end_of_chunk_id = j.at("special_tokens").value("end_of_chunk", c.end_of_chunk_id);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- params ----

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  const auto d = std::size_t(cfg.d);
  ModelParams p;
  p.tok_emb = Tensor2D(std::size_t(cfg.vocab_size), d);
  p.pos_emb = Tensor2D(std::size_t(cfg.max_seq_len), d);
  p.projector = encoder::ProjectorParams::zeros(std::size_t(cfg.encoder.d_v), d);
  for (int l = 0; l < cfg.n_layers; ++l) p.blocks.push_back(nn::BlockParams::zeros(d));
  p.lnf_g = Tensor2D(1, d);
  p.lnf_b = Tensor2D(1, d);
  p.head_w = Tensor2D(d, 1);
  p.head_b = Tensor2D(1, 1);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p = zeros(cfg);
  // Weights draw from N(0, 1/fan_in); residual-branch outputs are further
  // scaled by 1/sqrt(2L). Embeddings use a unit-scale table.
  const double residual = 1.0 / std::sqrt(2.0 * std::max(1, cfg.n_layers));
  p.visit([&](const std::string& name, Tensor2D& t, bool) {
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    const double fan_in = 1.0 / std::sqrt(double(t.rows()));
    double stddev = 0.0;
    if (ends_with("w_out") || ends_with("w_proj"))
      stddev = fan_in * residual;
    else if (name == "pos_emb")
      stddev = 0.02;  // small, so token identity dominates at the start
    else if (ends_with("emb"))
      stddev = 1.0;
    else if (ends_with("w_qkv") || ends_with("w_fc") || ends_with("w1") || ends_with("w2") || name == "head_w")
      stddev = fan_in;
    if (ends_with("_g")) t.fill(1.0);
    if (stddev == 0.0) return;  // biases stay 0
    Rng rng(derive_seed(seed, fnv1a(name)));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  });
  return p;
}

bool ModelParams::operator==(const ModelParams& o) const {
  auto& a = const_cast<ModelParams&>(*this);
  auto& b = const_cast<ModelParams&>(o);
  std::vector<const Tensor2D*> ta, tb;
  a.visit([&](const std::string&, Tensor2D& t, bool) { ta.push_back(&t); });
  b.visit([&](const std::string&, Tensor2D& t, bool) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i] == *tb[i])) return false;
  return true;
}

std::vector<nn::ParamRef> param_refs(ModelParams& values, ModelParams& grads) {
  std::vector<nn::ParamRef> refs;
  values.visit([&](const std::string& name, Tensor2D& t, bool decay) { refs.push_back({name, &t, nullptr, decay}); });
  std::size_t i = 0;
  grads.visit([&](const std::string& name, Tensor2D& t, bool) {
    if (i >= refs.size() || refs[i].name != name || !refs[i].value->same_shape(t))
      throw DataError("gradient layout does not match parameters at '" + name + "'");
    refs[i++].grad = &t;
  });
  if (i != refs.size()) throw DataError("gradient layout does not match parameters");
  return refs;
}

void zero_grads(ModelParams& grads) {
  grads.visit([](const std::string&, Tensor2D& t, bool) { t.zero(); });
}

QualityModel::QualityModel(ModelConfig cfg, packing::Vocab vocab, ModelParams params)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), params_(std::move(params)), embedder_(cfg_.encoder) {
  cfg_.validate();
  if (vocab_.size() != std::size_t(cfg_.vocab_size))
    throw DataError("vocab has " + std::to_string(vocab_.size()) + " words, config expects " +
                    std::to_string(cfg_.vocab_size));
  const ModelParams shape = ModelParams::zeros(cfg_);
  if (params_.blocks.size() != shape.blocks.size()) throw DataError("checkpoint/config mismatch: layer count");
  auto& mine = params_;
  std::vector<std::pair<std::string, std::string>> shapes;
  mine.visit([&](const std::string& n, Tensor2D& t, bool) { shapes.push_back({n, t.shape_str()}); });
  std::size_t i = 0;
  const_cast<ModelParams&>(shape).visit([&](const std::string& n, Tensor2D& t, bool) {
    if (shapes[i].second != t.shape_str())
      throw DataError("checkpoint/config mismatch: '" + n + "' is " + shapes[i].second + ", expected " + t.shape_str());
    ++i;
  });
}

// ---- preparation ----

namespace {

Tensor2D pooled_image(const ImagePayload& image, const QualityModel& model) {
  const PatchGrid grid = model.embedder().embed(image);
  return encoder::grid_rows(encoder::adaptive_avg_pool_2d(grid, model.config().encoder.t));
}

void check_image_budget(std::size_t images, const ModelConfig& cfg) {
  const std::size_t image_tokens = images * std::size_t(cfg.encoder.tokens_per_image());
  if (image_tokens > std::size_t(cfg.max_seq_len))
    throw DataError("over-length: " + std::to_string(image_tokens) + " image tokens exceed max_seq_len " +
                    std::to_string(cfg.max_seq_len));
}

}  // namespace

PreparedInput prepare(const CaptionSample& sample, const QualityModel& model) {
  const auto& cfg = model.config();
  std::vector<int> ids = packing::tokenize(sample.text, model.vocab());
  if (ids.empty()) throw DataError("empty text");
  check_image_budget(1, cfg);
  PreparedInput in;
  in.segments.emplace_back(PreparedInput::Image{pooled_image(sample.image, model), 0});
  const std::size_t budget = std::size_t(cfg.max_seq_len) - std::size_t(cfg.encoder.tokens_per_image());
  if (ids.size() > budget) {
    in.truncated_text_tokens = ids.size() - budget;
    ids.resize(budget);
  }
  in.length = std::size_t(cfg.encoder.tokens_per_image()) + ids.size();
  if (!ids.empty()) in.segments.emplace_back(PreparedInput::Text{std::move(ids), 1});
  return in;
}

PreparedInput prepare(const InterleavedDoc& doc, const QualityModel& model) {
  const auto& cfg = model.config();
  if (doc.items.empty()) throw DataError("interleaved doc has no items");
  check_image_budget(doc.image_count(), cfg);
  std::size_t budget = std::size_t(cfg.max_seq_len) - doc.image_count() * std::size_t(cfg.encoder.tokens_per_image());
  PreparedInput in;
  for (std::size_t k = 0; k < doc.items.size(); ++k) {
    if (const auto* t = std::get_if<TextItem>(&doc.items[k])) {
      std::vector<int> ids = packing::tokenize(t->text, model.vocab());
      if (ids.size() > budget) {
        in.truncated_text_tokens += ids.size() - budget;
        ids.resize(budget);
      }
      budget -= ids.size();
      in.length += ids.size();
      if (!ids.empty()) in.segments.emplace_back(PreparedInput::Text{std::move(ids), k});
    } else {
      in.segments.emplace_back(PreparedInput::Image{pooled_image(std::get<ImageItem>(doc.items[k]).image, model), k});
      in.length += std::size_t(cfg.encoder.tokens_per_image());
    }
  }
  if (in.length == 0) throw DataError("interleaved doc produced an empty sequence");
  return in;
}

PreparedInput prepare(const Record& record, const QualityModel& model) {
  return std::visit([&](const auto& r) { return prepare(r, model); }, record);
}

// ---- forward ----

namespace {

Tensor2D embed_input(const PreparedInput& in, const ModelConfig& cfg, const ModelParams& p,
                     std::vector<encoder::ProjectorCache>* caches, std::vector<SegmentEntry>* segs) {
  const auto d = std::size_t(cfg.d);
  Tensor2D x(in.length, d);
  std::size_t row = 0;
  if (caches) caches->clear();
  for (const auto& seg : in.segments) {
    if (const auto* img = std::get_if<PreparedInput::Image>(&seg)) {
      encoder::ProjectorCache pc;
      Tensor2D tokens = encoder::project(img->pooled, p.projector, caches ? &pc : nullptr);
      for (std::size_t r = 0; r < tokens.rows(); ++r, ++row) {
        std::copy(tokens.row(r).begin(), tokens.row(r).end(), x.row(row).begin());
        if (segs) segs->push_back({SegmentKind::image, img->item, r});
      }
      if (caches) caches->push_back(std::move(pc));
    } else {
      const auto& txt = std::get<PreparedInput::Text>(seg);
      for (std::size_t r = 0; r < txt.ids.size(); ++r, ++row) {
        const int id = txt.ids[r];
        if (id < 0 || id >= cfg.vocab_size) throw DataError("token id " + std::to_string(id) + " outside vocab");
        std::copy(p.tok_emb.row(std::size_t(id)).begin(), p.tok_emb.row(std::size_t(id)).end(), x.row(row).begin());
        if (segs) segs->push_back({SegmentKind::text, txt.item, r});
      }
    }
  }
  return x;
}

void check_length(std::size_t len, const ModelConfig& cfg) {
  if (len == 0) throw DataError("empty sequence");
  if (len > std::size_t(cfg.max_seq_len))
    throw DataError("over-length: sequence of " + std::to_string(len) + " exceeds max_seq_len " +
                    std::to_string(cfg.max_seq_len));
}

Tensor2D run_blocks(Tensor2D x, std::span<const std::size_t> offsets, const ModelConfig& cfg, const ModelParams& p,
                    std::vector<nn::BlockCache>* caches) {
  if (caches) caches->assign(p.blocks.size(), nn::BlockCache{});
  for (std::size_t l = 0; l < p.blocks.size(); ++l)
    x = nn::transformer_block(x, p.blocks[l], cfg.n_heads, offsets, caches ? &(*caches)[l] : nullptr);
  return x;
}

double head(const Tensor2D& last_hidden, const ModelParams& p) {
  double s = p.head_b[0];
  for (std::size_t j = 0; j < last_hidden.cols(); ++j) s += last_hidden[j] * p.head_w[j];
  return s;
}

}  // namespace

AssembledSequence assemble(const PreparedInput& input, const QualityModel& model) {
  AssembledSequence seq;
  seq.embeddings = embed_input(input, model.config(), model.params(), nullptr, &seq.segments);
  return seq;
}

AssembledSequence assemble_caption(const CaptionSample& sample, const QualityModel& model) {
  return assemble(prepare(sample, model), model);
}

AssembledSequence assemble_interleaved(const InterleavedDoc& doc, const QualityModel& model) {
  return assemble(prepare(doc, model), model);
}

std::vector<double> forward_scores(std::span<const AssembledSequence> batch, const QualityModel& model) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  if (batch.empty()) return {};
  std::vector<std::size_t> offsets{0};
  for (const auto& s : batch) {
    check_length(s.length(), cfg);
    if (s.embeddings.cols() != std::size_t(cfg.d)) throw DataError("sequence width does not match model d");
    offsets.push_back(offsets.back() + s.length());
  }
  Tensor2D x(offsets.back(), std::size_t(cfg.d));
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t r = 0; r < batch[b].length(); ++r) {
      auto dst = x.row(offsets[b] + r);
      const auto src = batch[b].embeddings.row(r);
      const auto pos = p.pos_emb.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] + pos[j];
    }
  x = run_blocks(std::move(x), offsets, cfg, p, nullptr);
  std::vector<double> scores;
  scores.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor2D last = x.rows_slice(offsets[b + 1] - 1, offsets[b + 1]);
    scores.push_back(head(nn::layer_norm(last, p.lnf_g, p.lnf_b), p));
  }
  return scores;
}

double forward_score(const AssembledSequence& seq, const QualityModel& model) {
  return forward_scores(std::span<const AssembledSequence>(&seq, 1), model).front();
}

double score_record(const Record& record, const QualityModel& model) {
  return forward_score(assemble(prepare(record, model), model), model);
}

Tensor2D hidden_states(const AssembledSequence& seq, const QualityModel& model) {
  const auto& cfg = model.config();
  check_length(seq.length(), cfg);
  Tensor2D x = seq.embeddings;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) x(r, j) += model.params().pos_emb(r, j);
  const std::size_t offsets[2] = {0, x.rows()};
  return run_blocks(std::move(x), offsets, cfg, model.params(), nullptr);
}

// ---- training path ----

double forward_train(const PreparedInput& input, const ModelConfig& cfg, const ModelParams& p, ForwardCache& cache) {
  check_length(input.length, cfg);
  cache.input = &input;
  Tensor2D x = embed_input(input, cfg, p, &cache.projector, nullptr);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const auto pos = p.pos_emb.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += pos[j];
  }
  const std::size_t offsets[2] = {0, x.rows()};
  x = run_blocks(std::move(x), offsets, cfg, p, &cache.blocks);
  const Tensor2D last = x.rows_slice(x.rows() - 1, x.rows());
  cache.last_hidden = nn::layer_norm(last, p.lnf_g, p.lnf_b, &cache.lnf);
  return head(cache.last_hidden, p);
}

void backward(const ForwardCache& cache, const ModelConfig& cfg, const ModelParams& p, double dscore, ModelParams& g) {
  const PreparedInput& in = *cache.input;
  const auto d = std::size_t(cfg.d);
  const std::size_t len = in.length;

  g.head_b[0] += dscore;
  Tensor2D dlast(1, d);
  for (std::size_t j = 0; j < d; ++j) {
    g.head_w[j] += cache.last_hidden[j] * dscore;
    dlast[j] = p.head_w[j] * dscore;
  }
  const Tensor2D dnorm = nn::layer_norm_backward(cache.lnf, p.lnf_g, dlast, g.lnf_g, g.lnf_b);

  Tensor2D dx(len, d);
  std::copy(dnorm.data(), dnorm.data() + d, dx.row(len - 1).data());
  const std::size_t offsets[2] = {0, len};
  for (std::size_t l = p.blocks.size(); l-- > 0;)
    dx = nn::transformer_block_backward(cache.blocks[l], p.blocks[l], cfg.n_heads, offsets, dx, g.blocks[l]);

  for (std::size_t r = 0; r < len; ++r) {
    auto gp = g.pos_emb.row(r);
    const auto dr = dx.row(r);
    for (std::size_t j = 0; j < d; ++j) gp[j] += dr[j];
  }

  std::size_t row = 0, image = 0;
  for (const auto& seg : in.segments) {
    if (std::holds_alternative<PreparedInput::Image>(seg)) {
      const std::size_t n = std::size_t(cfg.encoder.tokens_per_image());
      encoder::project_backward(cache.projector[image++], p.projector, dx.rows_slice(row, row + n), g.projector);
      row += n;
    } else {
      for (int id : std::get<PreparedInput::Text>(seg).ids) {
        auto ge = g.tok_emb.row(std::size_t(id));
        const auto dr = dx.row(row++);
        for (std::size_t j = 0; j < d; ++j) ge[j] += dr[j];
      }
    }
  }
}

LossGrad mse_loss(double pred, QualityLevel label) {
  const double diff = pred - double(static_cast<int>(label));
  return {diff * diff, 2.0 * diff};
}

LossGrad mse_loss(double pred, int label) { return mse_loss(pred, level_from_int(label)); }

// ---- checkpoints ----

void save_checkpoint(const std::filesystem::path& path, const QualityModel& model) {
  nn::TensorFile f;
  f.meta = {{"model_format", kModelFormat}, {"config", to_json(model.config())}, {"vocab", model.vocab().to_json()}};
  auto& params = const_cast<ModelParams&>(model.params());
  params.visit([&](const std::string& name, Tensor2D& t, bool) { f.tensors.push_back({name, t}); });
  nn::save_tensor_file(path, f);
}

QualityModel load_checkpoint(const std::filesystem::path& path) {
  const nn::TensorFile f = nn::load_tensor_file(path);
  if (f.meta.value("model_format", "") != kModelFormat)
    throw DataError(path.string() + ": not a quality-model checkpoint");
  ModelConfig cfg = model_config_from_json(f.meta.at("config"));
  packing::Vocab vocab = packing::Vocab::from_json(f.meta.at("vocab"));
  cfg.validate();
  ModelParams params = ModelParams::zeros(cfg);
  params.visit([&](const std::string& name, Tensor2D& t, bool) {
    const Tensor2D& src = f.get(name);
    if (!src.same_shape(t))
      throw DataError("checkpoint/config mismatch: '" + name + "' is " + src.shape_str() + ", config implies " +
                      t.shape_str());
    t = src;
  });
  return QualityModel(std::move(cfg), std::move(vocab), std::move(params));
}

}  // namespace unifilter::classifier
