#include "unifilter/train.hpp"

#include <cmath>
#include <numeric>

#include "unifilter/error.hpp"
#include "unifilter/rng.hpp"

namespace unifilter::classifier {

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"peak_lr", c.adam.peak_lr},
          {"warmup_frac", c.adam.warmup_frac},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"weight_decay", c.adam.weight_decay}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.adam.peak_lr = j.value("peak_lr", c.adam.peak_lr);
    c.adam.warmup_frac = j.value("warmup_frac", c.adam.warmup_frac);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.adam.weight_decay = j.value("weight_decay", c.adam.weight_decay);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("train config: ") + e.what());
  }
  if (c.epochs < 1) throw DataError("train config: epochs must be >= 1");
  if (c.batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  return c;
}

namespace {

struct ValResult {
  eval::EvalReport report;
  double loss = 0.0;
};

ValResult validate(const QualityModel& model, std::span<const PreparedInput> inputs,
                   std::span<const QualityLevel> labels) {
  std::vector<AssembledSequence> seqs;
  seqs.reserve(inputs.size());
  for (const auto& in : inputs) seqs.push_back(assemble(in, model));
  std::vector<double> preds;
  preds.reserve(inputs.size());
  constexpr std::size_t kChunk = 32;
  for (std::size_t i = 0; i < seqs.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, seqs.size() - i);
    auto s = forward_scores(std::span<const AssembledSequence>(seqs.data() + i, n), model);
    preds.insert(preds.end(), s.begin(), s.end());
  }
  ValResult r;
  for (std::size_t i = 0; i < preds.size(); ++i) r.loss += mse_loss(preds[i], labels[i]).loss;
  r.loss /= double(preds.size());
  r.report = eval::evaluate(preds, labels);
  return r;
}

}  // namespace

eval::EvalReport evaluate_model(const QualityModel& model, std::span<const LabeledSample> samples) {
  if (samples.empty()) throw DataError("evaluate: empty split");
  std::vector<PreparedInput> inputs;
  std::vector<QualityLevel> labels;
  for (const auto& s : samples) {
    inputs.push_back(prepare(s.record, model));
    labels.push_back(s.label);
  }
  return validate(model, inputs, labels).report;
}

TrainResult train(std::span<const LabeledSample> train_set, std::span<const LabeledSample> val_set, ModelConfig cfg,
                  packing::Vocab vocab, const TrainConfig& tc,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train_set.empty()) throw DataError("train: empty training split");
  if (val_set.empty()) throw DataError("train: empty validation split");
  if (tc.epochs < 1 || tc.batch_size < 1) throw DataError("train: epochs and batch_size must be >= 1");

  cfg.vocab_size = int(vocab.size());
  QualityModel model(cfg, std::move(vocab), ModelParams::init(cfg, derive_seed(tc.seed, fnv1a("init"))));

  std::vector<PreparedInput> train_in, val_in;
  std::vector<QualityLevel> train_labels, val_labels;
  for (const auto& s : train_set) {
    train_in.push_back(prepare(s.record, model));
    train_labels.push_back(s.label);
  }
  for (const auto& s : val_set) {
    val_in.push_back(prepare(s.record, model));
    val_labels.push_back(s.label);
  }

  const std::size_t n = train_in.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  nn::AdamConfig adam = tc.adam;
  adam.total_steps = steps_per_epoch * std::size_t(tc.epochs);

  ModelParams& params = model.mutable_params();
  ModelParams grads = ModelParams::zeros(cfg);
  const auto refs = param_refs(params, grads);
  nn::OptimizerState opt(adam, refs);

  TrainResult result{model, {}, 0, {}};
  double best_acc = -1.0, best_loss = 0.0;
  ForwardCache cache;
  std::vector<std::size_t> order(n);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(tc.seed, fnv1a("shuffle"), std::uint64_t(epoch)));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t end = std::min(n, start + tc.batch_size);
      const double inv = 1.0 / double(end - start);
      zero_grads(grads);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const double pred = forward_train(train_in[idx], cfg, params, cache);
        const LossGrad lg = mse_loss(pred, train_labels[idx]);
        if (!std::isfinite(lg.loss))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(opt.step + 1) + ", sample '" + record_id(train_set[idx].record) +
                             "' (prediction " + std::to_string(pred) + ")");
        epoch_loss += lg.loss;
        backward(cache, cfg, params, lg.dpred * inv, grads);
      }
      nn::adam_step(refs, opt);
    }

    const ValResult val = validate(model, val_in, val_labels);
    EpochRecord rec{epoch, epoch_loss / double(n), val.loss, val.report.accuracy, val.report.macro_f1};
    result.history.push_back(rec);
    // equal accuracy: the lower validation loss wins
    if (val.report.accuracy > best_acc || (val.report.accuracy == best_acc && val.loss < best_loss)) {
      best_acc = val.report.accuracy;
      best_loss = val.loss;
      result.best_epoch = epoch;
      result.best_report = val.report;
      result.model.mutable_params() = params;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

nlohmann::json history_json(const TrainResult& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.history)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"val_f1", e.val_macro_f1}});
  return {{"epochs", epochs}, {"best_epoch", r.best_epoch}, {"f1_average", "macro"}};
}

}  // namespace unifilter::classifier
