#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "unifilter/classifier.hpp"
#include "unifilter/eval_metrics.hpp"
#include "unifilter/io_formats.hpp"
#include "unifilter/optim.hpp"

namespace unifilter::classifier {

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 16;
  nn::AdamConfig adam;  // total_steps is derived from epochs and batch size
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean per-sample MSE over the epoch
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainResult {
  QualityModel model;  // parameters from the best-validation-accuracy epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  eval::EvalReport best_report;
};

// Seeded minibatch MSE training of every trainable tensor (the patch
// embedder is frozen). Validation accuracy is measured after every epoch and
// the epoch with the highest accuracy is returned, ties going to the lower
// validation loss.
TrainResult train(std::span<const LabeledSample> train_set, std::span<const LabeledSample> val_set, ModelConfig cfg,
                  packing::Vocab vocab, const TrainConfig& tc,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// Scores a labeled set with an existing model.
eval::EvalReport evaluate_model(const QualityModel& model, std::span<const LabeledSample> samples);

nlohmann::json history_json(const TrainResult& r);

}  // namespace unifilter::classifier
