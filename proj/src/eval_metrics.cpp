#include "unifilter/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "unifilter/error.hpp"

namespace unifilter::eval {

QualityLevel quantize_score(double score) {
  if (!std::isfinite(score)) throw NumericError("cannot quantize non-finite score");
  const double r = std::floor(score + 0.5);
  return static_cast<QualityLevel>(int(std::clamp(r, 0.0, double(kNumLevels - 1))));
}

EvalReport evaluate(std::span<const double> preds, std::span<const QualityLevel> labels) {
  if (preds.size() != labels.size())
    throw DataError("evaluate: " + std::to_string(preds.size()) + " predictions vs " + std::to_string(labels.size()) +
                    " labels");
  if (preds.empty()) throw DataError("evaluate: empty input");
  EvalReport r;
  r.n = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i)
    ++r.confusion[std::size_t(labels[i])][std::size_t(quantize_score(preds[i]))];

  std::size_t correct = 0;
  double f1_sum = 0.0;
  for (int c = 0; c < kNumLevels; ++c) {
    std::size_t support = 0, predicted = 0;
    for (int k = 0; k < kNumLevels; ++k) {
      support += r.confusion[c][k];
      predicted += r.confusion[k][c];
    }
    const std::size_t tp = r.confusion[c][c];
    correct += tp;
    ClassMetrics& m = r.per_class[c];
    m.support = support;
    m.zero_support = support == 0;
    m.precision = predicted ? double(tp) / double(predicted) : 0.0;
    m.recall = support ? double(tp) / double(support) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    f1_sum += m.f1;
  }
  r.accuracy = double(correct) / double(r.n);
  r.macro_f1 = f1_sum / double(kNumLevels);
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (int c = 0; c < kNumLevels; ++c) {
    const auto& m = r.per_class[c];
    per_class[std::string(level_name(QualityLevel(c)))] = {{"precision", m.precision},
                                                           {"recall", m.recall},
                                                           {"f1", m.f1},
                                                           {"support", m.support},
                                                           {"zero_support", m.zero_support}};
  }
  return {{"n", r.n},
          {"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},
          {"f1_average", "macro"},
          {"quantization", "round-half-up, clamp to [0,3]"},
          {"per_class", per_class},
          {"confusion", r.confusion}};
}

std::string format_table(const EvalReport& r) {
  char buf[256];
  std::string out = "F1 is macro-averaged over the 4 quality levels\n";
  std::snprintf(buf, sizeof buf, "%-18s %14s %14s\n", "", "Validation Acc", "Validation F1");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-18s %14.1f %14.1f\n", "model", 100.0 * r.accuracy, 100.0 * r.macro_f1);
  out += buf;
  out += "\nper class:\n";
  for (int c = 0; c < kNumLevels; ++c) {
    const auto& m = r.per_class[c];
    std::snprintf(buf, sizeof buf, "  %-16s P %.3f  R %.3f  F1 %.3f  n=%zu%s\n",
                  std::string(level_name(QualityLevel(c))).c_str(), m.precision, m.recall, m.f1, m.support,
                  m.zero_support ? "  (no support)" : "");
    out += buf;
  }
  return out;
}

}  // namespace unifilter::eval
