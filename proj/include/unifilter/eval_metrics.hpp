#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "json.hpp"
#include "unifilter/io_formats.hpp"

namespace unifilter::eval {

// Round half up, then clamp to [0, 3]. Throws NumericError on NaN/Inf.
QualityLevel quantize_score(double score);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  bool zero_support = false;  // contributes F1 = 0 to the macro average
};

struct EvalReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<ClassMetrics, kNumLevels> per_class{};
  // confusion[true][pred]
  std::array<std::array<std::size_t, kNumLevels>, kNumLevels> confusion{};
};

EvalReport evaluate(std::span<const double> preds, std::span<const QualityLevel> labels);

nlohmann::json to_json(const EvalReport& r);
// Two-column table with the validation accuracy / F1 headline plus the
// per-class breakdown.
std::string format_table(const EvalReport& r);

}  // namespace unifilter::eval
