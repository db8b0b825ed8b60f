#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/corpus.hpp"
#include "fewshot/prediction.hpp"

namespace fewshot::evalkit {

using corpus::LabelId;

struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t support = 0;
};

struct EvalReport {
  double micro_f1 = 0;  // ratio in [0, 1]
  double macro_f1 = 0;
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
  // classes x (classes + 1); the last column counts abstentions and parse failures.
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t n_instances = 0;
  std::size_t n_unanswered = 0;

  std::size_t classes() const { return per_class.size(); }
};

// Micro-F1 from pooled TP/FP/FN over the true classes. An abstention or parse
// failure adds one FN to its gold class and no FP anywhere. Per-class F1 is 0
// when TP = 0; macro-F1 is the unweighted mean over all classes.
EvalReport score(std::span<const LabelId> golds, std::span<const icl::Prediction> preds, std::size_t classes);

// Convenience for label-only predictions.
EvalReport score_labels(std::span<const LabelId> golds, std::span<const LabelId> preds, std::size_t classes);

nlohmann::json to_json(const EvalReport& r, const corpus::LabelSpace& labels);

struct TableRow {
  std::string method;
  std::string setting;
  std::optional<double> micro_f1;  // ratio; nullopt renders as NA
  std::optional<double> macro_f1;
};

enum class TableFormat { plain, markdown, latex };

// Percentages to one decimal. In markdown the best value of each score column
// is bolded, ties included.
std::string render_table(std::span<const TableRow> rows, TableFormat format);

std::string percent(double ratio);

}  // namespace fewshot::evalkit
