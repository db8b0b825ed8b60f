#include "fewshot/evalkit.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "fewshot/error.hpp"

namespace fewshot::evalkit {

namespace {

double safe_div(double num, double den) { return den > 0 ? num / den : 0.0; }

double f1_of(double tp, double fp, double fn) {
  if (tp == 0) return 0.0;
  const double p = tp / (tp + fp);
  const double r = tp / (tp + fn);
  return 2 * p * r / (p + r);
}

}  // namespace

EvalReport score(std::span<const LabelId> golds, std::span<const icl::Prediction> preds, std::size_t classes) {
  if (golds.size() != preds.size()) {
    throw Error(fmt::format("score needs equally many golds and predictions ({} vs {})", golds.size(), preds.size()));
  }
  EvalReport r;
  r.n_instances = golds.size();
  r.confusion.assign(classes, std::vector<std::size_t>(classes + 1, 0));
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] >= classes) throw Error(fmt::format("gold label {} out of range", golds[i]));
    const auto& p = preds[i];
    if (p.has_label()) {
      if (p.label >= classes) throw Error(fmt::format("predicted label {} out of range", p.label));
      ++r.confusion[golds[i]][p.label];
    } else {
      ++r.confusion[golds[i]][classes];
      ++r.n_unanswered;
    }
  }

  double tp_total = 0, fp_total = 0, fn_total = 0, f1_sum = 0;
  r.per_class.resize(classes);
  for (LabelId c = 0; c < classes; ++c) {
    double tp = static_cast<double>(r.confusion[c][c]);
    double support = 0, predicted = 0;
    for (std::size_t k = 0; k <= classes; ++k) support += static_cast<double>(r.confusion[c][k]);
    for (LabelId g = 0; g < classes; ++g) predicted += static_cast<double>(r.confusion[g][c]);
    const double fp = predicted - tp;
    const double fn = support - tp;
    auto& m = r.per_class[c];
    m.support = static_cast<std::size_t>(support);
    m.precision = safe_div(tp, tp + fp);
    m.recall = safe_div(tp, tp + fn);
    m.f1 = f1_of(tp, fp, fn);
    tp_total += tp;
    fp_total += fp;
    fn_total += fn;
    f1_sum += m.f1;
  }
  r.micro_f1 = f1_of(tp_total, fp_total, fn_total);
  r.macro_f1 = classes > 0 ? f1_sum / static_cast<double>(classes) : 0.0;
  r.accuracy = safe_div(tp_total, static_cast<double>(r.n_instances));
  return r;
}

EvalReport score_labels(std::span<const LabelId> golds, std::span<const LabelId> preds, std::size_t classes) {
  std::vector<icl::Prediction> wrapped(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    wrapped[i].outcome = icl::Outcome::label;
    wrapped[i].route = icl::ParseRoute::exact_pair;
    wrapped[i].label = preds[i];
  }
  return score(golds, wrapped, classes);
}

nlohmann::json to_json(const EvalReport& r, const corpus::LabelSpace& labels) {
  nlohmann::json per_class = nlohmann::json::array();
  for (LabelId c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    per_class.push_back({{"label_id", c},
                         {"label", c < labels.size() ? labels.name(c) : std::string()},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support}});
  }
  return nlohmann::json{{"micro_f1", r.micro_f1},   {"macro_f1", r.macro_f1},
                        {"accuracy", r.accuracy},   {"n_instances", r.n_instances},
                        {"n_unanswered", r.n_unanswered}, {"per_class", per_class},
                        {"confusion", r.confusion}};
}

std::string percent(double ratio) { return fmt::format("{:.1f}", 100.0 * ratio); }

std::string render_table(std::span<const TableRow> rows, TableFormat format) {
  // Compare at display precision so visually tied cells are bolded together.
  auto best_of = [&](auto member) {
    std::optional<std::string> best;
    double best_value = -1;
    for (const auto& row : rows) {
      const auto& v = row.*member;
      if (v && *v > best_value) {
        best_value = *v;
        best = percent(*v);
      }
    }
    return best;
  };
  const auto best_micro = best_of(&TableRow::micro_f1);
  const auto best_macro = best_of(&TableRow::macro_f1);

  auto cell = [&](const std::optional<double>& v, const std::optional<std::string>& best) {
    if (!v) return std::string("NA");
    auto s = percent(*v);
    if (format == TableFormat::markdown && best && s == *best) return "**" + s + "**";
    return s;
  };

  std::string out;
  switch (format) {
    case TableFormat::markdown:
      out += "| Methods | Setting | μ-F1 | m-F1 |\n|---|---|---:|---:|\n";
      for (const auto& row : rows) {
        out += fmt::format("| {} | {} | {} | {} |\n", row.method, row.setting, cell(row.micro_f1, best_micro),
                           cell(row.macro_f1, best_macro));
      }
      break;
    case TableFormat::latex:
      out += "Methods & Setting & μ-F1 & m-F1 \\\\\n";
      for (const auto& row : rows) {
        out += fmt::format("{} & {} & {} & {} \\\\\n", row.method, row.setting, cell(row.micro_f1, best_micro),
                           cell(row.macro_f1, best_macro));
      }
      break;
    case TableFormat::plain: {
      std::size_t wm = std::string_view("Methods").size(), ws = std::string_view("Setting").size();
      for (const auto& row : rows) {
        wm = std::max(wm, row.method.size());
        ws = std::max(ws, row.setting.size());
      }
      out += fmt::format("{:<{}}  {:<{}}  {:>5}  {:>5}\n", "Methods", wm, "Setting", ws, "mi-F1", "ma-F1");
      for (const auto& row : rows) {
        out += fmt::format("{:<{}}  {:<{}}  {:>5}  {:>5}\n", row.method, wm, row.setting, ws,
                           cell(row.micro_f1, best_micro), cell(row.macro_f1, best_macro));
      }
      break;
    }
  }
  return out;
}

}  // namespace fewshot::evalkit
