#include "fewshot/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "fewshot/csv.hpp"
#include "fewshot/hash.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/text.hpp"

namespace fewshot::corpus {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::test:
      return "test";
    case Split::validation:
      return "validation";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  if (name == "validation") return Split::validation;
  throw UsageError(fmt::format("unknown split '{}'", name));
}

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  for (LabelId i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw Error("label names must be non-empty");
    if (!index_.emplace(names_[i], i).second) {
      throw Error(fmt::format("duplicate label name '{}'", names_[i]));
    }
  }
}

LabelSpace LabelSpace::sorted(std::vector<std::string> names) {
  std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
    auto la = text::to_lower(a);
    auto lb = text::to_lower(b);
    if (la != lb) return la < lb;
    return a < b;
  });
  return LabelSpace(std::move(names));
}

std::optional<LabelId> LabelSpace::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

LabelId LabelSpace::index_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw Error(fmt::format("unknown label '{}'", name));
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_blank_record(const csv::Record& r) {
  return r.fields.size() == 1 && r.fields[0].empty();
}

}  // namespace

Dataset parse_csv(std::string_view content, Split split, const std::optional<LabelSpace>& labels) {
  if (content.starts_with("\xEF\xBB\xBF")) content.remove_prefix(3);
  std::vector<csv::Record> records;
  try {
    records = csv::parse(content);
  } catch (const csv::ParseError& e) {
    throw Error(e.what());
  }
  if (records.empty()) throw Error("missing header row");
  const auto& header = records.front().fields;
  if (header.size() != 2 || header[0] != "text" || header[1] != "category") {
    throw Error("header must be exactly 'text,category'");
  }

  std::vector<std::pair<std::string, std::string>> rows;
  rows.reserve(records.size() - 1);
  std::size_t data_row = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    if (is_blank_record(r)) continue;
    ++data_row;
    if (r.fields.size() != 2) {
      throw RowError(data_row, fmt::format("expected 2 fields, found {} (line {})", r.fields.size(), r.line));
    }
    if (text::trim(r.fields[0]).empty()) throw RowError(data_row, "empty text");
    if (text::trim(r.fields[1]).empty()) throw RowError(data_row, "empty category");
    rows.emplace_back(r.fields[0], r.fields[1]);
  }

  Dataset d;
  d.split = split;
  if (labels) {
    d.labels = *labels;
  } else {
    std::set<std::string> names;
    for (const auto& [_, category] : rows) names.insert(category);
    d.labels = LabelSpace::sorted({names.begin(), names.end()});
  }
  d.utterances.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto id = d.labels.find(rows[i].second);
    if (!id) throw RowError(i + 1, fmt::format("unknown category '{}'", rows[i].second));
    d.utterances.push_back(Utterance{std::move(rows[i].first), *id, i});
  }
  return d;
}

Dataset load_csv(const std::string& path, Split split, const std::optional<LabelSpace>& labels) {
  std::string content = read_file(path);
  Dataset d = parse_csv(content, split, labels);
  d.fingerprint = hex64(fnv1a64(content));
  return d;
}

std::string to_csv(const Dataset& d) {
  std::string out = "text,category\n";
  for (const auto& u : d.utterances) {
    out += csv::escape(u.text);
    out += ',';
    out += csv::escape(d.labels.name(u.label));
    out += '\n';
  }
  return out;
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << to_csv(d);
  if (!out) throw IoError("write failed: " + path);
}

Dataset make_dataset(const std::vector<std::pair<std::string, std::string>>& rows, Split split) {
  std::set<std::string> names;
  for (const auto& [_, category] : rows) names.insert(category);
  Dataset d;
  d.split = split;
  d.labels = LabelSpace::sorted({names.begin(), names.end()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.utterances.push_back(Utterance{rows[i].first, d.labels.index_of(rows[i].second), i});
  }
  return d;
}

DatasetStats compute_stats(const Dataset& d) {
  if (d.empty()) throw Error("cannot compute statistics of an empty dataset");
  DatasetStats s;
  s.n_examples = d.size();
  double char_min = std::numeric_limits<double>::infinity(), char_max = 0, char_sum = 0;
  double word_min = std::numeric_limits<double>::infinity(), word_max = 0, word_sum = 0;
  std::vector<bool> seen(d.labels.size(), false);
  for (const auto& u : d.utterances) {
    auto chars = static_cast<double>(text::utf8_length(u.text));
    auto words = static_cast<double>(text::split_whitespace(u.text).size());
    char_min = std::min(char_min, chars);
    char_max = std::max(char_max, chars);
    char_sum += chars;
    word_min = std::min(word_min, words);
    word_max = std::max(word_max, words);
    word_sum += words;
    seen[u.label] = true;
  }
  const auto n = static_cast<double>(d.size());
  s.char_len = {char_min, char_sum / n, char_max};
  s.word_count = {word_min, word_sum / n, word_max};
  s.n_intents = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  return s;
}

nlohmann::json to_json(const DatasetStats& s) {
  auto summary = [](const LengthSummary& l) {
    return nlohmann::json{{"min", l.min}, {"mean", l.mean}, {"max", l.max}};
  };
  return nlohmann::json{{"n_examples", s.n_examples},
                        {"char_len", summary(s.char_len)},
                        {"word_count", summary(s.word_count)},
                        {"n_intents", s.n_intents}};
}

namespace {

std::string with_thousands(std::size_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

}  // namespace

std::string render_stats_table(const std::vector<std::pair<std::string, DatasetStats>>& columns,
                               std::string_view title) {
  struct Line {
    std::string label;
    std::vector<std::string> cells;
  };
  std::vector<Line> lines = {
      {std::string(title), {}},
      {"Number of examples", {}},
      {"Minimum length in characters", {}},
      {"Average length in characters", {}},
      {"Maximum length in characters", {}},
      {"Minimum word count", {}},
      {"Average word count", {}},
      {"Maximum word count", {}},
      {"Number of intents", {}},
  };
  for (const auto& [name, s] : columns) {
    lines[0].cells.push_back(name);
    lines[1].cells.push_back(with_thousands(s.n_examples));
    lines[2].cells.push_back(fmt::format("{:.0f}", s.char_len.min));
    lines[3].cells.push_back(fmt::format("{:.1f}", s.char_len.mean));
    lines[4].cells.push_back(fmt::format("{:.0f}", s.char_len.max));
    lines[5].cells.push_back(fmt::format("{:.0f}", s.word_count.min));
    lines[6].cells.push_back(fmt::format("{:.1f}", s.word_count.mean));
    lines[7].cells.push_back(fmt::format("{:.0f}", s.word_count.max));
    lines[8].cells.push_back(with_thousands(s.n_intents));
  }
  std::size_t label_width = 0;
  std::vector<std::size_t> widths(columns.size(), 0);
  for (const auto& l : lines) {
    label_width = std::max(label_width, l.label.size());
    for (std::size_t c = 0; c < l.cells.size(); ++c) widths[c] = std::max(widths[c], l.cells[c].size());
  }
  std::string out;
  for (const auto& l : lines) {
    out += fmt::format("{:<{}}", l.label, label_width);
    for (std::size_t c = 0; c < l.cells.size(); ++c) out += fmt::format("  {:>{}}", l.cells[c], widths[c]);
    out += '\n';
  }
  return out;
}

std::vector<std::size_t> label_distribution(const Dataset& d) {
  std::vector<std::size_t> counts(d.labels.size(), 0);
  for (const auto& u : d.utterances) ++counts.at(u.label);
  return counts;
}

nlohmann::json to_json(const CurationManifest& m) {
  nlohmann::json selections = nlohmann::json::object();
  for (const auto& [label, rows] : m.selections) selections[label] = rows;
  nlohmann::json j{{"fingerprint", m.fingerprint},
                   {"picks_per_class", m.picks_per_class},
                   {"selections", selections},
                   {"note", m.note}};
  if (!m.created_at.empty()) j["created_at"] = m.created_at;
  return j;
}

CurationManifest manifest_from_json(const nlohmann::json& j) {
  try {
    CurationManifest m;
    m.fingerprint = j.at("fingerprint").get<std::string>();
    m.picks_per_class = j.at("picks_per_class").get<std::size_t>();
    for (const auto& [label, rows] : j.at("selections").items()) {
      m.selections.emplace_back(label, rows.get<std::vector<std::size_t>>());
    }
    m.note = j.value("note", "");
    m.created_at = j.value("created_at", "");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed curation manifest: ") + e.what());
  }
}

CurationManifest load_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(fmt::format("{}: {}", path, e.what()));
  }
  return manifest_from_json(j);
}

void save_manifest(const CurationManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::string describe(const Provenance& p) {
  if (const auto* r = std::get_if<RandomProvenance>(&p)) return fmt::format("random(seed={})", r->seed);
  return fmt::format("curated({})", std::get<CuratedProvenance>(p).manifest_path);
}

std::vector<std::size_t> shuffled_class_members(const Dataset& d, LabelId label, std::uint64_t seed) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.utterances[i].label == label) members.push_back(i);
  }
  // Keyed by label name so that adding a class leaves other classes' draws unchanged.
  Rng rng(derive_seed(seed, "corpus.class/" + d.labels.name(label)));
  rng.shuffle(std::span<std::size_t>(members));
  return members;
}

FewShotSample sample_random(const Dataset& d, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw Error("shots per class must be at least 1");
  FewShotSample s;
  s.shots = shots;
  s.labels = d.labels;
  s.provenance = RandomProvenance{seed};
  s.instances.resize(d.labels.size());
  for (LabelId c = 0; c < d.labels.size(); ++c) {
    auto members = shuffled_class_members(d, c, seed);
    if (members.size() < shots) {
      throw Error(fmt::format("class '{}' has {} instances, fewer than the {} requested", d.labels.name(c),
                              members.size(), shots));
    }
    for (std::size_t k = 0; k < shots; ++k) s.instances[c].push_back(d.utterances[members[k]]);
  }
  return s;
}

FewShotSample sample_curated(const Dataset& d, const CurationManifest& manifest, const std::string& manifest_path) {
  if (!manifest.fingerprint.empty() && !d.fingerprint.empty() && manifest.fingerprint != d.fingerprint) {
    throw Error(fmt::format("manifest fingerprint {} does not match dataset fingerprint {}", manifest.fingerprint,
                            d.fingerprint));
  }
  if (manifest.picks_per_class == 0) throw Error("manifest picks_per_class must be at least 1");
  std::unordered_map<std::size_t, const Utterance*> by_row;
  for (const auto& u : d.utterances) by_row.emplace(u.row, &u);

  FewShotSample s;
  s.shots = manifest.picks_per_class;
  s.labels = d.labels;
  s.provenance = CuratedProvenance{manifest_path};
  s.instances.resize(d.labels.size());
  std::vector<bool> covered(d.labels.size(), false);
  for (const auto& [label_name, rows] : manifest.selections) {
    auto id = d.labels.find(label_name);
    if (!id) throw Error(fmt::format("manifest references unknown class '{}'", label_name));
    if (covered[*id]) throw Error(fmt::format("manifest lists class '{}' twice", label_name));
    covered[*id] = true;
    if (rows.size() != manifest.picks_per_class) {
      throw Error(fmt::format("manifest class '{}' has {} picks, expected {}", label_name, rows.size(),
                              manifest.picks_per_class));
    }
    for (std::size_t row : rows) {
      auto it = by_row.find(row);
      if (it == by_row.end()) throw Error(fmt::format("manifest row {} does not exist in the dataset", row));
      if (it->second->label != *id) {
        throw Error(fmt::format("manifest row {} belongs to class '{}', not '{}'", row,
                                d.labels.name(it->second->label), label_name));
      }
      s.instances[*id].push_back(*it->second);
    }
  }
  for (LabelId c = 0; c < covered.size(); ++c) {
    if (!covered[c]) throw Error(fmt::format("manifest does not cover class '{}'", d.labels.name(c)));
  }
  validate(s);
  return s;
}

void validate(const FewShotSample& sample) {
  if (sample.shots == 0) throw Error("few-shot sample must have at least one shot per class");
  if (sample.instances.size() != sample.labels.size()) {
    throw Error(fmt::format("few-shot sample covers {} classes, label space has {}", sample.instances.size(),
                            sample.labels.size()));
  }
  for (LabelId c = 0; c < sample.instances.size(); ++c) {
    const auto& list = sample.instances[c];
    if (list.size() != sample.shots) {
      throw Error(fmt::format("class '{}' has {} instances, expected {}", sample.labels.name(c), list.size(),
                              sample.shots));
    }
    std::set<std::string_view> texts;
    for (const auto& u : list) {
      if (u.label != c) throw Error(fmt::format("instance filed under '{}' carries another label", sample.labels.name(c)));
      if (!texts.insert(u.text).second) {
        throw Error(fmt::format("class '{}' contains a duplicate utterance", sample.labels.name(c)));
      }
    }
  }
}

SplitResult split_validation(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("validation fraction must lie in (0, 1)");
  std::vector<bool> to_validation(d.size(), false);
  for (LabelId c = 0; c < d.labels.size(); ++c) {
    auto members = shuffled_class_members(d, c, derive_seed(seed, "corpus.split"));
    if (members.size() < 2) continue;
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size())));
    k = std::min(k, members.size() - 1);
    for (std::size_t i = 0; i < k; ++i) to_validation[members[i]] = true;
  }
  SplitResult out;
  out.train.labels = out.validation.labels = d.labels;
  // Row indices still refer to the source file, so both halves keep its fingerprint.
  out.train.fingerprint = out.validation.fingerprint = d.fingerprint;
  out.train.split = d.split;
  out.validation.split = Split::validation;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (to_validation[i] ? out.validation : out.train).utterances.push_back(d.utterances[i]);
  }
  return out;
}

}  // namespace fewshot::corpus
