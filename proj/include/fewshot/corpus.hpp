#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/error.hpp"

namespace fewshot::corpus {

using LabelId = std::size_t;

enum class Split { train, test, validation };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

// Ordered, unique label names. The order defines label ids and the class
// listing order in prompts.
class LabelSpace {
 public:
  LabelSpace() = default;
  // Keeps the given order. Throws Error on empty or duplicate names.
  explicit LabelSpace(std::vector<std::string> names);

  // Case-insensitive lexicographic order, ties broken bytewise.
  static LabelSpace sorted(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& name(LabelId id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<LabelId> find(std::string_view name) const;
  // Throws Error for unknown names.
  LabelId index_of(std::string_view name) const;

  friend bool operator==(const LabelSpace& a, const LabelSpace& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, LabelId> index_;
};

struct Utterance {
  std::string text;
  LabelId label = 0;
  // 0-based data-row index in the source file (header excluded).
  std::size_t row = 0;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dataset {
  std::vector<Utterance> utterances;
  LabelSpace labels;
  Split split = Split::train;
  // Hash of the source file bytes; empty for datasets built in memory.
  std::string fingerprint;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
};

// Thrown for malformed input rows; `row` is the 1-based data row (header excluded).
class RowError : public Error {
 public:
  RowError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Loads a `text,category` CSV. Without `labels`, the label space is the sorted
// union of categories in the file; with it, unknown categories are errors.
Dataset load_csv(const std::string& path, Split split,
                 const std::optional<LabelSpace>& labels = std::nullopt);
Dataset parse_csv(std::string_view content, Split split,
                  const std::optional<LabelSpace>& labels = std::nullopt);

std::string to_csv(const Dataset& d);
void write_csv(const Dataset& d, const std::string& path);

// Builds a dataset from in-memory (text, label name) rows; label space sorted.
Dataset make_dataset(const std::vector<std::pair<std::string, std::string>>& rows,
                     Split split = Split::train);

struct LengthSummary {
  double min = 0;
  double mean = 0;
  double max = 0;
};

struct DatasetStats {
  std::size_t n_examples = 0;
  LengthSummary char_len;
  LengthSummary word_count;
  std::size_t n_intents = 0;
};

DatasetStats compute_stats(const Dataset& d);
nlohmann::json to_json(const DatasetStats& s);

// Renders one or more stats columns in the layout of the usual dataset
// statistics table ("Number of examples", min/avg/max lengths, intents).
std::string render_stats_table(const std::vector<std::pair<std::string, DatasetStats>>& columns,
                               std::string_view title = "Statistics");

// Counts per label id; entry i is the count of label i.
std::vector<std::size_t> label_distribution(const Dataset& d);

// Curation manifest. Produced by the curation service, consumed by the
// curated sampler. Selections are keyed by label name and list data-row indices.
struct CurationManifest {
  std::string fingerprint;
  std::size_t picks_per_class = 0;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> selections;
  std::string note;
  std::string created_at;
};

nlohmann::json to_json(const CurationManifest& m);
CurationManifest manifest_from_json(const nlohmann::json& j);
CurationManifest load_manifest(const std::string& path);
void save_manifest(const CurationManifest& m, const std::string& path);

struct RandomProvenance {
  std::uint64_t seed = 0;
  friend bool operator==(const RandomProvenance&, const RandomProvenance&) = default;
};
struct CuratedProvenance {
  std::string manifest_path;
  friend bool operator==(const CuratedProvenance&, const CuratedProvenance&) = default;
};
using Provenance = std::variant<RandomProvenance, CuratedProvenance>;

std::string describe(const Provenance& p);

struct FewShotSample {
  std::size_t shots = 0;
  // instances[label_id] holds exactly `shots` utterances.
  std::vector<std::vector<Utterance>> instances;
  LabelSpace labels;
  Provenance provenance;

  std::size_t class_count() const { return instances.size(); }
};

// Row positions (indices into d.utterances) of one class, shuffled with the
// per-class sub-seed. Shared by the random sampler and curation candidates.
std::vector<std::size_t> shuffled_class_members(const Dataset& d, LabelId label, std::uint64_t seed);

FewShotSample sample_random(const Dataset& d, std::size_t shots, std::uint64_t seed);
FewShotSample sample_curated(const Dataset& d, const CurationManifest& manifest,
                             const std::string& manifest_path = {});

// Checks the FewShotSample invariants; throws Error when violated.
void validate(const FewShotSample& sample);

struct SplitResult {
  Dataset train;
  Dataset validation;
};

// Per class, ceil(fraction * size) utterances go to validation, capped at
// size - 1 so every class keeps a training member. Both halves keep the input
// order.
SplitResult split_validation(const Dataset& d, double fraction, std::uint64_t seed);

}  // namespace fewshot::corpus
