#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fewshot/corpus.hpp"
#include "fewshot/encoder.hpp"
#include "fewshot/error.hpp"
#include "fewshot/matrix.hpp"

namespace fewshot::contrastive {

using corpus::LabelId;

struct Pair {
  std::string text_a;
  std::string text_b;
  int target = 0;  // 1 = same class, 0 = different class

  friend bool operator==(const Pair&, const Pair&) = default;
};

struct PairBatch {
  std::vector<Pair> pairs;
  std::uint64_t generation_seed = 0;
  // Set when the sample has one shot per class: no positive pair exists and
  // the batch holds negatives only.
  bool positives_unavailable = false;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  friend bool operator==(const PairBatch&, const PairBatch&) = default;
};

// For every instance: `per_instance` positives (partner drawn uniformly from the
// same class, never itself) and `per_instance` negatives (partner drawn from a
// uniformly chosen other class).
PairBatch generate_pairs(const corpus::FewShotSample& sample, std::size_t per_instance, std::uint64_t seed);

// Mean over pairs of (cos(e(a), e(b)) - y)^2.
double contrastive_loss(const encoder::EncoderParams& p, const PairBatch& batch);

// Exact gradient of contrastive_loss with respect to W, same storage layout as
// EncoderParams::projection (F x D).
Matrix contrastive_grad(const encoder::EncoderParams& p, const PairBatch& batch);

// Thrown when a training loss turns non-finite; carries the losses seen so far.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trajectory)
      : Error(what), trajectory_(std::move(trajectory)) {}
  const std::vector<double>& trajectory() const { return trajectory_; }

 private:
  std::vector<double> trajectory_;
};

struct EncoderTrainConfig {
  std::size_t epochs = 50;
  double lr = 0.5;
};

struct TrainReport {
  // loss_trajectory[0] is the loss before the first update, then one entry per epoch.
  std::vector<double> loss_trajectory;
  double head_train_accuracy = 0;
  std::vector<double> head_loss_trajectory;
  nlohmann::json hyperparameters = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();

  double initial_loss() const { return loss_trajectory.empty() ? 0 : loss_trajectory.front(); }
  double final_loss() const { return loss_trajectory.empty() ? 0 : loss_trajectory.back(); }
};

nlohmann::json to_json(const TrainReport& r);

struct EncoderTrainResult {
  encoder::EncoderParams params;
  TrainReport report;
};

// Full-batch gradient descent, `epochs` steps.
EncoderTrainResult train_encoder(encoder::EncoderParams p, const PairBatch& batch, const EncoderTrainConfig& config,
                                 std::uint64_t seed);

// Multinomial logistic head over embeddings.
struct Head {
  Matrix weights;  // C x D
  std::vector<double> bias;

  std::size_t classes() const { return weights.rows(); }
  friend bool operator==(const Head&, const Head&) = default;
};

struct HeadConfig {
  double l2 = 1e-3;
  std::size_t iters = 500;
  double lr = 0.1;
};

struct HeadFit {
  Head head;
  double train_accuracy = 0;
  std::vector<double> loss_trajectory;
};

// Minimizes mean cross-entropy + l2 * ||weights||^2 by full-batch gradient
// descent from zero weights. The penalty is applied as a proximal step so large
// l2 shrinks the weights instead of overshooting. Requires at least two classes.
HeadFit fit_head(const encoder::SentenceEncoder& enc, const corpus::FewShotSample& sample, const HeadConfig& config,
                 std::uint64_t seed);
HeadFit fit_head(const encoder::EncoderParams& p, const corpus::FewShotSample& sample, const HeadConfig& config,
                 std::uint64_t seed);

// Same fit on explicit embeddings and labels.
HeadFit fit_head_on_embeddings(const std::vector<encoder::Embedding>& x, const std::vector<LabelId>& y,
                               std::size_t classes, const HeadConfig& config);

struct HeadPrediction {
  LabelId label = 0;
  std::vector<double> probabilities;
};

// softmax(W e + b); argmax with ties going to the lowest label id.
HeadPrediction predict_embedding(const Head& h, std::span<const double> embedding);
HeadPrediction predict(const encoder::SentenceEncoder& enc, const Head& h, const std::string& text);
HeadPrediction predict(const encoder::EncoderParams& p, const Head& h, const std::string& text);
std::vector<HeadPrediction> predict_batch(const encoder::SentenceEncoder& enc, const Head& h,
                                          std::span<const std::string> texts);

struct PipelineConfig {
  std::size_t embedding_dim = 64;
  encoder::FeaturizerConfig features;
  std::size_t pairs_per_instance = 2;
  EncoderTrainConfig encoder;
  HeadConfig head;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

struct TrainedModel {
  encoder::EncoderParams params;
  Head head;
  corpus::LabelSpace labels;
  TrainReport report;
};

// sample -> pairs -> train_encoder -> fit_head. Sub-seeds are derived from
// `seed` as derive_seed(seed, "pipeline.<stage>").
TrainedModel train_pipeline(const corpus::Dataset& d, std::size_t shots, const PipelineConfig& config,
                            std::uint64_t seed);
// Same, from an already drawn sample (random or curated).
TrainedModel train_pipeline(const corpus::FewShotSample& sample, const PipelineConfig& config, std::uint64_t seed);

// Writes encoder.bin, head.json and manifest.json into `dir`.
void save_model(const TrainedModel& m, const std::string& dir, const nlohmann::json& manifest);
TrainedModel load_model(const std::string& dir);

nlohmann::json to_json(const Head& h, const corpus::LabelSpace& labels);

}  // namespace fewshot::contrastive
