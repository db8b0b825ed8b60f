#include "fewshot/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "fewshot/rng.hpp"

namespace fewshot::contrastive {

using encoder::Embedding;
using encoder::EncoderParams;

PairBatch generate_pairs(const corpus::FewShotSample& sample, std::size_t per_instance, std::uint64_t seed) {
  corpus::validate(sample);
  if (per_instance == 0) throw Error("pairs per instance must be at least 1");
  const std::size_t classes = sample.class_count();
  if (classes < 2) throw Error("pair generation needs at least two classes");

  PairBatch batch;
  batch.generation_seed = seed;
  batch.positives_unavailable = sample.shots < 2;
  Rng rng(derive_seed(seed, "contrastive.pairs"));
  for (LabelId c = 0; c < classes; ++c) {
    const auto& members = sample.instances[c];
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!batch.positives_unavailable) {
        for (std::size_t k = 0; k < per_instance; ++k) {
          std::size_t j = rng.below(members.size() - 1);
          if (j >= i) ++j;
          batch.pairs.push_back(Pair{members[i].text, members[j].text, 1});
        }
      }
      for (std::size_t k = 0; k < per_instance; ++k) {
        LabelId other = rng.below(classes - 1);
        if (other >= c) ++other;
        const auto& pool = sample.instances[other];
        batch.pairs.push_back(Pair{members[i].text, pool[rng.below(pool.size())].text, 0});
      }
    }
  }
  return batch;
}

namespace {

// Batch compiled against a compact feature index: only the W columns touched
// by the batch's texts take part in the objective.
class PairObjective {
 public:
  PairObjective(const EncoderParams& p, const PairBatch& batch) : dim_(p.dim()) {
    if (batch.empty()) throw Error("contrastive objective needs a non-empty batch");
    std::unordered_map<std::string_view, std::size_t> text_index;
    std::unordered_map<std::uint32_t, std::size_t> feature_index;
    auto intern = [&](const std::string& t) {
      auto [it, inserted] = text_index.emplace(t, texts_.size());
      if (inserted) {
        auto phi = encoder::featurize(t, p.features);
        Text entry;
        for (std::size_t k = 0; k < phi.indices.size(); ++k) {
          auto [fit, fresh] = feature_index.emplace(phi.indices[k], features_.size());
          if (fresh) features_.push_back(phi.indices[k]);
          entry.features.push_back(fit->second);
          entry.values.push_back(phi.values[k]);
        }
        texts_.push_back(std::move(entry));
      }
      return it->second;
    };
    pairs_.reserve(batch.size());
    for (const auto& pair : batch.pairs) {
      std::size_t a = intern(pair.text_a);
      std::size_t b = intern(pair.text_b);
      pairs_.push_back({a, b, static_cast<double>(pair.target)});
    }
  }

  // Global feature ids, indexed by compact id.
  const std::vector<std::uint32_t>& features() const { return features_; }

  // Loss at p; when `grad` is non-null it receives the compact gradient
  // (features().size() x D).
  double evaluate(const EncoderParams& p, Matrix* grad) const {
    std::vector<Embedding> unit(texts_.size());
    std::vector<double> norms(texts_.size());
    for (std::size_t t = 0; t < texts_.size(); ++t) {
      Embedding u(dim_, 0.0);
      const auto& entry = texts_[t];
      for (std::size_t k = 0; k < entry.features.size(); ++k) {
        auto column = p.projection.row(features_[entry.features[k]]);
        for (std::size_t d = 0; d < dim_; ++d) u[d] += column[d] * entry.values[k];
      }
      double sq = 0;
      for (double x : u) sq += x * x;
      norms[t] = std::sqrt(sq);
      // Overflowed weights: report divergence instead of the e1 fallback.
      if (!std::isfinite(norms[t])) return std::numeric_limits<double>::quiet_NaN();
      encoder::normalize(u);
      unit[t] = std::move(u);
    }

    const double m = static_cast<double>(pairs_.size());
    double loss = 0;
    std::vector<Embedding> text_grad;
    if (grad) text_grad.assign(texts_.size(), Embedding(dim_, 0.0));
    for (const auto& pair : pairs_) {
      const auto& ea = unit[pair.a];
      const auto& eb = unit[pair.b];
      double c = 0;
      for (std::size_t d = 0; d < dim_; ++d) c += ea[d] * eb[d];
      const double residual = c - pair.target;
      loss += residual * residual;
      if (!grad) continue;
      // d cos / d u_a = (e_b - cos * e_a) / |u_a|; zero when u_a fell back to e1.
      const double outer = 2.0 * residual / m;
      if (norms[pair.a] > 0) {
        const double s = outer / norms[pair.a];
        auto& g = text_grad[pair.a];
        for (std::size_t d = 0; d < dim_; ++d) g[d] += s * (eb[d] - c * ea[d]);
      }
      if (norms[pair.b] > 0) {
        const double s = outer / norms[pair.b];
        auto& g = text_grad[pair.b];
        for (std::size_t d = 0; d < dim_; ++d) g[d] += s * (ea[d] - c * eb[d]);
      }
    }
    if (grad) {
      *grad = Matrix(features_.size(), dim_);
      for (std::size_t t = 0; t < texts_.size(); ++t) {
        const auto& entry = texts_[t];
        for (std::size_t k = 0; k < entry.features.size(); ++k) {
          auto row = grad->row(entry.features[k]);
          const double x = entry.values[k];
          for (std::size_t d = 0; d < dim_; ++d) row[d] += x * text_grad[t][d];
        }
      }
    }
    return loss / m;
  }

 private:
  struct Text {
    std::vector<std::size_t> features;
    std::vector<double> values;
  };
  struct IndexedPair {
    std::size_t a;
    std::size_t b;
    double target;
  };

  std::size_t dim_;
  std::vector<Text> texts_;
  std::vector<std::uint32_t> features_;
  std::vector<IndexedPair> pairs_;
};

}  // namespace

double contrastive_loss(const EncoderParams& p, const PairBatch& batch) {
  return PairObjective(p, batch).evaluate(p, nullptr);
}

Matrix contrastive_grad(const EncoderParams& p, const PairBatch& batch) {
  PairObjective objective(p, batch);
  Matrix compact;
  objective.evaluate(p, &compact);
  Matrix full(p.features.dim, p.dim());
  const auto& features = objective.features();
  for (std::size_t k = 0; k < features.size(); ++k) {
    std::copy(compact.row(k).begin(), compact.row(k).end(), full.row(features[k]).begin());
  }
  return full;
}

nlohmann::json to_json(const TrainReport& r) {
  return nlohmann::json{{"loss_trajectory", r.loss_trajectory},
                        {"head_loss_trajectory", r.head_loss_trajectory},
                        {"head_train_accuracy", r.head_train_accuracy},
                        {"hyperparameters", r.hyperparameters},
                        {"seeds", r.seeds}};
}

EncoderTrainResult train_encoder(EncoderParams p, const PairBatch& batch, const EncoderTrainConfig& config,
                                 std::uint64_t seed) {
  if (config.epochs < 1) throw Error("epochs must be at least 1");
  if (!(config.lr > 0) || !std::isfinite(config.lr)) throw Error("learning rate must be positive");
  encoder::validate(p);
  PairObjective objective(p, batch);
  const auto& features = objective.features();

  TrainReport report;
  report.hyperparameters = {{"epochs", config.epochs}, {"lr", config.lr}, {"pairs", batch.size()}};
  report.seeds = {{"train", seed}, {"pairs", batch.generation_seed}};
  Matrix grad;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = objective.evaluate(p, &grad);
    report.loss_trajectory.push_back(loss);
    if (!std::isfinite(loss)) {
      throw DivergenceError(fmt::format("contrastive loss became non-finite at epoch {}", epoch),
                            report.loss_trajectory);
    }
    for (std::size_t k = 0; k < features.size(); ++k) {
      auto column = p.projection.row(features[k]);
      auto g = grad.row(k);
      for (std::size_t d = 0; d < column.size(); ++d) column[d] -= config.lr * g[d];
    }
  }
  const double final_loss = objective.evaluate(p, nullptr);
  report.loss_trajectory.push_back(final_loss);
  if (!std::isfinite(final_loss)) {
    throw DivergenceError("contrastive loss became non-finite after the last epoch", report.loss_trajectory);
  }
  return {std::move(p), std::move(report)};
}

namespace {

std::vector<double> softmax_logits(const Head& h, std::span<const double> x) {
  const std::size_t classes = h.classes();
  std::vector<double> z(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    double s = h.bias[c];
    auto w = h.weights.row(c);
    for (std::size_t d = 0; d < w.size(); ++d) s += w[d] * x[d];
    z[c] = s;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

LabelId argmax_lowest(const std::vector<double>& p) {
  LabelId best = 0;
  for (LabelId c = 1; c < p.size(); ++c) {
    if (p[c] > p[best]) best = c;
  }
  return best;
}

}  // namespace

HeadFit fit_head_on_embeddings(const std::vector<Embedding>& x, const std::vector<LabelId>& y, std::size_t classes,
                               const HeadConfig& config) {
  if (classes < 2) throw Error("classification head needs at least two classes");
  if (x.empty() || x.size() != y.size()) throw Error("head training needs equally many embeddings and labels");
  if (!(config.lr > 0) || !std::isfinite(config.lr)) throw Error("head learning rate must be positive");
  if (!(config.l2 >= 0)) throw Error("l2 strength must be non-negative");
  const std::size_t dim = x.front().size();
  const double n = static_cast<double>(x.size());

  HeadFit fit;
  fit.head.weights = Matrix(classes, dim);
  fit.head.bias.assign(classes, 0.0);
  Matrix grad_w(classes, dim);
  std::vector<double> grad_b(classes);
  const double shrink = 1.0 / (1.0 + 2.0 * config.lr * config.l2);
  for (std::size_t iter = 0; iter < config.iters; ++iter) {
    std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    double loss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto p = softmax_logits(fit.head, x[i]);
      loss -= std::log(std::max(p[y[i]], 1e-300));
      p[y[i]] -= 1.0;
      for (std::size_t c = 0; c < classes; ++c) {
        grad_b[c] += p[c] / n;
        auto g = grad_w.row(c);
        for (std::size_t d = 0; d < dim; ++d) g[d] += p[c] * x[i][d] / n;
      }
    }
    double sq = 0;
    for (double w : fit.head.weights.data()) sq += w * w;
    loss = loss / n + config.l2 * sq;
    fit.loss_trajectory.push_back(loss);
    if (!std::isfinite(loss)) {
      throw DivergenceError(fmt::format("head loss became non-finite at iteration {}", iter), fit.loss_trajectory);
    }
    auto& w = fit.head.weights.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = (w[k] - config.lr * grad_w.data()[k]) * shrink;
    for (std::size_t c = 0; c < classes; ++c) fit.head.bias[c] -= config.lr * grad_b[c];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (predict_embedding(fit.head, x[i]).label == y[i]) ++correct;
  }
  fit.train_accuracy = static_cast<double>(correct) / n;
  return fit;
}

HeadFit fit_head(const encoder::SentenceEncoder& enc, const corpus::FewShotSample& sample, const HeadConfig& config,
                 std::uint64_t /*seed: initialization is deterministic (zeros)*/) {
  corpus::validate(sample);
  if (sample.class_count() < 2) throw Error("classification head needs at least two classes");
  std::vector<std::string> texts;
  std::vector<LabelId> labels;
  for (LabelId c = 0; c < sample.class_count(); ++c) {
    for (const auto& u : sample.instances[c]) {
      texts.push_back(u.text);
      labels.push_back(c);
    }
  }
  return fit_head_on_embeddings(enc.encode_batch(texts), labels, sample.class_count(), config);
}

HeadFit fit_head(const EncoderParams& p, const corpus::FewShotSample& sample, const HeadConfig& config,
                 std::uint64_t seed) {
  return fit_head(encoder::ReferenceEncoder(p), sample, config, seed);
}

HeadPrediction predict_embedding(const Head& h, std::span<const double> embedding) {
  HeadPrediction out;
  out.probabilities = softmax_logits(h, embedding);
  out.label = argmax_lowest(out.probabilities);
  return out;
}

HeadPrediction predict(const encoder::SentenceEncoder& enc, const Head& h, const std::string& text) {
  auto e = enc.encode_batch(std::span<const std::string>(&text, 1));
  return predict_embedding(h, e.front());
}

HeadPrediction predict(const EncoderParams& p, const Head& h, const std::string& text) {
  return predict_embedding(h, encoder::encode(p, text));
}

std::vector<HeadPrediction> predict_batch(const encoder::SentenceEncoder& enc, const Head& h,
                                          std::span<const std::string> texts) {
  std::vector<HeadPrediction> out;
  out.reserve(texts.size());
  for (const auto& e : enc.encode_batch(texts)) out.push_back(predict_embedding(h, e));
  return out;
}

nlohmann::json to_json(const PipelineConfig& c) {
  return nlohmann::json{
      {"embedding_dim", c.embedding_dim},
      {"features", {{"min_n", c.features.min_n}, {"max_n", c.features.max_n}, {"dim", c.features.dim}}},
      {"pairs_per_instance", c.pairs_per_instance},
      {"encoder", {{"epochs", c.encoder.epochs}, {"lr", c.encoder.lr}}},
      {"head", {{"l2", c.head.l2}, {"iters", c.head.iters}, {"lr", c.head.lr}}}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    if (j.contains("features")) {
      const auto& f = j.at("features");
      c.features.min_n = f.value("min_n", c.features.min_n);
      c.features.max_n = f.value("max_n", c.features.max_n);
      c.features.dim = f.value("dim", c.features.dim);
    }
    c.pairs_per_instance = j.value("pairs_per_instance", c.pairs_per_instance);
    if (j.contains("encoder")) {
      c.encoder.epochs = j.at("encoder").value("epochs", c.encoder.epochs);
      c.encoder.lr = j.at("encoder").value("lr", c.encoder.lr);
    }
    if (j.contains("head")) {
      c.head.l2 = j.at("head").value("l2", c.head.l2);
      c.head.iters = j.at("head").value("iters", c.head.iters);
      c.head.lr = j.at("head").value("lr", c.head.lr);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed training configuration: ") + e.what());
  }
  return c;
}

TrainedModel train_pipeline(const corpus::FewShotSample& sample, const PipelineConfig& config, std::uint64_t seed) {
  const auto pair_seed = derive_seed(seed, "pipeline.pairs");
  const auto init_seed = derive_seed(seed, "pipeline.init");
  const auto train_seed = derive_seed(seed, "pipeline.train");
  const auto head_seed = derive_seed(seed, "pipeline.head");

  auto batch = generate_pairs(sample, config.pairs_per_instance, pair_seed);
  auto params = encoder::init_params(config.features, config.embedding_dim, init_seed);
  auto trained = train_encoder(std::move(params), batch, config.encoder, train_seed);
  auto fit = fit_head(trained.params, sample, config.head, head_seed);

  TrainedModel model;
  model.params = std::move(trained.params);
  model.head = std::move(fit.head);
  model.labels = sample.labels;
  model.report = std::move(trained.report);
  model.report.head_train_accuracy = fit.train_accuracy;
  model.report.head_loss_trajectory = std::move(fit.loss_trajectory);
  model.report.hyperparameters = to_json(config);
  model.report.hyperparameters["pairs"] = batch.size();
  model.report.hyperparameters["positives_unavailable"] = batch.positives_unavailable;
  model.report.seeds = {{"seed", seed},       {"pairs", pair_seed}, {"init", init_seed},
                        {"train", train_seed}, {"head", head_seed}};
  model.report.seeds["sample"] = corpus::describe(sample.provenance);
  return model;
}

TrainedModel train_pipeline(const corpus::Dataset& d, std::size_t shots, const PipelineConfig& config,
                            std::uint64_t seed) {
  auto sample = corpus::sample_random(d, shots, derive_seed(seed, "pipeline.sample"));
  return train_pipeline(sample, config, seed);
}

nlohmann::json to_json(const Head& h, const corpus::LabelSpace& labels) {
  nlohmann::json weights = nlohmann::json::array();
  for (std::size_t c = 0; c < h.classes(); ++c) {
    weights.push_back(std::vector<double>(h.weights.row(c).begin(), h.weights.row(c).end()));
  }
  return nlohmann::json{{"version", 1},
                        {"labels", labels.names()},
                        {"classes", h.classes()},
                        {"dim", h.weights.cols()},
                        {"weights", weights},
                        {"bias", h.bias}};
}

void save_model(const TrainedModel& m, const std::string& dir, const nlohmann::json& manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  encoder::save_params(m.params, (fs::path(dir) / "encoder.bin").string());
  auto write_json = [&](const std::string& name, const nlohmann::json& j) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (fs::path(dir) / name).string());
    out << j.dump(2) << '\n';
  };
  write_json("head.json", to_json(m.head, m.labels));
  nlohmann::json full = manifest;
  full["report"] = to_json(m.report);
  write_json("manifest.json", full);
}

TrainedModel load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  TrainedModel m;
  m.params = encoder::load_params((fs::path(dir) / "encoder.bin").string());
  const auto head_path = (fs::path(dir) / "head.json").string();
  std::ifstream in(head_path);
  if (!in) throw IoError("cannot open " + head_path);
  try {
    auto j = nlohmann::json::parse(in);
    m.labels = corpus::LabelSpace(j.at("labels").get<std::vector<std::string>>());
    const auto classes = j.at("classes").get<std::size_t>();
    const auto dim = j.at("dim").get<std::size_t>();
    if (classes != m.labels.size() || dim != m.params.dim()) throw Error(head_path + ": shape mismatch");
    m.head.weights = Matrix(classes, dim);
    const auto& rows = j.at("weights");
    for (std::size_t c = 0; c < classes; ++c) {
      auto values = rows.at(c).get<std::vector<double>>();
      if (values.size() != dim) throw Error(head_path + ": shape mismatch");
      std::copy(values.begin(), values.end(), m.head.weights.row(c).begin());
    }
    m.head.bias = j.at("bias").get<std::vector<double>>();
    if (m.head.bias.size() != classes) throw Error(head_path + ": shape mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw Error(head_path + ": " + e.what());
  }
  return m;
}

}  // namespace fewshot::contrastive
