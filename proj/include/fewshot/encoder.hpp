#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fewshot/error.hpp"
#include "fewshot/matrix.hpp"

namespace fewshot::encoder {

using Embedding = std::vector<double>;

struct FeaturizerConfig {
  int min_n = 3;
  int max_n = 5;
  std::size_t dim = std::size_t{1} << 18;

  friend bool operator==(const FeaturizerConfig&, const FeaturizerConfig&) = default;
};

// Sparse count vector; indices strictly increasing, values > 0.
struct FeatureVector {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  std::size_t dim = 0;

  bool empty() const { return indices.empty(); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// Hashed character n-gram counts. The text is trimmed and ASCII-lowercased,
// wrapped in '^' ... '$' boundary markers, and every n-gram for n in
// [min_n, max_n] is hashed with FNV-1a modulo dim. Texts that are empty after
// trimming give an empty vector.
FeatureVector featurize(std::string_view text, const FeaturizerConfig& config);

// The n-gram strings featurize() hashes, in order of appearance.
std::vector<std::string> ngrams(std::string_view text, int min_n, int max_n);

// Trainable linear encoder state. Conceptually W is D x F; it is stored
// transposed (F x D) so each feature's column is contiguous.
struct EncoderParams {
  FeaturizerConfig features;
  Matrix projection;  // features.dim rows, dim() columns

  std::size_t dim() const { return projection.cols(); }
  double weight(std::size_t d, std::size_t f) const { return projection(f, d); }
  double& weight(std::size_t d, std::size_t f) { return projection(f, d); }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

// Entries i.i.d. uniform(-1/sqrt(F), 1/sqrt(F)). Throws Error when dim < 2.
EncoderParams init_params(const FeaturizerConfig& features, std::size_t dim, std::uint64_t seed);

// Throws Error if any entry is non-finite or the shape is invalid.
void validate(const EncoderParams& p);

// u = W * phi, before normalization. Throws Error if a touched column holds a
// non-finite value.
Embedding project(const EncoderParams& p, const FeatureVector& phi);

// L2-normalizes in place. A zero vector becomes the fallback e1 = (1, 0, ..., 0);
// returns false in that case.
bool normalize(Embedding& v);

Embedding encode(const EncoderParams& p, std::string_view text);
std::vector<Embedding> encode_batch(const EncoderParams& p, std::span<const std::string> texts);

double cosine(std::span<const double> a, std::span<const double> b);

// Binary layout, little-endian: magic "FSENCv01", u32 version, u32 min_n,
// u32 max_n, u64 F, u64 D, then D*F f64 values of W in row-major (D x F) order.
void save_params(const EncoderParams& p, const std::string& path);
EncoderParams load_params(const std::string& path);

// Anything that maps texts to fixed-dimension unit vectors deterministically.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<Embedding> encode_batch(std::span<const std::string> texts) const = 0;
  virtual std::string name() const = 0;
};

// Non-owning view of EncoderParams as a SentenceEncoder.
class ReferenceEncoder final : public SentenceEncoder {
 public:
  explicit ReferenceEncoder(const EncoderParams& params) : params_(&params) {}
  std::size_t dimension() const override { return params_->dim(); }
  std::vector<Embedding> encode_batch(std::span<const std::string> texts) const override;
  std::string name() const override { return "reference-char-ngram"; }

 private:
  const EncoderParams* params_;
};

// Plug-in for externally computed embeddings (for example a pretrained
// sentence-transformer run offline). Reads JSONL lines {"text": ..., "embedding": [...]}
// and serves them normalized. Unknown texts are errors.
class PrecomputedEncoder final : public SentenceEncoder {
 public:
  static PrecomputedEncoder load(const std::string& path);
  void add(std::string text, Embedding embedding);

  std::size_t dimension() const override { return dim_; }
  std::vector<Embedding> encode_batch(std::span<const std::string> texts) const override;
  std::string name() const override { return "precomputed"; }
  std::size_t size() const { return table_.size(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Embedding> table_;
};

}  // namespace fewshot::encoder
