#include "fewshot/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fewshot/hash.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/text.hpp"

namespace fewshot::encoder {

std::vector<std::string> ngrams(std::string_view input, int min_n, int max_n) {
  std::vector<std::string> out;
  auto trimmed = text::trim(input);
  if (trimmed.empty()) return out;
  std::string padded = "^" + text::to_lower(trimmed) + "$";
  auto chars = text::utf8_chars(padded);
  for (int n = min_n; n <= max_n; ++n) {
    if (n <= 0 || static_cast<std::size_t>(n) > chars.size()) continue;
    for (std::size_t i = 0; i + n <= chars.size(); ++i) {
      std::string gram;
      for (std::size_t k = i; k < i + n; ++k) gram.append(chars[k]);
      out.push_back(std::move(gram));
    }
  }
  return out;
}

FeatureVector featurize(std::string_view input, const FeaturizerConfig& config) {
  std::map<std::uint32_t, double> counts;
  for (const auto& gram : ngrams(input, config.min_n, config.max_n)) {
    counts[static_cast<std::uint32_t>(fnv1a64(gram) % config.dim)] += 1.0;
  }
  FeatureVector v;
  v.dim = config.dim;
  v.indices.reserve(counts.size());
  v.values.reserve(counts.size());
  for (const auto& [index, count] : counts) {
    v.indices.push_back(index);
    v.values.push_back(count);
  }
  return v;
}

EncoderParams init_params(const FeaturizerConfig& features, std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw Error("embedding dimension must be at least 2");
  if (features.dim == 0 || features.dim > (std::size_t{1} << 32)) throw Error("feature dimension out of range");
  if (features.min_n < 1 || features.max_n < features.min_n) throw Error("invalid n-gram range");
  EncoderParams p;
  p.features = features;
  p.projection = Matrix(features.dim, dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(features.dim));
  Rng rng(derive_seed(seed, "encoder.init"));
  for (double& w : p.projection.data()) w = rng.uniform(-bound, bound);
  return p;
}

void validate(const EncoderParams& p) {
  if (p.dim() < 2) throw Error("embedding dimension must be at least 2");
  if (p.projection.rows() != p.features.dim) throw Error("projection rows do not match the feature dimension");
  for (double w : p.projection.data()) {
    if (!std::isfinite(w)) throw Error("encoder parameters contain a non-finite value");
  }
}

Embedding project(const EncoderParams& p, const FeatureVector& phi) {
  Embedding u(p.dim(), 0.0);
  for (std::size_t k = 0; k < phi.indices.size(); ++k) {
    auto column = p.projection.row(phi.indices[k]);
    const double x = phi.values[k];
    for (std::size_t d = 0; d < u.size(); ++d) {
      if (!std::isfinite(column[d])) throw Error("encoder parameters contain a non-finite value");
      u[d] += column[d] * x;
    }
  }
  return u;
}

bool normalize(Embedding& v) {
  double sq = 0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm == 0.0 || !std::isfinite(norm)) {
    std::fill(v.begin(), v.end(), 0.0);
    if (!v.empty()) v[0] = 1.0;
    return false;
  }
  for (double& x : v) x /= norm;
  return true;
}

Embedding encode(const EncoderParams& p, std::string_view input) {
  Embedding e = project(p, featurize(input, p.features));
  normalize(e);
  return e;
}

std::vector<Embedding> encode_batch(const EncoderParams& p, std::span<const std::string> texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(p, t));
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

namespace {

constexpr char kMagic[8] = {'F', 'S', 'E', 'N', 'C', 'v', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw IoError("truncated encoder parameter file " + path);
  return value;
}

}  // namespace

void save_params(const EncoderParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.features.min_n));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(p.features.max_n));
  put<std::uint64_t>(out, p.features.dim);
  put<std::uint64_t>(out, p.dim());
  std::vector<double> row(p.features.dim);
  for (std::size_t d = 0; d < p.dim(); ++d) {
    for (std::size_t f = 0; f < p.features.dim; ++f) row[f] = p.weight(d, f);
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path);
}

EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(path + " is not an encoder parameter file");
  auto version = get<std::uint32_t>(in, path);
  if (version != kFormatVersion) throw Error(fmt::format("{}: unsupported format version {}", path, version));
  EncoderParams p;
  p.features.min_n = static_cast<int>(get<std::uint32_t>(in, path));
  p.features.max_n = static_cast<int>(get<std::uint32_t>(in, path));
  p.features.dim = get<std::uint64_t>(in, path);
  auto dim = get<std::uint64_t>(in, path);
  if (dim < 2 || p.features.dim == 0 || p.features.dim > (std::uint64_t{1} << 32)) {
    throw Error(path + ": invalid shape");
  }
  p.projection = Matrix(p.features.dim, dim);
  std::vector<double> row(p.features.dim);
  for (std::size_t d = 0; d < dim; ++d) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw IoError("truncated encoder parameter file " + path);
    for (std::size_t f = 0; f < p.features.dim; ++f) p.weight(d, f) = row[f];
  }
  validate(p);
  return p;
}

std::vector<Embedding> ReferenceEncoder::encode_batch(std::span<const std::string> texts) const {
  return encoder::encode_batch(*params_, texts);
}

void PrecomputedEncoder::add(std::string text, Embedding embedding) {
  if (embedding.empty()) throw Error("empty embedding");
  if (dim_ == 0) dim_ = embedding.size();
  if (embedding.size() != dim_) {
    throw Error(fmt::format("embedding dimension {} differs from {}", embedding.size(), dim_));
  }
  for (double x : embedding) {
    if (!std::isfinite(x)) throw Error("embedding contains a non-finite value");
  }
  normalize(embedding);
  table_.insert_or_assign(std::move(text), std::move(embedding));
}

PrecomputedEncoder PrecomputedEncoder::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  PrecomputedEncoder enc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      enc.add(j.at("text").get<std::string>(), j.at("embedding").get<Embedding>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
  }
  return enc;
}

std::vector<Embedding> PrecomputedEncoder::encode_batch(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto it = table_.find(t);
    if (it == table_.end()) throw Error(fmt::format("no precomputed embedding for text '{}'", t));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace fewshot::encoder
