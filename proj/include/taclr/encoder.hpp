#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace taclr {

/// Value prompt variants. `full` is the production template; the others
/// exist for the prompt ablation.
enum class PromptTemplate { value_only, category_value, attribute_value, full };

std::string_view to_string(PromptTemplate t);
/// Accepts the names produced by to_string; throws ConfigError otherwise.
PromptTemplate parse_prompt_template(std::string_view name);

/// "title: {title} description: {description}". Throws ConfigError on an empty title.
std::string render_item_prompt(std::string_view title, std::string_view description);

/// "A {category} with {attribute} being {value}" for the full template. Null
/// entries pass the literal text "null". Throws ConfigError on empty arguments.
std::string render_value_prompt(std::string_view category, std::string_view attribute,
                                std::string_view value_text,
                                PromptTemplate tmpl = PromptTemplate::full);

struct EncoderConfig {
  std::uint32_t hash_buckets = 1u << 16;
  std::vector<int> word_ngrams{1};
  std::vector<int> char_ngrams{3, 4};
  std::size_t embed_dim = 64;
  std::size_t proj_dim = 64;
  std::uint64_t seed = 0;
  PromptTemplate prompt_template = PromptTemplate::full;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Sparse bag of hashed n-gram counts, sorted by bucket index.
struct FeatureBag {
  std::vector<std::uint32_t> index;
  std::vector<std::uint32_t> count;
  std::uint32_t total = 0;

  bool empty() const { return total == 0; }
  bool operator==(const FeatureBag&) const = default;
};

/// Lower-cased words split on ASCII whitespace and punctuation.
std::vector<std::string> tokenize(std::string_view text);

/// Word n-grams hash as FNV-1a("w:" + words joined by ' '), character n-grams
/// (taken inside each word) as FNV-1a("c:" + chars); bucket = hash mod hash_buckets.
FeatureBag featurize(std::string_view text, const EncoderConfig& cfg);

/// Shared encoder parameters. Matrices are row-major:
/// feature_table is hash_buckets x embed_dim, proj_weight is embed_dim x proj_dim.
struct EncoderParams {
  EncoderConfig config;
  std::vector<double> feature_table;
  std::vector<double> proj_weight;
  std::vector<double> proj_bias;

  std::span<const double> table_row(std::uint32_t bucket) const {
    return {feature_table.data() + std::size_t{bucket} * config.embed_dim, config.embed_dim};
  }
  bool all_finite() const;
  bool operator==(const EncoderParams&) const = default;
};

EncoderParams init_encoder(const EncoderConfig& cfg);

using Embedding = std::vector<double>;

/// Forward pass shared by every encode entry point. Writes the pooled input
/// (embed_dim) and pre-normalization projection (proj_dim) into the scratch
/// spans and returns the norm of the projection. `out` receives the unit vector,
/// or the first basis vector when the projection norm is below 1e-12.
template <class Scalar>
Scalar encode_forward(const FeatureBag& bag, const EncoderParams& params, std::span<Scalar> pooled,
                      std::span<Scalar> pre, std::span<Scalar> out) {
  const std::size_t embed = params.config.embed_dim;
  const std::size_t proj = params.config.proj_dim;
  std::fill(pooled.begin(), pooled.end(), Scalar(0));
  if (bag.total > 0) {
    const Scalar inv_total = Scalar(1) / static_cast<Scalar>(bag.total);
    for (std::size_t f = 0; f < bag.index.size(); ++f) {
      const Scalar w = static_cast<Scalar>(bag.count[f]) * inv_total;
      const double* row = params.feature_table.data() + std::size_t{bag.index[f]} * embed;
      for (std::size_t d = 0; d < embed; ++d) pooled[d] += w * static_cast<Scalar>(row[d]);
    }
  }
  for (std::size_t k = 0; k < proj; ++k) pre[k] = static_cast<Scalar>(params.proj_bias[k]);
  for (std::size_t d = 0; d < embed; ++d) {
    const Scalar x = pooled[d];
    const double* wrow = params.proj_weight.data() + d * proj;
    for (std::size_t k = 0; k < proj; ++k) pre[k] += x * static_cast<Scalar>(wrow[k]);
  }
  Scalar sq = 0;
  for (std::size_t k = 0; k < proj; ++k) sq += pre[k] * pre[k];
  const Scalar norm = std::sqrt(sq);
  if (!(norm >= Scalar(1e-12))) {
    std::fill(out.begin(), out.end(), Scalar(0));
    out[0] = Scalar(1);
    return norm;
  }
  for (std::size_t k = 0; k < proj; ++k) out[k] = pre[k] / norm;
  return norm;
}

/// Unit-norm embedding of a feature bag.
Embedding encode(const FeatureBag& bag, const EncoderParams& params);
Embedding encode_text(std::string_view text, const EncoderParams& params);

/// Intermediate values kept for the backward pass.
struct EncodeTrace {
  std::vector<double> pooled;
  std::vector<double> pre;
  double norm = 0.0;
  bool degenerate = false;
  Embedding output;
};

EncodeTrace encode_traced(const FeatureBag& bag, const EncoderParams& params);

/// Number of encode / encode_traced calls made by this process.
std::uint64_t encode_invocations();

/// Parameter gradients. Feature-table rows are stored sparsely since a batch
/// only touches the buckets of its own texts.
class GradientBuffer {
 public:
  explicit GradientBuffer(const EncoderConfig& cfg);

  std::span<double> table_row(std::uint32_t bucket);
  /// Zero span semantics: returns an empty span for untouched rows.
  std::span<const double> find_table_row(std::uint32_t bucket) const;
  const std::vector<std::uint32_t>& touched_rows() const { return touched_; }

  std::vector<double>& proj_weight() { return proj_weight_; }
  std::vector<double>& proj_bias() { return proj_bias_; }
  const std::vector<double>& proj_weight() const { return proj_weight_; }
  const std::vector<double>& proj_bias() const { return proj_bias_; }

  void clear();

 private:
  std::size_t embed_dim_;
  std::unordered_map<std::uint32_t, std::size_t> slot_of_;
  std::vector<std::uint32_t> touched_;
  std::vector<double> rows_;
  std::vector<double> proj_weight_;
  std::vector<double> proj_bias_;
};

/// Accumulates dLoss/dParams given dLoss/dOutput for one traced encode.
void backprop_encode(const FeatureBag& bag, const EncodeTrace& trace, std::span<const double> grad_output,
                     const EncoderParams& params, GradientBuffer& grads);

/// Binary container: magic "TACLRPRM", version byte, u32 header length, JSON
/// config header, then little-endian float64 feature_table, proj_weight, proj_bias.
nlohmann::json encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> serialize_params(const EncoderParams& params);
EncoderParams deserialize_params(std::span<const std::uint8_t> bytes);
void save_params(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);

/// SHA-256 over serialize_params.
std::string params_digest(const EncoderParams& params);

}  // namespace taclr
