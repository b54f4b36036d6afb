#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "taclr/encoder.hpp"
#include "taclr/product.hpp"
#include "taclr/taxonomy.hpp"

namespace taclr {

/// Precomputed value embeddings of one category-attribute pair. Rows follow
/// candidate_values order with the null row last.
struct IndexGroup {
  std::string category;
  std::string attribute;
  std::vector<std::string> row_ids;
  std::vector<double> rows;  // row_ids.size() x proj_dim, row-major

  std::size_t size() const { return row_ids.size(); }
  std::size_t null_row() const { return row_ids.size() - 1; }
  bool operator==(const IndexGroup&) const = default;
};

class ValueIndex {
 public:
  ValueIndex() = default;
  ValueIndex(std::string params_digest, std::size_t proj_dim, PromptTemplate tmpl, std::vector<IndexGroup> groups);

  const std::string& params_digest() const { return params_digest_; }
  std::size_t proj_dim() const { return proj_dim_; }
  PromptTemplate prompt_template() const { return template_; }
  const std::vector<IndexGroup>& groups() const { return groups_; }

  const IndexGroup* find(std::string_view category, std::string_view attribute) const;
  /// Group indices of a category in taxonomy order.
  const std::vector<std::size_t>& groups_of(std::string_view category) const;

  bool operator==(const ValueIndex& other) const {
    return params_digest_ == other.params_digest_ && proj_dim_ == other.proj_dim_ && template_ == other.template_ &&
           groups_ == other.groups_;
  }

 private:
  std::string params_digest_;
  std::size_t proj_dim_ = 0;
  PromptTemplate template_ = PromptTemplate::full;
  std::vector<IndexGroup> groups_;
  std::unordered_map<std::string, std::size_t> by_key_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_category_;
};

/// Encodes every value prompt of the taxonomy (null included, text "null").
ValueIndex build_index(const Taxonomy& taxonomy, const EncoderParams& params);

/// Container: magic "TACLRIDX", version byte, u32 header length, JSON header
/// (params_digest, proj_dim, prompt_template, pair directory with row ids),
/// then each group's float64 rows in directory order.
std::vector<std::uint8_t> serialize_index(const ValueIndex& index);
ValueIndex deserialize_index(std::span<const std::uint8_t> bytes);
void save_index(const ValueIndex& index, const std::filesystem::path& path);
ValueIndex load_index(const std::filesystem::path& path);

/// Decision for one attribute. `value` is empty for the null marker.
struct AttributePrediction {
  std::string attribute;
  std::optional<std::string> value;
  double score = 0.0;
  double null_score = 0.0;
  std::vector<std::pair<std::string, double>> runners_up;
};

struct Prediction {
  std::string item_id;
  std::vector<AttributePrediction> attributes;

  const AttributePrediction* find(std::string_view attribute) const;
};

/// Decision of the argmax over values and null. `row` is empty when null
/// wins; value ties go to the lowest row and a value must beat null strictly.
struct Top1Decision {
  std::optional<std::size_t> row;
  double score = 0.0;
  double null_score = 0.0;
};

/// `scores` holds value scores followed by the null score.
Top1Decision decide_top1(std::span<const double> scores);
/// Rows scoring strictly above the null score, best first (ties by row), at most k.
std::vector<std::size_t> decide_set(std::span<const double> scores, std::size_t k);
/// Argmax over the non-null rows if it beats `threshold` strictly.
Top1Decision decide_static(std::span<const double> scores, double threshold);

/// Online inference against a frozen index and the params that built it.
/// Construction fails fast (DataError) when the index is stale.
class Retriever {
 public:
  Retriever(const ValueIndex& index, const EncoderParams& params);

  /// Item embedding dotted with every row of each of the category's groups.
  /// Encodes the item exactly once.
  std::vector<std::vector<double>> score(const ProductItem& item) const;

  Prediction predict_top1(const ProductItem& item, std::size_t runners_up = 0) const;
  std::map<std::string, std::vector<std::string>> predict_set(const ProductItem& item, std::size_t k) const;
  Prediction predict_with_static_threshold(const ProductItem& item, double threshold) const;

  const ValueIndex& index() const { return *index_; }

 private:
  const std::vector<std::size_t>& groups_for(const ProductItem& item) const;

  const ValueIndex* index_;
  const EncoderParams* params_;
};

Prediction predict_top1(const ProductItem& item, const ValueIndex& index, const EncoderParams& params);
std::map<std::string, std::vector<std::string>> predict_set(const ProductItem& item, const ValueIndex& index,
                                                            const EncoderParams& params, std::size_t k);
Prediction predict_with_static_threshold(const ProductItem& item, const ValueIndex& index,
                                         const EncoderParams& params, double threshold);

/// Predictions JSONL record:
/// {"item_id":..., "predictions": {attr: {"value": id|null, "score": s, "null_score": t}}}
nlohmann::json prediction_to_json(const Prediction& prediction);
Prediction prediction_from_json(const nlohmann::json& j);

}  // namespace taclr
