#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace taclr {

inline constexpr std::string_view kNullValueId = "__null__";
inline constexpr std::string_view kNullValueText = "null";

struct ValueEntry {
  std::string value_id;
  std::string text;
  bool is_null = false;

  bool operator==(const ValueEntry&) const = default;
};

/// One category-attribute pair and its candidate values. When built through
/// Taxonomy::add_pair the synthesized null entry is always last.
struct AttributeValues {
  std::string category;
  std::string attribute;
  std::vector<ValueEntry> values;

  bool operator==(const AttributeValues&) const = default;

  std::size_t non_null_count() const;
  /// Row of the null entry, or npos if the pair has none.
  std::size_t null_row() const;
  std::optional<std::size_t> row_of(std::string_view value_id) const;
};

struct TaxonomyStats {
  std::size_t n_categories = 0;
  std::size_t n_attributes = 0;
  std::size_t n_ca_pairs = 0;
  std::size_t n_cav_tuples = 0;

  bool operator==(const TaxonomyStats&) const = default;
};

/// Category -> attribute -> normalized values. Pairs keep insertion order,
/// which fixes the ordering used by sampling and indexing.
class Taxonomy {
 public:
  /// Appends a pair, synthesizing the trailing null entry. Throws DataError
  /// on duplicate pairs, duplicate value texts, empty lists, empty ids or
  /// use of the reserved null id.
  void add_pair(std::string category, std::string attribute, const std::vector<std::string>& value_texts);

  /// Appends a pair verbatim with no checks beyond key uniqueness. Lets
  /// callers build invalid taxonomies for validate_taxonomy.
  void add_pair_unchecked(AttributeValues pair);

  const std::vector<AttributeValues>& pairs() const { return pairs_; }
  bool empty() const { return pairs_.empty(); }

  std::optional<std::size_t> find(std::string_view category, std::string_view attribute) const;
  /// Throws DataError for unknown pairs.
  std::size_t index_of(std::string_view category, std::string_view attribute) const;
  const AttributeValues& pair(std::size_t index) const { return pairs_.at(index); }

  /// Pair indices belonging to a category, in insertion order.
  const std::vector<std::size_t>& pairs_of(std::string_view category) const;
  std::vector<std::string> categories() const;
  bool has_category(std::string_view category) const;

  bool operator==(const Taxonomy& other) const { return pairs_ == other.pairs_; }

 private:
  static std::string key(std::string_view category, std::string_view attribute);

  std::vector<AttributeValues> pairs_;
  std::unordered_map<std::string, std::size_t> by_key_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_category_;
  std::vector<std::string> category_order_;
};

/// Reads taxonomy JSONL: one {"category","attribute","values"} object per line.
/// Errors carry the 1-based line number.
Taxonomy load_taxonomy(const std::filesystem::path& path);
Taxonomy parse_taxonomy(std::string_view jsonl);

/// Inverse of load_taxonomy; the synthesized null entries are not written.
std::string serialize_taxonomy(const Taxonomy& taxonomy);
void write_taxonomy(const Taxonomy& taxonomy, const std::filesystem::path& path);

/// Human-readable rule violations, empty when every invariant holds.
std::vector<std::string> validate_taxonomy(const Taxonomy& taxonomy);

std::vector<ValueEntry> candidate_values(const Taxonomy& taxonomy, std::string_view category,
                                         std::string_view attribute, bool include_null);

TaxonomyStats taxonomy_stats(const Taxonomy& taxonomy);

}  // namespace taclr
