#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taclr/taxonomy.hpp"

namespace taclr {

/// How a ground-truth value surfaces in the product profile.
enum class ValueKind { explicit_mention, unnormalized, implicit, null };

std::string_view to_string(ValueKind kind);
std::optional<ValueKind> parse_value_kind(std::string_view name);

struct ProductItem {
  std::string item_id;
  std::string category;
  std::string title;
  std::string description;
  /// attribute -> ground-truth value ids. An empty set (or an absent
  /// attribute) means the value is null.
  std::map<std::string, std::set<std::string>> labels;
  std::map<std::string, ValueKind> kinds;
  /// Unknown input fields kept when reading non-strictly.
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const ProductItem&) const = default;

  /// Ground truth for an attribute; empty when unlabeled.
  const std::set<std::string>& label_of(const std::string& attribute) const;
};

/// Throws DataError naming the item and the broken rule.
void validate_item(const ProductItem& item, const Taxonomy& taxonomy);

nlohmann::json item_to_json(const ProductItem& item);
/// Throws DataError on schema violations. Unknown fields are rejected when
/// `strict`, otherwise kept in ProductItem::extra.
ProductItem item_from_json(const nlohmann::json& j, bool strict = true);

}  // namespace taclr
