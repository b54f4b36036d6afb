#include "taclr/product.hpp"

#include "taclr/error.hpp"

namespace taclr {

using json = nlohmann::json;

std::string_view to_string(ValueKind kind) {
  switch (kind) {
    case ValueKind::explicit_mention: return "explicit";
    case ValueKind::unnormalized: return "unnormalized";
    case ValueKind::implicit: return "implicit";
    case ValueKind::null: return "null";
  }
  return "null";
}

std::optional<ValueKind> parse_value_kind(std::string_view name) {
  for (auto k : {ValueKind::explicit_mention, ValueKind::unnormalized, ValueKind::implicit, ValueKind::null}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

const std::set<std::string>& ProductItem::label_of(const std::string& attribute) const {
  static const std::set<std::string> kEmpty;
  auto it = labels.find(attribute);
  return it == labels.end() ? kEmpty : it->second;
}

void validate_item(const ProductItem& item, const Taxonomy& taxonomy) {
  const std::string who = "item " + item.item_id + ": ";
  if (item.item_id.empty()) throw DataError("item with empty item_id");
  if (item.title.empty()) throw DataError(who + "empty title");
  if (!taxonomy.has_category(item.category)) throw DataError(who + "unknown category " + item.category);
  for (const auto& [attribute, values] : item.labels) {
    auto idx = taxonomy.find(item.category, attribute);
    if (!idx) throw DataError(who + "attribute " + attribute + " not in category " + item.category);
    const auto& pair = taxonomy.pair(*idx);
    for (const auto& id : values) {
      if (id == kNullValueId) throw DataError(who + "labels must not contain the null id");
      if (!pair.row_of(id)) throw DataError(who + "unknown value " + id + " for attribute " + attribute);
    }
  }
  for (const auto& [attribute, kind] : item.kinds) {
    if (!taxonomy.find(item.category, attribute)) {
      throw DataError(who + "kind tag for unknown attribute " + attribute);
    }
  }
}

json item_to_json(const ProductItem& item) {
  json labels = json::object();
  for (const auto& [attribute, values] : item.labels) labels[attribute] = values;
  json j = item.extra.is_object() ? item.extra : json::object();
  j["item_id"] = item.item_id;
  j["category"] = item.category;
  j["title"] = item.title;
  j["description"] = item.description;
  j["labels"] = std::move(labels);
  if (!item.kinds.empty()) {
    json kinds = json::object();
    for (const auto& [attribute, kind] : item.kinds) kinds[attribute] = std::string(to_string(kind));
    j["kinds"] = std::move(kinds);
  }
  return j;
}

ProductItem item_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw DataError("item must be a JSON object");
  ProductItem item;
  auto str = [&j](const char* field, bool required) -> std::string {
    if (!j.contains(field)) {
      if (required) throw DataError(std::string("missing field ") + field);
      return {};
    }
    if (!j[field].is_string()) throw DataError(std::string("field ") + field + " must be a string");
    return j[field].get<std::string>();
  };
  item.item_id = str("item_id", true);
  item.category = str("category", true);
  item.title = str("title", true);
  item.description = str("description", false);

  if (j.contains("labels")) {
    const auto& labels = j["labels"];
    if (!labels.is_object()) throw DataError("labels must be an object");
    for (const auto& [attribute, values] : labels.items()) {
      if (!values.is_array()) throw DataError("labels." + attribute + " must be an array");
      auto& set = item.labels[attribute];
      for (const auto& v : values) {
        if (!v.is_string()) throw DataError("labels." + attribute + " entries must be strings");
        set.insert(v.get<std::string>());
      }
    }
  }
  if (j.contains("kinds")) {
    const auto& kinds = j["kinds"];
    if (!kinds.is_object()) throw DataError("kinds must be an object");
    for (const auto& [attribute, kind] : kinds.items()) {
      if (!kind.is_string()) throw DataError("kinds." + attribute + " must be a string");
      auto parsed = parse_value_kind(kind.get<std::string>());
      if (!parsed) throw DataError("unknown kind " + kind.get<std::string>());
      item.kinds[attribute] = *parsed;
    }
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "item_id" || key == "category" || key == "title" || key == "description" || key == "labels" ||
        key == "kinds") {
      continue;
    }
    if (strict) throw DataError("unknown field " + key);
    item.extra[key] = value;
  }
  return item;
}

}  // namespace taclr
