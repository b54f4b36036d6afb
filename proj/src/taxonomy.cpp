#include "taclr/taxonomy.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "taclr/error.hpp"

namespace taclr {

using json = nlohmann::json;

std::size_t AttributeValues::non_null_count() const {
  std::size_t n = 0;
  for (const auto& v : values) n += v.is_null ? 0 : 1;
  return n;
}

std::size_t AttributeValues::null_row() const {
  for (std::size_t i = values.size(); i-- > 0;) {
    if (values[i].is_null) return i;
  }
  return std::string::npos;
}

std::optional<std::size_t> AttributeValues::row_of(std::string_view value_id) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].value_id == value_id) return i;
  }
  return std::nullopt;
}

std::string Taxonomy::key(std::string_view category, std::string_view attribute) {
  std::string k;
  k.reserve(category.size() + attribute.size() + 1);
  k.append(category);
  k.push_back('\x1f');
  k.append(attribute);
  return k;
}

void Taxonomy::add_pair(std::string category, std::string attribute,
                        const std::vector<std::string>& value_texts) {
  const std::string label = "(" + category + ", " + attribute + ")";
  if (category.empty() || attribute.empty()) {
    throw DataError("empty category or attribute identifier in pair " + label);
  }
  if (value_texts.empty()) throw DataError("pair " + label + " has an empty value list");
  std::unordered_set<std::string_view> seen;
  AttributeValues pair{std::move(category), std::move(attribute), {}};
  pair.values.reserve(value_texts.size() + 1);
  for (const auto& text : value_texts) {
    if (text.empty()) throw DataError("pair " + label + " has an empty value text");
    if (text == kNullValueId) {
      throw DataError("pair " + label + " uses the reserved value id " + std::string(kNullValueId));
    }
    if (!seen.insert(text).second) {
      throw DataError("pair " + label + " has duplicate value text \"" + text + "\"");
    }
    pair.values.push_back({text, text, false});
  }
  pair.values.push_back({std::string(kNullValueId), std::string(kNullValueText), true});
  add_pair_unchecked(std::move(pair));
}

void Taxonomy::add_pair_unchecked(AttributeValues pair) {
  auto k = key(pair.category, pair.attribute);
  if (by_key_.count(k)) {
    throw DataError("duplicate pair (" + pair.category + ", " + pair.attribute + ")");
  }
  const std::size_t index = pairs_.size();
  by_key_.emplace(std::move(k), index);
  auto [it, inserted] = by_category_.try_emplace(pair.category);
  if (inserted) category_order_.push_back(pair.category);
  it->second.push_back(index);
  pairs_.push_back(std::move(pair));
}

std::optional<std::size_t> Taxonomy::find(std::string_view category, std::string_view attribute) const {
  auto it = by_key_.find(key(category, attribute));
  if (it == by_key_.end()) return std::nullopt;
  return it->second;
}

std::size_t Taxonomy::index_of(std::string_view category, std::string_view attribute) const {
  if (auto idx = find(category, attribute)) return *idx;
  throw DataError("unknown pair (" + std::string(category) + ", " + std::string(attribute) + ")");
}

const std::vector<std::size_t>& Taxonomy::pairs_of(std::string_view category) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_category_.find(std::string(category));
  return it == by_category_.end() ? kEmpty : it->second;
}

std::vector<std::string> Taxonomy::categories() const { return category_order_; }

bool Taxonomy::has_category(std::string_view category) const {
  return by_category_.count(std::string(category)) > 0;
}

Taxonomy parse_taxonomy(std::string_view jsonl) {
  Taxonomy taxonomy;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const std::string where = "taxonomy line " + std::to_string(line_no) + ": ";
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + "parse error: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("category") || !obj.contains("attribute") ||
        !obj.contains("values") || obj.size() != 3) {
      throw DataError(where + "expected exactly the fields category, attribute, values");
    }
    if (!obj["category"].is_string() || !obj["attribute"].is_string() || !obj["values"].is_array()) {
      throw DataError(where + "category and attribute must be strings, values an array");
    }
    std::vector<std::string> values;
    for (const auto& v : obj["values"]) {
      if (!v.is_string()) throw DataError(where + "value entries must be strings");
      values.push_back(v.get<std::string>());
    }
    try {
      taxonomy.add_pair(obj["category"].get<std::string>(), obj["attribute"].get<std::string>(), values);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return taxonomy;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open taxonomy file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_taxonomy(buf.str());
}

std::string serialize_taxonomy(const Taxonomy& taxonomy) {
  std::string out;
  for (const auto& pair : taxonomy.pairs()) {
    json values = json::array();
    for (const auto& v : pair.values) {
      if (!v.is_null) values.push_back(v.text);
    }
    json obj{{"category", pair.category}, {"attribute", pair.attribute}, {"values", std::move(values)}};
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

void write_taxonomy(const Taxonomy& taxonomy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write taxonomy file " + path.string());
  out << serialize_taxonomy(taxonomy);
}

std::vector<std::string> validate_taxonomy(const Taxonomy& taxonomy) {
  std::vector<std::string> violations;
  for (const auto& pair : taxonomy.pairs()) {
    const std::string label = "(" + pair.category + ", " + pair.attribute + ")";
    if (pair.category.empty() || pair.attribute.empty()) {
      violations.push_back(label + ": empty category or attribute identifier");
    }
    if (pair.non_null_count() == 0) violations.push_back(label + ": no non-null values");

    std::size_t nulls = 0;
    std::set<std::string_view> texts;
    std::set<std::string_view> ids;
    bool dup_text = false;
    bool dup_id = false;
    bool reserved = false;
    for (const auto& v : pair.values) {
      if (v.is_null) {
        ++nulls;
        if (v.value_id != kNullValueId) reserved = true;
        continue;
      }
      if (v.value_id == kNullValueId) reserved = true;
      dup_text |= !texts.insert(v.text).second;
      dup_id |= !ids.insert(v.value_id).second;
    }
    if (dup_text) violations.push_back(label + ": duplicate value text");
    if (dup_id) violations.push_back(label + ": duplicate value id");
    if (reserved) violations.push_back(label + ": reserved null id misused");
    if (nulls != 1) {
      violations.push_back(label + ": expected exactly one null entry, found " + std::to_string(nulls));
    }
  }
  return violations;
}

std::vector<ValueEntry> candidate_values(const Taxonomy& taxonomy, std::string_view category,
                                         std::string_view attribute, bool include_null) {
  const auto& pair = taxonomy.pair(taxonomy.index_of(category, attribute));
  std::vector<ValueEntry> out;
  out.reserve(pair.values.size());
  for (const auto& v : pair.values) {
    if (!v.is_null) out.push_back(v);
  }
  if (include_null) {
    const std::size_t row = pair.null_row();
    if (row == std::string::npos) throw DataError("pair has no null entry");
    out.push_back(pair.values[row]);
  }
  return out;
}

TaxonomyStats taxonomy_stats(const Taxonomy& taxonomy) {
  TaxonomyStats stats;
  std::unordered_set<std::string_view> attributes;
  for (const auto& pair : taxonomy.pairs()) {
    attributes.insert(pair.attribute);
    stats.n_cav_tuples += pair.non_null_count();
  }
  stats.n_categories = taxonomy.categories().size();
  stats.n_attributes = attributes.size();
  stats.n_ca_pairs = taxonomy.pairs().size();
  return stats;
}

}  // namespace taclr
