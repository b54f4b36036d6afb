#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "taclr/product.hpp"
#include "taclr/taxonomy.hpp"

namespace taclr {

struct KindRates {
  double explicit_mention = 0.152;
  double unnormalized = 0.136;
  double implicit = 0.136;
  double null = 0.576;
};

/// Knobs of the synthetic corpus. Attribute names are drawn from a shared
/// pool (auto-sized when attribute_pool is 0) and every attribute name owns
/// one value vocabulary, so categories sharing an attribute share values.
struct CorpusSpec {
  std::size_t n_categories = 50;
  std::size_t attrs_per_category = 3;
  std::size_t values_min = 30;
  std::size_t values_max = 30;
  std::size_t n_items = 10000;
  KindRates kind_rates;
  std::size_t alias_per_value = 2;
  std::size_t cue_vocab_size = 1024;
  std::size_t attribute_pool = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t resolved_attribute_pool() const;
};

nlohmann::json spec_to_json(const CorpusSpec& spec);
/// values_per_attribute may be a count or a [min, max] pair; missing fields keep defaults.
CorpusSpec spec_from_json(const nlohmann::json& j);

struct GeneratedDataset {
  Taxonomy taxonomy;
  std::vector<ProductItem> items;
  std::map<std::string, std::vector<std::string>> alias_map;
  std::map<std::string, std::string> cue_map;
};

Taxonomy gen_taxonomy(const CorpusSpec& spec);
/// Items for a taxonomy produced by gen_taxonomy(spec).
GeneratedDataset gen_items(const CorpusSpec& spec, const Taxonomy& taxonomy);
GeneratedDataset generate_corpus(const CorpusSpec& spec);

/// Full scan of the surface-form rules each kind tag promises; returns one
/// line per violating (item, attribute).
std::vector<std::string> check_kind_faithfulness(const GeneratedDataset& ds);

enum class SplitMode { random, cross_category, cross_value };
std::string_view to_string(SplitMode m);
SplitMode parse_split_mode(std::string_view name);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct CrossValueOptions {
  /// Share of attribute names whose values get held out.
  double attribute_fraction = 0.5;
  /// Share of each designated attribute's vocabulary held out of training.
  double value_fraction = 0.3;
};

struct DatasetSplits {
  std::vector<ProductItem> train;
  std::vector<ProductItem> valid;
  std::vector<ProductItem> test;
  /// cross_value only: attribute -> values never seen in train labels.
  std::map<std::string, std::set<std::string>> held_values;
};

/// random: item-level shuffle. cross_category: disjoint category sets.
/// cross_value: test items carry only held-out (or empty) labels on the
/// designated attributes, and no train item carries a held-out value.
/// Throws ConfigError on bad ratios and DataError when infeasible.
DatasetSplits make_splits(const GeneratedDataset& ds, SplitMode mode, SplitRatios ratios, std::uint64_t seed,
                          const CrossValueOptions& cross_value = {});

std::vector<ProductItem> read_dataset(const std::filesystem::path& path, bool strict = true);
std::vector<ProductItem> parse_dataset(std::string_view jsonl, bool strict = true);
std::string serialize_dataset(const std::vector<ProductItem>& items);
void write_dataset(const std::vector<ProductItem>& items, const std::filesystem::path& path);

/// taxonomy.jsonl, items.jsonl, alias_map.json, cue_map.json under `dir`.
void write_generated(const GeneratedDataset& ds, const std::filesystem::path& dir);

}  // namespace taclr
