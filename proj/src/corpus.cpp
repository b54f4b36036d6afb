#include "taclr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "taclr/encoder.hpp"
#include "taclr/error.hpp"

namespace taclr {

using json = nlohmann::json;

namespace {

using Rng = std::mt19937_64;

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> kWords = {
      "new",     "used",   "good",    "condition", "original", "box",     "sale",    "fast",   "shipping",
      "genuine", "great",  "price",   "free",      "warranty", "mint",    "like",    "deal",   "authentic",
      "bundle",  "offer",  "rare",    "classic",   "vintage",  "premium", "stock",   "ready",  "local",
      "pickup",  "clean",  "works",   "perfect",   "tested",   "sealed",  "spare",   "gift",   "quick",
      "selling", "moving", "barely",  "light",     "home",     "kept",    "nice",    "solid",  "cheap",
      "owner",   "only",   "with",    "includes",  "accessories"};
  return kWords;
}

/// Draws pronounceable CV-syllable words that are not in `used`, adding them.
class WordForge {
 public:
  explicit WordForge(std::uint64_t seed) : rng_(seed) {
    for (const auto& w : filler_words()) used_.insert(w);
  }

  std::string syllables(std::size_t n, std::string_view suffix = {}) {
    for (;;) {
      std::string w;
      for (std::size_t i = 0; i < n; ++i) {
        w.push_back(kConsonants[pick(kConsonants.size())]);
        w.push_back(kVowels[pick(kVowels.size())]);
      }
      w.append(suffix);
      if (used_.insert(w).second) return w;
    }
  }

  std::string model_code() {
    for (;;) {
      std::string w = syllables_raw(2);
      w += std::to_string(10 + pick(90));
      if (used_.insert(w).second) return w;
    }
  }

  bool claim(const std::string& w) { return used_.insert(w).second; }
  Rng& rng() { return rng_; }

 private:
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  std::string syllables_raw(std::size_t n) {
    std::string w;
    for (std::size_t i = 0; i < n; ++i) {
      w.push_back(kConsonants[pick(kConsonants.size())]);
      w.push_back(kVowels[pick(kVowels.size())]);
    }
    return w;
  }

  Rng rng_;
  std::unordered_set<std::string> used_;
};

/// Deterministic lexical corruptions: a vowel drop, a digit fused into the
/// middle, a capitalized truncation, then digit suffixes.
std::vector<std::string> alias_candidates(const std::string& value, std::size_t n) {
  std::vector<std::string> out;
  {
    std::string a = value;
    for (std::size_t i = a.size(); i-- > 1;) {
      if (kVowels.find(a[i]) != std::string_view::npos && i + 1 < a.size()) {
        a.erase(i, 1);
        break;
      }
    }
    out.push_back(a);
  }
  {
    std::string a = value;
    a.insert(a.size() / 2, std::to_string(value.size() % 10));
    out.push_back(a);
  }
  {
    std::string a = value.substr(0, std::max<std::size_t>(3, value.size() - 1));
    a[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(a[0])));
    out.push_back(a);
  }
  for (std::size_t i = 0; out.size() < n; ++i) out.push_back(value + std::to_string(i + 2));
  out.resize(n);
  return out;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

struct SurfaceForms {
  std::map<std::string, std::vector<std::string>> aliases;
  std::map<std::string, std::string> cues;
};

/// Aliases and cue tokens for every distinct value text of the taxonomy,
/// derived from the spec seed and the taxonomy alone.
SurfaceForms derive_surface_forms(const CorpusSpec& spec, const Taxonomy& taxonomy) {
  std::set<std::string> value_texts;
  std::unordered_set<std::string> taken;
  for (const auto& pair : taxonomy.pairs()) {
    taken.insert(lower(pair.category));
    taken.insert(lower(pair.attribute));
    for (const auto& v : pair.values) {
      if (v.is_null) continue;
      value_texts.insert(v.text);
      taken.insert(lower(v.text));
    }
  }
  for (const auto& w : filler_words()) taken.insert(w);

  SurfaceForms forms;
  for (const auto& text : value_texts) {
    auto& list = forms.aliases[text];
    std::size_t bump = 0;
    for (auto cand : alias_candidates(text, spec.alias_per_value)) {
      while (!taken.insert(lower(cand)).second) cand += std::to_string(++bump % 10);
      list.push_back(cand);
    }
  }

  if (spec.cue_vocab_size < value_texts.size()) {
    throw ConfigError("cue_vocab_size " + std::to_string(spec.cue_vocab_size) + " is smaller than the " +
                      std::to_string(value_texts.size()) + " distinct values needing a cue");
  }
  WordForge forge(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& w : taken) forge.claim(w);
  std::vector<std::string> cue_pool;
  for (std::size_t i = 0; i < spec.cue_vocab_size; ++i) cue_pool.push_back(forge.model_code());
  std::shuffle(cue_pool.begin(), cue_pool.end(), forge.rng());
  std::size_t next = 0;
  for (const auto& text : value_texts) forms.cues[text] = cue_pool[next++];
  return forms;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  if (n_categories < 1 || attrs_per_category < 1 || values_min < 1 || n_items < 1 || alias_per_value < 1 ||
      cue_vocab_size < 1) {
    throw ConfigError("corpus counts must be >= 1");
  }
  if (values_max < values_min) throw ConfigError("values_max must be >= values_min");
  const double rates[] = {kind_rates.explicit_mention, kind_rates.unnormalized, kind_rates.implicit,
                          kind_rates.null};
  double sum = 0.0;
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("kind rates must lie in [0, 1]");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("kind rates must sum to 1");
  if (attribute_pool != 0 && attribute_pool < attrs_per_category) {
    throw ConfigError("attribute_pool must be >= attrs_per_category");
  }
}

std::size_t CorpusSpec::resolved_attribute_pool() const {
  if (attribute_pool != 0) return attribute_pool;
  const std::size_t shared = (n_categories * attrs_per_category + 9) / 10;
  return std::max(attrs_per_category, shared);
}

json spec_to_json(const CorpusSpec& s) {
  return {{"n_categories", s.n_categories},
          {"attrs_per_category", s.attrs_per_category},
          {"values_per_attribute", json::array({s.values_min, s.values_max})},
          {"n_items", s.n_items},
          {"kind_rates",
           {{"explicit", s.kind_rates.explicit_mention},
            {"unnormalized", s.kind_rates.unnormalized},
            {"implicit", s.kind_rates.implicit},
            {"null", s.kind_rates.null}}},
          {"alias_per_value", s.alias_per_value},
          {"cue_vocab_size", s.cue_vocab_size},
          {"attribute_pool", s.attribute_pool},
          {"seed", s.seed}};
}

CorpusSpec spec_from_json(const json& j) {
  CorpusSpec s;
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_categories", s.n_categories);
    get("attrs_per_category", s.attrs_per_category);
    if (j.contains("values_per_attribute")) {
      const auto& v = j.at("values_per_attribute");
      if (v.is_array()) {
        s.values_min = v.at(0).get<std::size_t>();
        s.values_max = v.at(1).get<std::size_t>();
      } else {
        s.values_min = s.values_max = v.get<std::size_t>();
      }
    }
    get("n_items", s.n_items);
    if (j.contains("kind_rates")) {
      const auto& r = j.at("kind_rates");
      s.kind_rates.explicit_mention = r.value("explicit", s.kind_rates.explicit_mention);
      s.kind_rates.unnormalized = r.value("unnormalized", s.kind_rates.unnormalized);
      s.kind_rates.implicit = r.value("implicit", s.kind_rates.implicit);
      s.kind_rates.null = r.value("null", s.kind_rates.null);
    }
    get("alias_per_value", s.alias_per_value);
    get("cue_vocab_size", s.cue_vocab_size);
    get("attribute_pool", s.attribute_pool);
    get("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad corpus spec: ") + e.what());
  }
  s.validate();
  return s;
}

Taxonomy gen_taxonomy(const CorpusSpec& spec) {
  spec.validate();
  WordForge forge(spec.seed);
  Rng& rng = forge.rng();

  const std::size_t pool = spec.resolved_attribute_pool();
  std::vector<std::string> attribute_names;
  std::vector<std::vector<std::string>> vocab(pool);
  for (std::size_t a = 0; a < pool; ++a) attribute_names.push_back(forge.syllables(2));
  for (std::size_t a = 0; a < pool; ++a) {
    for (std::size_t v = 0; v < spec.values_max; ++v) vocab[a].push_back(forge.syllables(3));
  }

  Taxonomy taxonomy;
  std::vector<std::size_t> attr_order(pool);
  for (std::size_t c = 0; c < spec.n_categories; ++c) {
    const std::string category = forge.syllables(2);
    std::iota(attr_order.begin(), attr_order.end(), std::size_t{0});
    std::shuffle(attr_order.begin(), attr_order.end(), rng);
    std::vector<std::size_t> chosen(attr_order.begin(), attr_order.begin() + spec.attrs_per_category);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t a : chosen) {
      const std::size_t n =
          std::uniform_int_distribution<std::size_t>(spec.values_min, spec.values_max)(rng);
      std::vector<std::size_t> rows(spec.values_max);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(n);
      std::sort(rows.begin(), rows.end());
      std::vector<std::string> values;
      for (std::size_t r : rows) values.push_back(vocab[a][r]);
      taxonomy.add_pair(category, attribute_names[a], values);
    }
  }
  return taxonomy;
}

GeneratedDataset gen_items(const CorpusSpec& spec, const Taxonomy& taxonomy) {
  spec.validate();
  if (taxonomy.empty()) throw ConfigError("cannot generate items for an empty taxonomy");
  GeneratedDataset ds;
  ds.taxonomy = taxonomy;
  auto forms = derive_surface_forms(spec, taxonomy);
  ds.alias_map = forms.aliases;
  ds.cue_map = forms.cues;

  Rng rng(spec.seed ^ 0xd1b54a32d192ed03ULL);
  const auto categories = taxonomy.categories();
  const auto& filler = filler_words();
  std::uniform_int_distribution<std::size_t> pick_category(0, categories.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& r = spec.kind_rates;
  const double c_explicit = r.explicit_mention;
  const double c_unnorm = c_explicit + r.unnormalized;
  const double c_implicit = c_unnorm + r.implicit;

  const std::size_t width = std::to_string(spec.n_items).size();
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    ProductItem item;
    std::string id = std::to_string(i);
    item.item_id = "item" + std::string(width - id.size(), '0') + id;
    item.category = categories[pick_category(rng)];
    std::vector<std::string> title{item.category};
    std::vector<std::string> description;

    for (std::size_t p : taxonomy.pairs_of(item.category)) {
      const auto& pair = taxonomy.pair(p);
      const double u = unit(rng);
      ValueKind kind = u < c_explicit ? ValueKind::explicit_mention
                       : u < c_unnorm ? ValueKind::unnormalized
                       : u < c_implicit ? ValueKind::implicit
                                        : ValueKind::null;
      item.kinds[pair.attribute] = kind;
      auto& labels = item.labels[pair.attribute];
      if (kind == ValueKind::null) continue;

      const std::size_t n_values = pair.non_null_count();
      const auto& value = pair.values[std::uniform_int_distribution<std::size_t>(0, n_values - 1)(rng)];
      labels.insert(value.value_id);
      std::string surface;
      switch (kind) {
        case ValueKind::explicit_mention:
          surface = value.text;
          break;
        case ValueKind::unnormalized: {
          const auto& aliases = ds.alias_map.at(value.text);
          surface = aliases[std::uniform_int_distribution<std::size_t>(0, aliases.size() - 1)(rng)];
          break;
        }
        case ValueKind::implicit:
          surface = ds.cue_map.at(value.text);
          break;
        case ValueKind::null:
          break;
      }
      (unit(rng) < 0.6 ? title : description).push_back(surface);
    }

    const std::size_t title_filler = 1 + std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    for (std::size_t f = 0; f < title_filler; ++f) title.push_back(filler[pick_filler(rng)]);
    const std::size_t desc_filler = 2 + std::uniform_int_distribution<std::size_t>(0, 4)(rng);
    for (std::size_t f = 0; f < desc_filler; ++f) description.push_back(filler[pick_filler(rng)]);
    std::shuffle(title.begin(), title.end(), rng);
    std::shuffle(description.begin(), description.end(), rng);
    item.title = join(title);
    item.description = join(description);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

GeneratedDataset generate_corpus(const CorpusSpec& spec) { return gen_items(spec, gen_taxonomy(spec)); }

std::vector<std::string> check_kind_faithfulness(const GeneratedDataset& ds) {
  std::vector<std::string> violations;
  auto lowered = [](const std::vector<std::string>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(lower(s));
    return out;
  };
  for (const auto& item : ds.items) {
    const auto words = tokenize(item.title + " " + item.description);
    const std::set<std::string> tokens(words.begin(), words.end());
    auto present = [&tokens](const std::string& w) { return tokens.count(lower(w)) > 0; };
    auto any_present = [&](const std::vector<std::string>& ws) {
      return std::any_of(ws.begin(), ws.end(), [&](const std::string& w) { return present(w); });
    };
    for (const auto& [attribute, kind] : item.kinds) {
      const auto& label = item.label_of(attribute);
      const std::string where = item.item_id + "/" + attribute + ": ";
      auto mentions = [&](const std::string& text) {
        const auto alias_it = ds.alias_map.find(text);
        const auto cue_it = ds.cue_map.find(text);
        const bool v = present(text);
        const bool a = alias_it != ds.alias_map.end() && any_present(lowered(alias_it->second));
        const bool c = cue_it != ds.cue_map.end() && present(cue_it->second);
        return std::array<bool, 3>{v, a, c};
      };
      if (kind == ValueKind::null) {
        if (!label.empty()) violations.push_back(where + "null kind with a label");
        const auto& pair = ds.taxonomy.pair(ds.taxonomy.index_of(item.category, attribute));
        for (const auto& v : pair.values) {
          if (v.is_null) continue;
          const auto m = mentions(v.text);
          if (m[0] || m[1] || m[2]) violations.push_back(where + "null kind mentions " + v.text);
        }
        continue;
      }
      if (label.empty()) {
        violations.push_back(where + "non-null kind without a label");
        continue;
      }
      for (const auto& id : label) {
        const auto m = mentions(id);
        const bool ok = kind == ValueKind::explicit_mention ? m[0]
                        : kind == ValueKind::unnormalized   ? (!m[0] && m[1])
                                                            : (!m[0] && !m[1] && m[2]);
        if (!ok) violations.push_back(where + std::string(to_string(kind)) + " surface rule broken for " + id);
      }
    }
  }
  return violations;
}

std::string_view to_string(SplitMode m) {
  switch (m) {
    case SplitMode::random: return "random";
    case SplitMode::cross_category: return "cross_category";
    case SplitMode::cross_value: return "cross_value";
  }
  return "random";
}

SplitMode parse_split_mode(std::string_view name) {
  for (auto m : {SplitMode::random, SplitMode::cross_category, SplitMode::cross_value}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown split mode: " + std::string(name));
}

DatasetSplits make_splits(const GeneratedDataset& ds, SplitMode mode, SplitRatios ratios, std::uint64_t seed,
                          const CrossValueOptions& cross_value) {
  const double total = ratios.train + ratios.valid + ratios.test;
  if (ratios.train <= 0.0 || ratios.valid < 0.0 || ratios.test <= 0.0 || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative, sum to 1, with train and test > 0");
  }
  Rng rng(seed);
  DatasetSplits out;
  const auto& items = ds.items;

  if (mode == SplitMode::random) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(items.size())));
    const auto n_valid = static_cast<std::size_t>(std::llround(ratios.valid * static_cast<double>(items.size())));
    if (n_train == 0 || n_train + n_valid >= items.size()) throw DataError("too few items for the requested split");
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& dst = i < n_train ? out.train : i < n_train + n_valid ? out.valid : out.test;
      dst.push_back(items[order[i]]);
    }
    return out;
  }

  if (mode == SplitMode::cross_category) {
    auto categories = ds.taxonomy.categories();
    std::shuffle(categories.begin(), categories.end(), rng);
    const std::size_t n = categories.size();
    std::size_t n_valid = ratios.valid > 0.0
                              ? std::max<std::size_t>(1, std::llround(ratios.valid * static_cast<double>(n)))
                              : 0;
    std::size_t n_test = std::max<std::size_t>(1, std::llround(ratios.test * static_cast<double>(n)));
    if (n_valid + n_test >= n) throw DataError("too few categories for a cross-category split");
    std::unordered_map<std::string, int> group;
    for (std::size_t i = 0; i < n; ++i) group[categories[i]] = i < n_test ? 2 : i < n_test + n_valid ? 1 : 0;
    for (const auto& item : items) {
      const int g = group.at(item.category);
      (g == 0 ? out.train : g == 1 ? out.valid : out.test).push_back(item);
    }
    if (out.train.empty() || out.test.empty()) throw DataError("cross-category split left a side empty");
    return out;
  }

  // cross_value: hold out part of the vocabulary of some attribute names.
  std::map<std::string, std::set<std::string>> vocab;
  for (const auto& pair : ds.taxonomy.pairs()) {
    for (const auto& v : pair.values) {
      if (!v.is_null) vocab[pair.attribute].insert(v.value_id);
    }
  }
  std::vector<std::string> names;
  for (const auto& [name, values] : vocab) names.push_back(name);
  std::shuffle(names.begin(), names.end(), rng);
  const std::size_t n_designated = std::max<std::size_t>(
      1, std::llround(cross_value.attribute_fraction * static_cast<double>(names.size())));
  for (std::size_t a = 0; a < std::min(n_designated, names.size()); ++a) {
    std::vector<std::string> values(vocab[names[a]].begin(), vocab[names[a]].end());
    std::shuffle(values.begin(), values.end(), rng);
    const std::size_t n_held = std::max<std::size_t>(
        1, std::llround(cross_value.value_fraction * static_cast<double>(values.size())));
    if (n_held >= values.size()) throw DataError("cross-value split would hold out a whole vocabulary");
    out.held_values[names[a]].insert(values.begin(), values.begin() + n_held);
  }

  std::vector<std::size_t> free_items;
  for (std::size_t i = 0; i < items.size(); ++i) {
    bool has_held = false;
    bool has_seen = false;
    for (const auto& [attribute, labels] : items[i].labels) {
      auto it = out.held_values.find(attribute);
      if (it == out.held_values.end()) continue;
      for (const auto& id : labels) (it->second.count(id) ? has_held : has_seen) = true;
    }
    if (has_held && !has_seen) {
      out.test.push_back(items[i]);
    } else if (has_held) {
      continue;  // mixes held and seen values on designated attributes; unusable on either side
    } else {
      free_items.push_back(i);
    }
  }
  std::shuffle(free_items.begin(), free_items.end(), rng);
  const double train_share = ratios.train / (ratios.train + ratios.valid);
  const auto n_train = static_cast<std::size_t>(std::llround(train_share * static_cast<double>(free_items.size())));
  for (std::size_t i = 0; i < free_items.size(); ++i) {
    (i < n_train ? out.train : out.valid).push_back(items[free_items[i]]);
  }
  if (out.train.empty() || out.test.empty()) throw DataError("cross-value split left a side empty");
  return out;
}

std::vector<ProductItem> parse_dataset(std::string_view jsonl, bool strict) {
  std::vector<ProductItem> items;
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
    try {
      items.push_back(item_from_json(json::parse(line), strict));
    } catch (const json::parse_error& e) {
      throw DataError("dataset line " + std::to_string(line_no) + ": parse error: " + e.what());
    } catch (const DataError& e) {
      throw DataError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

std::vector<ProductItem> read_dataset(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), strict);
}

std::string serialize_dataset(const std::vector<ProductItem>& items) {
  std::string out;
  for (const auto& item : items) {
    out += item_to_json(item).dump();
    out.push_back('\n');
  }
  return out;
}

void write_dataset(const std::vector<ProductItem>& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  out << serialize_dataset(items);
}

void write_generated(const GeneratedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_taxonomy(ds.taxonomy, dir / "taxonomy.jsonl");
  write_dataset(ds.items, dir / "items.jsonl");
  auto dump = [&dir](const json& j, const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError(std::string("cannot write ") + name);
    out << j.dump(2) << '\n';
  };
  dump(json(ds.alias_map), "alias_map.json");
  dump(json(ds.cue_map), "cue_map.json");
}

}  // namespace taclr
