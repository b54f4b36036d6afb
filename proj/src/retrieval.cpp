#include "taclr/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "taclr/error.hpp"

namespace taclr {

using json = nlohmann::json;

namespace {

constexpr char kIndexMagic[8] = {'T', 'A', 'C', 'L', 'R', 'I', 'D', 'X'};
constexpr std::uint8_t kIndexVersion = 1;

std::string group_key(std::string_view category, std::string_view attribute) {
  std::string k(category);
  k.push_back('\x1f');
  k.append(attribute);
  return k;
}

}  // namespace

ValueIndex::ValueIndex(std::string params_digest, std::size_t proj_dim, PromptTemplate tmpl,
                       std::vector<IndexGroup> groups)
    : params_digest_(std::move(params_digest)), proj_dim_(proj_dim), template_(tmpl), groups_(std::move(groups)) {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const auto& g = groups_[i];
    if (g.row_ids.empty() || g.rows.size() != g.row_ids.size() * proj_dim_) {
      throw DataError("index group (" + g.category + ", " + g.attribute + ") has inconsistent shape");
    }
    if (!by_key_.emplace(group_key(g.category, g.attribute), i).second) {
      throw DataError("duplicate index group (" + g.category + ", " + g.attribute + ")");
    }
    by_category_[g.category].push_back(i);
  }
}

const IndexGroup* ValueIndex::find(std::string_view category, std::string_view attribute) const {
  auto it = by_key_.find(group_key(category, attribute));
  return it == by_key_.end() ? nullptr : &groups_[it->second];
}

const std::vector<std::size_t>& ValueIndex::groups_of(std::string_view category) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_category_.find(std::string(category));
  return it == by_category_.end() ? kEmpty : it->second;
}

ValueIndex build_index(const Taxonomy& taxonomy, const EncoderParams& params) {
  if (!params.all_finite()) throw DataError("cannot index with non-finite params");
  const auto& cfg = params.config;
  std::vector<IndexGroup> groups;
  groups.reserve(taxonomy.pairs().size());
  for (const auto& pair : taxonomy.pairs()) {
    IndexGroup g{pair.category, pair.attribute, {}, {}};
    for (const auto& v : candidate_values(taxonomy, pair.category, pair.attribute, true)) {
      const auto e = encode_text(render_value_prompt(pair.category, pair.attribute, v.text, cfg.prompt_template),
                                 params);
      g.row_ids.push_back(v.value_id);
      g.rows.insert(g.rows.end(), e.begin(), e.end());
    }
    groups.push_back(std::move(g));
  }
  return ValueIndex(params_digest(params), cfg.proj_dim, cfg.prompt_template, std::move(groups));
}

std::vector<std::uint8_t> serialize_index(const ValueIndex& index) {
  json dir = json::array();
  for (const auto& g : index.groups()) {
    dir.push_back({{"category", g.category}, {"attribute", g.attribute}, {"ids", g.row_ids}});
  }
  const json header{{"params_digest", index.params_digest()},
                    {"proj_dim", index.proj_dim()},
                    {"prompt_template", std::string(to_string(index.prompt_template()))},
                    {"pairs", std::move(dir)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kIndexMagic), std::end(kIndexMagic));
  out.push_back(kIndexVersion);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& g : index.groups()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(g.rows.data());
    out.insert(out.end(), p, p + g.rows.size() * sizeof(double));
  }
  return out;
}

ValueIndex deserialize_index(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kFixed = sizeof(kIndexMagic) + 1 + 4;
  if (bytes.size() < kFixed || std::memcmp(bytes.data(), kIndexMagic, sizeof(kIndexMagic)) != 0) {
    throw DataError("not an index file (bad magic)");
  }
  if (bytes[8] != kIndexVersion) throw DataError("unsupported index version " + std::to_string(bytes[8]));
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t{bytes[9 + i]} << (8 * i);
  if (bytes.size() < kFixed + len) throw DataError("truncated index header");

  try {
    const auto header = json::parse(bytes.begin() + kFixed, bytes.begin() + kFixed + len);
    const auto proj_dim = header.at("proj_dim").get<std::size_t>();
    std::vector<IndexGroup> groups;
    const std::uint8_t* cursor = bytes.data() + kFixed + len;
    const std::uint8_t* end = bytes.data() + bytes.size();
    for (const auto& entry : header.at("pairs")) {
      IndexGroup g{entry.at("category").get<std::string>(), entry.at("attribute").get<std::string>(),
                   entry.at("ids").get<std::vector<std::string>>(), {}};
      const std::size_t n = g.row_ids.size() * proj_dim;
      if (static_cast<std::size_t>(end - cursor) < n * sizeof(double)) throw DataError("truncated index payload");
      g.rows.resize(n);
      std::memcpy(g.rows.data(), cursor, n * sizeof(double));
      cursor += n * sizeof(double);
      groups.push_back(std::move(g));
    }
    if (cursor != end) throw DataError("trailing bytes in index file");
    return ValueIndex(header.at("params_digest").get<std::string>(), proj_dim,
                      parse_prompt_template(header.at("prompt_template").get<std::string>()), std::move(groups));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad index header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad index header: ") + e.what());
  }
}

void save_index(const ValueIndex& index, const std::filesystem::path& path) {
  const auto bytes = serialize_index(index);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write index file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ValueIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open index file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_index(bytes);
}

const AttributePrediction* Prediction::find(std::string_view attribute) const {
  for (const auto& a : attributes) {
    if (a.attribute == attribute) return &a;
  }
  return nullptr;
}

Top1Decision decide_top1(std::span<const double> scores) {
  if (scores.empty()) throw DataError("empty score vector");
  const std::size_t null_row = scores.size() - 1;
  Top1Decision d;
  d.null_score = scores[null_row];
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < null_row; ++r) {
    if (!best || scores[r] > scores[*best]) best = r;
  }
  if (best && scores[*best] > d.null_score) {
    d.row = best;
    d.score = scores[*best];
  } else {
    d.score = d.null_score;
  }
  return d;
}

std::vector<std::size_t> decide_set(std::span<const double> scores, std::size_t k) {
  if (scores.empty()) throw DataError("empty score vector");
  const std::size_t null_row = scores.size() - 1;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < null_row; ++r) {
    if (scores[r] > scores[null_row]) rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (rows.size() > k) rows.resize(k);
  return rows;
}

Top1Decision decide_static(std::span<const double> scores, double threshold) {
  if (scores.empty()) throw DataError("empty score vector");
  const std::size_t null_row = scores.size() - 1;
  Top1Decision d;
  d.null_score = threshold;
  d.score = threshold;
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < null_row; ++r) {
    if (!best || scores[r] > scores[*best]) best = r;
  }
  if (best && scores[*best] > threshold) {
    d.row = best;
    d.score = scores[*best];
  }
  return d;
}

Retriever::Retriever(const ValueIndex& index, const EncoderParams& params) : index_(&index), params_(&params) {
  if (index.proj_dim() != params.config.proj_dim) throw DataError("index and params disagree on proj_dim");
  if (index.prompt_template() != params.config.prompt_template) {
    throw DataError("index and params disagree on the value prompt template");
  }
  if (index.params_digest() != params_digest(params)) {
    throw DataError("stale index: params digest does not match the index");
  }
}

const std::vector<std::size_t>& Retriever::groups_for(const ProductItem& item) const {
  const auto& groups = index_->groups_of(item.category);
  if (groups.empty()) throw DataError("item " + item.item_id + ": category " + item.category + " not in index");
  for (const auto& [attribute, values] : item.labels) {
    if (!index_->find(item.category, attribute)) {
      throw DataError("item " + item.item_id + ": unknown pair (" + item.category + ", " + attribute + ")");
    }
  }
  return groups;
}

std::vector<std::vector<double>> Retriever::score(const ProductItem& item) const {
  const auto& groups = groups_for(item);
  const auto emb = encode_text(render_item_prompt(item.title, item.description), *params_);
  const std::size_t dim = index_->proj_dim();
  std::vector<std::vector<double>> out;
  out.reserve(groups.size());
  for (std::size_t gi : groups) {
    const auto& g = index_->groups()[gi];
    std::vector<double> s(g.size());
    for (std::size_t r = 0; r < g.size(); ++r) {
      const double* row = g.rows.data() + r * dim;
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) acc += row[k] * emb[k];
      s[r] = acc;
    }
    out.push_back(std::move(s));
  }
  return out;
}

Prediction Retriever::predict_top1(const ProductItem& item, std::size_t runners_up) const {
  const auto scores = score(item);
  const auto& groups = groups_for(item);
  Prediction pred{item.item_id, {}};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = index_->groups()[groups[i]];
    const auto d = decide_top1(scores[i]);
    AttributePrediction ap{g.attribute, std::nullopt, d.score, d.null_score, {}};
    if (d.row) ap.value = g.row_ids[*d.row];
    if (runners_up > 0) {
      std::vector<std::size_t> order(g.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[i][a] > scores[i][b]; });
      for (std::size_t r = 0; r < std::min(runners_up, order.size()); ++r) {
        ap.runners_up.emplace_back(g.row_ids[order[r]], scores[i][order[r]]);
      }
    }
    pred.attributes.push_back(std::move(ap));
  }
  return pred;
}

std::map<std::string, std::vector<std::string>> Retriever::predict_set(const ProductItem& item, std::size_t k) const {
  if (k < 1) throw ConfigError("predict_set needs k >= 1");
  const auto scores = score(item);
  const auto& groups = groups_for(item);
  std::map<std::string, std::vector<std::string>> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = index_->groups()[groups[i]];
    auto& ids = out[g.attribute];
    for (std::size_t r : decide_set(scores[i], k)) ids.push_back(g.row_ids[r]);
  }
  return out;
}

Prediction Retriever::predict_with_static_threshold(const ProductItem& item, double threshold) const {
  const auto scores = score(item);
  const auto& groups = groups_for(item);
  Prediction pred{item.item_id, {}};
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = index_->groups()[groups[i]];
    const auto d = decide_static(scores[i], threshold);
    AttributePrediction ap{g.attribute, std::nullopt, d.score, d.null_score, {}};
    if (d.row) ap.value = g.row_ids[*d.row];
    pred.attributes.push_back(std::move(ap));
  }
  return pred;
}

Prediction predict_top1(const ProductItem& item, const ValueIndex& index, const EncoderParams& params) {
  return Retriever(index, params).predict_top1(item);
}

std::map<std::string, std::vector<std::string>> predict_set(const ProductItem& item, const ValueIndex& index,
                                                            const EncoderParams& params, std::size_t k) {
  return Retriever(index, params).predict_set(item, k);
}

Prediction predict_with_static_threshold(const ProductItem& item, const ValueIndex& index,
                                         const EncoderParams& params, double threshold) {
  return Retriever(index, params).predict_with_static_threshold(item, threshold);
}

json prediction_to_json(const Prediction& prediction) {
  json preds = json::object();
  for (const auto& a : prediction.attributes) {
    json entry{{"value", a.value ? json(*a.value) : json(nullptr)}, {"score", a.score}, {"null_score", a.null_score}};
    if (!a.runners_up.empty()) {
      json top = json::array();
      for (const auto& [id, s] : a.runners_up) top.push_back({{"id", id}, {"score", s}});
      entry["runners_up"] = std::move(top);
    }
    preds[a.attribute] = std::move(entry);
  }
  return {{"item_id", prediction.item_id}, {"predictions", std::move(preds)}};
}

Prediction prediction_from_json(const json& j) {
  try {
    Prediction p{j.at("item_id").get<std::string>(), {}};
    for (const auto& [attribute, entry] : j.at("predictions").items()) {
      AttributePrediction ap;
      ap.attribute = attribute;
      const auto& v = entry.at("value");
      if (!v.is_null()) ap.value = v.get<std::string>();
      ap.score = entry.at("score").get<double>();
      ap.null_score = entry.at("null_score").get<double>();
      if (entry.contains("runners_up")) {
        for (const auto& r : entry["runners_up"]) {
          ap.runners_up.emplace_back(r.at("id").get<std::string>(), r.at("score").get<double>());
        }
      }
      p.attributes.push_back(std::move(ap));
    }
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad prediction record: ") + e.what());
  }
}

}  // namespace taclr
