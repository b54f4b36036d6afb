#include "taclr/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include <json.hpp>

#include "taclr/digest.hpp"
#include "taclr/error.hpp"

namespace taclr {

static_assert(std::endian::native == std::endian::little, "params files are written in host order");

namespace {

std::atomic<std::uint64_t> g_encode_calls{0};

constexpr char kParamsMagic[8] = {'T', 'A', 'C', 'L', 'R', 'P', 'R', 'M'};
constexpr std::uint8_t kParamsVersion = 1;

bool is_separator(unsigned char c) {
  return c < 0x80 && (std::isspace(c) || std::ispunct(c));
}

}  // namespace

std::string_view to_string(PromptTemplate t) {
  switch (t) {
    case PromptTemplate::value_only: return "value_only";
    case PromptTemplate::category_value: return "category_value";
    case PromptTemplate::attribute_value: return "attribute_value";
    case PromptTemplate::full: return "full";
  }
  return "full";
}

PromptTemplate parse_prompt_template(std::string_view name) {
  for (auto t : {PromptTemplate::value_only, PromptTemplate::category_value, PromptTemplate::attribute_value,
                 PromptTemplate::full}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown prompt template: " + std::string(name));
}

std::string render_item_prompt(std::string_view title, std::string_view description) {
  if (title.empty()) throw ConfigError("item prompt requires a non-empty title");
  std::string out = "title: ";
  out.append(title);
  out.append(" description: ");
  out.append(description);
  return out;
}

std::string render_value_prompt(std::string_view category, std::string_view attribute, std::string_view value_text,
                                PromptTemplate tmpl) {
  if (category.empty() || attribute.empty() || value_text.empty()) {
    throw ConfigError("value prompt requires non-empty category, attribute and value");
  }
  std::string out;
  switch (tmpl) {
    case PromptTemplate::value_only:
      out.append(value_text);
      break;
    case PromptTemplate::category_value:
      out.append("A ").append(category).append(" being ").append(value_text);
      break;
    case PromptTemplate::attribute_value:
      out.append(attribute).append(" being ").append(value_text);
      break;
    case PromptTemplate::full:
      out.append("A ").append(category).append(" with ").append(attribute).append(" being ").append(value_text);
      break;
  }
  return out;
}

void EncoderConfig::validate() const {
  if (hash_buckets < 2 || !std::has_single_bit(hash_buckets)) {
    throw ConfigError("hash_buckets must be a power of two >= 2");
  }
  if (embed_dim < 2 || proj_dim < 2) throw ConfigError("embed_dim and proj_dim must be >= 2");
  if (word_ngrams.empty() && char_ngrams.empty()) throw ConfigError("at least one n-gram family must be enabled");
  for (int n : word_ngrams) {
    if (n < 1) throw ConfigError("word n-gram sizes must be >= 1");
  }
  for (int n : char_ngrams) {
    if (n < 1) throw ConfigError("char n-gram sizes must be >= 1");
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_separator(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
      continue;
    }
    current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

FeatureBag featurize(std::string_view text, const EncoderConfig& cfg) {
  const auto words = tokenize(text);
  const std::uint64_t mask = cfg.hash_buckets - 1;
  std::vector<std::uint32_t> hits;

  std::string key;
  for (int n : cfg.word_ngrams) {
    const auto span = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + span <= words.size(); ++i) {
      key = "w:";
      for (std::size_t j = 0; j < span; ++j) {
        if (j) key.push_back(' ');
        key += words[i + j];
      }
      hits.push_back(static_cast<std::uint32_t>(fnv1a64(key) & mask));
    }
  }
  for (int n : cfg.char_ngrams) {
    const auto span = static_cast<std::size_t>(n);
    for (const auto& w : words) {
      for (std::size_t i = 0; i + span <= w.size(); ++i) {
        key = "c:";
        key.append(w, i, span);
        hits.push_back(static_cast<std::uint32_t>(fnv1a64(key) & mask));
      }
    }
  }

  std::sort(hits.begin(), hits.end());
  FeatureBag bag;
  for (std::size_t i = 0; i < hits.size();) {
    std::size_t j = i;
    while (j < hits.size() && hits[j] == hits[i]) ++j;
    bag.index.push_back(hits[i]);
    bag.count.push_back(static_cast<std::uint32_t>(j - i));
    i = j;
  }
  bag.total = static_cast<std::uint32_t>(hits.size());
  return bag;
}

bool EncoderParams::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(feature_table) && finite(proj_weight) && finite(proj_bias);
}

EncoderParams init_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  auto fill = [&rng](std::vector<double>& m, std::size_t rows, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    m.resize(rows * fan_out);
    for (auto& x : m) x = dist(rng);
  };
  // Table rows are lookups, so each row is initialized as a 1-input layer.
  fill(p.feature_table, cfg.hash_buckets, 1, cfg.embed_dim);
  fill(p.proj_weight, cfg.embed_dim, cfg.embed_dim, cfg.proj_dim);
  p.proj_bias.assign(cfg.proj_dim, 0.0);
  return p;
}

Embedding encode(const FeatureBag& bag, const EncoderParams& params) {
  g_encode_calls.fetch_add(1, std::memory_order_relaxed);
  std::vector<double> pooled(params.config.embed_dim);
  std::vector<double> pre(params.config.proj_dim);
  Embedding out(params.config.proj_dim);
  encode_forward<double>(bag, params, pooled, pre, out);
  return out;
}

Embedding encode_text(std::string_view text, const EncoderParams& params) {
  return encode(featurize(text, params.config), params);
}

EncodeTrace encode_traced(const FeatureBag& bag, const EncoderParams& params) {
  g_encode_calls.fetch_add(1, std::memory_order_relaxed);
  EncodeTrace t;
  t.pooled.resize(params.config.embed_dim);
  t.pre.resize(params.config.proj_dim);
  t.output.resize(params.config.proj_dim);
  t.norm = encode_forward<double>(bag, params, t.pooled, t.pre, t.output);
  t.degenerate = !(t.norm >= 1e-12);
  return t;
}

std::uint64_t encode_invocations() { return g_encode_calls.load(std::memory_order_relaxed); }

GradientBuffer::GradientBuffer(const EncoderConfig& cfg)
    : embed_dim_(cfg.embed_dim),
      proj_weight_(cfg.embed_dim * cfg.proj_dim, 0.0),
      proj_bias_(cfg.proj_dim, 0.0) {}

std::span<double> GradientBuffer::table_row(std::uint32_t bucket) {
  auto [it, inserted] = slot_of_.try_emplace(bucket, touched_.size());
  if (inserted) {
    touched_.push_back(bucket);
    rows_.resize(rows_.size() + embed_dim_, 0.0);
  }
  return {rows_.data() + it->second * embed_dim_, embed_dim_};
}

std::span<const double> GradientBuffer::find_table_row(std::uint32_t bucket) const {
  auto it = slot_of_.find(bucket);
  if (it == slot_of_.end()) return {};
  return {rows_.data() + it->second * embed_dim_, embed_dim_};
}

void GradientBuffer::clear() {
  slot_of_.clear();
  touched_.clear();
  rows_.clear();
  std::fill(proj_weight_.begin(), proj_weight_.end(), 0.0);
  std::fill(proj_bias_.begin(), proj_bias_.end(), 0.0);
}

void backprop_encode(const FeatureBag& bag, const EncodeTrace& trace, std::span<const double> grad_output,
                     const EncoderParams& params, GradientBuffer& grads) {
  if (trace.degenerate) return;
  const std::size_t embed = params.config.embed_dim;
  const std::size_t proj = params.config.proj_dim;

  // Through the L2 normalization: d(pre) = (g - e (e.g)) / |pre|.
  double dot = 0.0;
  for (std::size_t k = 0; k < proj; ++k) dot += trace.output[k] * grad_output[k];
  std::vector<double> dpre(proj);
  for (std::size_t k = 0; k < proj; ++k) dpre[k] = (grad_output[k] - trace.output[k] * dot) / trace.norm;

  auto& db = grads.proj_bias();
  for (std::size_t k = 0; k < proj; ++k) db[k] += dpre[k];

  auto& dw = grads.proj_weight();
  std::vector<double> dpooled(embed, 0.0);
  for (std::size_t d = 0; d < embed; ++d) {
    const double x = trace.pooled[d];
    const double* wrow = params.proj_weight.data() + d * proj;
    double* dwrow = dw.data() + d * proj;
    double acc = 0.0;
    for (std::size_t k = 0; k < proj; ++k) {
      dwrow[k] += x * dpre[k];
      acc += wrow[k] * dpre[k];
    }
    dpooled[d] = acc;
  }

  if (bag.total == 0) return;
  const double inv_total = 1.0 / static_cast<double>(bag.total);
  for (std::size_t f = 0; f < bag.index.size(); ++f) {
    const double w = static_cast<double>(bag.count[f]) * inv_total;
    auto row = grads.table_row(bag.index[f]);
    for (std::size_t d = 0; d < embed; ++d) row[d] += w * dpooled[d];
  }
}

nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"hash_buckets", c.hash_buckets}, {"word_ngrams", c.word_ngrams},
          {"char_ngrams", c.char_ngrams},   {"embed_dim", c.embed_dim},
          {"proj_dim", c.proj_dim},         {"seed", c.seed},
          {"prompt_template", std::string(to_string(c.prompt_template))}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.hash_buckets = j.at("hash_buckets").get<std::uint32_t>();
  c.word_ngrams = j.at("word_ngrams").get<std::vector<int>>();
  c.char_ngrams = j.at("char_ngrams").get<std::vector<int>>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.proj_dim = j.at("proj_dim").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.prompt_template = parse_prompt_template(j.at("prompt_template").get<std::string>());
  return c;
}

namespace {

void append_doubles(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(double));
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const EncoderParams& params) {
  const std::string header = encoder_config_to_json(params.config).dump();
  std::vector<std::uint8_t> out(std::begin(kParamsMagic), std::end(kParamsMagic));
  out.push_back(kParamsVersion);
  const auto len = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + sizeof(double) * (params.feature_table.size() + params.proj_weight.size() +
                                             params.proj_bias.size()));
  append_doubles(out, params.feature_table);
  append_doubles(out, params.proj_weight);
  append_doubles(out, params.proj_bias);
  return out;
}

EncoderParams deserialize_params(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kFixed = sizeof(kParamsMagic) + 1 + 4;
  if (bytes.size() < kFixed || std::memcmp(bytes.data(), kParamsMagic, sizeof(kParamsMagic)) != 0) {
    throw DataError("not a params file (bad magic)");
  }
  if (bytes[8] != kParamsVersion) {
    throw DataError("unsupported params version " + std::to_string(bytes[8]));
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t{bytes[9 + i]} << (8 * i);
  if (bytes.size() < kFixed + len) throw DataError("truncated params header");

  EncoderParams p;
  try {
    auto header = nlohmann::json::parse(bytes.begin() + kFixed, bytes.begin() + kFixed + len);
    p.config = encoder_config_from_json(header);
    p.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad params header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("bad params header: ") + e.what());
  }

  const std::size_t n_table = std::size_t{p.config.hash_buckets} * p.config.embed_dim;
  const std::size_t n_weight = p.config.embed_dim * p.config.proj_dim;
  const std::size_t n_bias = p.config.proj_dim;
  const std::size_t payload = bytes.size() - kFixed - len;
  if (payload != sizeof(double) * (n_table + n_weight + n_bias)) {
    throw DataError("params payload size does not match its header");
  }
  const std::uint8_t* cursor = bytes.data() + kFixed + len;
  auto read = [&cursor](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    std::memcpy(v.data(), cursor, n * sizeof(double));
    cursor += n * sizeof(double);
  };
  read(p.feature_table, n_table);
  read(p.proj_weight, n_weight);
  read(p.proj_bias, n_bias);
  if (!p.all_finite()) throw DataError("params contain non-finite entries");
  return p;
}

void save_params(const EncoderParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write params file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

EncoderParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open params file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

std::string params_digest(const EncoderParams& params) { return sha256_hex(serialize_params(params)); }

}  // namespace taclr
