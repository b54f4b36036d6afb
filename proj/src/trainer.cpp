#include "taclr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "taclr/error.hpp"

namespace taclr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// -log softmax(z)[0], computed so that a confident positive keeps full
/// relative precision (log1p branch).
template <class S>
S cross_entropy(std::span<const S> z) {
  S m = z[0];
  for (S v : z) m = std::max(m, v);
  if (z[0] == m) {
    S rest = 0;
    for (std::size_t j = 1; j < z.size(); ++j) rest += std::exp(z[j] - m);
    return std::log1p(rest);
  }
  S sum = 0;
  for (S v : z) sum += std::exp(v - m);
  return (m - z[0]) + std::log(sum);
}

template <class S>
S dot(std::span<const S> a, std::span<const S> b) {
  S acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

using ValueBagFn = std::function<const FeatureBag&(const ValueRef&)>;

struct BatchEntry {
  const FeatureBag* item_bag = nullptr;
  const std::vector<ContrastSet>* sets = nullptr;
};

/// Forward + backward for a batch, accumulating parameter gradients in
/// `grads`. Each item and each distinct value is encoded once. Backward
/// runs items first (batch order) then values (first-use order).
std::vector<double> accumulate_batch(std::span<const BatchEntry> batch, const ValueBagFn& value_bag,
                                     const EncoderParams& params, double tau, GradientBuffer& grads) {
  const std::size_t dim = params.config.proj_dim;
  std::vector<EncodeTrace> item_traces;
  item_traces.reserve(batch.size());
  for (const auto& entry : batch) item_traces.push_back(encode_traced(*entry.item_bag, params));

  std::map<ValueRef, std::size_t> slot_of;
  std::vector<ValueRef> slot_refs;
  std::vector<EncodeTrace> value_traces;
  auto slot = [&](const ValueRef& ref) {
    auto [it, inserted] = slot_of.try_emplace(ref, slot_refs.size());
    if (inserted) {
      slot_refs.push_back(ref);
      value_traces.push_back(encode_traced(value_bag(ref), params));
    }
    return it->second;
  };

  std::vector<Embedding> item_grads(batch.size(), Embedding(dim, 0.0));
  std::vector<Embedding> value_grads;
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<std::span<const double>> neg_views;
  std::vector<std::size_t> neg_slots;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (const auto& set : *batch[b].sets) {
      const std::size_t pos_slot = slot(set.positive);
      neg_slots.clear();
      for (const auto& n : set.negatives) neg_slots.push_back(slot(n));
      value_grads.resize(value_traces.size(), Embedding(dim, 0.0));

      neg_views.clear();
      for (std::size_t s : neg_slots) neg_views.emplace_back(value_traces[s].output);
      auto res = contrastive_loss(item_traces[b].output, value_traces[pos_slot].output, neg_views, set.pad_count,
                                  tau);
      losses[b] += res.loss;
      for (std::size_t k = 0; k < dim; ++k) {
        item_grads[b][k] += res.grad_item[k];
        value_grads[pos_slot][k] += res.grad_positive[k];
      }
      for (std::size_t j = 0; j < neg_slots.size(); ++j) {
        auto& g = value_grads[neg_slots[j]];
        for (std::size_t k = 0; k < dim; ++k) g[k] += res.grad_negatives[j][k];
      }
    }
  }

  for (std::size_t b = 0; b < batch.size(); ++b) {
    backprop_encode(*batch[b].item_bag, item_traces[b], item_grads[b], params, grads);
  }
  for (std::size_t s = 0; s < slot_refs.size(); ++s) {
    backprop_encode(value_bag(slot_refs[s]), value_traces[s], value_grads[s], params, grads);
  }
  return losses;
}

/// Loss of one item recomputed from scratch in precision S; the oracle side
/// of grad_check.
template <class S>
S item_loss_forward(const FeatureBag& item_bag, const std::vector<ContrastSet>& sets, const ValueBagFn& value_bag,
                    const EncoderParams& params, S tau) {
  const std::size_t embed = params.config.embed_dim;
  const std::size_t proj = params.config.proj_dim;
  std::vector<S> pooled(embed), pre(proj);
  auto run = [&](const FeatureBag& bag) {
    std::vector<S> out(proj);
    encode_forward<S>(bag, params, pooled, pre, out);
    return out;
  };
  const auto item = run(item_bag);
  S total = 0;
  for (const auto& set : sets) {
    std::vector<S> logits;
    const auto pos = run(value_bag(set.positive));
    logits.push_back(dot<S>(item, pos) / tau);
    for (const auto& n : set.negatives) logits.push_back(dot<S>(item, run(value_bag(n))) / tau);
    for (std::size_t p = 0; p < set.pad_count; ++p) logits.push_back(-std::numeric_limits<S>::infinity());
    total += cross_entropy<S>(logits);
  }
  return total;
}

std::string random_word(Rng& rng, std::size_t min_len, std::size_t max_len) {
  static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> letter(0, 25);
  std::string w(len(rng), 'a');
  for (auto& c : w) c = kLetters[letter(rng)];
  return w;
}


/// Applies one optimizer step from a batch gradient. Feature-table rows are
/// updated lazily: only rows touched by the batch move (plus rows with live
/// momentum under SGD), as in sparse embedding optimizers.
class ParamUpdater {
 public:
  ParamUpdater(const TrainConfig& cfg, const EncoderParams& params) : cfg_(cfg), embed_(params.config.embed_dim) {
    const bool sgd_momentum = cfg.optimizer == Optimizer::sgd && cfg.momentum > 0.0;
    if (sgd_momentum || cfg.optimizer == Optimizer::adam) {
      table_m_.assign(params.feature_table.size(), 0.0);
      weight_m_.assign(params.proj_weight.size(), 0.0);
      bias_m_.assign(params.proj_bias.size(), 0.0);
    }
    if (sgd_momentum) ever_touched_.assign(params.config.hash_buckets, 0);
    if (cfg.optimizer == Optimizer::adam) {
      table_v_.assign(params.feature_table.size(), 0.0);
      weight_v_.assign(params.proj_weight.size(), 0.0);
      bias_v_.assign(params.proj_bias.size(), 0.0);
    }
  }

  void apply(EncoderParams& params, const GradientBuffer& grads, double scale) {
    ++step_;
    if (cfg_.optimizer == Optimizer::adam) {
      apply_adam(params, grads, scale);
    } else if (cfg_.momentum > 0.0) {
      apply_momentum(params, grads, scale);
    } else {
      apply_sgd(params, grads, scale);
    }
  }

 private:
  void apply_sgd(EncoderParams& params, const GradientBuffer& grads, double scale) {
    const double step = cfg_.learning_rate * scale;
    for (std::uint32_t row : grads.touched_rows()) {
      auto g = grads.find_table_row(row);
      double* w = params.feature_table.data() + std::size_t{row} * embed_;
      for (std::size_t d = 0; d < embed_; ++d) w[d] -= step * g[d];
    }
    for (std::size_t i = 0; i < params.proj_weight.size(); ++i) params.proj_weight[i] -= step * grads.proj_weight()[i];
    for (std::size_t i = 0; i < params.proj_bias.size(); ++i) params.proj_bias[i] -= step * grads.proj_bias()[i];
  }

  void apply_momentum(EncoderParams& params, const GradientBuffer& grads, double scale) {
    const double mu = cfg_.momentum;
    const double lr = cfg_.learning_rate;
    for (std::uint32_t row : grads.touched_rows()) {
      if (!ever_touched_[row]) {
        ever_touched_[row] = 1;
        live_rows_.push_back(row);
      }
    }
    for (std::uint32_t row : live_rows_) {
      auto g = grads.find_table_row(row);
      double* v = table_m_.data() + std::size_t{row} * embed_;
      double* w = params.feature_table.data() + std::size_t{row} * embed_;
      for (std::size_t d = 0; d < embed_; ++d) {
        v[d] = mu * v[d] + (g.empty() ? 0.0 : scale * g[d]);
        w[d] -= lr * v[d];
      }
    }
    auto dense = [&](std::vector<double>& p, std::vector<double>& v, const std::vector<double>& g) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = mu * v[i] + scale * g[i];
        p[i] -= lr * v[i];
      }
    };
    dense(params.proj_weight, weight_m_, grads.proj_weight());
    dense(params.proj_bias, bias_m_, grads.proj_bias());
  }

  void apply_adam(EncoderParams& params, const GradientBuffer& grads, double scale) {
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double t = static_cast<double>(step_);
    const double lr_t = cfg_.learning_rate * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t));
    const double decay = cfg_.learning_rate * cfg_.weight_decay;
    auto update = [&](double* p, double* m, double* v, const double* g, std::size_t n, bool decayed) {
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = scale * g[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        if (decayed) p[i] -= decay * p[i];
        p[i] -= lr_t * m[i] / (std::sqrt(v[i]) + cfg_.adam_eps);
      }
    };
    for (std::uint32_t row : grads.touched_rows()) {
      const std::size_t off = std::size_t{row} * embed_;
      update(params.feature_table.data() + off, table_m_.data() + off, table_v_.data() + off,
             grads.find_table_row(row).data(), embed_, true);
    }
    update(params.proj_weight.data(), weight_m_.data(), weight_v_.data(), grads.proj_weight().data(),
           params.proj_weight.size(), true);
    update(params.proj_bias.data(), bias_m_.data(), bias_v_.data(), grads.proj_bias().data(),
           params.proj_bias.size(), false);
  }

  const TrainConfig& cfg_;
  std::size_t embed_;
  std::uint64_t step_ = 0;
  std::vector<double> table_m_, weight_m_, bias_m_;
  std::vector<double> table_v_, weight_v_, bias_v_;
  std::vector<std::uint8_t> ever_touched_;
  std::vector<std::uint32_t> live_rows_;
};

}  // namespace

std::string_view to_string(Sampling s) {
  return s == Sampling::in_batch ? "in_batch" : "taxonomy_aware";
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"k", c.k},
          {"tau", c.tau},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"sampling", std::string(to_string(c.sampling))},
          {"seed", c.seed},
          {"null_negative", c.null_negative},
          {"optimizer", std::string(to_string(c.optimizer))},
          {"momentum", c.momentum},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay}};
}

std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer: " + std::string(name));
}

Sampling parse_sampling(std::string_view name) {
  if (name == "taxonomy_aware") return Sampling::taxonomy_aware;
  if (name == "in_batch") return Sampling::in_batch;
  throw ConfigError("unknown sampling mode: " + std::string(name));
}

void TrainConfig::validate() const {
  if (k < 2) throw ConfigError("k must be >= 2");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0) || weight_decay < 0.0) throw ConfigError("adam_eps must be > 0 and weight_decay >= 0");
}

ContrastSet sample_contrast_set(const ProductItem& item, std::string_view attribute, const Taxonomy& taxonomy,
                                std::size_t k, Rng& rng, bool null_negative) {
  if (k < 2) throw ConfigError("k must be >= 2");
  const std::size_t pair_index = taxonomy.index_of(item.category, attribute);
  const auto& pair = taxonomy.pair(pair_index);
  const auto& labels = item.label_of(std::string(attribute));
  const std::size_t null_row = pair.null_row();
  if (null_row == std::string::npos) throw DataError("pair without null entry");

  ContrastSet set;
  std::vector<std::size_t> truth_rows;
  for (const auto& id : labels) {
    auto row = pair.row_of(id);
    if (!row || pair.values[*row].is_null) {
      throw DataError("item " + item.item_id + ": unknown value " + id + " for attribute " + std::string(attribute));
    }
    truth_rows.push_back(*row);
  }
  std::sort(truth_rows.begin(), truth_rows.end());

  if (truth_rows.empty()) {
    set.positive = {pair_index, null_row};
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, truth_rows.size() - 1);
    set.positive = {pair_index, truth_rows[pick(rng)]};
  }

  std::vector<std::size_t> pool;
  for (std::size_t r = 0; r < pair.values.size(); ++r) {
    if (pair.values[r].is_null) continue;
    if (std::binary_search(truth_rows.begin(), truth_rows.end(), r)) continue;
    pool.push_back(r);
  }
  std::size_t budget = k - 1;
  if (null_negative && !truth_rows.empty()) {
    set.negatives.push_back({pair_index, null_row});
    --budget;
  }
  // Partial Fisher-Yates: the first `take` slots become a uniform sample.
  const std::size_t take = std::min(budget, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    set.negatives.push_back({pair_index, pool[i]});
  }
  set.pad_count = (k - 1) - set.negatives.size();
  return set;
}

double softmax_cross_entropy(std::span<const double> logits) {
  if (logits.empty()) throw ConfigError("softmax_cross_entropy needs at least one logit");
  return cross_entropy<double>(logits);
}

ContrastiveLoss contrastive_loss(std::span<const double> item, std::span<const double> positive,
                                 std::span<const std::span<const double>> negatives, std::size_t pad_count,
                                 double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!all_finite(item) || !all_finite(positive)) throw DataError("non-finite embedding in contrastive loss");
  for (const auto& n : negatives) {
    if (!all_finite(n)) throw DataError("non-finite negative embedding in contrastive loss");
  }
  const std::size_t dim = item.size();
  const std::size_t n_neg = negatives.size();

  std::vector<double> logits(1 + n_neg + pad_count, kNegInf);
  logits[0] = dot<double>(item, positive) / tau;
  for (std::size_t j = 0; j < n_neg; ++j) logits[1 + j] = dot<double>(item, negatives[j]) / tau;

  ContrastiveLoss out;
  out.loss = cross_entropy<double>(logits);
  out.grad_item.assign(dim, 0.0);
  out.grad_positive.assign(dim, 0.0);
  out.grad_negatives.assign(n_neg, Embedding(dim, 0.0));
  if (n_neg == 0) return out;

  // dL/dz_j = p_j for negatives, p_0 - 1 for the positive.
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double rest = 0.0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    e[j] = std::exp(logits[j] - m);
    rest += e[j];
  }
  e[0] = std::exp(logits[0] - m);
  const double sum = e[0] + rest;
  const double dz0 = -rest / sum;

  const double ds0 = dz0 / tau;
  for (std::size_t k = 0; k < dim; ++k) {
    out.grad_item[k] += ds0 * positive[k];
    out.grad_positive[k] = ds0 * item[k];
  }
  for (std::size_t j = 0; j < n_neg; ++j) {
    const double dsj = (e[1 + j] / sum) / tau;
    for (std::size_t k = 0; k < dim; ++k) {
      out.grad_item[k] += dsj * negatives[j][k];
      out.grad_negatives[j][k] = dsj * item[k];
    }
  }
  return out;
}

ItemLoss item_loss(const ProductItem& item, const std::map<std::string, ContrastSet>& contrast_sets,
                   const Taxonomy& taxonomy, const EncoderParams& params, double tau) {
  const auto& cfg = params.config;
  for (std::size_t p : taxonomy.pairs_of(item.category)) {
    if (!contrast_sets.count(taxonomy.pair(p).attribute)) {
      throw DataError("item " + item.item_id + ": missing contrast set for attribute " + taxonomy.pair(p).attribute);
    }
  }
  const FeatureBag item_bag = featurize(render_item_prompt(item.title, item.description), cfg);
  std::vector<ContrastSet> sets;
  for (const auto& [attribute, set] : contrast_sets) sets.push_back(set);

  std::map<ValueRef, FeatureBag> bags;
  ValueBagFn value_bag = [&](const ValueRef& ref) -> const FeatureBag& {
    auto it = bags.find(ref);
    if (it == bags.end()) {
      const auto& pair = taxonomy.pair(ref.pair);
      it = bags.emplace(ref, featurize(render_value_prompt(pair.category, pair.attribute, pair.values.at(ref.row).text,
                                                           cfg.prompt_template),
                                       cfg))
               .first;
    }
    return it->second;
  };

  ItemLoss out{0.0, GradientBuffer(cfg)};
  const BatchEntry entry{&item_bag, &sets};
  auto losses = accumulate_batch(std::span(&entry, 1), value_bag, params, tau, out.grads);
  out.loss = losses[0];
  return out;
}

TrainResult fit(const std::vector<ProductItem>& dataset, const Taxonomy& taxonomy, const TrainConfig& cfg,
                const EncoderConfig& encoder_cfg) {
  return fit(dataset, taxonomy, cfg, init_encoder(encoder_cfg));
}

TrainResult fit(const std::vector<ProductItem>& dataset, const Taxonomy& taxonomy, const TrainConfig& cfg,
                EncoderParams initial) {
  cfg.validate();
  initial.config.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  for (const auto& item : dataset) validate_item(item, taxonomy);

  TrainResult result{std::move(initial), {}};
  EncoderParams& params = result.params;
  const auto& ecfg = params.config;

  std::vector<FeatureBag> item_bags;
  item_bags.reserve(dataset.size());
  for (const auto& item : dataset) item_bags.push_back(featurize(render_item_prompt(item.title, item.description), ecfg));
  std::vector<std::vector<FeatureBag>> value_bags(taxonomy.pairs().size());
  for (std::size_t p = 0; p < taxonomy.pairs().size(); ++p) {
    const auto& pair = taxonomy.pair(p);
    for (const auto& v : pair.values) {
      value_bags[p].push_back(
          featurize(render_value_prompt(pair.category, pair.attribute, v.text, ecfg.prompt_template), ecfg));
    }
  }
  const ValueBagFn value_bag = [&](const ValueRef& ref) -> const FeatureBag& {
    return value_bags[ref.pair][ref.row];
  };

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  GradientBuffer grads(ecfg);

  ParamUpdater updater(cfg, params);

  std::vector<std::vector<ContrastSet>> batch_sets;
  std::vector<BatchEntry> entries;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);

      batch_sets.assign(batch.size(), {});
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& item = dataset[batch[b]];
        for (std::size_t p : taxonomy.pairs_of(item.category)) {
          batch_sets[b].push_back(sample_contrast_set(item, taxonomy.pair(p).attribute, taxonomy, cfg.k, rng,
                                                      cfg.null_negative));
        }
      }
      if (cfg.sampling == Sampling::in_batch) {
        // Negatives are the positives drawn for the other items in the batch.
        std::vector<ValueRef> pool;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const auto& item = dataset[batch[b]];
          for (auto& set : batch_sets[b]) {
            const auto& pair = taxonomy.pair(set.positive.pair);
            const auto& labels = item.label_of(pair.attribute);
            pool.clear();
            for (std::size_t o = 0; o < batch.size(); ++o) {
              if (o == b) continue;
              for (const auto& other : batch_sets[o]) {
                const ValueRef& ref = other.positive;
                if (ref == set.positive) continue;
                if (ref.pair == set.positive.pair && labels.count(pair.values[ref.row].value_id)) continue;
                if (std::find(pool.begin(), pool.end(), ref) == pool.end()) pool.push_back(ref);
              }
            }
            std::shuffle(pool.begin(), pool.end(), rng);
            if (pool.size() > cfg.k - 1) pool.resize(cfg.k - 1);
            set.negatives = pool;
            set.pad_count = (cfg.k - 1) - pool.size();
          }
        }
      }

      entries.clear();
      for (std::size_t b = 0; b < batch.size(); ++b) entries.push_back({&item_bags[batch[b]], &batch_sets[b]});
      grads.clear();
      const auto losses = accumulate_batch(entries, value_bag, params, cfg.tau, grads);
      for (double l : losses) {
        if (!std::isfinite(l)) {
          throw DataError("non-finite loss at step " + std::to_string(result.report.steps));
        }
        epoch_loss += l;
      }

      updater.apply(params, grads, 1.0 / static_cast<double>(batch.size()));
      ++result.report.steps;
    }
    result.report.epoch_loss.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  result.report.final_params_digest = params_digest(params);
  return result;
}

double grad_check(const EncoderConfig& cfg, const TrainConfig& tcfg, std::uint64_t seed,
                  const GradCheckOptions& options) {
  cfg.validate();
  if (cfg.embed_dim > 16 || cfg.proj_dim > 16) throw ConfigError("grad_check is limited to dims <= 16");
  if (options.attributes < 1 || options.values_per_attribute < 1) throw ConfigError("empty grad_check fixture");
  Rng rng(seed);

  Taxonomy taxonomy;
  ProductItem item;
  item.item_id = "probe";
  item.category = "gadget";
  std::vector<std::string> title_words;
  for (std::size_t a = 0; a < options.attributes; ++a) {
    std::vector<std::string> values;
    while (values.size() < options.values_per_attribute) {
      auto w = random_word(rng, 3, 7);
      if (std::find(values.begin(), values.end(), w) == values.end()) values.push_back(w);
    }
    const std::string attribute = "attr" + std::to_string(a);
    if (a < options.labeled_attributes) {
      item.labels[attribute] = {values.front()};
      title_words.push_back(values.front());
    } else {
      item.labels[attribute] = {};
    }
    taxonomy.add_pair(item.category, attribute, values);
  }
  for (int i = 0; i < 4; ++i) title_words.push_back(random_word(rng, 2, 6));
  std::shuffle(title_words.begin(), title_words.end(), rng);
  for (const auto& w : title_words) item.title += (item.title.empty() ? "" : " ") + w;
  item.description = random_word(rng, 3, 8) + " " + random_word(rng, 3, 8);

  EncoderConfig ecfg = cfg;
  ecfg.seed = seed;
  EncoderParams params = init_encoder(ecfg);
  // A non-zero bias exercises the bias path in the projection.
  std::uniform_real_distribution<double> bias(-0.05, 0.05);
  for (auto& b : params.proj_bias) b = bias(rng);

  std::map<std::string, ContrastSet> sets;
  for (std::size_t p : taxonomy.pairs_of(item.category)) {
    const auto& attribute = taxonomy.pair(p).attribute;
    sets[attribute] = sample_contrast_set(item, attribute, taxonomy, tcfg.k, rng, tcfg.null_negative);
  }
  const auto analytic = item_loss(item, sets, taxonomy, params, tcfg.tau);

  const FeatureBag item_bag = featurize(render_item_prompt(item.title, item.description), ecfg);
  std::map<ValueRef, FeatureBag> bags;
  ValueBagFn value_bag = [&](const ValueRef& ref) -> const FeatureBag& {
    auto it = bags.find(ref);
    if (it == bags.end()) {
      const auto& pair = taxonomy.pair(ref.pair);
      it = bags.emplace(ref, featurize(render_value_prompt(pair.category, pair.attribute, pair.values.at(ref.row).text,
                                                           ecfg.prompt_template),
                                       ecfg))
               .first;
    }
    return it->second;
  };
  std::vector<ContrastSet> ordered;
  for (const auto& [attribute, set] : sets) ordered.push_back(set);

  constexpr double kEps = 1e-5;
  const auto tau = static_cast<long double>(tcfg.tau);
  double worst = 0.0;
  auto probe = [&](double& param, double grad) {
    const double saved = param;
    const double hi = saved + kEps;
    const double lo = saved - kEps;
    param = hi;
    const long double f_hi = item_loss_forward<long double>(item_bag, ordered, value_bag, params, tau);
    param = lo;
    const long double f_lo = item_loss_forward<long double>(item_bag, ordered, value_bag, params, tau);
    param = saved;
    const double numeric =
        static_cast<double>((f_hi - f_lo) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
    const double err = std::abs(grad - numeric) / std::max(std::abs(numeric), 1e-8);
    worst = std::max(worst, err);
  };

  const std::size_t embed = ecfg.embed_dim;
  for (std::uint32_t row = 0; row < ecfg.hash_buckets; ++row) {
    auto g = analytic.grads.find_table_row(row);
    for (std::size_t d = 0; d < embed; ++d) {
      probe(params.feature_table[std::size_t{row} * embed + d], g.empty() ? 0.0 : g[d]);
    }
  }
  for (std::size_t i = 0; i < params.proj_weight.size(); ++i) probe(params.proj_weight[i], analytic.grads.proj_weight()[i]);
  for (std::size_t i = 0; i < params.proj_bias.size(); ++i) probe(params.proj_bias[i], analytic.grads.proj_bias()[i]);
  return worst;
}

}  // namespace taclr
