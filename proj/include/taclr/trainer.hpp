#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taclr/encoder.hpp"
#include "taclr/product.hpp"
#include "taclr/taxonomy.hpp"

namespace taclr {

enum class Sampling { taxonomy_aware, in_batch };

std::string_view to_string(Sampling s);
Sampling parse_sampling(std::string_view name);

enum class Optimizer { sgd, adam };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  std::size_t k = 128;  // contrast-set size including the positive
  double tau = 0.05;
  double learning_rate = 0.003;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  Sampling sampling = Sampling::taxonomy_aware;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  /// SGD only.
  double momentum = 0.0;
  /// Adam only; weight decay is decoupled and skips the bias.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  /// Taxonomy-aware sets also contrast a non-null positive against the
  /// pair's null value, which is what teaches the null score to act as a
  /// threshold.
  bool null_negative = true;

  void validate() const;
};

using Rng = std::mt19937_64;

nlohmann::json train_config_to_json(const TrainConfig& c);

/// Row `row` of taxonomy pair `pair`.
struct ValueRef {
  std::size_t pair = 0;
  std::size_t row = 0;

  auto operator<=>(const ValueRef&) const = default;
};

struct ContrastSet {
  ValueRef positive;
  std::vector<ValueRef> negatives;
  std::size_t pad_count = 0;
};

/// Draws the positive (the null entry for unlabeled attributes, otherwise a
/// uniform draw from the labels) and up to k-1 distinct negatives from the
/// same pair, never touching any ground-truth value. Throws DataError for
/// unknown pairs and ConfigError for k < 2.
ContrastSet sample_contrast_set(const ProductItem& item, std::string_view attribute, const Taxonomy& taxonomy,
                                std::size_t k, Rng& rng, bool null_negative = true);

struct ContrastiveLoss {
  double loss = 0.0;
  Embedding grad_item;
  Embedding grad_positive;
  std::vector<Embedding> grad_negatives;
};

/// -log softmax(logits)[0]. Entries may be -inf (padding).
double softmax_cross_entropy(std::span<const double> logits);

/// Softmax cross-entropy with the positive at logit 0, negatives next and
/// `pad_count` logits fixed at -inf. Inputs must be unit vectors; gradients
/// are with respect to the raw embedding vectors. Throws DataError on
/// non-finite input.
ContrastiveLoss contrastive_loss(std::span<const double> item, std::span<const double> positive,
                                 std::span<const std::span<const double>> negatives, std::size_t pad_count,
                                 double tau);

struct ItemLoss {
  double loss = 0.0;
  GradientBuffer grads;
};

/// Sum of per-attribute contrastive losses for one item. The item text is
/// encoded once and shared by every attribute term.
ItemLoss item_loss(const ProductItem& item, const std::map<std::string, ContrastSet>& contrast_sets,
                   const Taxonomy& taxonomy, const EncoderParams& params, double tau);

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  std::string final_params_digest;
};

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

/// Mini-batch training (Adam or SGD per cfg) starting from `initial`. Deterministic in
/// cfg.seed. Throws DataError on invalid items or a non-finite loss.
TrainResult fit(const std::vector<ProductItem>& dataset, const Taxonomy& taxonomy, const TrainConfig& cfg,
                EncoderParams initial);
TrainResult fit(const std::vector<ProductItem>& dataset, const Taxonomy& taxonomy, const TrainConfig& cfg,
                const EncoderConfig& encoder_cfg);

struct GradCheckOptions {
  std::size_t attributes = 2;
  std::size_t values_per_attribute = 6;
  /// Number of attributes that receive a ground-truth value (the rest are null).
  std::size_t labeled_attributes = 1;
};

/// Max relative error between analytic parameter gradients of item_loss and
/// central finite differences (step 1e-5, evaluated in extended precision)
/// on a random single-item fixture.
double grad_check(const EncoderConfig& cfg, const TrainConfig& tcfg, std::uint64_t seed,
                  const GradCheckOptions& options = {});

}  // namespace taclr
