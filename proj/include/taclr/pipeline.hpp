#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "taclr/corpus.hpp"
#include "taclr/encoder.hpp"
#include "taclr/eval.hpp"
#include "taclr/retrieval.hpp"
#include "taclr/trainer.hpp"

namespace taclr {

/// Top-1 predictions for every item, in input order. Work is split across
/// `threads` workers; the output does not depend on the worker count.
std::vector<Prediction> predict_all(const Retriever& retriever, const std::vector<ProductItem>& items,
                                    std::size_t threads = 1);
std::vector<Prediction> predict_all_static(const Retriever& retriever, const std::vector<ProductItem>& items,
                                           double threshold);

/// One train -> index -> predict -> eval run on a generated corpus.
struct ExperimentConfig {
  CorpusSpec corpus;
  EncoderConfig encoder;
  TrainConfig train;
  SplitMode split = SplitMode::random;
  SplitRatios ratios;
  CrossValueOptions cross_value;
  std::uint64_t split_seed = 0;
};

struct ExperimentResult {
  std::string params_digest;
  TrainReport train;
  EvalReport dynamic;
  /// (threshold, report) for each requested static threshold.
  std::vector<std::pair<double, EvalReport>> statics;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const double> static_thresholds = {});
ExperimentResult run_experiment(const GeneratedDataset& corpus, const ExperimentConfig& cfg,
                                std::span<const double> static_thresholds = {});

enum class Study { sampling, thresholds, prompts, transfer };
std::string_view to_string(Study s);
Study parse_study(std::string_view name);

struct AblationOptions {
  CorpusSpec corpus;
  EncoderConfig encoder;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::size_t> ks{16, 32, 64, 128};
  std::vector<double> thresholds{0.60, 0.65, 0.70};
  std::vector<PromptTemplate> templates{PromptTemplate::value_only, PromptTemplate::category_value,
                                        PromptTemplate::attribute_value, PromptTemplate::full};
};

/// A results row: label cells followed by seed-averaged metrics.
struct AblationRow {
  std::vector<std::string> labels;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct AblationTable {
  Study study = Study::sampling;
  std::vector<std::string> label_columns;
  std::vector<AblationRow> rows;
  /// Per-seed cells with their params digests.
  nlohmann::json cells = nlohmann::json::array();

  const AblationRow* find(const std::vector<std::string>& labels) const;
};

/// Column order per study (label columns, then precision, recall, f1):
///   sampling:   sampling, k
///   thresholds: mode, threshold
///   prompts:    template
///   transfer:   domain
AblationTable ablate(Study study, const AblationOptions& options);

std::string table_to_csv(const AblationTable& table);
nlohmann::json table_to_json(const AblationTable& table);

}  // namespace taclr
