#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "taclr/product.hpp"
#include "taclr/retrieval.hpp"

namespace taclr {

/// Per (item, attribute) outcome. FP_AND_FN is a wrong non-null value for a
/// pair that does have ground truth.
enum class Outcome { tp, fp, fn, tn, fp_and_fn };

std::string_view to_string(Outcome o);

Outcome classify_outcome(const std::set<std::string>& label, const std::optional<std::string>& predicted);

struct MicroMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  std::size_t n_pairs = 0;
  /// Pairs with non-empty / empty ground truth, and FP raised on the latter.
  std::size_t n_labeled = 0;
  std::size_t n_empty = 0;
  std::size_t fp_on_empty = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  void add(Outcome o, bool legacy_fpfn = false);
  /// Recomputes precision/recall/f1 from the counts; 0 when undefined.
  void finalize();
};

struct EvalReport : MicroMetrics {
  /// normalized | unnorm_implicit | null
  std::map<std::string, MicroMetrics> per_split;
  /// explicit | unnormalized | implicit | null
  std::map<std::string, MicroMetrics> per_kind;
  /// Pairs counted overall but missing a usable kind tag.
  std::size_t untagged_pairs = 0;
};

/// Micro-averaged metrics. With `legacy_fpfn` a FP_AND_FN outcome counts as
/// FP only, as some earlier work did.
EvalReport micro_metrics(std::span<const Outcome> outcomes, bool legacy_fpfn = false);

/// Scores predictions against gold items, overall and per robustness split.
/// A pair with empty ground truth lands in the null split; labeled pairs go
/// by their kind tag. Throws DataError when an item has no prediction.
EvalReport split_report(const std::vector<ProductItem>& gold, const std::vector<Prediction>& predictions,
                        bool legacy_fpfn = false);

nlohmann::json metrics_to_json(const MicroMetrics& m);
nlohmann::json report_to_json(const EvalReport& r);

struct BenchResult {
  double ms_per_sample = 0.0;
  double throughput_per_s = 0.0;
  std::size_t samples = 0;
};

/// Times `predict` over `items` on the calling thread: `warmup` untimed
/// passes, then `repeats` timed passes.
BenchResult benchmark_inference(const std::function<void(const ProductItem&)>& predict,
                                const std::vector<ProductItem>& items, std::size_t warmup, std::size_t repeats);
/// Derives the rates from a measured total; exposed for the arithmetic checks.
BenchResult bench_from_total(double total_ms, std::size_t samples);

}  // namespace taclr
