#include "taclr/eval.hpp"

#include <chrono>
#include <unordered_map>

#include "taclr/error.hpp"

namespace taclr {

using json = nlohmann::json;

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::tp: return "TP";
    case Outcome::fp: return "FP";
    case Outcome::fn: return "FN";
    case Outcome::tn: return "TN";
    case Outcome::fp_and_fn: return "FP_AND_FN";
  }
  return "TN";
}

Outcome classify_outcome(const std::set<std::string>& label, const std::optional<std::string>& predicted) {
  if (label.empty()) return predicted ? Outcome::fp : Outcome::tn;
  if (!predicted) return Outcome::fn;
  return label.count(*predicted) ? Outcome::tp : Outcome::fp_and_fn;
}

void MicroMetrics::add(Outcome o, bool legacy_fpfn) {
  ++n_pairs;
  switch (o) {
    case Outcome::tp:
      ++tp;
      ++n_labeled;
      break;
    case Outcome::fp:
      ++fp;
      ++fp_on_empty;
      ++n_empty;
      break;
    case Outcome::fn:
      ++fn;
      ++n_labeled;
      break;
    case Outcome::tn:
      ++tn;
      ++n_empty;
      break;
    case Outcome::fp_and_fn:
      ++fp;
      if (!legacy_fpfn) ++fn;
      ++n_labeled;
      break;
  }
}

void MicroMetrics::finalize() {
  const auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  precision = ratio(tp, tp + fp);
  recall = ratio(tp, tp + fn);
  f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

EvalReport micro_metrics(std::span<const Outcome> outcomes, bool legacy_fpfn) {
  EvalReport r;
  for (auto o : outcomes) r.add(o, legacy_fpfn);
  r.finalize();
  return r;
}

EvalReport split_report(const std::vector<ProductItem>& gold, const std::vector<Prediction>& predictions,
                        bool legacy_fpfn) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) by_id[p.item_id] = &p;

  EvalReport report;
  for (const char* split : {"normalized", "unnorm_implicit", "null"}) report.per_split[split];
  for (auto kind : {ValueKind::explicit_mention, ValueKind::unnormalized, ValueKind::implicit, ValueKind::null}) {
    report.per_kind[std::string(to_string(kind))];
  }

  for (const auto& item : gold) {
    auto it = by_id.find(item.item_id);
    if (it == by_id.end()) throw DataError("no prediction for item " + item.item_id);
    for (const auto& ap : it->second->attributes) {
      const auto& label = item.label_of(ap.attribute);
      const Outcome o = classify_outcome(label, ap.value);
      report.add(o, legacy_fpfn);

      auto kind_it = item.kinds.find(ap.attribute);
      std::optional<ValueKind> kind;
      if (kind_it != item.kinds.end()) kind = kind_it->second;
      if (label.empty()) {
        report.per_split["null"].add(o, legacy_fpfn);
        report.per_kind["null"].add(o, legacy_fpfn);
        continue;
      }
      if (!kind || *kind == ValueKind::null) {
        ++report.untagged_pairs;
        continue;
      }
      report.per_split[*kind == ValueKind::explicit_mention ? "normalized" : "unnorm_implicit"].add(o, legacy_fpfn);
      report.per_kind[std::string(to_string(*kind))].add(o, legacy_fpfn);
    }
  }
  report.finalize();
  for (auto& [name, m] : report.per_split) m.finalize();
  for (auto& [name, m] : report.per_kind) m.finalize();
  return report;
}

json metrics_to_json(const MicroMetrics& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"tn", m.tn},
          {"n_pairs", m.n_pairs},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1}};
}

json report_to_json(const EvalReport& r) {
  json j = metrics_to_json(r);
  json splits = json::object();
  for (const auto& [name, m] : r.per_split) splits[name] = metrics_to_json(m);
  json kinds = json::object();
  for (const auto& [name, m] : r.per_kind) kinds[name] = metrics_to_json(m);
  j["per_split"] = std::move(splits);
  j["per_kind"] = std::move(kinds);
  j["untagged_pairs"] = r.untagged_pairs;
  return j;
}

BenchResult bench_from_total(double total_ms, std::size_t samples) {
  BenchResult b;
  b.samples = samples;
  if (samples == 0 || !(total_ms > 0.0)) return b;
  b.ms_per_sample = total_ms / static_cast<double>(samples);
  b.throughput_per_s = 1000.0 / b.ms_per_sample;
  return b;
}

BenchResult benchmark_inference(const std::function<void(const ProductItem&)>& predict,
                                const std::vector<ProductItem>& items, std::size_t warmup, std::size_t repeats) {
  if (repeats < 1) throw ConfigError("benchmark needs repeats >= 1");
  for (std::size_t w = 0; w < warmup; ++w) {
    for (const auto& item : items) predict(item);
  }
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < repeats; ++r) {
    for (const auto& item : items) predict(item);
  }
  const auto stop = std::chrono::steady_clock::now();
  const double total_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  return bench_from_total(total_ms, items.size() * repeats);
}

}  // namespace taclr
