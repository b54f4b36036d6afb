#include "taclr/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <thread>

#include "taclr/error.hpp"

namespace taclr {

using json = nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}


void accumulate(AblationRow& row, const MicroMetrics& m, std::size_t n_seeds) {
  const double w = 1.0 / static_cast<double>(n_seeds);
  row.precision += w * m.precision;
  row.recall += w * m.recall;
  row.f1 += w * m.f1;
}

json cell_json(const std::vector<std::string>& labels, std::uint64_t seed, const std::string& digest,
               const MicroMetrics& m) {
  return {{"labels", labels}, {"seed", seed}, {"params_digest", digest}, {"metrics", metrics_to_json(m)}};
}

ExperimentConfig seeded(const AblationOptions& options, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.corpus = options.corpus;
  cfg.corpus.seed = options.corpus.seed + seed;
  cfg.encoder = options.encoder;
  cfg.encoder.seed = options.encoder.seed + seed;
  cfg.train = options.train;
  cfg.train.seed = options.train.seed + seed;
  cfg.split_seed = seed;
  return cfg;
}

}  // namespace

std::vector<Prediction> predict_all(const Retriever& retriever, const std::vector<ProductItem>& items,
                                    std::size_t threads) {
  std::vector<Prediction> out(items.size());
  threads = std::max<std::size_t>(1, std::min(threads, items.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) out[i] = retriever.predict_top1(items[i]);
    return out;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < items.size(); i += threads) out[i] = retriever.predict_top1(items[i]);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<Prediction> predict_all_static(const Retriever& retriever, const std::vector<ProductItem>& items,
                                           double threshold) {
  std::vector<Prediction> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(retriever.predict_with_static_threshold(item, threshold));
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const double> static_thresholds) {
  return run_experiment(generate_corpus(cfg.corpus), cfg, static_thresholds);
}

ExperimentResult run_experiment(const GeneratedDataset& corpus, const ExperimentConfig& cfg,
                                std::span<const double> static_thresholds) {
  const auto start = std::chrono::steady_clock::now();
  const auto splits = make_splits(corpus, cfg.split, cfg.ratios, cfg.split_seed, cfg.cross_value);

  ExperimentResult result;
  const auto train_start = std::chrono::steady_clock::now();
  auto trained = fit(splits.train, corpus.taxonomy, cfg.train, cfg.encoder);
  result.train_seconds = seconds_since(train_start);
  result.train = trained.report;
  result.params_digest = trained.report.final_params_digest;

  const auto index = build_index(corpus.taxonomy, trained.params);
  const Retriever retriever(index, trained.params);
  result.dynamic = split_report(splits.test, predict_all(retriever, splits.test));
  for (double t : static_thresholds) {
    result.statics.emplace_back(t, split_report(splits.test, predict_all_static(retriever, splits.test, t)));
  }
  result.total_seconds = seconds_since(start);
  return result;
}

std::string_view to_string(Study s) {
  switch (s) {
    case Study::sampling: return "sampling";
    case Study::thresholds: return "thresholds";
    case Study::prompts: return "prompts";
    case Study::transfer: return "transfer";
  }
  return "sampling";
}

Study parse_study(std::string_view name) {
  for (auto s : {Study::sampling, Study::thresholds, Study::prompts, Study::transfer}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown study: " + std::string(name));
}

const AblationRow* AblationTable::find(const std::vector<std::string>& labels) const {
  for (const auto& r : rows) {
    if (r.labels == labels) return &r;
  }
  return nullptr;
}

AblationTable ablate(Study study, const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  options.corpus.validate();
  options.encoder.validate();
  options.train.validate();
  const std::size_t n_seeds = options.seeds.size();

  AblationTable table;
  table.study = study;
  auto row_for = [&table](std::vector<std::string> labels) -> AblationRow& {
    for (auto& r : table.rows) {
      if (r.labels == labels) return r;
    }
    table.rows.push_back({std::move(labels), 0.0, 0.0, 0.0});
    return table.rows.back();
  };

  switch (study) {
    case Study::sampling: {
      if (options.ks.empty()) throw ConfigError("sampling study needs at least one k");
      table.label_columns = {"sampling", "k"};
      for (auto mode : {Sampling::taxonomy_aware, Sampling::in_batch}) {
        for (std::size_t k : options.ks) row_for({std::string(to_string(mode)), std::to_string(k)});
      }
      for (std::uint64_t seed : options.seeds) {
        auto base = seeded(options, seed);
        const auto corpus = generate_corpus(base.corpus);
        for (auto mode : {Sampling::taxonomy_aware, Sampling::in_batch}) {
          for (std::size_t k : options.ks) {
            auto cfg = base;
            cfg.train.sampling = mode;
            cfg.train.k = k;
            const auto res = run_experiment(corpus, cfg);
            std::vector<std::string> labels{std::string(to_string(mode)), std::to_string(k)};
            accumulate(row_for(labels), res.dynamic, n_seeds);
            table.cells.push_back(cell_json(labels, seed, res.params_digest, res.dynamic));
          }
        }
      }
      break;
    }
    case Study::thresholds: {
      if (options.thresholds.empty()) throw ConfigError("thresholds study needs at least one threshold");
      table.label_columns = {"mode", "threshold"};
      row_for({"dynamic", ""});
      for (double t : options.thresholds) row_for({"static", format_number(t)});
      for (std::uint64_t seed : options.seeds) {
        const auto cfg = seeded(options, seed);
        // Dynamic and static decisions share one trained model per seed.
        const auto res = run_experiment(cfg, options.thresholds);
        accumulate(row_for({"dynamic", ""}), res.dynamic, n_seeds);
        table.cells.push_back(cell_json({"dynamic", ""}, seed, res.params_digest, res.dynamic));
        for (const auto& [t, report] : res.statics) {
          std::vector<std::string> labels{"static", format_number(t)};
          accumulate(row_for(labels), report, n_seeds);
          table.cells.push_back(cell_json(labels, seed, res.params_digest, report));
        }
      }
      break;
    }
    case Study::prompts: {
      if (options.templates.empty()) throw ConfigError("prompts study needs at least one template");
      table.label_columns = {"template"};
      for (auto t : options.templates) row_for({std::string(to_string(t))});
      for (std::uint64_t seed : options.seeds) {
        auto base = seeded(options, seed);
        const auto corpus = generate_corpus(base.corpus);
        for (auto t : options.templates) {
          auto cfg = base;
          cfg.encoder.prompt_template = t;
          const auto res = run_experiment(corpus, cfg);
          std::vector<std::string> labels{std::string(to_string(t))};
          accumulate(row_for(labels), res.dynamic, n_seeds);
          table.cells.push_back(cell_json(labels, seed, res.params_digest, res.dynamic));
        }
      }
      break;
    }
    case Study::transfer: {
      table.label_columns = {"domain"};
      const SplitMode modes[] = {SplitMode::random, SplitMode::cross_category, SplitMode::cross_value};
      for (auto m : modes) row_for({std::string(to_string(m))});
      for (std::uint64_t seed : options.seeds) {
        auto base = seeded(options, seed);
        const auto corpus = generate_corpus(base.corpus);
        for (auto m : modes) {
          auto cfg = base;
          cfg.split = m;
          const auto res = run_experiment(corpus, cfg);
          std::vector<std::string> labels{std::string(to_string(m))};
          accumulate(row_for(labels), res.dynamic, n_seeds);
          table.cells.push_back(cell_json(labels, seed, res.params_digest, res.dynamic));
        }
      }
      break;
    }
  }
  return table;
}

std::string table_to_csv(const AblationTable& table) {
  std::string out;
  for (const auto& c : table.label_columns) out += c + ",";
  out += "precision,recall,f1\n";
  for (const auto& r : table.rows) {
    for (const auto& l : r.labels) out += l + ",";
    out += format_number(r.precision) + "," + format_number(r.recall) + "," + format_number(r.f1) + "\n";
  }
  return out;
}

json table_to_json(const AblationTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    json row = json::object();
    for (std::size_t i = 0; i < table.label_columns.size(); ++i) {
      row[table.label_columns[i]] = r.labels[i].empty() ? json(nullptr) : json(r.labels[i]);
    }
    row["precision"] = r.precision;
    row["recall"] = r.recall;
    row["f1"] = r.f1;
    rows.push_back(std::move(row));
  }
  return {{"study", std::string(to_string(table.study))},
          {"columns", table.label_columns},
          {"rows", std::move(rows)},
          {"cells", table.cells}};
}

}  // namespace taclr
