// Acceptance checks. One PASS/FAIL line per criterion; pass a criterion
// number to run only that one.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "taclr/cli.hpp"
#include "taclr/corpus.hpp"
#include "taclr/eval.hpp"
#include "taclr/pipeline.hpp"
#include "taclr/retrieval.hpp"
#include "taclr/trainer.hpp"

using namespace taclr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("taclr_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

/// Default corpus and model, trained once per process.
struct DefaultRun {
  GeneratedDataset corpus;
  DatasetSplits splits;
  EncoderParams params;
  EvalReport report;
  double seconds = 0.0;
};

const DefaultRun& default_run() {
  static const DefaultRun run = [] {
    DefaultRun r;
    const auto t0 = Clock::now();
    CorpusSpec spec;
    spec.seed = 1;
    r.corpus = generate_corpus(spec);
    r.splits = make_splits(r.corpus, SplitMode::random, {}, 1);
    TrainConfig tc;
    tc.seed = 1;
    EncoderConfig ec;
    ec.seed = 1;
    r.params = fit(r.splits.train, r.corpus.taxonomy, tc, ec).params;
    const auto index = build_index(r.corpus.taxonomy, r.params);
    const Retriever retriever(index, r.params);
    r.report = split_report(r.splits.test, predict_all(retriever, r.splits.test));
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

AblationOptions ablation_options() {
  AblationOptions o;
  o.corpus.n_categories = 25;
  o.corpus.n_items = 5000;
  return o;
}

// 1
Verdict gradient_correctness() {
  EncoderConfig c;
  c.hash_buckets = 256;
  c.word_ngrams = {1, 2};
  c.char_ngrams = {3};
  TrainConfig t;
  t.k = 8;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    c.embed_dim = c.proj_dim = seed % 2 ? 16 : 8;
    worst = std::max(worst, grad_check(c, t, seed));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0, fmt("max rel err %.3e over 20 seeds (dims 8/16), %.2fs", worst, secs)};
}

// 2
Verdict loss_oracle() {
  const auto j = read_json(fs::path(TACLR_FIXTURE_DIR) / "loss_cases.json");
  auto vec = [](const json& a) {
    std::vector<double> v;
    for (const auto& s : a) v.push_back(std::stod(s.get<std::string>()));
    return v;
  };
  double worst = 0.0;
  std::size_t n = 0;
  for (const auto& c : j.at("cases")) {
    const auto item = vec(c.at("item"));
    const auto pos = vec(c.at("positive"));
    std::vector<std::vector<double>> negs;
    for (const auto& x : c.at("negatives")) negs.push_back(vec(x));
    std::vector<std::span<const double>> views(negs.begin(), negs.end());
    const double got = contrastive_loss(item, pos, views, c.at("pad_count").get<std::size_t>(),
                                        std::stod(c.at("tau").get<std::string>()))
                           .loss;
    worst = std::max(worst, std::abs(got - std::stod(c.at("loss").get<std::string>())));
    ++n;
  }
  double uniform_worst = 0.0;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (std::size_t k : {2, 4, 16, 128}) {
    std::vector<double> v(16);
    double s = 0;
    for (auto& x : v) s += (x = g(rng)) * x;
    for (auto& x : v) x /= std::sqrt(s);
    std::vector<std::span<const double>> negs(k - 1, std::span<const double>(v));
    uniform_worst = std::max(uniform_worst, std::abs(contrastive_loss(v, v, negs, 0, 0.05).loss - std::log(double(k))));
  }
  return {n == 100 && worst < 1e-9 && uniform_worst < 1e-12,
          fmt("%zu cases, max |err| %.2e; uniform ln K max |err| %.2e", n, worst, uniform_worst)};
}

// 3
Verdict inference_equivalence() {
  const auto& run = default_run();
  const auto& t = run.corpus.taxonomy;
  const auto& p = run.params;
  const auto& items = run.splits.test;
  const auto tmpl = p.config.prompt_template;

  const auto index = build_index(t, p);
  const Retriever retriever(index, p);
  std::size_t pairs = 0, argmax_same = 0, set_agree = 0;
  double worst = 0.0;
  for (const auto& item : items) {
    const auto ie = encode_text(render_item_prompt(item.title, item.description), p);
    const auto top = retriever.predict_top1(item);
    const auto sets = retriever.predict_set(item, 1000);
    for (std::size_t pi : t.pairs_of(item.category)) {
      const auto& pair = t.pair(pi);
      // Re-encode every value prompt for this item, as a brute-force scorer would.
      std::vector<double> scores;
      for (const auto& v : pair.values) {
        const auto ve = encode_text(render_value_prompt(pair.category, pair.attribute, v.text, tmpl), p);
        double s = 0;
        for (std::size_t d = 0; d < ve.size(); ++d) s += ie[d] * ve[d];
        scores.push_back(s);
      }
      const auto brute = decide_top1(scores);
      const auto* got = top.find(pair.attribute);
      ++pairs;
      if (!got) continue;
      const bool same = got->value.has_value() == brute.row.has_value() &&
                        (!brute.row || *got->value == pair.values[*brute.row].value_id);
      argmax_same += same;
      worst = std::max({worst, std::abs(got->score - brute.score), std::abs(got->null_score - brute.null_score)});
      const auto& s = sets.at(pair.attribute);
      set_agree += (got->value.has_value() == !s.empty()) && (!got->value || *got->value == s.front());
    }
  }
  return {argmax_same == pairs && set_agree == pairs && worst < 1e-6,
          fmt("%zu items, %zu pairs: argmax identical %zu, max score diff %.2e, set/argmax null agreement %zu",
              items.size(), pairs, argmax_same, worst, set_agree)};
}

// 4
Verdict metrics_oracle() {
  const auto fx = read_json(fs::path(TACLR_FIXTURE_DIR) / "metrics_fixture.json");
  std::vector<Outcome> outcomes;
  bool rows_ok = true;
  std::set<std::string> kinds;
  for (const auto& c : fx.at("cases")) {
    const auto label = c.at("label").get<std::set<std::string>>();
    std::optional<std::string> pred;
    if (!c.at("predicted").is_null()) pred = c.at("predicted").get<std::string>();
    const auto o = classify_outcome(label, pred);
    rows_ok &= std::string(to_string(o)) == c.at("expected").get<std::string>();
    kinds.insert(std::string(to_string(o)));
    outcomes.push_back(o);
  }
  const auto m = micro_metrics(outcomes);
  const auto& want = fx.at("expected");
  const bool counts_ok = m.tp == want.at("tp") && m.fp == want.at("fp") && m.fn == want.at("fn") &&
                         m.tn == want.at("tn");
  auto ratio = [](const json& r) { return r.at(0).get<double>() / r.at(1).get<double>(); };
  const double dp = std::abs(m.precision - ratio(want.at("precision")));
  const double dr = std::abs(m.recall - ratio(want.at("recall")));
  const double df = std::abs(m.f1 - ratio(want.at("f1")));
  const bool metrics_ok = dp <= 1e-12 && dr <= 1e-12 && df <= 1e-12;

  // Identities on random datasets with random predictions.
  std::size_t violations = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CorpusSpec spec;
    spec.n_categories = 6;
    spec.values_min = 3;
    spec.values_max = 8;
    spec.n_items = 200;
    spec.seed = seed;
    const auto ds = generate_corpus(spec);
    std::mt19937_64 rng(seed);
    std::vector<Prediction> preds;
    std::size_t labeled = 0, empty = 0;
    for (const auto& item : ds.items) {
      Prediction p;
      p.item_id = item.item_id;
      for (std::size_t pi : ds.taxonomy.pairs_of(item.category)) {
        const auto& pair = ds.taxonomy.pair(pi);
        (item.label_of(pair.attribute).empty() ? empty : labeled)++;
        const std::size_t row = rng() % pair.values.size();
        std::optional<std::string> v;
        if (!pair.values[row].is_null) v = pair.values[row].value_id;
        p.attributes.push_back({pair.attribute, v, 0.0, 0.0, {}});
      }
      preds.push_back(std::move(p));
    }
    const auto r = split_report(ds.items, preds);
    violations += (r.tp + r.fn != labeled) + (r.tn + r.fp_on_empty != empty);
  }
  return {rows_ok && kinds.size() == 5 && counts_ok && metrics_ok && violations == 0,
          fmt("%zu cases, %zu outcome kinds, rows %s, counts %s, |dP|=%.1e |dR|=%.1e |dF1|=%.1e, identity "
              "violations %zu/40",
              outcomes.size(), kinds.size(), rows_ok ? "ok" : "WRONG", counts_ok ? "ok" : "WRONG", dp, dr, df,
              violations)};
}

// 5
Verdict learnability() {
  const auto& run = default_run();
  const double implicit = run.report.per_kind.count("implicit") ? run.report.per_kind.at("implicit").f1 : 0.0;
  return {run.report.f1 >= 0.80 && implicit >= 0.60 && run.seconds < 300.0,
          fmt("held-out F1 %.3f (P %.3f R %.3f), implicit F1 %.3f, pipeline %.1fs", run.report.f1,
              run.report.precision, run.report.recall, implicit, run.seconds)};
}

double cell_f1(const AblationTable& t, std::vector<std::string> labels) {
  const auto* row = t.find(labels);
  return row ? row->f1 : std::nan("");
}

// 6
Verdict sampling_direction() {
  const auto t = ablate(Study::sampling, ablation_options());
  const double ta128 = cell_f1(t, {"taxonomy_aware", "128"});
  const double ib128 = cell_f1(t, {"in_batch", "128"});
  bool monotone = true;
  std::string curve;
  double prev = -1.0;
  for (const char* k : {"16", "32", "64", "128"}) {
    const double f = cell_f1(t, {"taxonomy_aware", k});
    monotone &= f >= prev - 0.01;
    prev = f;
    curve += fmt(" K=%s:%.3f", k, f);
  }
  return {ta128 - ib128 >= 0.05 && monotone,
          fmt("K=128 taxonomy_aware %.3f vs in_batch %.3f (+%.1f pts); taxonomy_aware%s", ta128, ib128,
              100 * (ta128 - ib128), curve.c_str())};
}

// 7
Verdict threshold_direction() {
  const auto opt = ablation_options();
  const auto t = ablate(Study::thresholds, opt);
  const double dyn = cell_f1(t, {"dynamic", ""});
  double best_static = 0.0;
  bool pattern = true;
  double prev_p = -1.0, prev_r = 2.0;
  std::string grid;
  auto ths = opt.thresholds;
  std::sort(ths.begin(), ths.end());
  for (double th : ths) {
    const auto* row = t.find({"static", fmt("%.6f", th)});
    if (!row) return {false, "missing static row"};
    best_static = std::max(best_static, row->f1);
    pattern &= row->precision >= prev_p && row->recall <= prev_r;
    prev_p = row->precision;
    prev_r = row->recall;
    grid += fmt(" %.2f:P%.3f/R%.3f/F%.3f", th, row->precision, row->recall, row->f1);
  }
  return {dyn >= best_static - 0.005 && pattern,
          fmt("dynamic F1 %.3f vs best static %.3f; static grid%s", dyn, best_static, grid.c_str())};
}

// 8
Verdict prompt_direction() {
  const auto t = ablate(Study::prompts, ablation_options());
  const double full = cell_f1(t, {"full"});
  const double value_only = cell_f1(t, {"value_only"});
  return {full >= value_only,
          fmt("full %.3f vs value_only %.3f (category_value %.3f, attribute_value %.3f)", full, value_only,
              cell_f1(t, {"category_value"}), cell_f1(t, {"attribute_value"}))};
}

// 9
Verdict transfer_direction() {
  const auto t = ablate(Study::transfer, ablation_options());
  const double in_domain = cell_f1(t, {"random"});
  const double cc = cell_f1(t, {"cross_category"});
  const double cv = cell_f1(t, {"cross_value"});
  auto ok = [&](double f) { return f > 0.50 && in_domain - f <= 0.15; };
  return {ok(cc) && ok(cv), fmt("in-domain %.3f, cross_category %.3f (%s), cross_value %.3f (%s)", in_domain, cc,
                                ok(cc) ? "ok" : "FAIL", cv, ok(cv) ? "ok" : "FAIL")};
}

// 10
Verdict determinism() {
  const auto root = scratch("determinism");
  {
    std::ofstream(root / "spec.json") << R"({"n_categories":6,"attrs_per_category":2,"values_per_attribute":6,)"
                                      << R"("n_items":400,"cue_vocab_size":128,"seed":4})";
  }
  struct Step {
    std::string name;
    std::vector<std::string> args;
    std::string manifest;
  };
  std::map<std::string, std::vector<json>> seen;
  bool all_ok = true;
  for (const char* side : {"a", "b"}) {
    const fs::path d = root / side;
    fs::create_directories(d);
    const std::string s = d.string();
    ::setenv("TACLR_OUT_DIR", s.c_str(), 1);
    const std::vector<Step> steps = {
        {"gen", {"gen", "--spec", (root / "spec.json").string(), "--out-dir", s + "/data", "--split", "random"},
         s + "/data/manifest.json"},
        {"taxonomy stats", {"taxonomy", "stats", s + "/data/taxonomy.jsonl"}, s + "/taclr-taxonomy-stats.manifest.json"},
        {"taxonomy validate", {"taxonomy", "validate", s + "/data/taxonomy.jsonl"},
         s + "/taclr-taxonomy-validate.manifest.json"},
        {"train",
         {"train", "--taxonomy", s + "/data/taxonomy.jsonl", "--data", s + "/data/train.jsonl", "--out",
          s + "/params.bin", "--epochs", "2"},
         s + "/params.bin.manifest.json"},
        {"index", {"index", "--taxonomy", s + "/data/taxonomy.jsonl", "--params", s + "/params.bin", "--out",
                   s + "/index.bin"},
         s + "/index.bin.manifest.json"},
        {"predict",
         {"--threads", "2", "predict", "--index", s + "/index.bin", "--params", s + "/params.bin", "--data",
          s + "/data/test.jsonl", "--out", s + "/preds.jsonl"},
         s + "/preds.jsonl.manifest.json"},
        {"eval", {"eval", "--gold", s + "/data/test.jsonl", "--preds", s + "/preds.jsonl", "--splits", "--out",
                  s + "/report.json"},
         s + "/report.json.manifest.json"},
        {"encode", {"encode", "--params", s + "/params.bin", "--text", "A phone with brand being Apple"},
         s + "/taclr-encode.manifest.json"},
        {"bench", {"bench", "--index", s + "/index.bin", "--params", s + "/params.bin", "--data",
                   s + "/data/test.jsonl", "--repeats", "1"},
         s + "/taclr-bench.manifest.json"},
        {"ablate", {"ablate", "--study", "thresholds", "--spec", (root / "spec.json").string(), "--seeds", "1",
                    "--epochs", "1", "--out-dir", s + "/ablate"},
         s + "/ablate/thresholds.manifest.json"},
    };
    for (const auto& step : steps) {
      std::vector<std::string> argv{"taclr", "--quiet", "--seed", "5"};
      argv.insert(argv.end(), step.args.begin(), step.args.end());
      if (dispatch(argv) != 0) {
        all_ok = false;
        std::printf("    %s failed on run %s\n", step.name.c_str(), side);
        continue;
      }
      json m = read_json(step.manifest);
      json outputs;
      for (auto& [path, digest] : m.at("outputs").items()) outputs[path.substr(s.size())] = digest;
      json result = m.value("result", json::object());
      if (step.name == "bench") result = {{"samples", result.at("samples")}, {"value_encodes", result.at("value_encodes")}};
      seen[step.name].push_back({{"outputs", outputs}, {"result", result}});
    }
    ::unsetenv("TACLR_OUT_DIR");
  }
  std::size_t same = 0;
  std::string diff;
  for (const auto& [name, runs] : seen) {
    if (runs.size() == 2 && runs[0] == runs[1]) {
      ++same;
    } else {
      diff += " " + name;
    }
  }
  return {all_ok && same == 10, fmt("%zu/10 commands reproduce their output digests%s%s", same,
                                    diff.empty() ? "" : "; differing:", diff.c_str())};
}

// 11
Verdict benchmark_harness() {
  const auto& run = default_run();
  const auto dir = scratch("bench");
  save_params(run.params, dir / "params.bin");
  save_index(build_index(run.corpus.taxonomy, run.params), dir / "index.bin");
  write_dataset(run.splits.test, dir / "test.jsonl");
  const int code = dispatch({"taclr", "--quiet", "bench", "--index", (dir / "index.bin").string(), "--params",
                             (dir / "params.bin").string(), "--data", (dir / "test.jsonl").string(), "--out",
                             (dir / "bench.json").string()});
  if (code != 0) return {false, "bench exited with " + std::to_string(code)};
  const auto j = read_json(dir / "bench.json");
  // Independent count: one encode per item, none for values.
  const auto index = build_index(run.corpus.taxonomy, run.params);
  const Retriever retriever(index, run.params);
  const auto before = encode_invocations();
  for (const auto& item : run.splits.test) retriever.predict_top1(item);
  const auto direct = encode_invocations() - before;
  const double ms = j.at("ms_per_sample").get<double>();
  const double tput = j.at("throughput_per_s").get<double>();
  const auto value_encodes = j.at("value_encodes").get<std::uint64_t>();
  return {std::abs(ms * tput - 1000.0) <= 1e-9 * 1000.0 && value_encodes == 0 && direct == run.splits.test.size(),
          fmt("%.4f ms/sample, %.0f samples/s, product %.9f, encodes per item %.3f, value encodes %llu over %llu "
              "item encodes",
              ms, tput, ms * tput, double(direct) / double(run.splits.test.size()),
              static_cast<unsigned long long>(value_encodes),
              static_cast<unsigned long long>(j.at("item_encodes").get<std::uint64_t>()))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss oracle", loss_oracle},
      {"inference equivalence", inference_equivalence},
      {"metrics oracle", metrics_oracle},
      {"end-to-end learnability", learnability},
      {"sampling ablation direction", sampling_direction},
      {"threshold ablation direction", threshold_direction},
      {"prompt ablation direction", prompt_direction},
      {"transfer direction", transfer_direction},
      {"determinism", determinism},
      {"benchmark harness", benchmark_harness},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("[%s] %2d %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
