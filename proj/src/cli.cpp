#include "taclr/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "taclr/corpus.hpp"
#include "taclr/digest.hpp"
#include "taclr/error.hpp"
#include "taclr/eval.hpp"
#include "taclr/pipeline.hpp"
#include "taclr/retrieval.hpp"
#include "taclr/taxonomy.hpp"
#include "taclr/trainer.hpp"

namespace taclr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 1;
  bool quiet = false;
};

/// Relative output paths land under TACLR_OUT_DIR when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv("TACLR_OUT_DIR");
  if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
  return fs::path(root) / p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("cannot write " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
  }

  void config(json c) { j_["config"] = std::move(c); }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void result(json r) { j_["result"] = std::move(r); }
  void input(const fs::path& p) { j_["inputs"][p.generic_string()] = file_sha256(p); }
  void output(const fs::path& p) { j_["outputs"][p.generic_string()] = file_sha256(p); }

  void write(const fs::path& p) {
    const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start_;
    j_["wall_seconds"] = wall.count();
    write_text(p, j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

/// Beside a file output: `<file>.manifest.json`.
fs::path manifest_beside(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

/// For commands whose only output is standard output.
fs::path manifest_for(const std::string& command) {
  return output_path(fs::path("taclr-" + command + ".manifest.json"));
}

std::vector<Prediction> read_predictions(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<Prediction> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string predictions_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const auto& p : preds) out += prediction_to_json(p).dump() + "\n";
  return out;
}

void say(const Globals& g, const std::string& line) {
  if (!g.quiet) std::cout << line << "\n";
}

struct GenArgs {
  std::string spec;
  std::string out_dir;
  std::string split;
};

int run_gen(const Globals& g, const GenArgs& a) {
  Manifest m("gen");
  CorpusSpec spec;
  if (!a.spec.empty()) {
    m.input(a.spec);
    try {
      spec = spec_from_json(json::parse(read_text(a.spec)));
    } catch (const json::exception& e) {
      throw DataError("corpus spec " + a.spec + ": " + e.what());
    }
  }
  if (g.seed_set) spec.seed = g.seed;
  spec.validate();
  const fs::path dir = output_path(a.out_dir);
  const auto ds = generate_corpus(spec);
  write_generated(ds, dir);
  json cfg = {{"spec", spec_to_json(spec)}};
  for (const char* f : {"taxonomy.jsonl", "items.jsonl", "alias_map.json", "cue_map.json"}) m.output(dir / f);
  if (!a.split.empty()) {
    const SplitMode mode = parse_split_mode(a.split);
    const auto splits = make_splits(ds, mode, {}, spec.seed);
    write_dataset(splits.train, dir / "train.jsonl");
    write_dataset(splits.valid, dir / "valid.jsonl");
    write_dataset(splits.test, dir / "test.jsonl");
    for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl"}) m.output(dir / f);
    cfg["split"] = {{"mode", std::string(to_string(mode))}, {"seed", spec.seed}};
  }
  m.config(cfg);
  m.seed(spec.seed);
  m.write(dir / "manifest.json");
  say(g, "generated " + std::to_string(ds.items.size()) + " items into " + dir.string());
  return 0;
}

int run_taxonomy(const Globals& g, const std::string& action, const std::string& path) {
  Manifest m("taxonomy " + action);
  m.input(path);
  m.seed(g.seed);
  m.config({{"path", path}});
  const Taxonomy t = load_taxonomy(path);
  int code = 0;
  if (action == "stats") {
    const auto s = taxonomy_stats(t);
    const json j = {{"n_categories", s.n_categories},
                    {"n_attributes", s.n_attributes},
                    {"n_ca_pairs", s.n_ca_pairs},
                    {"n_cav_tuples", s.n_cav_tuples}};
    std::cout << j.dump(2) << "\n";
    m.result(j);
  } else {
    const auto problems = validate_taxonomy(t);
    for (const auto& p : problems) std::cerr << p << "\n";
    if (problems.empty()) say(g, "ok");
    m.result({{"violations", problems}});
    code = problems.empty() ? 0 : 2;
  }
  m.write(manifest_for("taxonomy-" + action));
  return code;
}

struct TrainArgs {
  std::string taxonomy, data, out;
  TrainConfig train;
  EncoderConfig encoder;
  std::string sampling = "taxonomy_aware";
  std::string optimizer = "adam";
  std::string prompt = "full";
  bool no_null_negative = false;
};

int run_train(const Globals& g, TrainArgs a) {
  Manifest m("train");
  a.train.sampling = parse_sampling(a.sampling);
  a.train.optimizer = parse_optimizer(a.optimizer);
  a.encoder.prompt_template = parse_prompt_template(a.prompt);
  a.train.null_negative = !a.no_null_negative;
  a.train.seed = g.seed;
  a.encoder.seed = g.seed;
  a.train.validate();
  a.encoder.validate();
  m.input(a.taxonomy);
  m.input(a.data);
  const Taxonomy t = load_taxonomy(a.taxonomy);
  const auto items = read_dataset(a.data);
  for (const auto& item : items) validate_item(item, t);
  auto result = fit(items, t, a.train, a.encoder);
  const fs::path out = output_path(a.out);
  ensure_parent(out);
  save_params(result.params, out);
  m.output(out);
  m.seed(g.seed);
  m.config({{"encoder", encoder_config_to_json(a.encoder)}, {"train", train_config_to_json(a.train)}});
  m.result({{"epoch_loss", result.report.epoch_loss},
            {"steps", result.report.steps},
            {"params_digest", result.report.final_params_digest}});
  m.write(manifest_beside(out));
  for (std::size_t e = 0; e < result.report.epoch_loss.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.6f", e + 1, result.report.epoch_loss[e]);
    say(g, buf);
  }
  say(g, "params " + out.string() + " sha256 " + result.report.final_params_digest);
  return 0;
}

int run_index(const Globals& g, const std::string& taxonomy, const std::string& params_path, const std::string& out_arg) {
  Manifest m("index");
  m.input(taxonomy);
  m.input(params_path);
  const Taxonomy t = load_taxonomy(taxonomy);
  const EncoderParams params = load_params(params_path);
  const ValueIndex index = build_index(t, params);
  const fs::path out = output_path(out_arg);
  ensure_parent(out);
  save_index(index, out);
  m.output(out);
  m.seed(g.seed);
  m.config({{"encoder", encoder_config_to_json(params.config)}});
  m.write(manifest_beside(out));
  say(g, "index " + out.string() + " with " + std::to_string(index.groups().size()) + " attribute groups");
  return 0;
}

struct PredictArgs {
  std::string index, params, data, out;
  std::size_t runners_up = 0;
  std::optional<double> static_threshold;
};

int run_predict(const Globals& g, const PredictArgs& a) {
  Manifest m("predict");
  m.input(a.index);
  m.input(a.params);
  m.input(a.data);
  const ValueIndex index = load_index(a.index);
  const EncoderParams params = load_params(a.params);
  const Retriever retriever(index, params);
  const auto items = read_dataset(a.data, false);
  std::vector<Prediction> preds;
  if (a.static_threshold) {
    preds = predict_all_static(retriever, items, *a.static_threshold);
  } else if (a.runners_up > 0) {
    for (const auto& item : items) preds.push_back(retriever.predict_top1(item, a.runners_up));
  } else {
    preds = predict_all(retriever, items, g.threads);
  }
  const fs::path out = output_path(a.out);
  write_text(out, predictions_jsonl(preds));
  m.output(out);
  m.seed(g.seed);
  json cfg = {{"runners_up", a.runners_up}, {"threads", g.threads}};
  cfg["static_threshold"] = a.static_threshold ? json(*a.static_threshold) : json(nullptr);
  m.config(cfg);
  m.write(manifest_beside(out));
  say(g, "predicted " + std::to_string(preds.size()) + " items into " + out.string());
  return 0;
}

int run_eval(const Globals& g, const std::string& gold, const std::string& preds_path, bool splits, bool legacy,
             const std::string& out_arg) {
  Manifest m("eval");
  m.input(gold);
  m.input(preds_path);
  const auto items = read_dataset(gold, false);
  const auto preds = read_predictions(preds_path);
  const EvalReport report = split_report(items, preds, legacy);
  json j = report_to_json(report);
  if (!splits) {
    j.erase("per_split");
    j.erase("per_kind");
  }
  const fs::path out = output_path(out_arg);
  write_text(out, j.dump(2) + "\n");
  m.output(out);
  m.seed(g.seed);
  m.config({{"splits", splits}, {"legacy_fpfn", legacy}});
  m.write(manifest_beside(out));
  char buf[96];
  std::snprintf(buf, sizeof buf, "P %.4f R %.4f F1 %.4f", report.precision, report.recall, report.f1);
  say(g, buf);
  return 0;
}

struct BenchArgs {
  std::string index, params, data, out;
  std::size_t warmup = 1;
  std::size_t repeats = 3;
};

int run_bench(const Globals& g, const BenchArgs& a) {
  Manifest m("bench");
  m.input(a.index);
  m.input(a.params);
  m.input(a.data);
  const ValueIndex index = load_index(a.index);
  const EncoderParams params = load_params(a.params);
  const Retriever retriever(index, params);
  const auto items = read_dataset(a.data, false);
  if (items.empty()) throw DataError("bench needs at least one item");
  const std::uint64_t before = encode_invocations();
  const BenchResult r = benchmark_inference([&](const ProductItem& item) { retriever.predict_top1(item); }, items,
                                            a.warmup, a.repeats);
  const std::uint64_t calls = encode_invocations() - before;
  const std::uint64_t item_calls = static_cast<std::uint64_t>(items.size()) * (a.warmup + a.repeats);
  const json j = {{"ms_per_sample", r.ms_per_sample},
                  {"throughput_per_s", r.throughput_per_s},
                  {"samples", r.samples},
                  {"item_encodes", item_calls},
                  {"value_encodes", calls - item_calls}};
  std::cout << j.dump(2) << "\n";
  m.seed(g.seed);
  m.config({{"warmup", a.warmup}, {"repeats", a.repeats}});
  m.result(j);
  if (!a.out.empty()) {
    const fs::path out = output_path(a.out);
    write_text(out, j.dump(2) + "\n");
    m.output(out);
    m.write(manifest_beside(out));
  } else {
    m.write(manifest_for("bench"));
  }
  return 0;
}

struct AblateArgs {
  std::string study, spec, out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> ks;
  std::vector<double> thresholds;
  std::optional<std::size_t> epochs;
};

int run_ablate(const Globals& g, const AblateArgs& a) {
  Manifest m("ablate");
  const Study study = parse_study(a.study);
  AblationOptions opt;
  if (!a.spec.empty()) {
    m.input(a.spec);
    try {
      opt.corpus = spec_from_json(json::parse(read_text(a.spec)));
    } catch (const json::exception& e) {
      throw DataError("corpus spec " + a.spec + ": " + e.what());
    }
  }
  if (!a.seeds.empty()) {
    opt.seeds = a.seeds;
  } else if (g.seed_set) {
    opt.seeds = {g.seed, g.seed + 1, g.seed + 2};
  }
  if (!a.ks.empty()) opt.ks = a.ks;
  if (!a.thresholds.empty()) opt.thresholds = a.thresholds;
  if (a.epochs) opt.train.epochs = *a.epochs;
  opt.corpus.validate();
  opt.train.validate();
  const AblationTable table = ablate(study, opt);
  const fs::path dir = output_path(a.out_dir);
  const std::string stem = std::string(to_string(study));
  write_text(dir / (stem + ".csv"), table_to_csv(table));
  write_text(dir / (stem + ".json"), table_to_json(table).dump(2) + "\n");
  m.output(dir / (stem + ".csv"));
  m.output(dir / (stem + ".json"));
  m.seed(opt.seeds.front());
  m.config({{"study", stem},
            {"seeds", opt.seeds},
            {"ks", opt.ks},
            {"thresholds", opt.thresholds},
            {"corpus", spec_to_json(opt.corpus)},
            {"encoder", encoder_config_to_json(opt.encoder)},
            {"train", train_config_to_json(opt.train)}});
  m.write(dir / (stem + ".manifest.json"));
  if (!g.quiet) std::cout << table_to_csv(table);
  return 0;
}

int run_encode(const Globals& g, const std::string& params_path, const std::string& text) {
  Manifest m("encode");
  m.input(params_path);
  const EncoderParams params = load_params(params_path);
  const Embedding e = encode_text(text, params);
  const std::string line = json(e).dump();
  std::cout << line << "\n";
  m.seed(g.seed);
  m.config({{"text", text}});
  m.result({{"vector_sha256", sha256_hex(std::string_view(line))}});
  m.write(manifest_for("encode"));
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& argv) {
  CLI::App app{"Taxonomy-aware contrastive retrieval for product attribute values", "taclr"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for prediction")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress informational output");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  c_gen->add_option("--spec", gen.spec, "Corpus spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  c_gen->add_option("--out-dir", gen.out_dir, "Output directory")->required();
  c_gen->add_option("--split", gen.split, "Also write train/valid/test.jsonl")
      ->check(CLI::IsMember({"random", "cross_category", "cross_value"}));

  std::string tax_path;
  auto* c_tax = app.add_subcommand("taxonomy", "Inspect a taxonomy file");
  c_tax->require_subcommand(1);
  auto* c_stats = c_tax->add_subcommand("stats", "Print counts");
  c_stats->add_option("path", tax_path, "Taxonomy JSONL")->required();
  auto* c_validate = c_tax->add_subcommand("validate", "Check structural invariants");
  c_validate->add_option("path", tax_path, "Taxonomy JSONL")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the shared encoder");
  c_train->add_option("--taxonomy", tr.taxonomy)->required();
  c_train->add_option("--data", tr.data)->required();
  c_train->add_option("--out", tr.out)->required();
  c_train->add_option("--k", tr.train.k)->capture_default_str();
  c_train->add_option("--tau", tr.train.tau)->capture_default_str();
  c_train->add_option("--sampling", tr.sampling)->check(CLI::IsMember({"taxonomy_aware", "in_batch"}))->capture_default_str();
  c_train->add_option("--epochs", tr.train.epochs)->capture_default_str();
  c_train->add_option("--batch-size", tr.train.batch_size)->capture_default_str();
  c_train->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  c_train->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
  c_train->add_option("--momentum", tr.train.momentum)->capture_default_str();
  c_train->add_option("--weight-decay", tr.train.weight_decay)->capture_default_str();
  c_train->add_flag("--no-null-negative", tr.no_null_negative);
  c_train->add_option("--hash-buckets", tr.encoder.hash_buckets)->capture_default_str();
  c_train->add_option("--embed-dim", tr.encoder.embed_dim)->capture_default_str();
  c_train->add_option("--proj-dim", tr.encoder.proj_dim)->capture_default_str();
  c_train->add_option("--word-ngrams", tr.encoder.word_ngrams)->delimiter(',');
  c_train->add_option("--char-ngrams", tr.encoder.char_ngrams)->delimiter(',');
  c_train->add_option("--template", tr.prompt)
      ->check(CLI::IsMember({"value_only", "category_value", "attribute_value", "full"}))
      ->capture_default_str();

  std::string ix_tax, ix_params, ix_out;
  auto* c_index = app.add_subcommand("index", "Embed every taxonomy value");
  c_index->add_option("--taxonomy", ix_tax)->required();
  c_index->add_option("--params", ix_params)->required();
  c_index->add_option("--out", ix_out)->required();

  PredictArgs pr;
  double static_threshold = 0.0;
  auto* c_predict = app.add_subcommand("predict", "Predict attribute values");
  c_predict->add_option("--index", pr.index)->required();
  c_predict->add_option("--params", pr.params)->required();
  c_predict->add_option("--data", pr.data)->required();
  c_predict->add_option("--out", pr.out)->required();
  c_predict->add_option("--runners-up", pr.runners_up, "Also report the next N values");
  auto* st_opt = c_predict->add_option("--static-threshold", static_threshold, "Fixed cutoff instead of the null score");

  std::string ev_gold, ev_preds, ev_out;
  bool ev_splits = false, ev_legacy = false;
  auto* c_eval = app.add_subcommand("eval", "Score predictions");
  c_eval->add_option("--gold", ev_gold)->required();
  c_eval->add_option("--preds", ev_preds)->required();
  c_eval->add_option("--out", ev_out)->required();
  c_eval->add_flag("--splits", ev_splits, "Break down by split and kind");
  c_eval->add_flag("--legacy-fpfn", ev_legacy, "Count a wrong value as FP only");

  BenchArgs be;
  auto* c_bench = app.add_subcommand("bench", "Time inference");
  c_bench->add_option("--index", be.index)->required();
  c_bench->add_option("--params", be.params)->required();
  c_bench->add_option("--data", be.data)->required();
  c_bench->add_option("--warmup", be.warmup)->capture_default_str();
  c_bench->add_option("--repeats", be.repeats)->check(CLI::PositiveNumber)->capture_default_str();
  c_bench->add_option("--out", be.out, "Also write the result JSON");

  AblateArgs ab;
  std::size_t ab_epochs = 0;
  auto* c_ablate = app.add_subcommand("ablate", "Run an ablation study");
  c_ablate->add_option("--study", ab.study)
      ->required()
      ->check(CLI::IsMember({"sampling", "thresholds", "prompts", "transfer"}));
  c_ablate->add_option("--spec", ab.spec, "Corpus spec JSON")->check(CLI::ExistingFile);
  c_ablate->add_option("--out-dir", ab.out_dir)->required();
  c_ablate->add_option("--seeds", ab.seeds)->delimiter(',');
  c_ablate->add_option("--ks", ab.ks)->delimiter(',');
  c_ablate->add_option("--thresholds", ab.thresholds)->delimiter(',');
  auto* ep_opt = c_ablate->add_option("--epochs", ab_epochs);

  std::string en_params, en_text;
  auto* c_encode = app.add_subcommand("encode", "Print the embedding of a text");
  c_encode->add_option("--params", en_params)->required();
  c_encode->add_option("--text", en_text)->required();

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "taclr: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  g.seed_set = seed_opt->count() > 0;
  if (st_opt->count() > 0) pr.static_threshold = static_threshold;
  if (ep_opt->count() > 0) ab.epochs = ab_epochs;

  try {
    if (*c_gen) return run_gen(g, gen);
    if (*c_tax) return run_taxonomy(g, *c_stats ? "stats" : "validate", tax_path);
    if (*c_train) return run_train(g, tr);
    if (*c_index) return run_index(g, ix_tax, ix_params, ix_out);
    if (*c_predict) return run_predict(g, pr);
    if (*c_eval) return run_eval(g, ev_gold, ev_preds, ev_splits, ev_legacy, ev_out);
    if (*c_bench) return run_bench(g, be);
    if (*c_ablate) return run_ablate(g, ab);
    if (*c_encode) return run_encode(g, en_params, en_text);
  } catch (const ConfigError& e) {
    std::cerr << "taclr: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "taclr: " << e.what() << "\n";
    return 2;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace taclr
