#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "support.hpp"
#include "taclr/corpus.hpp"
#include "taclr/error.hpp"
#include "taclr/trainer.hpp"

using namespace taclr;

namespace {

std::vector<double> parse_vec(const nlohmann::json& j) {
  std::vector<double> v;
  for (const auto& s : j) v.push_back(std::stod(s.get<std::string>()));
  return v;
}

Taxonomy wide_taxonomy(std::size_t n_values) {
  std::vector<std::string> values;
  for (std::size_t i = 0; i < n_values; ++i) values.push_back("v" + std::to_string(i));
  Taxonomy t;
  t.add_pair("phone", "brand", values);
  return t;
}

std::set<std::size_t> rows_of(const ContrastSet& s) {
  std::set<std::size_t> rows;
  for (const auto& n : s.negatives) rows.insert(n.row);
  return rows;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("an unlabeled attribute has the null entry as positive") {
    const auto t = test::phone_taxonomy();
    Rng rng(1);
    const auto it = test::item("i", "phone", "x", "y");
    const auto s = sample_contrast_set(it, "brand", t, 128, rng);
    CHECK(s.positive.row == t.pair(0).null_row());
    CHECK(s.negatives.size() == 3);
    CHECK(s.pad_count == 124);
    CHECK_FALSE(rows_of(s).count(t.pair(0).null_row()));
  }

  TEST_CASE("200 values at k=128 give 127 distinct negatives and no padding") {
    const auto t = wide_taxonomy(200);
    const auto it = test::item("i", "phone", "x", "y", {{"brand", {"v17"}}});
    for (bool null_neg : {false, true}) {
      Rng rng(3);
      const auto s = sample_contrast_set(it, "brand", t, 128, rng, null_neg);
      CHECK(s.positive.row == 17);
      CHECK(s.negatives.size() == 127);
      CHECK(rows_of(s).size() == 127);
      CHECK_FALSE(rows_of(s).count(17));
      CHECK(s.pad_count == 0);
      CHECK(rows_of(s).count(200) == (null_neg ? 1u : 0u));
    }
  }

  TEST_CASE("5 values at k=128 pad the rest") {
    const auto t = wide_taxonomy(5);
    const auto it = test::item("i", "phone", "x", "y", {{"brand", {"v0"}}});
    Rng rng(4);
    const auto plain = sample_contrast_set(it, "brand", t, 128, rng, false);
    CHECK(plain.negatives.size() == 4);
    CHECK(plain.pad_count == 123);
    const auto with_null = sample_contrast_set(it, "brand", t, 128, rng, true);
    CHECK(with_null.negatives.size() == 5);
    CHECK(with_null.pad_count == 122);
  }

  TEST_CASE("ground-truth values never appear as negatives") {
    const auto t = wide_taxonomy(12);
    const auto it = test::item("i", "phone", "x", "y", {{"brand", {"v1", "v4", "v9"}}});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const auto s = sample_contrast_set(it, "brand", t, 6, rng);
      CHECK(std::set<std::size_t>{1, 4, 9}.count(s.positive.row) == 1);
      for (std::size_t r : {1, 4, 9}) CHECK_FALSE(rows_of(s).count(r));
      CHECK(s.negatives.size() + s.pad_count + 1 == 6);
    }
  }

  TEST_CASE("sampling errors") {
    const auto t = test::phone_taxonomy();
    Rng rng(1);
    CHECK_THROWS_AS(sample_contrast_set(test::item("i", "phone", "x", "y"), "brand", t, 1, rng), ConfigError);
    CHECK_THROWS_AS(sample_contrast_set(test::item("i", "phone", "x", "y"), "color", t, 8, rng), DataError);
    CHECK_THROWS_AS(
        sample_contrast_set(test::item("i", "phone", "x", "y", {{"brand", {"Nokia"}}}), "brand", t, 8, rng),
        DataError);
  }

  TEST_CASE("worked loss example against the high-precision oracle") {
    const auto j = test::read_json(test::fixture("loss_cases.json"));
    const double want = std::stod(j.at("worked_example").get<std::string>());
    const double logits[] = {0.9 / 0.05, 0.5 / 0.05, 0.1 / 0.05};
    CHECK(std::abs(softmax_cross_entropy(logits) - want) < 1e-15);
    CHECK(want == doctest::Approx(std::log1p(std::exp(-8.0) + std::exp(-16.0))).epsilon(1e-14));
  }

  TEST_CASE("uniform similarities give ln K") {
    std::mt19937_64 rng(9);
    const auto item = test::random_unit(rng, 8);
    const std::span<const double> same(item);
    const std::span<const double> negs[] = {same, same, same};
    const auto r = contrastive_loss(item, item, negs, 0, 0.05);
    CHECK(std::abs(r.loss - std::log(4.0)) < 1e-12);
  }

  TEST_CASE("no negatives means zero loss and zero gradients") {
    std::mt19937_64 rng(2);
    const auto a = test::random_unit(rng, 6);
    const auto b = test::random_unit(rng, 6);
    for (std::size_t pad : {0u, 5u}) {
      const auto r = contrastive_loss(a, b, {}, pad, 0.05);
      CHECK(r.loss == 0.0);
      for (double g : r.grad_item) CHECK(g == 0.0);
      for (double g : r.grad_positive) CHECK(g == 0.0);
    }
  }

  TEST_CASE("100 random cases match the oracle to 1e-9") {
    const auto j = test::read_json(test::fixture("loss_cases.json"));
    REQUIRE(j.at("cases").size() == 100);
    for (const auto& c : j.at("cases")) {
      const auto item = parse_vec(c.at("item"));
      const auto pos = parse_vec(c.at("positive"));
      std::vector<std::vector<double>> negs;
      for (const auto& n : c.at("negatives")) negs.push_back(parse_vec(n));
      std::vector<std::span<const double>> views(negs.begin(), negs.end());
      const auto r = contrastive_loss(item, pos, views, c.at("pad_count").get<std::size_t>(),
                                      std::stod(c.at("tau").get<std::string>()));
      CHECK(std::abs(r.loss - std::stod(c.at("loss").get<std::string>())) < 1e-9);
    }
  }

  TEST_CASE("padding leaves loss and gradients bit-identical") {
    std::mt19937_64 rng(5);
    const auto item = test::random_unit(rng, 10);
    const auto pos = test::random_unit(rng, 10);
    std::vector<std::vector<double>> negs{test::random_unit(rng, 10), test::random_unit(rng, 10)};
    std::vector<std::span<const double>> views(negs.begin(), negs.end());
    const auto a = contrastive_loss(item, pos, views, 0, 0.05);
    const auto b = contrastive_loss(item, pos, views, 125, 0.05);
    CHECK(a.loss == b.loss);
    CHECK(a.grad_item == b.grad_item);
    CHECK(a.grad_positive == b.grad_positive);
    CHECK(a.grad_negatives == b.grad_negatives);

    const double inf = std::numeric_limits<double>::infinity();
    const double plain[] = {1.5, 0.25, -2.0};
    const double padded[] = {1.5, 0.25, -2.0, -inf, -inf};
    CHECK(softmax_cross_entropy(plain) == softmax_cross_entropy(padded));
  }

  TEST_CASE("softmax cross-entropy is shift invariant and non-negative") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> z(2 + trial % 9);
      for (auto& x : z) x = u(rng);
      const double base = softmax_cross_entropy(z);
      CHECK(base >= 0.0);
      auto shifted = z;
      for (auto& x : shifted) x += 123.0;
      CHECK(softmax_cross_entropy(shifted) == doctest::Approx(base).epsilon(1e-12).scale(1.0));
    }
    const double dominant[] = {200.0, 0.0};
    CHECK(softmax_cross_entropy(dominant) >= 0.0);
    CHECK(softmax_cross_entropy(dominant) < 1e-80);
  }

  TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(8);
    const auto item = test::random_unit(rng, 5);
    const auto pos = test::random_unit(rng, 5);
    std::vector<std::vector<double>> negs{test::random_unit(rng, 5), test::random_unit(rng, 5)};
    auto loss_at = [&](const std::vector<double>& i, const std::vector<double>& p,
                       const std::vector<std::vector<double>>& n) {
      std::vector<std::span<const double>> v(n.begin(), n.end());
      return contrastive_loss(i, p, v, 0, 0.5).loss;
    };
    std::vector<std::span<const double>> views(negs.begin(), negs.end());
    const auto r = contrastive_loss(item, pos, views, 0, 0.5);
    const double h = 1e-6;
    for (std::size_t d = 0; d < 5; ++d) {
      auto up = item, dn = item;
      up[d] += h;
      dn[d] -= h;
      CHECK(r.grad_item[d] == doctest::Approx((loss_at(up, pos, negs) - loss_at(dn, pos, negs)) / (2 * h)).epsilon(1e-6));
      auto nu = negs, nd = negs;
      nu[1][d] += h;
      nd[1][d] -= h;
      CHECK(r.grad_negatives[1][d] ==
            doctest::Approx((loss_at(item, pos, nu) - loss_at(item, pos, nd)) / (2 * h)).epsilon(1e-6));
    }
  }

  TEST_CASE("non-finite embeddings are data errors") {
    std::vector<double> bad{std::nan(""), 0.0};
    std::vector<double> ok{1.0, 0.0};
    CHECK_THROWS_AS(contrastive_loss(bad, ok, {}, 0, 0.05), DataError);
  }

  TEST_CASE("item loss sums attributes and encodes the item once") {
    const auto t = test::phone_taxonomy();
    const auto params = init_encoder(test::tiny_encoder());
    const auto it = test::item("i", "phone", "Apple phone 256GB", "fast", {{"brand", {"Apple"}}});
    Rng rng(1);
    std::map<std::string, ContrastSet> both{{"brand", sample_contrast_set(it, "brand", t, 8, rng)},
                                            {"capacity", sample_contrast_set(it, "capacity", t, 8, rng)}};
    std::set<ValueRef> distinct;
    for (const auto& [a, s] : both) {
      distinct.insert(s.positive);
      distinct.insert(s.negatives.begin(), s.negatives.end());
    }
    const auto before = encode_invocations();
    const auto total = item_loss(it, both, t, params, 0.05);
    CHECK(encode_invocations() - before == 1 + distinct.size());

    const auto ie = encode_text(render_item_prompt(it.title, it.description), params);
    auto direct = [&](const ContrastSet& s) {
      auto value_emb = [&](ValueRef r) {
        const auto& p = t.pair(r.pair);
        return encode_text(render_value_prompt(p.category, p.attribute, p.values[r.row].text), params);
      };
      const auto pe = value_emb(s.positive);
      std::vector<std::vector<double>> ne;
      for (auto r : s.negatives) ne.push_back(value_emb(r));
      std::vector<std::span<const double>> views(ne.begin(), ne.end());
      return contrastive_loss(ie, pe, views, s.pad_count, 0.05).loss;
    };
    double parts = 0.0;
    for (const auto& [a, s] : both) parts += direct(s);
    CHECK(total.loss == doctest::Approx(parts).epsilon(1e-12));

    const auto laptop = test::item("j", "laptop", "Dell laptop", "", {{"brand", {"Dell"}}});
    const std::map<std::string, ContrastSet> one{{"brand", sample_contrast_set(laptop, "brand", t, 8, rng)}};
    const auto single = item_loss(laptop, one, t, params, 0.05);
    const auto le = encode_text(render_item_prompt(laptop.title, laptop.description), params);
    const auto& s = one.at("brand");
    auto venc = [&](ValueRef r) {
      const auto& p = t.pair(r.pair);
      return encode_text(render_value_prompt(p.category, p.attribute, p.values[r.row].text), params);
    };
    std::vector<std::vector<double>> ne;
    for (auto r : s.negatives) ne.push_back(venc(r));
    std::vector<std::span<const double>> views(ne.begin(), ne.end());
    CHECK(single.loss == doctest::Approx(contrastive_loss(le, venc(s.positive), views, s.pad_count, 0.05).loss)
                             .epsilon(1e-12));
    CHECK_THROWS_AS(item_loss(it, one, t, params, 0.05), DataError);
  }

  TEST_CASE("grad check on small configs") {
    EncoderConfig c;
    c.hash_buckets = 256;
    c.embed_dim = 8;
    c.proj_dim = 8;
    c.word_ngrams = {1, 2};
    c.char_ngrams = {3};
    TrainConfig t;
    t.k = 8;
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(grad_check(c, t, seed) < 1e-4);
    CHECK(grad_check(c, t, 3) == grad_check(c, t, 3));

    GradCheckOptions lone;
    lone.attributes = 1;
    lone.values_per_attribute = 1;
    t.null_negative = false;
    CHECK(std::abs(grad_check(c, t, 5, lone)) <= 1e-8);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.beta2 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_sampling("in_batch") == Sampling::in_batch);
    CHECK_THROWS_AS(parse_sampling("hard"), ConfigError);
    CHECK(parse_optimizer("sgd") == Optimizer::sgd);
  }

  TEST_CASE("separable fixture: epoch loss strictly decreases") {
    const auto t = load_taxonomy(test::fixture("separable/taxonomy.jsonl"));
    const auto items = read_dataset(test::fixture("separable/items.jsonl"));
    REQUIRE(items.size() == 50);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 1;
    EncoderConfig ec = test::tiny_encoder();
    ec.embed_dim = ec.proj_dim = 16;
    for (auto opt : {Optimizer::adam, Optimizer::sgd}) {
      cfg.optimizer = opt;
      cfg.learning_rate = opt == Optimizer::adam ? 0.01 : 0.5;
      const auto r = fit(items, t, cfg, ec);
      REQUIRE(r.report.epoch_loss.size() == 3);
      CHECK(r.report.epoch_loss[1] < r.report.epoch_loss[0]);
      CHECK(r.report.epoch_loss[2] < r.report.epoch_loss[1]);
      CHECK(r.params.all_finite());
    }
  }

  TEST_CASE("zero epochs leave params unchanged") {
    const auto t = load_taxonomy(test::fixture("separable/taxonomy.jsonl"));
    const auto items = read_dataset(test::fixture("separable/items.jsonl"));
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto init = init_encoder(test::tiny_encoder());
    const auto r = fit(items, t, cfg, init);
    CHECK(r.params == init);
    CHECK(r.report.epoch_loss.empty());
    CHECK(r.report.steps == 0);
  }

  TEST_CASE("fit is deterministic per seed") {
    const auto t = load_taxonomy(test::fixture("separable/taxonomy.jsonl"));
    const auto items = read_dataset(test::fixture("separable/items.jsonl"));
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 4;
    for (auto mode : {Sampling::taxonomy_aware, Sampling::in_batch}) {
      cfg.sampling = mode;
      const auto a = fit(items, t, cfg, test::tiny_encoder());
      const auto b = fit(items, t, cfg, test::tiny_encoder());
      CHECK(a.report.final_params_digest == b.report.final_params_digest);
      CHECK(a.report.final_params_digest == params_digest(a.params));
    }
    cfg.seed = 5;
    cfg.sampling = Sampling::taxonomy_aware;
    CHECK(fit(items, t, cfg, test::tiny_encoder()).report.final_params_digest !=
          fit(items, t, TrainConfig{.epochs = 2, .seed = 4}, test::tiny_encoder()).report.final_params_digest);
  }

  TEST_CASE("invalid training items are rejected") {
    const auto t = test::phone_taxonomy();
    std::vector<ProductItem> items{test::item("i", "tablet", "x", "y")};
    CHECK_THROWS_AS(fit(items, t, TrainConfig{}, test::tiny_encoder()), DataError);
  }
}
