#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "cardset/eval.hpp"

using namespace cardset;

namespace {

// selector with zero weights everywhere and a fixed output bias: emits the
// same score vector for every input, so the argmax member is constant
MlpModel constant_selector(int in_dim, std::vector<double> b3) {
  MlpModel m;
  m.in_dim = in_dim;
  m.hidden1 = 2;
  m.hidden2 = 2;
  m.out_dim = static_cast<int>(b3.size());
  m.w1.assign(static_cast<std::size_t>(in_dim) * 2, 0.0);
  m.b1.assign(2, 0.0);
  m.w2.assign(4, 0.0);
  m.b2.assign(2, 0.0);
  m.w3.assign(2 * b3.size(), 0.0);
  m.b3 = std::move(b3);
  return m;
}

ScoreMatrix random_scores(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> vals(rows * cols);
  for (double& v : vals) v = rng.uniform(-2.0, 2.0);
  return ScoreMatrix::checked(rows, cols, std::move(vals));
}

// 0-based descending rank of label y, ties to the larger index first
int rank_of(std::span<const double> s, int y) {
  int ahead = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (static_cast<int>(j) == y) continue;
    if (s[j] > s[y] || (s[j] == s[y] && static_cast<int>(j) > y)) ++ahead;
  }
  return ahead;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.data.n_classes = 4;
  cfg.data.dim = 6;
  cfg.data.seed = 3;
  cfg.m_train = 1500;
  cfg.m_cal = 50;
  cfg.m_test = 400;
  cfg.K = {1, 2, 4};
  cfg.lambdas = {10.0, 1e-5};
  cfg.base_train.learning_rate = 0.01;
  cfg.base_train.epochs = 60;
  cfg.selector_train.learning_rate = 0.05;
  cfg.selector_train.epochs = 50;
  cfg.selector_train.hidden1 = 16;
  cfg.selector_train.hidden2 = 16;
  cfg.seeds = {5};
  return cfg;
}

bool same_points(const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].method != b[i].method || a[i].param != b[i].param ||
        a[i].avg_cardinality != b[i].avg_cardinality || a[i].accuracy != b[i].accuracy ||
        a[i].n_test != b[i].n_test || a[i].seed != b[i].seed)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("the default lambda grid is log spaced from 1 down to 0.01", "[eval]") {
  auto l = default_lambdas();
  REQUIRE(l.size() == 20);
  CHECK(l.front() == Catch::Approx(1.0).margin(1e-15));
  CHECK(l.back() == Catch::Approx(0.01).margin(1e-15));
  double ratio = l[1] / l[0];
  for (std::size_t i = 1; i < l.size(); ++i) {
    CHECK(l[i] < l[i - 1]);
    CHECK(l[i] / l[i - 1] == Catch::Approx(ratio).margin(1e-12));
  }
}

TEST_CASE("experiment configs round trip through json", "[eval]") {
  ExperimentConfig cfg = tiny_config();
  cfg.base_train.surrogate = SurrogateSpec::comp_sum(CompSumKind::gce(0.3));
  cfg.cost_kind = CardinalityCostKind::linear;
  cfg.seeds = {5, 9};
  cfg.workers = 2;
  auto j = experiment_to_json(cfg);
  auto back = experiment_from_json(j);
  CHECK(back.m_train == cfg.m_train);
  CHECK(back.m_cal == cfg.m_cal);
  CHECK(back.m_test == cfg.m_test);
  CHECK(back.K == cfg.K);
  CHECK(back.lambdas == cfg.lambdas);
  CHECK(back.cost_kind == cfg.cost_kind);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.workers == cfg.workers);
  CHECK(back.base_train.surrogate.name() == std::string("gce"));
  CHECK(back.base_train.surrogate.cs.q == 0.3);
  CHECK(back.data.n_classes == cfg.data.n_classes);
  // resolved means persist, so the sidecar fully pins the task
  CHECK(back.data.means.size() == 4 * 6);
}

TEST_CASE("config parsing rejects unknown keys at every level", "[eval]") {
  auto j = experiment_to_json(tiny_config());
  auto top = j;
  top["lambda"] = 0.5;
  CHECK_THROWS_AS(experiment_from_json(top), config_error);
  auto nested = j;
  nested["base_train"]["lr"] = 0.1;
  CHECK_THROWS_AS(experiment_from_json(nested), config_error);
  auto in_data = j;
  in_data["data"]["stddev"] = 2.0;
  CHECK_THROWS_AS(experiment_from_json(in_data), config_error);
  auto wrong_type = j;
  wrong_type["m_train"] = "many";
  CHECK_THROWS_AS(experiment_from_json(wrong_type), config_error);
}

TEST_CASE("config validation enforces the lambda and K contracts", "[eval]") {
  auto bad = [](auto&& mutate) {
    ExperimentConfig cfg;
    cfg.data.n_classes = 4;
    cfg.data.dim = 3;
    cfg.K = {1, 2, 4};
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.lambdas = {0.5, 0.5}; })),
                  config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.lambdas = {0.1, 0.5}; })),
                  config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.lambdas = {0.5, 0.0}; })),
                  config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.K = {2, 2}; })), config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.K = {1, 8}; })), config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.seeds.clear(); })), config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.workers = 0; })), config_error);
  CHECK_THROWS_AS(validate(bad([](ExperimentConfig& c) { c.m_cal = 0; })), config_error);
  CHECK_NOTHROW(validate(bad([](ExperimentConfig&) {})));
  // the duplicate-lambda message names the value
  try {
    validate(bad([](ExperimentConfig& c) { c.lambdas = {0.5, 0.5}; }));
    FAIL("expected a config error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }
}

TEST_CASE("every surrogate kind survives a json round trip", "[eval]") {
  std::vector<SurrogateSpec> kinds{
      SurrogateSpec::comp_sum(CompSumKind::logistic()),
      SurrogateSpec::comp_sum(CompSumKind::sum_exponential()),
      SurrogateSpec::comp_sum(CompSumKind::mae()),
      SurrogateSpec::comp_sum(CompSumKind::gce(0.7)),
      SurrogateSpec::constrained(ConstrainedKind::exponential()),
      SurrogateSpec::constrained(ConstrainedKind::hinge()),
      SurrogateSpec::constrained(ConstrainedKind::squared_hinge()),
      SurrogateSpec::constrained(ConstrainedKind::rho_margin(2.5))};
  for (const auto& spec : kinds) {
    auto back = surrogate_from_json(surrogate_to_json(spec));
    CHECK(back.name() == spec.name());
    CHECK(back.comp == spec.comp);
  }
  auto gce_back = surrogate_from_json(surrogate_to_json(kinds[3]));
  CHECK(gce_back.cs.q == 0.7);
  auto rho_back = surrogate_from_json(surrogate_to_json(kinds[7]));
  CHECK(rho_back.ck.rho == 2.5);
  CHECK_THROWS_AS(surrogate_from_json(nlohmann::json("softmax")), config_error);
  CHECK_THROWS_AS(surrogate_from_json(nlohmann::json{{"kind", "gce"}, {"qq", 0.5}}),
                  config_error);
  CHECK_THROWS_AS(surrogate_from_json(nlohmann::json{{"kind", "gce"}, {"q", 1.5}}), config_error);
}

TEST_CASE("constant selectors hit the documented evaluation endpoints", "[eval]") {
  auto scores = random_scores(80, 3, 21);
  Rng rng(22);
  std::vector<int> labels(80);
  for (int& y : labels) y = static_cast<int>(rng.uniform_int(0, 2));
  auto family = TopKFamily::checked(scores, {1, 2, 3});
  std::vector<double> x_vals(80 * 5, 0.5);
  auto X = RealMatrix::checked(80, 5, std::move(x_vals));

  auto full = eval_selector(constant_selector(5, {0.0, 0.0, 1.0}), X, family, labels, "sweep",
                            0.1, 7);
  CHECK(full.accuracy == 1.0);
  CHECK(full.avg_cardinality == 3.0);
  CHECK(full.n_test == 80);
  CHECK(std::isnan(full.coverage));

  auto single = eval_selector(constant_selector(5, {1.0, 0.0, 0.0}), X, family, labels, "sweep",
                              0.1, 7);
  double top1 = 0.0;
  for (std::size_t i = 0; i < 80; ++i)
    if (argmax_tie_high(scores.row(i)) == labels[i]) top1 += 1.0;
  top1 /= 80.0;
  CHECK(single.accuracy == top1);
  CHECK(single.avg_cardinality == 1.0);

  // ties in the selector scores resolve to the larger member index
  auto tied = eval_selector(constant_selector(5, {0.0, 0.0, 0.0}), X, family, labels, "sweep",
                            0.1, 7);
  CHECK(tied.avg_cardinality == 3.0);
}

TEST_CASE("a four instance fixture evaluates to exact fractions", "[eval]") {
  auto scores = ScoreMatrix::checked(4, 3,
                                     {3.0, 2.0, 1.0,   // y=0, pick k=1: hit
                                      3.0, 2.0, 1.0,   // y=1, pick k=2: hit
                                      1.0, 2.0, 3.0,   // y=0, pick k=1: miss
                                      1.0, 2.0, 3.0}); // y=0, pick k=2: miss
  std::vector<int> labels{0, 1, 0, 0};
  std::vector<int> picks{0, 1, 0, 1};
  auto family = TopKFamily::checked(scores, {1, 2});
  auto pt = eval_selection(family, labels, picks, "sweep", 0.5, 11);
  CHECK(pt.accuracy == 0.5);
  CHECK(pt.avg_cardinality == 1.5);
  CHECK(pt.param == 0.5);
  CHECK(pt.n_test == 4);
}

TEST_CASE("top-k curves are monotone and saturate at k equal to n", "[eval]") {
  auto scores = random_scores(60, 4, 31);
  Rng rng(32);
  std::vector<int> labels(60);
  for (int& y : labels) y = static_cast<int>(rng.uniform_int(0, 3));
  auto curve = topk_curve(scores, labels, {1, 2, 3, 4}, 9);
  REQUIRE(curve.size() == 4);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(curve[j].method == "topk");
    CHECK(curve[j].param == static_cast<double>(j + 1));
    CHECK(curve[j].avg_cardinality == static_cast<double>(j + 1));
    if (j > 0) CHECK(curve[j].accuracy >= curve[j - 1].accuracy);
  }
  CHECK(curve[3].accuracy == 1.0);
  auto lone = topk_curve(scores, labels, {1}, 9);
  REQUIRE(lone.size() == 1);
  CHECK(lone[0].accuracy == curve[0].accuracy);
}

TEST_CASE("conformal curves cover and shrink as alpha grows", "[eval]") {
  GaussianSpec spec;
  spec.n_classes = 3;
  spec.dim = 4;
  spec.seed = 13;
  auto rs = resolved(spec);
  auto cal = generate_gaussian(rs, 300);
  GaussianSpec shifted = rs;
  shifted.seed = 14;  // fresh rows, same mixture
  auto test = generate_gaussian(shifted, 800);

  auto to_scores = [&](const Dataset& ds) {
    RealMatrix post = posterior_matrix(rs, ds.features);
    return ScoreMatrix::checked(post.rows, post.cols, post.values);
  };
  auto curve = conformal_curve(to_scores(cal), cal.labels, to_scores(test), test.labels,
                               {0.05, 0.1, 0.3}, 17);
  REQUIRE(curve.size() == 3);
  for (const auto& pt : curve) {
    CHECK(pt.method == "conformal");
    CHECK_FALSE(std::isnan(pt.coverage));
    CHECK(pt.coverage == pt.accuracy);
    CHECK(pt.coverage >= 1.0 - pt.param - 0.03);
  }
  // nested sets: smaller alpha keeps everything a larger alpha keeps
  CHECK(curve[0].avg_cardinality >= curve[1].avg_cardinality);
  CHECK(curve[1].avg_cardinality >= curve[2].avg_cardinality);
  CHECK(curve[0].coverage >= curve[1].coverage);
  CHECK(curve[1].coverage >= curve[2].coverage);

  CHECK_THROWS_AS(conformal_curve(to_scores(cal), cal.labels, to_scores(test), test.labels, {},
                                  17),
                  config_error);
  CHECK_THROWS_AS(conformal_curve(to_scores(cal), cal.labels, to_scores(test), test.labels,
                                  {1.5}, 17),
                  config_error);
}

TEST_CASE("curve csv uses nine significant digits and blank coverage", "[eval]") {
  CurvePoint a;
  a.method = "topk";
  a.param = 2.0;
  a.avg_cardinality = 2.0;
  a.accuracy = 0.123456789123;
  a.n_test = 100;
  a.seed = 7;
  CurvePoint b;
  b.method = "conformal";
  b.param = 0.1;
  b.avg_cardinality = 3.5;
  b.accuracy = 0.9;
  b.coverage = 0.9;
  b.n_test = 50;
  b.seed = 3;
  std::ostringstream os;
  write_curve_csv(os, {a, b});
  CHECK(os.str() ==
        "method,param,avg_cardinality,accuracy,coverage,n_test,seed\n"
        "topk,2,2,0.123456789,,100,7\n"
        "conformal,0.1,3.5,0.9,0.9,50,3\n");
}

TEST_CASE("experiment records hash their configuration", "[eval]") {
  ExperimentConfig cfg = tiny_config();
  auto rec1 = experiment_record(cfg, {});
  auto rec2 = experiment_record(cfg, {});
  CHECK(rec1.at("content_hash") == rec2.at("content_hash"));
  CHECK(rec1.at("config").at("m_train").get<std::size_t>() == cfg.m_train);
  cfg.lambdas[0] = 9.0;
  auto rec3 = experiment_record(cfg, {});
  CHECK(rec1.at("content_hash") != rec3.at("content_hash"));
  CurvePoint pt;
  pt.method = "sweep";
  pt.param = 0.5;
  pt.avg_cardinality = 2.0;
  pt.accuracy = 0.75;
  pt.n_test = 10;
  pt.seed = 4;
  auto rec4 = experiment_record(cfg, {pt});
  REQUIRE(rec4.at("points").size() == 1);
  CHECK(rec4.at("points")[0].at("method") == "sweep");
  CHECK_FALSE(rec4.at("points")[0].contains("coverage"));
}

TEST_CASE("a small sweep produces the planted extremes deterministically", "[eval]") {
  ExperimentConfig cfg = tiny_config();
  auto run = run_experiment(cfg);
  REQUIRE(run.topk.size() == 3);
  REQUIRE(run.sweep.size() == 2);
  CHECK(run.sweep[0].param == 10.0);
  CHECK(run.sweep[1].param == 1e-5);
  // split sizes follow the config
  CHECK(run.topk[0].n_test == 400);

  // a huge lambda makes any extra cardinality cost more than a miss
  CHECK(run.sweep[0].avg_cardinality <= 1.3);
  // a vanishing lambda pushes the selector to the largest member
  CHECK(run.sweep[1].avg_cardinality >= 3.5);
  CHECK(run.sweep[1].accuracy >= run.topk[0].accuracy - 0.02);
  for (const auto& pt : run.sweep) {
    CHECK(pt.accuracy >= 0.0);
    CHECK(pt.accuracy <= 1.0);
    CHECK(pt.avg_cardinality >= 1.0);
    CHECK(pt.avg_cardinality <= 4.0);
  }

  // replays are bit identical, and the worker pool does not change results
  auto replay = run_experiment(cfg);
  CHECK(same_points(run.sweep, replay.sweep));
  CHECK(same_points(run.topk, replay.topk));
  ExperimentConfig pooled = cfg;
  pooled.workers = 2;
  auto par = run_experiment(pooled);
  CHECK(same_points(run.sweep, par.sweep));
}

TEST_CASE("a diverging selector aborts the sweep naming its lambda", "[eval]") {
  ExperimentConfig cfg;
  cfg.data.n_classes = 3;
  cfg.data.dim = 4;
  cfg.m_train = 150;
  cfg.m_cal = 5;
  cfg.m_test = 30;
  cfg.K = {1, 2};
  cfg.lambdas = {0.5};
  cfg.base_train.epochs = 5;
  cfg.selector_train.learning_rate = 1e12;
  cfg.selector_train.epochs = 5;
  cfg.selector_train.surrogate = SurrogateSpec::comp_sum(CompSumKind::sum_exponential());
  cfg.seeds = {2};
  try {
    run_experiment(cfg);
    FAIL("expected training divergence");
  } catch (const training_divergence& e) {
    CHECK(std::string(e.what()).find("lambda=0.5") != std::string::npos);
  }
}

TEST_CASE("one-hot posteriors select the smallest covering member", "[eval]") {
  auto scores = random_scores(30, 4, 41);
  Rng rng(42);
  std::vector<int> labels(30);
  std::vector<double> post_vals(30 * 4, 0.0);
  for (std::size_t i = 0; i < 30; ++i) {
    labels[i] = static_cast<int>(rng.uniform_int(0, 3));
    post_vals[i * 4 + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  auto posteriors = RealMatrix::checked(30, 4, std::move(post_vals));
  auto family = TopKFamily::checked(scores, {1, 2, 3, 4});
  // lambda * cost(k_max) = 0.3 * log 4 < 1, so covering always pays
  auto picks = bayes_indices(posteriors, family, 0.3, CardinalityCostKind::logarithmic);
  for (std::size_t i = 0; i < 30; ++i)
    REQUIRE(picks[i] == rank_of(scores.row(i), labels[i]));
}

TEST_CASE("curve averaging groups by method and parameter", "[eval]") {
  auto mk = [](const char* m, double param, double card, double acc, std::uint64_t seed) {
    CurvePoint pt;
    pt.method = m;
    pt.param = param;
    pt.avg_cardinality = card;
    pt.accuracy = acc;
    pt.n_test = 100;
    pt.seed = seed;
    return pt;
  };
  std::vector<CurvePoint> pts{mk("sweep", 0.5, 2.0, 0.8, 1), mk("sweep", 0.2, 3.0, 0.9, 1),
                              mk("sweep", 0.5, 4.0, 0.9, 2), mk("sweep", 0.2, 3.5, 0.95, 2)};
  auto avg = average_curve(pts);
  REQUIRE(avg.size() == 2);
  CHECK(avg[0].param == 0.5);
  CHECK(avg[0].avg_cardinality == Catch::Approx(3.0));
  CHECK(avg[0].accuracy == Catch::Approx(0.85));
  CHECK(avg[0].n_test == 200);
  CHECK(avg[1].param == 0.2);
  CHECK(avg[1].accuracy == Catch::Approx(0.925));
}

TEST_CASE("interpolation and gap helpers follow the piecewise-linear rule", "[eval]") {
  auto mk = [](double card, double acc) {
    CurvePoint pt;
    pt.method = "sweep";
    pt.param = card;
    pt.avg_cardinality = card;
    pt.accuracy = acc;
    pt.n_test = 10;
    return pt;
  };
  std::vector<CurvePoint> a{mk(1.0, 0.5), mk(3.0, 0.9)};
  CHECK(interpolated_accuracy(a, 2.0) == Catch::Approx(0.7));
  CHECK(interpolated_accuracy(a, 0.5) == Catch::Approx(0.5));   // clamps low
  CHECK(interpolated_accuracy(a, 10.0) == Catch::Approx(0.9));  // clamps high
  std::vector<CurvePoint> dup{mk(2.0, 0.6), mk(2.0, 0.8)};
  CHECK(interpolated_accuracy(dup, 2.0) == Catch::Approx(0.7));  // equal x averages
  std::vector<CurvePoint> b{mk(1.0, 0.5), mk(3.0, 0.7)};
  CHECK(max_accuracy_gap(a, b) == Catch::Approx(0.2));
  std::vector<CurvePoint> far{mk(7.0, 0.99)};
  CHECK(max_accuracy_gap(a, far) == 0.0);  // disjoint ranges have no overlap
}

TEST_CASE("the dominance check accepts matched curves and rejects gaps", "[eval]") {
  auto mk = [](double card, double acc) {
    CurvePoint pt;
    pt.method = "sweep";
    pt.param = card;
    pt.avg_cardinality = card;
    pt.accuracy = acc;
    pt.n_test = 10;
    return pt;
  };
  std::vector<CurvePoint> baseline{mk(1.0, 0.6), mk(2.0, 0.8)};
  std::vector<CurvePoint> good{mk(1.0, 0.6), mk(1.7, 0.82)};
  CHECK(dominates_baseline(good, baseline, 0.005));
  std::vector<CurvePoint> weak{mk(1.0, 0.6), mk(1.7, 0.7)};
  CHECK_FALSE(dominates_baseline(weak, baseline, 0.005));
  std::vector<CurvePoint> oversized{mk(1.0, 0.6), mk(2.3, 0.9)};
  CHECK_FALSE(dominates_baseline(oversized, baseline, 0.005));
  CHECK(dominates_baseline(weak, baseline, 0.2));  // slack rescues it
}
