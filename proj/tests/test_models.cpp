#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "cardset/models.hpp"
#include "cardset/rng.hpp"

using namespace cardset;

namespace {

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

// two gaussian blobs on the first axis, labels alternating
RealMatrix blobs(int m, int d, double sep, Rng& rng, std::vector<int>& labels) {
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(m) * d);
  labels.resize(m);
  for (int i = 0; i < m; ++i) {
    labels[i] = i % 2;
    double center = labels[i] == 0 ? sep : -sep;
    vals.push_back(center + rng.normal());
    for (int j = 1; j < d; ++j) vals.push_back(rng.normal());
  }
  return RealMatrix::checked(m, d, std::move(vals));
}

RealMatrix random_features(int m, int d, Rng& rng) {
  std::vector<double> vals(static_cast<std::size_t>(m) * d);
  for (auto& v : vals) v = rng.normal();
  return RealMatrix::checked(m, d, std::move(vals));
}

CostTensor plain_costs(std::size_t rows, std::size_t num_k, std::vector<double> values) {
  CostTensor t;
  t.rows = rows;
  t.num_k = num_k;
  t.values = std::move(values);
  return t;
}

double selector_full_loss(const MlpModel& m, const RealMatrix& X, const CostTensor& cost,
                          SurrogateSpec spec) {
  double acc = 0.0;
  for (std::size_t r = 0; r < X.rows; ++r)
    acc += spec.comp ? cost_sensitive_comp_sum(m.scores(X.row(r)), cost.row(r), spec.cs)
                     : cost_sensitive_constrained(m.scores(X.row(r)), cost.row(r), spec.ck);
  return acc / static_cast<double>(X.rows);
}

}  // namespace

TEST_CASE("adam first step matches the hand-computed update", "[models]") {
  std::vector<double> params{1.0, -2.0};
  std::vector<double> grads{0.5, -0.25};
  AdamState st(2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.weight_decay = 0.0;
  adam_step(params, grads, st, cfg);
  // from zero state the bias-corrected moments recover g and g^2, so the
  // update is lr * g / (|g| + eps)
  CHECK(params[0] == Catch::Approx(1.0 - 1e-3 * 0.5 / (0.5 + 1e-8)).margin(1e-12));
  CHECK(params[1] == Catch::Approx(-2.0 + 1e-3 * 0.25 / (0.25 + 1e-8)).margin(1e-12));
  CHECK(st.t == 1);
}

TEST_CASE("adam ignores zero gradients and applies decoupled decay", "[models]") {
  std::vector<double> params{0.3, -0.7, 1.1};
  std::vector<double> zero(3, 0.0);
  AdamState st(3);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  auto before = params;
  adam_step(params, zero, st, cfg);
  CHECK(bitwise_equal(params, before));

  cfg.weight_decay = 0.1;
  AdamState st2(3);
  std::vector<double> p2{0.3, -0.7, 1.1};
  double norm_before = std::sqrt(0.09 + 0.49 + 1.21);
  adam_step(p2, zero, st2, cfg);
  double norm_after = 0.0;
  for (double v : p2) norm_after += v * v;
  CHECK(std::sqrt(norm_after) < norm_before);
}

TEST_CASE("adam rejects non-finite gradients", "[models]") {
  std::vector<double> params{1.0};
  std::vector<double> bad{std::numeric_limits<double>::quiet_NaN()};
  AdamState st(1);
  TrainConfig cfg;
  CHECK_THROWS_AS(adam_step(params, bad, st, cfg), training_divergence);
}

TEST_CASE("base trainer separates two gaussian blobs", "[models]") {
  Rng rng(9001);
  std::vector<int> labels;
  auto X = blobs(500, 2, 3.0, rng, labels);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 11;
  auto model = train_base(X, labels, 2, cfg);
  int hits = 0;
  for (std::size_t r = 0; r < X.rows; ++r)
    if (argmax_tie_high(model.scores(X.row(r))) == labels[r]) ++hits;
  CHECK(hits >= 495);
}

TEST_CASE("zero epochs returns the initialized model unchanged", "[models]") {
  Rng rng(9002);
  std::vector<int> labels;
  auto X = blobs(40, 3, 2.0, rng, labels);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  auto model = train_base(X, labels, 2, cfg);
  auto init = init_linear(3, 2, 5);
  CHECK(bitwise_equal(model.w, init.w));
  CHECK(bitwise_equal(model.b, init.b));
}

TEST_CASE("training is deterministic for a fixed seed", "[models]") {
  Rng rng(9003);
  std::vector<int> labels;
  auto X = blobs(120, 3, 2.5, rng, labels);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 21;
  auto a = train_base(X, labels, 2, cfg);
  auto b = train_base(X, labels, 2, cfg);
  CHECK(bitwise_equal(a.w, b.w));
  CHECK(bitwise_equal(a.b, b.b));

  Rng rng2(9004);
  auto Xf = random_features(60, 4, rng2);
  std::vector<double> costs(60 * 3);
  for (auto& c : costs) c = rng2.uniform();
  auto ct = plain_costs(60, 3, std::move(costs));
  cfg.hidden1 = 8;
  cfg.hidden2 = 8;
  auto s1 = train_selector(Xf, ct, cfg);
  auto s2 = train_selector(Xf, ct, cfg);
  CHECK(bitwise_equal(s1.w1, s2.w1));
  CHECK(bitwise_equal(s1.w2, s2.w2));
  CHECK(bitwise_equal(s1.w3, s2.w3));
  CHECK(bitwise_equal(s1.b3, s2.b3));
}

TEST_CASE("base trainer validates its inputs", "[models]") {
  Rng rng(9005);
  std::vector<int> labels;
  auto X = blobs(20, 2, 1.0, rng, labels);
  TrainConfig cfg;
  std::vector<int> short_labels(10, 0);
  CHECK_THROWS_AS(train_base(X, short_labels, 2, cfg), data_error);
  std::vector<int> one_class(20, 0);
  CHECK_THROWS_AS(train_base(X, one_class, 2, cfg), data_error);
  std::vector<int> out_of_range(20, 0);
  out_of_range[3] = 7;
  CHECK_THROWS_AS(train_base(X, out_of_range, 2, cfg), data_error);
  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(train_base(X, labels, 2, bad), config_error);
}

TEST_CASE("selector recovers a planted zero-cost column", "[models]") {
  Rng rng(9006);
  auto X = random_features(800, 4, rng);
  // candidate 1 free, every other candidate at full cost
  std::vector<double> costs(800 * 3, 1.0);
  for (int i = 0; i < 800; ++i) costs[static_cast<std::size_t>(i) * 3 + 1] = 0.0;
  auto ct = plain_costs(800, 3, std::move(costs));
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 31;
  cfg.hidden1 = 16;
  cfg.hidden2 = 16;
  auto model = train_selector(X, ct, cfg);
  std::vector<int> K{1, 2, 4};
  int hits = 0;
  for (std::size_t r = 0; r < X.rows; ++r)
    if (predict_k(model, X.row(r), K) == 2) ++hits;
  CHECK(hits >= 792);  // 99 percent of 800

  double before = selector_full_loss(init_mlp(4, 16, 16, 3, cfg.seed), X, ct, cfg.surrogate);
  double after = selector_full_loss(model, X, ct, cfg.surrogate);
  CHECK(after < before);
}

TEST_CASE("selector recovers a sign rule on the first feature", "[models]") {
  Rng rng(9007);
  auto X = random_features(5000, 5, rng);
  auto Xtest = random_features(1000, 5, rng);
  auto planted = [](std::span<const double> x) { return x[0] > 0.0 ? 0 : 1; };
  std::vector<double> costs(5000 * 2);
  for (int i = 0; i < 5000; ++i) {
    int k = planted(X.row(i));
    costs[static_cast<std::size_t>(i) * 2 + k] = 0.0;
    costs[static_cast<std::size_t>(i) * 2 + (1 - k)] = 1.0;
  }
  auto ct = plain_costs(5000, 2, std::move(costs));
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 41;
  cfg.hidden1 = 32;
  cfg.hidden2 = 32;
  auto model = train_selector(X, ct, cfg);
  std::vector<int> K{1, 2};
  int hits = 0;
  for (std::size_t r = 0; r < Xtest.rows; ++r) {
    int want = K[static_cast<std::size_t>(planted(Xtest.row(r)))];
    if (predict_k(model, Xtest.row(r), K) == want) ++hits;
  }
  CHECK(hits >= 950);
}

TEST_CASE("all-equal cost rows give the trainer nothing to prefer", "[models]") {
  // zero features pin every score at zero, which is exactly the symmetric
  // optimum of the equal-weight surrogate; the loss cannot move
  auto X = RealMatrix::checked(50, 3, std::vector<double>(150, 0.0));
  auto ct = plain_costs(50, 3, std::vector<double>(150, 0.5));
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 51;
  cfg.hidden1 = 8;
  cfg.hidden2 = 8;
  double before = selector_full_loss(init_mlp(3, 8, 8, 3, cfg.seed), X, ct, cfg.surrogate);
  auto model = train_selector(X, ct, cfg);
  double after = selector_full_loss(model, X, ct, cfg.surrogate);
  CHECK(std::abs(after - before) <= 1e-3);

  // with informative features the symmetric objective still converges to the
  // uniform-score optimum, 0.5 * n * log n per instance for the logistic kind
  Rng rng(9008);
  auto Xr = random_features(200, 3, rng);
  auto ctr = plain_costs(200, 3, std::vector<double>(600, 0.5));
  TrainConfig cfg2 = cfg;
  cfg2.epochs = 60;
  auto m2 = train_selector(Xr, ctr, cfg2);
  double final_loss = selector_full_loss(m2, Xr, ctr, cfg2.surrogate);
  CHECK(final_loss == Catch::Approx(0.5 * 3.0 * std::log(3.0)).margin(5e-3));
}

TEST_CASE("selector rejects vacuous candidate lists", "[models]") {
  Rng rng(9009);
  auto X = random_features(10, 2, rng);
  auto ct = plain_costs(10, 1, std::vector<double>(10, 0.2));
  TrainConfig cfg;
  CHECK_THROWS_AS(train_selector(X, ct, cfg), config_error);
  auto bad_rows = plain_costs(9, 2, std::vector<double>(18, 0.2));
  CHECK_THROWS_AS(train_selector(X, bad_rows, cfg), data_error);
}

TEST_CASE("predict_k follows the documented tie rule", "[models]") {
  MlpModel m = init_mlp(1, 1, 1, 2, 3);
  std::fill(m.w1.begin(), m.w1.end(), 0.0);
  std::fill(m.w2.begin(), m.w2.end(), 0.0);
  std::fill(m.w3.begin(), m.w3.end(), 0.0);
  double x[] = {0.4};

  m.b3 = {0.2, 0.2};
  std::vector<int> K12{1, 2};
  CHECK(predict_k(m, x, K12) == 2);  // tie resolves to the larger entry

  m.b3 = {5.0, 0.0};
  std::vector<int> K18{1, 8};
  CHECK(predict_k(m, x, K18) == 1);

  MlpModel m4 = init_mlp(1, 1, 1, 4, 3);
  std::fill(m4.w1.begin(), m4.w1.end(), 0.0);
  std::fill(m4.w2.begin(), m4.w2.end(), 0.0);
  std::fill(m4.w3.begin(), m4.w3.end(), 0.0);
  m4.b3 = {0.1, 0.2, 0.3, 0.4};
  std::vector<int> K{1, 2, 4, 8};
  CHECK(predict_k(m4, x, K) == 8);

  std::vector<int> bad{2, 1};
  CHECK_THROWS_AS(predict_k(m, x, bad), config_error);
  std::vector<int> wrong_len{1, 2, 4};
  CHECK_THROWS_AS(predict_k(m, x, wrong_len), data_error);
}

TEST_CASE("selector backprop matches finite differences", "[models]") {
  Rng rng(9010);
  auto X = random_features(10, 6, rng);
  std::vector<double> costs(10 * 3);
  for (auto& c : costs) c = rng.uniform();
  auto ct = plain_costs(10, 3, std::move(costs));
  auto model = init_mlp(6, 8, 7, 3, 61);

  CHECK(selector_grad_check(model, X, ct, SurrogateSpec::comp_sum(CompSumKind::logistic())) <=
        1e-4);
  CHECK(selector_grad_check(model, X, ct,
                            SurrogateSpec::comp_sum(CompSumKind::sum_exponential())) <= 1e-4);
  CHECK(selector_grad_check(model, X, ct,
                            SurrogateSpec::constrained(ConstrainedKind::squared_hinge())) <= 1e-4);
  CHECK(selector_grad_check(model, X, ct,
                            SurrogateSpec::constrained(ConstrainedKind::exponential())) <= 1e-4);
}

TEST_CASE("checkpoints round trip bit exactly", "[models]") {
  Rng rng(9011);
  std::vector<int> labels;
  auto X = blobs(60, 3, 2.0, rng, labels);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 71;
  auto lin = train_base(X, labels, 2, cfg);
  std::stringstream buf;
  save_linear(buf, lin);
  auto lin2 = load_linear(buf);
  CHECK(lin2.in_dim == lin.in_dim);
  CHECK(lin2.out_dim == lin.out_dim);
  CHECK(bitwise_equal(lin2.w, lin.w));
  CHECK(bitwise_equal(lin2.b, lin.b));

  auto Xf = random_features(30, 4, rng);
  std::vector<double> costs(30 * 3);
  for (auto& c : costs) c = rng.uniform();
  auto ct = plain_costs(30, 3, std::move(costs));
  cfg.hidden1 = 6;
  cfg.hidden2 = 5;
  auto mlp = train_selector(Xf, ct, cfg);
  std::stringstream buf2;
  save_mlp(buf2, mlp);
  auto mlp2 = load_mlp(buf2);
  CHECK(mlp2.hidden1 == 6);
  CHECK(mlp2.hidden2 == 5);
  CHECK(bitwise_equal(mlp2.w1, mlp.w1));
  CHECK(bitwise_equal(mlp2.b1, mlp.b1));
  CHECK(bitwise_equal(mlp2.w2, mlp.w2));
  CHECK(bitwise_equal(mlp2.b2, mlp.b2));
  CHECK(bitwise_equal(mlp2.w3, mlp.w3));
  CHECK(bitwise_equal(mlp2.b3, mlp.b3));

  std::stringstream junk("XXXXXXXX\x01\x02\x03\x04");
  CHECK_THROWS_AS(load_linear(junk), data_error);
  std::stringstream truncated;
  save_mlp(truncated, mlp);
  std::string bytes = truncated.str();
  std::stringstream half(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_mlp(half), data_error);
}

TEST_CASE("a runaway learning rate raises a divergence error", "[models]") {
  Rng rng(9012);
  std::vector<int> labels;
  auto X = blobs(64, 2, 2.0, rng, labels);
  TrainConfig cfg;
  cfg.learning_rate = 1e12;
  cfg.epochs = 6;
  cfg.surrogate = SurrogateSpec::comp_sum(CompSumKind::sum_exponential());
  CHECK_THROWS_AS(train_base(X, labels, 2, cfg), training_divergence);
}
