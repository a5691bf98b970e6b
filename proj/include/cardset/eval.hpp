#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cardset/cost.hpp"
#include "cardset/data.hpp"
#include "cardset/models.hpp"
#include "cardset/rng.hpp"
#include "cardset/sets.hpp"
#include "cardset/theory.hpp"
#include "cardset/util.hpp"

namespace cardset {

// One measured point on an accuracy / cardinality curve. `param` is the knob
// that produced the point: k for top-k baselines, lambda for sweep points,
// alpha for conformal points. `coverage` is NaN except for conformal rows,
// where it duplicates the measured hit rate under its conventional name.
struct CurvePoint {
  std::string method;
  double param = 0.0;
  double avg_cardinality = 1.0;
  double accuracy = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_point(const CurvePoint& pt, double max_card) {
  if (!(pt.accuracy >= 0.0 && pt.accuracy <= 1.0))
    throw std::logic_error("CurvePoint: accuracy outside [0,1]");
  if (!(pt.avg_cardinality >= 1.0 && pt.avg_cardinality <= max_card + 1e-9))
    throw std::logic_error("CurvePoint: cardinality outside [1,n]");
  if (pt.n_test == 0) throw std::logic_error("CurvePoint: empty test set");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment configuration, mirrored 1:1 by the JSON config files.

inline std::vector<double> default_lambdas() {
  std::vector<double> out(20);
  for (int i = 0; i < 20; ++i)
    out[static_cast<std::size_t>(i)] = std::pow(10.0, -2.0 * i / 19.0);
  return out;  // 1.0 down to 0.01, log spaced
}

struct ExperimentConfig {
  GaussianSpec data;
  std::size_t m_train = 50000;
  std::size_t m_cal = 1000;
  std::size_t m_test = 10000;
  std::vector<int> K{1, 2, 4, 8};
  std::vector<double> lambdas = default_lambdas();
  CardinalityCostKind cost_kind = CardinalityCostKind::logarithmic;
  TrainConfig base_train;
  TrainConfig selector_train;
  std::vector<std::uint64_t> seeds{1};
  int workers = 1;
};

inline void validate(const ExperimentConfig& cfg) {
  detail::validate_spec(cfg.data);
  if (cfg.m_train < 1 || cfg.m_cal < 1 || cfg.m_test < 1)
    throw config_error("ExperimentConfig: every split needs at least one row");
  if (cfg.K.empty()) throw config_error("ExperimentConfig: K must be nonempty");
  for (std::size_t i = 0; i < cfg.K.size(); ++i) {
    if (cfg.K[i] < 1 || cfg.K[i] > cfg.data.n_classes)
      throw config_error("ExperimentConfig: K entries must lie in [1, n_classes]");
    if (i > 0 && cfg.K[i] <= cfg.K[i - 1])
      throw config_error("ExperimentConfig: K must be strictly increasing");
  }
  if (cfg.lambdas.empty()) throw config_error("ExperimentConfig: lambda list must be nonempty");
  for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
    if (!(cfg.lambdas[i] > 0.0) || !std::isfinite(cfg.lambdas[i]))
      throw config_error("ExperimentConfig: lambdas must be positive and finite");
    if (i > 0) {
      if (cfg.lambdas[i] == cfg.lambdas[i - 1])
        throw config_error("ExperimentConfig: duplicate lambda " + fmt_g9(cfg.lambdas[i]));
      if (cfg.lambdas[i] > cfg.lambdas[i - 1])
        throw config_error("ExperimentConfig: lambdas must be sorted descending");
    }
  }
  if (cfg.seeds.empty()) throw config_error("ExperimentConfig: seeds must be nonempty");
  if (cfg.workers < 1) throw config_error("ExperimentConfig: workers must be at least 1");
  validate(cfg.base_train);
  validate(cfg.selector_train);
}

// ---------------------------------------------------------------------------
// JSON forms. Parsers reject unknown keys so config typos fail loudly.

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& where) {
  if (!j.is_object()) throw config_error(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw config_error(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json surrogate_to_json(const SurrogateSpec& s) {
  if (s.comp && s.cs.tag == CompSumKind::Tag::gce)
    return nlohmann::json{{"kind", "gce"}, {"q", s.cs.q}};
  if (!s.comp && s.ck.tag == ConstrainedKind::Tag::rho_margin)
    return nlohmann::json{{"kind", "cstnd_rho_margin"}, {"rho", s.ck.rho}};
  return nlohmann::json(s.name());
}

inline SurrogateSpec surrogate_from_json(const nlohmann::json& j) {
  std::string kind;
  double q = 0.7;
  double rho = 1.0;
  if (j.is_string()) {
    kind = j.get<std::string>();
  } else {
    detail::reject_unknown_keys(j, {"kind", "q", "rho"}, "surrogate");
    detail::maybe_get(j, "kind", kind, "surrogate");
    detail::maybe_get(j, "q", q, "surrogate");
    detail::maybe_get(j, "rho", rho, "surrogate");
  }
  try {
    if (kind == "logistic") return SurrogateSpec::comp_sum(CompSumKind::logistic());
    if (kind == "sum_exponential") return SurrogateSpec::comp_sum(CompSumKind::sum_exponential());
    if (kind == "mae") return SurrogateSpec::comp_sum(CompSumKind::mae());
    if (kind == "gce") return SurrogateSpec::comp_sum(CompSumKind::gce(q));
    if (kind == "cstnd_exponential")
      return SurrogateSpec::constrained(ConstrainedKind::exponential());
    if (kind == "cstnd_hinge") return SurrogateSpec::constrained(ConstrainedKind::hinge());
    if (kind == "cstnd_squared_hinge")
      return SurrogateSpec::constrained(ConstrainedKind::squared_hinge());
    if (kind == "cstnd_rho_margin")
      return SurrogateSpec::constrained(ConstrainedKind::rho_margin(rho));
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("surrogate: ") + e.what());
  }
  throw config_error("surrogate: unknown kind '" + kind + "'");
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"learning_rate", cfg.learning_rate},
                        {"batch_size", cfg.batch_size},
                        {"weight_decay", cfg.weight_decay},
                        {"epochs", cfg.epochs},
                        {"seed", cfg.seed},
                        {"surrogate", surrogate_to_json(cfg.surrogate)},
                        {"hidden1", cfg.hidden1},
                        {"hidden2", cfg.hidden2},
                        {"min_improvement", cfg.min_improvement},
                        {"patience", cfg.patience}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where) {
  detail::reject_unknown_keys(j,
                              {"learning_rate", "batch_size", "weight_decay", "epochs", "seed",
                               "surrogate", "hidden1", "hidden2", "min_improvement", "patience"},
                              where);
  TrainConfig cfg;
  detail::maybe_get(j, "learning_rate", cfg.learning_rate, where);
  detail::maybe_get(j, "batch_size", cfg.batch_size, where);
  detail::maybe_get(j, "weight_decay", cfg.weight_decay, where);
  detail::maybe_get(j, "epochs", cfg.epochs, where);
  detail::maybe_get(j, "seed", cfg.seed, where);
  if (j.contains("surrogate")) cfg.surrogate = surrogate_from_json(j.at("surrogate"));
  detail::maybe_get(j, "hidden1", cfg.hidden1, where);
  detail::maybe_get(j, "hidden2", cfg.hidden2, where);
  detail::maybe_get(j, "min_improvement", cfg.min_improvement, where);
  detail::maybe_get(j, "patience", cfg.patience, where);
  validate(cfg);
  return cfg;
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  return nlohmann::json{{"data", spec_to_json(cfg.data)},
                        {"m_train", cfg.m_train},
                        {"m_cal", cfg.m_cal},
                        {"m_test", cfg.m_test},
                        {"K", cfg.K},
                        {"lambdas", cfg.lambdas},
                        {"cost_kind", cost_kind_name(cfg.cost_kind)},
                        {"base_train", train_config_to_json(cfg.base_train)},
                        {"selector_train", train_config_to_json(cfg.selector_train)},
                        {"seeds", cfg.seeds},
                        {"workers", cfg.workers}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"data", "m_train", "m_cal", "m_test", "K", "lambdas", "cost_kind",
                               "base_train", "selector_train", "seeds", "workers"},
                              "config");
  ExperimentConfig cfg;
  if (j.contains("data")) cfg.data = spec_from_json(j.at("data"));
  detail::maybe_get(j, "m_train", cfg.m_train, "config");
  detail::maybe_get(j, "m_cal", cfg.m_cal, "config");
  detail::maybe_get(j, "m_test", cfg.m_test, "config");
  detail::maybe_get(j, "K", cfg.K, "config");
  detail::maybe_get(j, "lambdas", cfg.lambdas, "config");
  if (j.contains("cost_kind")) {
    std::string kind;
    detail::maybe_get(j, "cost_kind", kind, "config");
    if (kind == "linear")
      cfg.cost_kind = CardinalityCostKind::linear;
    else if (kind == "logarithmic")
      cfg.cost_kind = CardinalityCostKind::logarithmic;
    else
      throw config_error("config.cost_kind: unknown kind '" + kind + "'");
  }
  if (j.contains("base_train"))
    cfg.base_train = train_config_from_json(j.at("base_train"), "config.base_train");
  if (j.contains("selector_train"))
    cfg.selector_train = train_config_from_json(j.at("selector_train"), "config.selector_train");
  detail::maybe_get(j, "seeds", cfg.seeds, "config");
  detail::maybe_get(j, "workers", cfg.workers, "config");
  validate(cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Data assembly: one generated dataset per experiment seed, carved into the
// three configured splits.

struct SplitData {
  Dataset train;
  Dataset cal;
  Dataset test;
  GaussianSpec spec;  // the resolved spec the rows were drawn from
};

inline SplitData make_splits(const ExperimentConfig& cfg, std::uint64_t seed) {
  GaussianSpec spec = cfg.data;
  // both the configured data seed and the experiment seed feed the stream
  spec.seed = derive_seed(derive_seed(cfg.data.seed, 0xDA7Au), seed);
  spec = resolved(spec);
  std::size_t m = cfg.m_train + cfg.m_cal + cfg.m_test;
  Dataset all = generate_gaussian(spec, m);
  double dm = static_cast<double>(m);
  auto tagged = split(std::move(all),
                      {static_cast<double>(cfg.m_train) / dm, static_cast<double>(cfg.m_cal) / dm,
                       static_cast<double>(cfg.m_test) / dm},
                      seed);
  return SplitData{subset(tagged, Split::train), subset(tagged, Split::calibration),
                   subset(tagged, Split::test), std::move(spec)};
}

// ---------------------------------------------------------------------------
// Point evaluation.

// Scores a fixed per-instance choice of family member. The low-level form
// exists so hand-built selections can be checked exactly in tests.
template <typename Family>
CurvePoint eval_selection(const Family& family, std::span<const int> labels,
                          std::span<const int> k_indices, const std::string& method, double param,
                          std::uint64_t seed) {
  std::size_t m = family_rows(family);
  if (m == 0) throw data_error("eval_selection: empty split");
  if (labels.size() != m || k_indices.size() != m)
    throw data_error("eval_selection: length mismatch");
  double hits = 0.0;
  double cards = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    int idx = k_indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= family.size())
      throw data_error("eval_selection: member index out of range");
    PredictionSet s = family.set_at(i, static_cast<std::size_t>(idx));
    if (s.contains(labels[i])) hits += 1.0;
    cards += static_cast<double>(s.cardinality());
  }
  CurvePoint pt;
  pt.method = method;
  pt.param = param;
  pt.avg_cardinality = cards / static_cast<double>(m);
  pt.accuracy = hits / static_cast<double>(m);
  pt.n_test = m;
  pt.seed = seed;
  detail::check_point(pt, static_cast<double>(family.max_cardinality()));
  return pt;
}

// Argmax family-member index per row of a selector score matrix, ties to the
// higher index as everywhere else.
inline std::vector<int> select_indices(const MlpModel& selector, const RealMatrix& X) {
  ScoreMatrix s = score_matrix(selector, X);
  std::vector<int> out(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) out[i] = argmax_tie_high(s.row(i));
  return out;
}

template <typename Family>
CurvePoint eval_selector(const MlpModel& selector, const RealMatrix& X, const Family& family,
                         std::span<const int> labels, const std::string& method, double param,
                         std::uint64_t seed) {
  if (X.rows != family_rows(family)) throw data_error("eval_selector: feature/family mismatch");
  if (static_cast<std::size_t>(selector.out_dim) != family.size())
    throw data_error("eval_selector: selector output width does not match the family");
  std::vector<int> idx = select_indices(selector, X);
  return eval_selection(family, labels, idx, method, param, seed);
}

inline std::vector<CurvePoint> topk_curve(const ScoreMatrix& scores, std::span<const int> labels,
                                          const std::vector<int>& K, std::uint64_t seed) {
  TopKFamily family = TopKFamily::checked(scores, K);  // copies; validates K
  std::vector<CurvePoint> out;
  out.reserve(K.size());
  std::vector<int> idx(scores.rows);
  for (std::size_t j = 0; j < family.size(); ++j) {
    std::fill(idx.begin(), idx.end(), static_cast<int>(j));
    out.push_back(
        eval_selection(family, labels, idx, "topk", static_cast<double>(family.K[j]), seed));
  }
  return out;
}

inline std::vector<CurvePoint> conformal_curve(const ScoreMatrix& cal_scores,
                                               std::span<const int> cal_labels,
                                               const ScoreMatrix& test_scores,
                                               std::span<const int> test_labels,
                                               const std::vector<double>& alphas,
                                               std::uint64_t seed) {
  if (cal_scores.rows != cal_labels.size() || test_scores.rows != test_labels.size())
    throw data_error("conformal_curve: score/label length mismatch");
  if (cal_scores.cols != test_scores.cols)
    throw data_error("conformal_curve: calibration and test class counts differ");
  if (test_scores.rows == 0) throw data_error("conformal_curve: empty test split");
  if (alphas.empty()) throw config_error("conformal_curve: alpha list must be nonempty");
  std::vector<double> conformity(cal_scores.rows);
  for (std::size_t i = 0; i < cal_scores.rows; ++i)
    conformity[i] = cal_scores.at(i, static_cast<std::size_t>(cal_labels[i]));
  std::vector<CurvePoint> out;
  out.reserve(alphas.size());
  for (double alpha : alphas) {
    double q_hat = conformal_threshold(conformity, alpha);
    double hits = 0.0;
    double cards = 0.0;
    for (std::size_t i = 0; i < test_scores.rows; ++i) {
      PredictionSet s = conformal_set(test_scores.row(i), q_hat);
      if (s.contains(test_labels[i])) hits += 1.0;
      cards += static_cast<double>(s.cardinality());
    }
    CurvePoint pt;
    pt.method = "conformal";
    pt.param = alpha;
    pt.avg_cardinality = cards / static_cast<double>(test_scores.rows);
    pt.accuracy = hits / static_cast<double>(test_scores.rows);
    pt.coverage = pt.accuracy;
    pt.n_test = test_scores.rows;
    pt.seed = seed;
    detail::check_point(pt, static_cast<double>(test_scores.cols));
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// The lambda sweep: one selector training per lambda value on a shared base
// model. Trainings run on a small worker pool; results are stored by lambda
// index, so output order never depends on scheduling.

// Selectors learn over the base model's score vectors rather than the raw
// features. The scores are a low-dimensional summary that already carries the
// class-confidence structure the set-size decision depends on, and selector
// training converges far closer to the pointwise-optimal selection on them.
inline RealMatrix score_features(const ScoreMatrix& scores) {
  return RealMatrix::checked(scores.rows, scores.cols, std::vector<double>(scores.values));
}

struct SeedArtifacts {
  SplitData splits;
  LinearModel base;
  TopKFamily train_family;
  TopKFamily test_family;
};

inline SeedArtifacts prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SplitData splits = make_splits(cfg, seed);
  TrainConfig base_cfg = cfg.base_train;
  base_cfg.seed = derive_seed(seed, 0xBA5Eu);
  LinearModel base = train_base(splits.train.features, splits.train.labels,
                                splits.train.n_classes, base_cfg);
  TopKFamily train_family = TopKFamily::checked(score_matrix(base, splits.train.features), cfg.K);
  TopKFamily test_family = TopKFamily::checked(score_matrix(base, splits.test.features), cfg.K);
  return SeedArtifacts{std::move(splits), std::move(base), std::move(train_family),
                       std::move(test_family)};
}

inline std::vector<CurvePoint> sweep_seed(const ExperimentConfig& cfg, const SeedArtifacts& art,
                                          std::uint64_t seed) {
  std::size_t L = cfg.lambdas.size();
  std::vector<CurvePoint> points(L);
  std::vector<std::exception_ptr> errors(L);
  RealMatrix train_inputs = score_features(art.train_family.base_scores);
  RealMatrix test_inputs = score_features(art.test_family.base_scores);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t j = next.fetch_add(1);
      if (j >= L) return;
      try {
        double lambda = cfg.lambdas[j];
        CostTensor cost =
            build_cost(art.train_family, art.splits.train.labels, lambda, cfg.cost_kind);
        TrainConfig sel_cfg = cfg.selector_train;
        sel_cfg.seed = derive_seed(derive_seed(seed, 0x5E17u), static_cast<std::uint64_t>(j));
        MlpModel selector = train_selector(train_inputs, cost, sel_cfg);
        points[j] = eval_selector(selector, test_inputs, art.test_family,
                                  art.splits.test.labels, "sweep", lambda, seed);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), L);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t j = 0; j < L; ++j) {
    if (!errors[j]) continue;
    std::string at = "lambda=" + fmt_g9(cfg.lambdas[j]) + ": ";
    try {
      std::rethrow_exception(errors[j]);
    } catch (const training_divergence& e) {
      throw training_divergence("lambda_sweep: " + at + e.what());
    } catch (const config_error& e) {
      throw config_error("lambda_sweep: " + at + e.what());
    } catch (const data_error& e) {
      throw data_error("lambda_sweep: " + at + e.what());
    }
  }
  return points;
}

struct ExperimentRun {
  std::vector<CurvePoint> topk;   // per seed, k ascending
  std::vector<CurvePoint> sweep;  // per seed, lambda descending
};

inline ExperimentRun run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentRun run;
  for (std::uint64_t seed : cfg.seeds) {
    SeedArtifacts art = prepare_seed(cfg, seed);
    auto baseline =
        topk_curve(art.test_family.base_scores, art.splits.test.labels, cfg.K, seed);
    run.topk.insert(run.topk.end(), baseline.begin(), baseline.end());
    auto points = sweep_seed(cfg, art, seed);
    run.sweep.insert(run.sweep.end(), points.begin(), points.end());
  }
  return run;
}

inline std::vector<CurvePoint> lambda_sweep(const ExperimentConfig& cfg) {
  return run_experiment(cfg).sweep;
}

// ---------------------------------------------------------------------------
// Family-dependent Bayes selection from known class posteriors, for the
// synthetic task where the generating distribution is available.

inline RealMatrix posterior_matrix(const GaussianSpec& resolved_spec, const RealMatrix& X) {
  std::size_t n = static_cast<std::size_t>(resolved_spec.n_classes);
  std::vector<double> vals(X.rows * n);
  for (std::size_t i = 0; i < X.rows; ++i) {
    ProbVector p = true_posterior(resolved_spec, X.row(i));
    for (std::size_t c = 0; c < n; ++c) vals[i * n + c] = p[c];
  }
  return RealMatrix::checked(X.rows, n, std::move(vals));
}

template <typename Family>
std::vector<int> bayes_indices(const RealMatrix& posteriors, const Family& family, double lambda,
                               CardinalityCostKind kind) {
  if (posteriors.rows != family_rows(family))
    throw data_error("bayes_indices: posterior/family mismatch");
  std::vector<int> out(posteriors.rows);
  std::vector<PredictionSet> sets(family.size());
  for (std::size_t i = 0; i < posteriors.rows; ++i) {
    auto row = posteriors.row(i);
    ProbVector p = ProbVector::checked(std::vector<double>(row.begin(), row.end()));
    for (std::size_t k = 0; k < family.size(); ++k) sets[k] = family.set_at(i, k);
    out[i] = bayes_selector(p, sets, lambda, kind);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Emission. Curve CSV carries 9 significant digits; coverage stays blank for
// rows where it is undefined.

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& points) {
  os << "method,param,avg_cardinality,accuracy,coverage,n_test,seed\n";
  for (const CurvePoint& pt : points) {
    os << pt.method << ',' << fmt_g9(pt.param) << ',' << fmt_g9(pt.avg_cardinality) << ','
       << fmt_g9(pt.accuracy) << ',' << (std::isnan(pt.coverage) ? std::string() : fmt_g9(pt.coverage))
       << ',' << pt.n_test << ',' << pt.seed << '\n';
  }
  if (!os) throw data_error("write_curve_csv: write failed");
}

namespace detail {

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

}  // namespace detail

inline nlohmann::json point_to_json(const CurvePoint& pt) {
  nlohmann::json j{{"method", pt.method},
                   {"param", pt.param},
                   {"avg_cardinality", pt.avg_cardinality},
                   {"accuracy", pt.accuracy},
                   {"n_test", pt.n_test},
                   {"seed", pt.seed}};
  if (!std::isnan(pt.coverage)) j["coverage"] = pt.coverage;
  return j;
}

// Full experiment record: config echo, a content hash of the canonical config
// serialization for provenance, and every curve point.
inline nlohmann::json experiment_record(const ExperimentConfig& cfg,
                                        const std::vector<CurvePoint>& points) {
  nlohmann::json config_json = experiment_to_json(cfg);
  nlohmann::json out;
  out["config"] = config_json;
  out["content_hash"] = "fnv1a64:" + detail::hex64(detail::fnv1a64(config_json.dump()));
  nlohmann::json arr = nlohmann::json::array();
  for (const CurvePoint& pt : points) arr.push_back(point_to_json(pt));
  out["points"] = arr;
  return out;
}

// ---------------------------------------------------------------------------
// Curve analysis helpers.

// Pointwise mean over seeds: points sharing (method, param) collapse to one,
// in first-appearance order.
inline std::vector<CurvePoint> average_curve(const std::vector<CurvePoint>& points) {
  std::vector<CurvePoint> out;
  std::vector<std::size_t> counts;
  for (const CurvePoint& pt : points) {
    std::size_t at = out.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i].method == pt.method && out[i].param == pt.param) {
        at = i;
        break;
      }
    }
    if (at == out.size()) {
      out.push_back(pt);
      out.back().seed = 0;
      counts.push_back(1);
      continue;
    }
    CurvePoint& acc = out[at];
    acc.avg_cardinality += pt.avg_cardinality;
    acc.accuracy += pt.accuracy;
    acc.coverage += pt.coverage;  // NaN stays NaN for mixed rows
    acc.n_test += pt.n_test;
    counts[at] += 1;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    double c = static_cast<double>(counts[i]);
    out[i].avg_cardinality /= c;
    out[i].accuracy /= c;
    out[i].coverage /= c;
  }
  return out;
}

// Piecewise-linear accuracy as a function of cardinality. Points with equal
// cardinality are averaged first; queries outside the observed range clamp to
// the end values.
inline double interpolated_accuracy(const std::vector<CurvePoint>& curve, double card) {
  if (curve.empty()) throw data_error("interpolated_accuracy: empty curve");
  std::vector<std::pair<double, double>> xy;
  for (const CurvePoint& pt : curve) xy.emplace_back(pt.avg_cardinality, pt.accuracy);
  std::sort(xy.begin(), xy.end());
  std::vector<std::pair<double, double>> merged;
  std::size_t i = 0;
  while (i < xy.size()) {
    double x = xy[i].first;
    double sum = 0.0;
    std::size_t n = 0;
    while (i < xy.size() && xy[i].first <= x + 1e-12) {
      sum += xy[i].second;
      ++n;
      ++i;
    }
    merged.emplace_back(x, sum / static_cast<double>(n));
  }
  if (card <= merged.front().first) return merged.front().second;
  if (card >= merged.back().first) return merged.back().second;
  for (std::size_t j = 1; j < merged.size(); ++j) {
    if (card > merged[j].first) continue;
    auto [x0, y0] = merged[j - 1];
    auto [x1, y1] = merged[j];
    double t = (card - x0) / (x1 - x0);
    return y0 + t * (y1 - y0);
  }
  return merged.back().second;
}

// Largest pointwise accuracy difference between two curves over the overlap
// of their cardinality ranges, sampled on a uniform grid.
inline double max_accuracy_gap(const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b,
                               int grid = 101) {
  auto range = [](const std::vector<CurvePoint>& c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const CurvePoint& pt : c) {
      lo = std::min(lo, pt.avg_cardinality);
      hi = std::max(hi, pt.avg_cardinality);
    }
    return std::pair<double, double>(lo, hi);
  };
  auto [alo, ahi] = range(a);
  auto [blo, bhi] = range(b);
  double lo = std::max(alo, blo);
  double hi = std::min(ahi, bhi);
  if (!(hi > lo)) return 0.0;  // no overlap to compare
  double worst = 0.0;
  for (int g = 0; g < grid; ++g) {
    double x = lo + (hi - lo) * g / (grid - 1);
    worst = std::max(worst, std::abs(interpolated_accuracy(a, x) - interpolated_accuracy(b, x)));
  }
  return worst;
}

// The dominance check used for the sweep-vs-baseline comparison: every
// baseline point must be matched or beaten by some sweep point that spends no
// more cardinality, up to `slack` accuracy.
inline bool dominates_baseline(const std::vector<CurvePoint>& sweep,
                               const std::vector<CurvePoint>& baseline, double slack) {
  for (const CurvePoint& base : baseline) {
    bool matched = false;
    for (const CurvePoint& pt : sweep) {
      if (pt.avg_cardinality <= base.avg_cardinality + 1e-9 &&
          pt.accuracy >= base.accuracy - slack) {
        matched = true;
        break;
      }
    }
    if (!matched) return false;
  }
  return true;
}

}  // namespace cardset
