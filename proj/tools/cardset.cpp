// Command line driver for the cardinality-aware set prediction toolkit:
// synthetic data generation, base and selector training, cost construction,
// lambda sweeps, baseline curves, bound verification, and gradient checking.
//
// Every subcommand reads one optional JSON config plus flag overrides; flags
// win. Exit codes: 0 success, 2 config error, 3 data error, 4 verification
// failure (a violated bound or gradient mismatch), 5 training divergence.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cardset/cost.hpp"
#include "cardset/data.hpp"
#include "cardset/eval.hpp"
#include "cardset/losses.hpp"
#include "cardset/models.hpp"
#include "cardset/sets.hpp"
#include "cardset/util.hpp"
#include "cardset/verify.hpp"

namespace {

using namespace cardset;

nlohmann::json load_config_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file " + path);
  try {
    nlohmann::json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
}

LinearModel load_linear_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open model file " + path);
  return load_linear(is);
}

template <typename Model>
void save_model_file(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open output file " + path);
  if constexpr (std::is_same_v<Model, LinearModel>)
    save_linear(os, model);
  else
    save_mlp(os, model);
  if (!os) throw data_error("write failed: " + path);
}

void write_points_file(const std::string& path, const std::vector<CurvePoint>& points) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot open output file " + path);
  write_curve_csv(os, points);
}

void check_k_list(const std::vector<int>& K, int n_classes) {
  if (K.empty()) throw config_error("K must be nonempty");
  for (std::size_t i = 0; i < K.size(); ++i) {
    if (K[i] < 1 || K[i] > n_classes)
      throw config_error("K entry " + std::to_string(K[i]) + " outside [1, " +
                         std::to_string(n_classes) + "]");
    if (i > 0 && K[i] <= K[i - 1]) throw config_error("K must be strictly increasing");
  }
}

// ---------------------------------------------------------------------------

struct GenDataOpts {
  std::string config;
  std::string out;
  std::string sidecar;
  std::size_t m = 1000;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run_gen_data(const GenDataOpts& o) {
  GaussianSpec spec;
  if (!o.config.empty()) spec = spec_from_json(load_config_json(o.config));
  if (o.seed_set) spec.seed = o.seed;
  spec = resolved(spec);
  Dataset ds = generate_gaussian(spec, o.m);
  save_csv(o.out, ds);
  std::string sidecar = o.sidecar.empty() ? o.out + ".spec.json" : o.sidecar;
  write_spec_json(sidecar, spec);
  std::cout << "wrote " << o.out << " (" << ds.size() << " rows, " << ds.dim()
            << " features, " << ds.n_classes << " classes) and " << sidecar << "\n";
  return 0;
}

struct TrainBaseOpts {
  std::string config;
  std::string data;
  std::string sidecar;
  std::string out;
  int classes = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
  bool epochs_set = false;
  double lr = 0.0;
  bool lr_set = false;
};

int run_train_base(const TrainBaseOpts& o) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg = train_config_from_json(load_config_json(o.config), "config");
  if (o.seed_set) cfg.seed = o.seed;
  if (o.epochs_set) cfg.epochs = o.epochs;
  if (o.lr_set) cfg.learning_rate = o.lr;
  int classes = o.classes;
  if (classes == 0 && !o.sidecar.empty()) classes = read_spec_json(o.sidecar).n_classes;
  Dataset ds = load_csv(o.data, classes);
  LinearModel model = train_base(ds.features, ds.labels, ds.n_classes, cfg);
  save_model_file(o.out, model);
  std::cout << "wrote " << o.out << " (linear " << model.in_dim << " -> " << model.out_dim
            << ", trained on " << ds.size() << " rows)\n";
  return 0;
}

struct BuildCostsOpts {
  std::string config;
  std::string model;
  std::string data;
  std::string out;
  std::vector<int> K;
  double lambda = 0.0;
  bool lambda_set = false;
  std::string cost_kind;
};

int run_build_costs(const BuildCostsOpts& o) {
  std::vector<int> K{1, 2, 4, 8};
  double lambda = 0.1;
  CardinalityCostKind kind = CardinalityCostKind::logarithmic;
  if (!o.config.empty()) {
    auto j = load_config_json(o.config);
    detail::reject_unknown_keys(j, {"K", "lambda", "cost_kind"}, "config");
    detail::maybe_get(j, "K", K, "config");
    detail::maybe_get(j, "lambda", lambda, "config");
    if (j.contains("cost_kind")) {
      std::string name;
      detail::maybe_get(j, "cost_kind", name, "config");
      if (name == "linear")
        kind = CardinalityCostKind::linear;
      else if (name == "logarithmic")
        kind = CardinalityCostKind::logarithmic;
      else
        throw config_error("config.cost_kind: unknown kind '" + name + "'");
    }
  }
  if (!o.K.empty()) K = o.K;
  if (o.lambda_set) lambda = o.lambda;
  if (!o.cost_kind.empty()) {
    if (o.cost_kind == "linear")
      kind = CardinalityCostKind::linear;
    else if (o.cost_kind == "logarithmic")
      kind = CardinalityCostKind::logarithmic;
    else
      throw config_error("--cost-kind: unknown kind '" + o.cost_kind + "'");
  }
  if (!(lambda > 0.0)) throw config_error("lambda must be positive");
  LinearModel model = load_linear_file(o.model);
  Dataset ds = load_csv(o.data, model.out_dim);
  check_k_list(K, model.out_dim);
  TopKFamily family = TopKFamily::checked(score_matrix(model, ds.features), K);
  CostTensor cost = build_cost(family, ds.labels, lambda, kind);
  std::ofstream os(o.out);
  if (!os) throw data_error("cannot open output file " + o.out);
  write_cost_csv(os, cost);
  std::cout << "wrote " << o.out << " (" << cost.rows << " rows x " << cost.num_k
            << " members, lambda " << fmt_g9(lambda) << ", " << cost_kind_name(kind) << ")\n";
  return 0;
}

struct TrainSelectorOpts {
  std::string config;
  std::string data;
  std::string costs;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = 0;
  bool epochs_set = false;
  double lr = 0.0;
  bool lr_set = false;
};

int run_train_selector(const TrainSelectorOpts& o) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg = train_config_from_json(load_config_json(o.config), "config");
  if (o.seed_set) cfg.seed = o.seed;
  if (o.epochs_set) cfg.epochs = o.epochs;
  if (o.lr_set) cfg.learning_rate = o.lr;
  Dataset ds = load_csv(o.data);
  std::ifstream cis(o.costs);
  if (!cis) throw data_error("cannot open cost file " + o.costs);
  CostTensor cost = read_cost_csv(cis, o.costs);
  MlpModel model;
  if (o.model.empty()) {
    model = train_selector(ds.features, cost, cfg);
  } else {
    // selector over the base model's scores, matching the sweep pipeline
    LinearModel base = load_linear_file(o.model);
    model = train_selector(score_features(score_matrix(base, ds.features)), cost, cfg);
  }
  save_model_file(o.out, model);
  std::cout << "wrote " << o.out << " (mlp " << model.in_dim << " -> " << model.hidden1 << " -> "
            << model.hidden2 << " -> " << model.out_dim << ")\n";
  return 0;
}

struct SweepOpts {
  std::string config;
  std::string out;
  std::string record;
  int workers = 0;
  bool workers_set = false;
  bool with_baseline = false;
};

int run_sweep(const SweepOpts& o) {
  ExperimentConfig cfg = experiment_from_json(load_config_json(o.config));
  if (o.workers_set) cfg.workers = o.workers;
  validate(cfg);
  ExperimentRun run = run_experiment(cfg);
  std::vector<CurvePoint> points;
  if (o.with_baseline) points.insert(points.end(), run.topk.begin(), run.topk.end());
  points.insert(points.end(), run.sweep.begin(), run.sweep.end());
  write_points_file(o.out, points);
  if (!o.record.empty()) {
    std::ofstream os(o.record);
    if (!os) throw data_error("cannot open output file " + o.record);
    os << experiment_record(cfg, points).dump(2) << '\n';
  }
  std::cout << "wrote " << o.out << " (" << points.size() << " points)\n";
  return 0;
}

struct TopkCurveOpts {
  std::string config;
  std::string model;
  std::string data;
  std::string out;
  std::vector<int> K;
  std::uint64_t seed = 0;  // provenance tag for the CSV seed column
};

int run_topk_curve(const TopkCurveOpts& o) {
  std::vector<int> K{1, 2, 4, 8};
  if (!o.config.empty()) {
    auto j = load_config_json(o.config);
    detail::reject_unknown_keys(j, {"K"}, "config");
    detail::maybe_get(j, "K", K, "config");
  }
  if (!o.K.empty()) K = o.K;
  LinearModel model = load_linear_file(o.model);
  Dataset ds = load_csv(o.data, model.out_dim);
  check_k_list(K, model.out_dim);
  auto points = topk_curve(score_matrix(model, ds.features), ds.labels, K, o.seed);
  write_points_file(o.out, points);
  std::cout << "wrote " << o.out << " (" << points.size() << " points)\n";
  return 0;
}

struct ConformalOpts {
  std::string config;
  std::string model;
  std::string cal;
  std::string test;
  std::string out;
  std::vector<double> alphas;
  std::uint64_t seed = 0;
};

int run_conformal(const ConformalOpts& o) {
  std::vector<double> alphas{0.05, 0.1, 0.2};
  if (!o.config.empty()) {
    auto j = load_config_json(o.config);
    detail::reject_unknown_keys(j, {"alphas"}, "config");
    detail::maybe_get(j, "alphas", alphas, "config");
  }
  if (!o.alphas.empty()) alphas = o.alphas;
  LinearModel model = load_linear_file(o.model);
  Dataset cal = load_csv(o.cal, model.out_dim);
  Dataset test = load_csv(o.test, model.out_dim);
  auto points = conformal_curve(score_matrix(model, cal.features), cal.labels,
                                score_matrix(model, test.features), test.labels, alphas, o.seed);
  write_points_file(o.out, points);
  std::cout << "wrote " << o.out << " (" << points.size() << " points)\n";
  return 0;
}

struct VerifyBoundsOpts {
  std::string config;
  std::string out;
  int trials = 0;
  bool trials_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool mutate = false;
};

int run_verify_bounds(const VerifyBoundsOpts& o) {
  TrialConfig tc;
  tc.trials = 200;
  if (!o.config.empty()) {
    auto j = load_config_json(o.config);
    detail::reject_unknown_keys(
        j, {"trials", "seed", "mutate", "min_labels", "max_labels", "max_support"}, "config");
    detail::maybe_get(j, "trials", tc.trials, "config");
    detail::maybe_get(j, "seed", tc.seed, "config");
    detail::maybe_get(j, "mutate", tc.mutate_drop_k_factor, "config");
    detail::maybe_get(j, "min_labels", tc.min_labels, "config");
    detail::maybe_get(j, "max_labels", tc.max_labels, "config");
    detail::maybe_get(j, "max_support", tc.max_support, "config");
  }
  if (o.trials_set) tc.trials = o.trials;
  if (o.seed_set) tc.seed = o.seed;
  if (o.mutate) tc.mutate_drop_k_factor = true;
  if (tc.trials < 1) throw config_error("verify-bounds: trial count must be positive");
  auto topk = run_topk_bound_trials(tc);
  auto cost = run_cost_bound_trials(tc);
  std::vector<BoundReport> all;
  all.reserve(topk.size() + cost.size());
  all.insert(all.end(), topk.begin(), topk.end());
  all.insert(all.end(), cost.begin(), cost.end());
  if (!o.out.empty()) {
    std::ofstream os(o.out);
    if (!os) throw data_error("cannot open output file " + o.out);
    write_bound_reports(os, all);
  }
  double worst = min_margin(all);
  bool violated = worst < -tol::bound_margin;
  std::cout << "checked " << all.size() << " bounds, worst margin " << fmt_g9(worst)
            << (violated ? " VIOLATED\n" : " ok\n");
  return violated ? 4 : 0;
}

struct GradCheckOpts {
  std::string config;
  int trials = 0;
  bool trials_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

// Central finite differences against the analytic gradients, the same
// convention the unit suite uses: h = 1e-5, error |a-b| / max(1, |a|, |b|).
int run_grad_check(const GradCheckOpts& o) {
  int trials = 200;
  std::uint64_t seed = 20240901;
  if (!o.config.empty()) {
    auto j = load_config_json(o.config);
    detail::reject_unknown_keys(j, {"trials", "seed"}, "config");
    detail::maybe_get(j, "trials", trials, "config");
    detail::maybe_get(j, "seed", seed, "config");
  }
  if (o.trials_set) trials = o.trials;
  if (o.seed_set) seed = o.seed;
  if (trials < 1) throw config_error("grad-check: trial count must be positive");

  auto fd_gradient = [](auto&& f, std::vector<double> x) {
    const double h = 1e-5;
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double saved = x[i];
      x[i] = saved + h;
      double up = f(x);
      x[i] = saved - h;
      double down = f(x);
      x[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    return g;
  };
  auto max_rel_diff = [](std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
      worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
  };

  Rng rng(seed);
  auto sample = [&](std::vector<double>& s, int& label) {
    std::size_t n = 3 + rng.below(4);
    s.resize(n);
    for (double& v : s) v = rng.uniform(-3.0, 3.0);
    label = static_cast<int>(rng.below(n));
  };

  double overall = 0.0;
  auto report = [&](const std::string& name, double worst) {
    std::cout << "  " << name << ": worst relative error " << fmt_g9(worst) << "\n";
    overall = std::max(overall, worst);
  };

  std::vector<CompSumKind> comp{CompSumKind::logistic(), CompSumKind::sum_exponential(),
                                CompSumKind::mae(), CompSumKind::gce(0.7)};
  for (auto kind : comp) {
    double worst = 0.0;
    std::vector<double> s;
    int label = 0;
    for (int t = 0; t < trials; ++t) {
      sample(s, label);
      auto g = comp_sum_grad(s, label, kind);
      auto fd = fd_gradient([&](std::span<const double> x) { return comp_sum_loss(x, label, kind); },
                            s);
      worst = std::max(worst, max_rel_diff(g, fd));
    }
    report(kind.name(), worst);
  }

  std::vector<ConstrainedKind> cstnd{ConstrainedKind::exponential(), ConstrainedKind::hinge(),
                                     ConstrainedKind::squared_hinge(),
                                     ConstrainedKind::rho_margin(1.0)};
  for (auto kind : cstnd) {
    double worst = 0.0;
    std::vector<double> s;
    int label = 0;
    int accepted = 0;
    int attempts = 0;
    while (accepted < trials && attempts < trials * 50) {
      ++attempts;
      sample(s, label);
      auto r = constrained_grad(s, label, kind);
      if (r.near_kink) continue;  // one-sided derivative, finite differences straddle it
      ++accepted;
      auto fd = fd_gradient(
          [&](std::span<const double> x) { return constrained_loss(x, label, kind); }, s);
      worst = std::max(worst, max_rel_diff(r.grad, fd));
    }
    report(kind.name(), worst);
  }

  {
    double worst = 0.0;
    std::vector<double> s;
    int label = 0;
    for (int t = 0; t < trials; ++t) {
      sample(s, label);
      std::vector<double> cost_row(s.size());
      for (double& c : cost_row) c = rng.uniform();
      CompSumKind kind = comp[static_cast<std::size_t>(t) % comp.size()];
      auto g = cost_sensitive_comp_sum_grad(s, cost_row, kind);
      auto fd = fd_gradient(
          [&](std::span<const double> x) { return cost_sensitive_comp_sum(x, cost_row, kind); },
          s);
      worst = std::max(worst, max_rel_diff(g, fd));
    }
    report("cost_comp_sum", worst);
  }
  {
    double worst = 0.0;
    std::vector<double> s;
    int label = 0;
    int accepted = 0;
    int attempts = 0;
    while (accepted < trials && attempts < trials * 50) {
      ++attempts;
      sample(s, label);
      std::vector<double> cost_row(s.size());
      for (double& c : cost_row) c = rng.uniform();
      ConstrainedKind kind = cstnd[static_cast<std::size_t>(attempts) % cstnd.size()];
      auto r = cost_sensitive_constrained_grad(s, cost_row, kind);
      if (r.near_kink) continue;
      ++accepted;
      auto fd = fd_gradient(
          [&](std::span<const double> x) {
            return cost_sensitive_constrained(x, cost_row, kind);
          },
          s);
      worst = std::max(worst, max_rel_diff(r.grad, fd));
    }
    report("cost_constrained", worst);
  }

  bool ok = overall <= tol::grad_check_rel;
  std::cout << "overall worst relative error " << fmt_g9(overall) << (ok ? " ok\n" : " FAILED\n");
  return ok ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardinality-aware set prediction toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic Gaussian mixture dataset");
  gen_cmd->add_option("--config", gen.config, "generator spec JSON");
  gen_cmd->add_option("--m", gen.m, "number of rows")->check(CLI::PositiveNumber);
  auto* gen_seed = gen_cmd->add_option("--seed", gen.seed, "override the spec seed");
  gen_cmd->add_option("--out", gen.out, "output CSV path")->required();
  gen_cmd->add_option("--sidecar", gen.sidecar, "spec sidecar path (default <out>.spec.json)");
  gen_cmd->callback([&]() {
    gen.seed_set = gen_seed->count() > 0;
    rc = run_gen_data(gen);
  });

  TrainBaseOpts tb;
  auto* tb_cmd = app.add_subcommand("train-base", "train the linear base scorer");
  tb_cmd->add_option("--config", tb.config, "train config JSON");
  tb_cmd->add_option("--data", tb.data, "training CSV")->required();
  tb_cmd->add_option("--sidecar", tb.sidecar, "dataset spec sidecar (for the class count)");
  tb_cmd->add_option("--classes", tb.classes, "class count (0 = infer)");
  auto* tb_seed = tb_cmd->add_option("--seed", tb.seed, "override the config seed");
  auto* tb_epochs = tb_cmd->add_option("--epochs", tb.epochs, "override epochs");
  auto* tb_lr = tb_cmd->add_option("--lr", tb.lr, "override learning rate");
  tb_cmd->add_option("--out", tb.out, "output checkpoint path")->required();
  tb_cmd->callback([&]() {
    tb.seed_set = tb_seed->count() > 0;
    tb.epochs_set = tb_epochs->count() > 0;
    tb.lr_set = tb_lr->count() > 0;
    rc = run_train_base(tb);
  });

  BuildCostsOpts bc;
  auto* bc_cmd = app.add_subcommand("build-costs", "build the instance-cost table for a top-k family");
  bc_cmd->add_option("--config", bc.config, "cost config JSON (K, lambda, cost_kind)");
  bc_cmd->add_option("--model", bc.model, "base model checkpoint")->required();
  bc_cmd->add_option("--data", bc.data, "dataset CSV")->required();
  bc_cmd->add_option("--K", bc.K, "candidate cardinalities")->delimiter(',');
  auto* bc_lambda = bc_cmd->add_option("--lambda", bc.lambda, "cardinality penalty weight");
  bc_cmd->add_option("--cost-kind", bc.cost_kind, "linear or logarithmic");
  bc_cmd->add_option("--out", bc.out, "output cost CSV")->required();
  bc_cmd->callback([&]() {
    bc.lambda_set = bc_lambda->count() > 0;
    rc = run_build_costs(bc);
  });

  TrainSelectorOpts ts;
  auto* ts_cmd = app.add_subcommand("train-selector", "train the cardinality selector network");
  ts_cmd->add_option("--config", ts.config, "train config JSON");
  ts_cmd->add_option("--data", ts.data, "feature CSV")->required();
  ts_cmd->add_option("--costs", ts.costs, "cost CSV from build-costs")->required();
  ts_cmd->add_option("--model", ts.model,
                     "base model checkpoint; when given, the selector trains on its scores");
  auto* ts_seed = ts_cmd->add_option("--seed", ts.seed, "override the config seed");
  auto* ts_epochs = ts_cmd->add_option("--epochs", ts.epochs, "override epochs");
  auto* ts_lr = ts_cmd->add_option("--lr", ts.lr, "override learning rate");
  ts_cmd->add_option("--out", ts.out, "output checkpoint path")->required();
  ts_cmd->callback([&]() {
    ts.seed_set = ts_seed->count() > 0;
    ts.epochs_set = ts_epochs->count() > 0;
    ts.lr_set = ts_lr->count() > 0;
    rc = run_train_selector(ts);
  });

  SweepOpts sw;
  auto* sw_cmd = app.add_subcommand("sweep", "run the lambda sweep experiment");
  sw_cmd->add_option("--config", sw.config, "experiment config JSON")->required();
  sw_cmd->add_option("--out", sw.out, "output curve CSV")->required();
  sw_cmd->add_option("--record", sw.record, "full experiment record JSON");
  auto* sw_workers = sw_cmd->add_option("--workers", sw.workers, "override the worker count");
  sw_cmd->add_flag("--with-baseline", sw.with_baseline, "also emit the top-k baseline rows");
  sw_cmd->callback([&]() {
    sw.workers_set = sw_workers->count() > 0;
    rc = run_sweep(sw);
  });

  TopkCurveOpts tk;
  auto* tk_cmd = app.add_subcommand("topk-curve", "evaluate the fixed top-k baseline curve");
  tk_cmd->add_option("--config", tk.config, "curve config JSON (K)");
  tk_cmd->add_option("--model", tk.model, "base model checkpoint")->required();
  tk_cmd->add_option("--data", tk.data, "evaluation CSV")->required();
  tk_cmd->add_option("--K", tk.K, "cardinalities to evaluate")->delimiter(',');
  tk_cmd->add_option("--seed", tk.seed, "seed tag for the CSV rows");
  tk_cmd->add_option("--out", tk.out, "output curve CSV")->required();
  tk_cmd->callback([&]() { rc = run_topk_curve(tk); });

  ConformalOpts cf;
  auto* cf_cmd = app.add_subcommand("conformal", "evaluate split conformal prediction sets");
  cf_cmd->add_option("--config", cf.config, "conformal config JSON (alphas)");
  cf_cmd->add_option("--model", cf.model, "base model checkpoint")->required();
  cf_cmd->add_option("--cal", cf.cal, "calibration CSV")->required();
  cf_cmd->add_option("--test", cf.test, "test CSV")->required();
  cf_cmd->add_option("--alphas", cf.alphas, "miscoverage levels")->delimiter(',');
  cf_cmd->add_option("--seed", cf.seed, "seed tag for the CSV rows");
  cf_cmd->add_option("--out", cf.out, "output curve CSV")->required();
  cf_cmd->callback([&]() { rc = run_conformal(cf); });

  VerifyBoundsOpts vb;
  auto* vb_cmd = app.add_subcommand("verify-bounds", "run the randomized consistency-bound sweep");
  vb_cmd->add_option("--config", vb.config, "trial config JSON");
  auto* vb_trials = vb_cmd->add_option("--trials", vb.trials, "trials per bound family");
  auto* vb_seed = vb_cmd->add_option("--seed", vb.seed, "trial seed");
  vb_cmd->add_flag("--mutate", vb.mutate, "drop the k factor from the transform (must fail)");
  vb_cmd->add_option("--out", vb.out, "bound report CSV");
  vb_cmd->callback([&]() {
    vb.trials_set = vb_trials->count() > 0;
    vb.seed_set = vb_seed->count() > 0;
    rc = run_verify_bounds(vb);
  });

  GradCheckOpts gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of every loss gradient");
  gc_cmd->add_option("--config", gc.config, "check config JSON (trials, seed)");
  auto* gc_trials = gc_cmd->add_option("--trials", gc.trials, "trials per kind");
  auto* gc_seed = gc_cmd->add_option("--seed", gc.seed, "sampling seed");
  gc_cmd->callback([&]() {
    gc.trials_set = gc_trials->count() > 0;
    gc.seed_set = gc_seed->count() > 0;
    rc = run_grad_check(gc);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // treat bad invocations as config errors
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const training_divergence& e) {
    std::cerr << "training divergence: " << e.what() << "\n";
    return 5;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
