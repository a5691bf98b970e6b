#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardset/core.hpp"
#include "cardset/losses.hpp"
#include "cardset/sets.hpp"
#include "cardset/util.hpp"

namespace cardset {

// Finite distribution over support points, each carrying a conditional
// probability vector over n labels. Exact expectations over these are what
// the consistency-bound verifier computes.
struct DiscreteDistribution {
  struct Point {
    double weight;
    ProbVector p;
  };
  std::vector<Point> points;
  int n = 0;

  static DiscreteDistribution checked(std::vector<Point> points) {
    if (points.empty()) throw std::invalid_argument("DiscreteDistribution: no support points");
    double wsum = 0.0;
    std::size_t n = points.front().p.size();
    for (const auto& pt : points) {
      if (!(pt.weight > 0.0 && pt.weight <= 1.0))
        throw std::invalid_argument("DiscreteDistribution: weight outside (0,1]");
      if (pt.p.size() != n)
        throw std::invalid_argument("DiscreteDistribution: inconsistent label counts");
      wsum += pt.weight;
    }
    if (std::abs(wsum - 1.0) > tol::prob_sum)
      throw std::invalid_argument("DiscreteDistribution: weights sum to " + std::to_string(wsum));
    return DiscreteDistribution{std::move(points), static_cast<int>(n)};
  }

  std::size_t size() const { return points.size(); }
};

// ---------------------------------------------------------------------------
// psi transforms: the concave calibration functions whose inverses convert a
// comp-sum surrogate excess into a top-k excess. Endpoints are evaluated as
// continuous limits (0 * log 0 taken as 0).

inline double psi(CompSumKind kind, double t, int n) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("psi: t outside [0,1]");
  switch (kind.tag) {
    case CompSumKind::Tag::logistic: {
      if (t == 0.0) return 0.0;
      if (t == 1.0) return std::log(2.0);
      return 0.5 * (1.0 - t) * std::log1p(-t) + 0.5 * (1.0 + t) * std::log1p(t);
    }
    case CompSumKind::Tag::sum_exponential:
      return 1.0 - std::sqrt(std::max(0.0, 1.0 - t * t));
    case CompSumKind::Tag::mae:
      return t / static_cast<double>(n);
    case CompSumKind::Tag::gce: {
      double q = kind.q;
      double scale = 1.0 / (q * std::pow(static_cast<double>(n), q));
      if (t == 1.0) return scale * (std::pow(2.0, q) - 1.0);
      double e = 1.0 / (1.0 - q);
      double avg = 0.5 * (std::pow(1.0 + t, e) + std::pow(1.0 - t, e));
      return scale * (std::pow(avg, 1.0 - q) - 1.0);
    }
  }
  throw std::logic_error("psi: unreachable");
}

struct PsiInverse {
  double t = 0.0;
  bool clamped = false;  // v exceeded psi(1); the resulting bound is vacuous
};

// monotone bisection to 1e-12; values above psi(1) clamp to t = 1
inline PsiInverse psi_inverse(CompSumKind kind, double v, int n) {
  if (!(v >= 0.0)) throw std::invalid_argument("psi_inverse: negative value");
  double top = psi(kind, 1.0, n);
  if (v >= top) return {1.0, v > top};
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 100 && hi - lo > 1e-12; ++i) {
    double mid = 0.5 * (lo + hi);
    if (psi(kind, mid, n) < v)
      lo = mid;
    else
      hi = mid;
  }
  return {0.5 * (lo + hi), false};
}

// ---------------------------------------------------------------------------
// gamma transforms for the cost-sensitive bounds and for the constrained
// top-k bounds. The cost-sensitive gce/mae variants carry (q, |K|) as fixed
// parameters of the kind.

struct GammaKind {
  enum class Tag {
    cost_logistic,
    cost_sum_exponential,
    cost_gce,
    cost_mae,
    cstnd_exponential,
    cstnd_squared_hinge,
    cstnd_hinge,
    cstnd_rho_margin,
  };
  Tag tag = Tag::cost_logistic;
  double q = 0.5;    // cost_gce only
  int num_k = 2;     // cost_gce / cost_mae only

  static GammaKind cost_logistic() { return {Tag::cost_logistic, 0.0, 0}; }
  static GammaKind cost_sum_exponential() { return {Tag::cost_sum_exponential, 0.0, 0}; }
  static GammaKind cost_gce(double q, int num_k) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("gamma: q must lie in (0,1)");
    if (num_k < 2) throw std::invalid_argument("gamma: need |K| >= 2");
    return {Tag::cost_gce, q, num_k};
  }
  static GammaKind cost_mae(int num_k) {
    if (num_k < 2) throw std::invalid_argument("gamma: need |K| >= 2");
    return {Tag::cost_mae, 0.0, num_k};
  }
  static GammaKind cstnd_exponential() { return {Tag::cstnd_exponential, 0.0, 0}; }
  static GammaKind cstnd_squared_hinge() { return {Tag::cstnd_squared_hinge, 0.0, 0}; }
  static GammaKind cstnd_hinge() { return {Tag::cstnd_hinge, 0.0, 0}; }
  static GammaKind cstnd_rho_margin() { return {Tag::cstnd_rho_margin, 0.0, 0}; }

  // the transform matching a constrained surrogate
  static GammaKind for_constrained(ConstrainedKind kind) {
    switch (kind.tag) {
      case ConstrainedKind::Tag::exponential: return cstnd_exponential();
      case ConstrainedKind::Tag::squared_hinge: return cstnd_squared_hinge();
      case ConstrainedKind::Tag::hinge: return cstnd_hinge();
      case ConstrainedKind::Tag::rho_margin: return cstnd_rho_margin();
    }
    throw std::logic_error("for_constrained: unreachable");
  }

  // the transform matching a cost-sensitive comp-sum surrogate over |K| candidates
  static GammaKind for_comp_sum(CompSumKind kind, int num_k) {
    switch (kind.tag) {
      case CompSumKind::Tag::logistic: return cost_logistic();
      case CompSumKind::Tag::sum_exponential: return cost_sum_exponential();
      case CompSumKind::Tag::gce: return cost_gce(kind.q, num_k);
      case CompSumKind::Tag::mae: return cost_mae(num_k);
    }
    throw std::logic_error("for_comp_sum: unreachable");
  }
};

inline double gamma_transform(GammaKind kind, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("gamma_transform: negative argument");
  switch (kind.tag) {
    case GammaKind::Tag::cost_logistic:
    case GammaKind::Tag::cost_sum_exponential:
    case GammaKind::Tag::cstnd_exponential:
    case GammaKind::Tag::cstnd_squared_hinge:
      return 2.0 * std::sqrt(t);
    case GammaKind::Tag::cost_gce:
      return 2.0 * std::sqrt(std::pow(static_cast<double>(kind.num_k), kind.q) * t);
    case GammaKind::Tag::cost_mae:
      return static_cast<double>(kind.num_k) * t;
    case GammaKind::Tag::cstnd_hinge:
    case GammaKind::Tag::cstnd_rho_margin:
      return t;
  }
  throw std::logic_error("gamma_transform: unreachable");
}

// ---------------------------------------------------------------------------
// Top-k conditional errors and regrets. The closed form: the best achievable
// conditional error keeps the k largest conditional probabilities, and the
// regret of a score vector is the probability mass it fails to rank into the
// top k.

inline double topk_conditional_error(const ProbVector& p, std::span<const double> scores, int k) {
  if (p.size() != scores.size())
    throw std::invalid_argument("topk_conditional_error: size mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > p.size())
    throw std::invalid_argument("topk_conditional_error: k out of range");
  RankedLabels r = rank_desc(scores);
  double mass = 0.0;
  for (int i = 0; i < k; ++i) mass += p[r.order[i]];
  return 1.0 - mass;
}

inline double best_topk_conditional_error(const ProbVector& p, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > p.size())
    throw std::invalid_argument("best_topk_conditional_error: k out of range");
  RankedLabels r = rank_desc(std::span<const double>(p.p.data(), p.p.size()));
  double mass = 0.0;
  for (int i = 0; i < k; ++i) mass += p[r.order[i]];
  return 1.0 - mass;
}

inline double topk_conditional_regret(const ProbVector& p, std::span<const double> scores, int k) {
  if (p.size() != scores.size())
    throw std::invalid_argument("topk_conditional_regret: size mismatch");
  if (k < 1 || static_cast<std::size_t>(k) > p.size())
    throw std::invalid_argument("topk_conditional_regret: k out of range");
  RankedLabels by_p = rank_desc(std::span<const double>(p.p.data(), p.p.size()));
  RankedLabels by_s = rank_desc(scores);
  double r = 0.0;
  for (int i = 0; i < k; ++i) r += p[by_p.order[i]] - p[by_s.order[i]];
  return r;
}

// ---------------------------------------------------------------------------
// Cardinality-aware conditional regret: expected cost of the selected
// candidate minus the best expected cost over all candidates.

inline double expected_cost(const ProbVector& p, std::span<const double> cost_col) {
  double acc = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) acc += p[y] * cost_col[y];
  return acc;
}

// costs laid out as labels x candidates (row y, column k)
struct CostMatrixView {
  std::span<const double> values;
  std::size_t n_labels = 0;
  std::size_t num_k = 0;
  double at(std::size_t y, std::size_t k) const { return values[y * num_k + k]; }
};

inline double cardinality_conditional_regret(const ProbVector& p, CostMatrixView costs,
                                             std::span<const double> r_scores) {
  if (costs.n_labels != p.size() || costs.num_k != r_scores.size())
    throw std::invalid_argument("cardinality_conditional_regret: shape mismatch");
  int chosen = argmax_tie_high(r_scores);
  double selected = 0.0;
  std::vector<double> expect(costs.num_k, 0.0);
  for (std::size_t k = 0; k < costs.num_k; ++k) {
    for (std::size_t y = 0; y < p.size(); ++y) expect[k] += p[y] * costs.at(y, k);
  }
  selected = expect[chosen];
  double best = *std::min_element(expect.begin(), expect.end());
  return selected - best;
}

// ---------------------------------------------------------------------------
// Pointwise optimal selector: minimize lambda * cost(|set_k|) - mass(set_k).
// Equal objectives resolve to the larger k, matching the argmax convention
// used at inference time.

inline int bayes_selector(const ProbVector& p, std::span<const PredictionSet> sets, double lambda,
                          CardinalityCostKind kind) {
  if (sets.empty()) throw std::invalid_argument("bayes_selector: no candidate sets");
  int best = 0;
  double best_obj = 0.0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    double mass = 0.0;
    for (int y : sets[k].labels) mass += p[y];
    double obj = lambda * cardinality_cost(sets[k].cardinality(), kind) - mass;
    if (k == 0 || obj <= best_obj) {
      best = static_cast<int>(k);
      best_obj = obj;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Exact generalization errors on a discrete distribution. The hypothesis is
// one score vector per support point.

inline void check_hypothesis(const DiscreteDistribution& dist, const ScoreMatrix& hyp,
                             const char* what) {
  if (hyp.rows != dist.size() || hyp.cols != static_cast<std::size_t>(dist.n))
    throw std::invalid_argument(std::string(what) + ": hypothesis shape mismatch");
}

inline double generalization_error_topk(const DiscreteDistribution& dist, const ScoreMatrix& hyp,
                                        int k) {
  check_hypothesis(dist, hyp, "generalization_error_topk");
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i)
    acc += dist.points[i].weight * topk_conditional_error(dist.points[i].p, hyp.row(i), k);
  return acc;
}

inline double best_generalization_error_topk(const DiscreteDistribution& dist, int k) {
  double acc = 0.0;
  for (const auto& pt : dist.points) acc += pt.weight * best_topk_conditional_error(pt.p, k);
  return acc;
}

inline double conditional_surrogate_error(const ProbVector& p, std::span<const double> scores,
                                          CompSumKind kind) {
  double acc = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y)
    if (p[y] > 0.0) acc += p[y] * comp_sum_loss(scores, static_cast<int>(y), kind);
  return acc;
}

inline double conditional_surrogate_error(const ProbVector& p, std::span<const double> scores,
                                          ConstrainedKind kind) {
  double acc = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y)
    if (p[y] > 0.0) acc += p[y] * constrained_loss(scores, static_cast<int>(y), kind);
  return acc;
}

template <typename Kind>
double generalization_error_surrogate(const DiscreteDistribution& dist, const ScoreMatrix& hyp,
                                      Kind kind) {
  check_hypothesis(dist, hyp, "generalization_error_surrogate");
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i)
    acc += dist.points[i].weight * conditional_surrogate_error(dist.points[i].p, hyp.row(i), kind);
  return acc;
}

}  // namespace cardset
