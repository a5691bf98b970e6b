#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "cardset/core.hpp"
#include "cardset/util.hpp"

namespace cardset {

// Comp-sum surrogates: Phi applied to sum_{y' != y} exp(s_{y'} - s_y).
// With sigma = softmax(s), that sum t satisfies 1 + t = 1 / sigma_y, which is
// what makes the log-domain forms below stable for large score gaps.
struct CompSumKind {
  enum class Tag { logistic, sum_exponential, gce, mae };
  Tag tag = Tag::logistic;
  double q = 0.5;  // only meaningful for gce

  static CompSumKind logistic() { return {Tag::logistic, 0.0}; }
  static CompSumKind sum_exponential() { return {Tag::sum_exponential, 0.0}; }
  static CompSumKind mae() { return {Tag::mae, 0.0}; }
  static CompSumKind gce(double q) {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("gce: q must lie in (0,1)");
    return {Tag::gce, q};
  }

  const char* name() const {
    switch (tag) {
      case Tag::logistic: return "logistic";
      case Tag::sum_exponential: return "sum_exponential";
      case Tag::gce: return "gce";
      case Tag::mae: return "mae";
    }
    return "?";
  }
};

// Constrained surrogates: sum_{y' != y} Phi(s_{y'}) evaluated on zero-mean
// scores. The zero-sum constraint is enforced by centering the score vector
// before evaluation, so callers can hand in unconstrained scores.
struct ConstrainedKind {
  enum class Tag { exponential, hinge, squared_hinge, rho_margin };
  Tag tag = Tag::exponential;
  double rho = 1.0;  // only meaningful for rho_margin

  static ConstrainedKind exponential() { return {Tag::exponential, 0.0}; }
  static ConstrainedKind hinge() { return {Tag::hinge, 0.0}; }
  static ConstrainedKind squared_hinge() { return {Tag::squared_hinge, 0.0}; }
  static ConstrainedKind rho_margin(double rho) {
    if (!(rho > 0.0)) throw std::invalid_argument("rho_margin: rho must be positive");
    return {Tag::rho_margin, rho};
  }

  const char* name() const {
    switch (tag) {
      case Tag::exponential: return "cstnd_exponential";
      case Tag::hinge: return "cstnd_hinge";
      case Tag::squared_hinge: return "cstnd_squared_hinge";
      case Tag::rho_margin: return "cstnd_rho_margin";
    }
    return "?";
  }
};

struct GradResult {
  std::vector<double> grad;
  bool near_kink = false;  // some active piecewise term sits within tol::kink_distance of its kink
};

namespace detail {
inline void check_label(std::span<const double> scores, int label, const char* what) {
  require_finite(scores, what);
  if (label < 0 || static_cast<std::size_t>(label) >= scores.size())
    throw std::invalid_argument(std::string(what) + ": label index out of range");
}
}  // namespace detail

inline double comp_sum_loss(std::span<const double> scores, int label, CompSumKind kind) {
  detail::check_label(scores, label, "comp_sum_loss");
  double lse = log_sum_exp(scores);
  double log_sig = scores[label] - lse;  // log softmax_label(s), <= 0
  switch (kind.tag) {
    case CompSumKind::Tag::logistic: return -log_sig;
    case CompSumKind::Tag::sum_exponential: return std::expm1(-log_sig);
    case CompSumKind::Tag::mae: return -std::expm1(log_sig);
    case CompSumKind::Tag::gce: return -std::expm1(kind.q * log_sig) / kind.q;
  }
  throw std::logic_error("comp_sum_loss: unreachable");
}

inline std::vector<double> comp_sum_grad(std::span<const double> scores, int label,
                                         CompSumKind kind) {
  detail::check_label(scores, label, "comp_sum_grad");
  std::size_t n = scores.size();
  std::vector<double> sig = softmax(scores);
  std::vector<double> g(n);
  switch (kind.tag) {
    case CompSumKind::Tag::logistic:
      for (std::size_t i = 0; i < n; ++i) g[i] = sig[i];
      g[label] -= 1.0;
      break;
    case CompSumKind::Tag::sum_exponential: {
      // d/ds_j sum_{j != y} e^{s_j - s_y}: e^{s_j - s_y} off the label, -t at it
      double t = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(i) == label) continue;
        g[i] = std::exp(scores[i] - scores[label]);
        t += g[i];
      }
      g[label] = -t;
      break;
    }
    case CompSumKind::Tag::mae:
    case CompSumKind::Tag::gce: {
      // both are sigma_y^q (sigma - e_y); mae is the q = 1 endpoint
      double q = (kind.tag == CompSumKind::Tag::mae) ? 1.0 : kind.q;
      double lse = log_sum_exp(scores);
      double w = std::exp(q * (scores[label] - lse));
      for (std::size_t i = 0; i < n; ++i) g[i] = w * sig[i];
      g[label] -= w;
      break;
    }
  }
  return g;
}

namespace detail {

inline std::vector<double> centered(std::span<const double> scores) {
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  std::vector<double> c(scores.begin(), scores.end());
  for (auto& s : c) s -= mean;
  return c;
}

// term value Phi(u) for a centered score u
inline double constrained_term(double u, ConstrainedKind kind) {
  switch (kind.tag) {
    case ConstrainedKind::Tag::exponential: return std::exp(u);
    case ConstrainedKind::Tag::hinge: return std::max(0.0, 1.0 + u);
    case ConstrainedKind::Tag::squared_hinge: {
      double h = std::max(0.0, 1.0 + u);
      return h * h;
    }
    case ConstrainedKind::Tag::rho_margin:
      return std::min(std::max(0.0, 1.0 + u / kind.rho), 1.0);
  }
  throw std::logic_error("constrained_term: unreachable");
}

// right-derivative of the term (deterministic subgradient choice at kinks)
inline double constrained_term_deriv(double u, ConstrainedKind kind) {
  switch (kind.tag) {
    case ConstrainedKind::Tag::exponential: return std::exp(u);
    case ConstrainedKind::Tag::hinge: return (1.0 + u >= 0.0) ? 1.0 : 0.0;
    case ConstrainedKind::Tag::squared_hinge: return 2.0 * std::max(0.0, 1.0 + u);
    case ConstrainedKind::Tag::rho_margin:
      return (1.0 + u / kind.rho >= 0.0 && u < 0.0) ? 1.0 / kind.rho : 0.0;
  }
  throw std::logic_error("constrained_term_deriv: unreachable");
}

inline bool term_near_kink(double u, ConstrainedKind kind) {
  switch (kind.tag) {
    case ConstrainedKind::Tag::exponential:
    case ConstrainedKind::Tag::squared_hinge:  // C1, finite differences stay valid
      return false;
    case ConstrainedKind::Tag::hinge: return std::abs(1.0 + u) < tol::kink_distance;
    case ConstrainedKind::Tag::rho_margin:
      return std::abs(u + kind.rho) < tol::kink_distance || std::abs(u) < tol::kink_distance;
  }
  return false;
}

// project a raw gradient through the centering map (subtract the mean)
inline void project_zero_sum(std::vector<double>& g) {
  double mean = 0.0;
  for (double x : g) mean += x;
  mean /= static_cast<double>(g.size());
  for (auto& x : g) x -= mean;
}

}  // namespace detail

inline double constrained_loss(std::span<const double> scores, int label, ConstrainedKind kind) {
  detail::check_label(scores, label, "constrained_loss");
  std::vector<double> c = detail::centered(scores);
  double acc = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (static_cast<int>(i) != label) acc += detail::constrained_term(c[i], kind);
  return acc;
}

inline GradResult constrained_grad(std::span<const double> scores, int label,
                                   ConstrainedKind kind) {
  detail::check_label(scores, label, "constrained_grad");
  std::vector<double> c = detail::centered(scores);
  GradResult r;
  r.grad.assign(c.size(), 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (static_cast<int>(i) == label) continue;
    r.grad[i] = detail::constrained_term_deriv(c[i], kind);
    r.near_kink = r.near_kink || detail::term_near_kink(c[i], kind);
  }
  detail::project_zero_sum(r.grad);
  return r;
}

namespace detail {
inline void check_cost_row(std::span<const double> scores, std::span<const double> cost_row,
                           const char* what) {
  require_finite(scores, what);
  if (scores.size() != cost_row.size())
    throw std::invalid_argument(std::string(what) + ": score/cost length mismatch");
  for (double c : cost_row)
    if (!(c >= 0.0 && c <= 1.0))
      throw std::invalid_argument(std::string(what) + ": cost outside [0,1]");
}
}  // namespace detail

// sum_k (1 - c_k) * comp_sum(scores, k): each candidate index plays the role
// of the correct label, weighted by how little it costs.
inline double cost_sensitive_comp_sum(std::span<const double> scores,
                                      std::span<const double> cost_row, CompSumKind kind) {
  detail::check_cost_row(scores, cost_row, "cost_sensitive_comp_sum");
  double acc = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    double w = 1.0 - cost_row[k];
    if (w != 0.0) acc += w * comp_sum_loss(scores, static_cast<int>(k), kind);
  }
  return acc;
}

inline std::vector<double> cost_sensitive_comp_sum_grad(std::span<const double> scores,
                                                        std::span<const double> cost_row,
                                                        CompSumKind kind) {
  detail::check_cost_row(scores, cost_row, "cost_sensitive_comp_sum_grad");
  std::vector<double> g(scores.size(), 0.0);
  for (std::size_t k = 0; k < scores.size(); ++k) {
    double w = 1.0 - cost_row[k];
    if (w == 0.0) continue;
    std::vector<double> gk = comp_sum_grad(scores, static_cast<int>(k), kind);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * gk[i];
  }
  return g;
}

// sum_k c_k * Phi(s_k) on zero-mean scores: costly candidates are pushed down,
// so the argmax of the learned scores lands on cheap candidates.
inline double cost_sensitive_constrained(std::span<const double> scores,
                                         std::span<const double> cost_row, ConstrainedKind kind) {
  detail::check_cost_row(scores, cost_row, "cost_sensitive_constrained");
  std::vector<double> c = detail::centered(scores);
  double acc = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) acc += cost_row[k] * detail::constrained_term(c[k], kind);
  return acc;
}

inline GradResult cost_sensitive_constrained_grad(std::span<const double> scores,
                                                  std::span<const double> cost_row,
                                                  ConstrainedKind kind) {
  detail::check_cost_row(scores, cost_row, "cost_sensitive_constrained_grad");
  std::vector<double> c = detail::centered(scores);
  GradResult r;
  r.grad.assign(c.size(), 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (cost_row[k] == 0.0) continue;
    r.grad[k] = cost_row[k] * detail::constrained_term_deriv(c[k], kind);
    r.near_kink = r.near_kink || detail::term_near_kink(c[k], kind);
  }
  detail::project_zero_sum(r.grad);
  return r;
}

}  // namespace cardset
