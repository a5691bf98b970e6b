#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "cardset/core.hpp"
#include "cardset/util.hpp"

namespace cardset {

enum class CardinalityCostKind { linear, logarithmic };

inline const char* cost_kind_name(CardinalityCostKind k) {
  return k == CardinalityCostKind::linear ? "linear" : "logarithmic";
}

inline double cardinality_cost(int card, CardinalityCostKind kind) {
  if (card < 1) throw std::invalid_argument("cardinality_cost: cardinality must be >= 1");
  return kind == CardinalityCostKind::linear ? static_cast<double>(card)
                                             : std::log(static_cast<double>(card));
}

struct PredictionSet {
  std::vector<int> labels;  // sorted ascending, nonempty

  int cardinality() const { return static_cast<int>(labels.size()); }
  bool contains(int y) const { return std::binary_search(labels.begin(), labels.end(), y); }
};

inline PredictionSet topk_set(std::span<const double> scores, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > scores.size())
    throw std::invalid_argument("topk_set: k out of range");
  RankedLabels r = rank_desc(scores);
  PredictionSet s;
  s.labels.assign(r.order.begin(), r.order.begin() + k);
  std::sort(s.labels.begin(), s.labels.end());
  return s;
}

// strict comparison; an empty result falls back to the argmax singleton
inline PredictionSet threshold_set(std::span<const double> scores, double tau) {
  require_finite(scores, "threshold_set");
  PredictionSet s;
  for (std::size_t y = 0; y < scores.size(); ++y)
    if (scores[y] > tau) s.labels.push_back(static_cast<int>(y));
  if (s.labels.empty()) s.labels.push_back(argmax_tie_high(scores));
  return s;
}

// conformal sets keep boundary scores (>= comparison), same fallback
inline PredictionSet conformal_set(std::span<const double> scores, double q_hat) {
  require_finite(scores, "conformal_set");
  PredictionSet s;
  for (std::size_t y = 0; y < scores.size(); ++y)
    if (scores[y] >= q_hat) s.labels.push_back(static_cast<int>(y));
  if (s.labels.empty()) s.labels.push_back(argmax_tie_high(scores));
  return s;
}

// the ceil(alpha*(m+1))/m empirical quantile: j-th smallest calibration score.
inline double conformal_threshold(std::span<const double> calibration_scores, double alpha) {
  require_finite(calibration_scores, "conformal_threshold");
  std::size_t m = calibration_scores.size();
  if (m < 1) throw config_error("conformal_threshold: empty calibration set");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw config_error("conformal_threshold: alpha must lie in (0,1)");
  double a = alpha * static_cast<double>(m + 1);
  // alpha*(m+1) often misses an intended integer by one ulp (0.1 * 10 lands just
  // above 1); values within 1e-9 of an integer are treated as that integer.
  double r = std::nearbyint(a);
  std::size_t j = (std::abs(a - r) <= 1e-9 * std::max(1.0, std::abs(a)))
                      ? static_cast<std::size_t>(r)
                      : static_cast<std::size_t>(std::ceil(a));
  if (j > m)
    throw config_error("conformal_threshold: calibration set too small for alpha (ceil(alpha*(m+1)) > m)");
  std::vector<double> sorted(calibration_scores.begin(), calibration_scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + (j - 1), sorted.end());
  return sorted[j - 1];
}

// Top-k family over one fixed base-score matrix: member k returns the k
// highest-scoring labels of each instance.
struct TopKFamily {
  ScoreMatrix base_scores;
  std::vector<int> K;

  static TopKFamily checked(ScoreMatrix scores, std::vector<int> K) {
    if (K.empty()) throw std::invalid_argument("TopKFamily: empty K");
    for (std::size_t i = 0; i < K.size(); ++i) {
      if (K[i] < 1 || static_cast<std::size_t>(K[i]) > scores.cols)
        throw std::invalid_argument("TopKFamily: k out of range");
      if (i > 0 && K[i] <= K[i - 1])
        throw std::invalid_argument("TopKFamily: K must be strictly increasing");
    }
    return TopKFamily{std::move(scores), std::move(K)};
  }

  std::size_t size() const { return K.size(); }
  int max_cardinality() const { return K.back(); }
  PredictionSet set_at(std::size_t instance, std::size_t k_index) const {
    return topk_set(base_scores.row(instance), K[k_index]);
  }
};

// Threshold family: member k keeps labels scoring above tau_k. Thresholds
// decrease with k so the members are nested and cardinality grows.
struct ThresholdFamily {
  ScoreMatrix scores;
  std::vector<double> taus;

  static ThresholdFamily checked(ScoreMatrix scores, std::vector<double> taus) {
    if (taus.empty()) throw std::invalid_argument("ThresholdFamily: empty threshold list");
    require_finite(taus, "ThresholdFamily");
    for (std::size_t i = 1; i < taus.size(); ++i)
      if (taus[i] >= taus[i - 1])
        throw std::invalid_argument("ThresholdFamily: thresholds must be strictly decreasing");
    return ThresholdFamily{std::move(scores), std::move(taus)};
  }

  std::size_t size() const { return taus.size(); }
  int max_cardinality() const { return static_cast<int>(scores.cols); }
  PredictionSet set_at(std::size_t instance, std::size_t k_index) const {
    return threshold_set(scores.row(instance), taus[k_index]);
  }
};

}  // namespace cardset
