#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "cardset/util.hpp"

namespace cardset {

struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  static ScoreMatrix checked(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (cols < 2) throw std::invalid_argument("ScoreMatrix: need at least 2 columns");
    if (values.size() != rows * cols) throw std::invalid_argument("ScoreMatrix: size mismatch");
    require_finite(values, "ScoreMatrix");
    return ScoreMatrix{rows, cols, std::move(values)};
  }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values.data() + i * cols, cols);
  }
  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

// Dense row-major real matrix without the two-column minimum of ScoreMatrix;
// used for feature blocks, which may have any positive width.
struct RealMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  static RealMatrix checked(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("RealMatrix: empty shape");
    if (values.size() != rows * cols) throw std::invalid_argument("RealMatrix: size mismatch");
    require_finite(values, "RealMatrix");
    return RealMatrix{rows, cols, std::move(values)};
  }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values.data() + i * cols, cols);
  }
  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

struct ProbVector {
  std::vector<double> p;

  static ProbVector checked(std::vector<double> v) {
    double sum = 0.0;
    for (double x : v) {
      if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("ProbVector: entry outside [0,1]");
      sum += x;
    }
    if (std::abs(sum - 1.0) > tol::prob_sum)
      throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(sum));
    return ProbVector{std::move(v)};
  }

  std::size_t size() const { return p.size(); }
  double operator[](std::size_t i) const { return p[i]; }
};

// Permutation of 0..n-1 by decreasing score. Among equal scores the larger
// label index comes first; that single tie rule is shared by every ranking,
// set construction, and selector argmax in this library.
struct RankedLabels {
  std::vector<int> order;
};

inline RankedLabels rank_desc(std::span<const double> scores) {
  require_finite(scores, "rank_desc");
  RankedLabels r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::sort(r.order.begin(), r.order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a > b;
  });
  return r;
}

inline double log_sum_exp(std::span<const double> scores) {
  require_finite(scores, "log_sum_exp");
  if (scores.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  double m = *std::max_element(scores.begin(), scores.end());
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s - m);
  return m + std::log(acc);
}

inline std::vector<double> softmax(std::span<const double> scores) {
  require_finite(scores, "softmax");
  if (scores.empty()) throw std::invalid_argument("softmax: empty input");
  double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    acc += out[i];
  }
  for (auto& x : out) x /= acc;
  return out;
}

// argmax under the shared tie rule (equal scores resolve to the larger index)
inline int argmax_tie_high(std::span<const double> scores) {
  int best = static_cast<int>(scores.size()) - 1;
  for (int i = best - 1; i >= 0; --i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace cardset
