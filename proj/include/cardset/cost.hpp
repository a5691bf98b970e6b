#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardset/sets.hpp"
#include "cardset/util.hpp"

namespace cardset {

// Normalized instance-dependent costs c(x, k, y) over instances x candidate
// indices. The raw cost of picking member k is a miss indicator plus
// lambda times the cardinality cost; dividing by the supremum over the whole
// domain (1 + lambda * cost of the largest possible set) maps it into [0,1].
struct CostTensor {
  std::size_t rows = 0;
  std::size_t num_k = 0;
  std::vector<double> values;  // row-major, rows x num_k
  double lambda = 0.0;
  CardinalityCostKind cost_kind = CardinalityCostKind::logarithmic;
  double normalizer = 1.0;

  double at(std::size_t i, std::size_t k) const { return values[i * num_k + k]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values.data() + i * num_k, num_k);
  }
};

inline std::size_t family_rows(const TopKFamily& f) { return f.base_scores.rows; }
inline std::size_t family_rows(const ThresholdFamily& f) { return f.scores.rows; }

template <typename Family>
CostTensor build_cost(const Family& family, std::span<const int> labels, double lambda,
                      CardinalityCostKind kind) {
  if (!(lambda > 0.0)) throw std::invalid_argument("build_cost: lambda must be positive");
  std::size_t m = labels.size();
  if (m != family_rows(family)) throw std::invalid_argument("build_cost: family/label length mismatch");
  CostTensor t;
  t.rows = m;
  t.num_k = family.size();
  t.lambda = lambda;
  t.cost_kind = kind;
  t.normalizer = 1.0 + lambda * cardinality_cost(family.max_cardinality(), kind);
  t.values.resize(m * t.num_k);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < t.num_k; ++k) {
      PredictionSet s = family.set_at(i, k);
      double raw = (s.contains(labels[i]) ? 0.0 : 1.0) +
                   lambda * cardinality_cost(s.cardinality(), kind);
      t.values[i * t.num_k + k] = raw / t.normalizer;
    }
  }
  return t;
}

// empirical cardinality-aware loss of a selection, on the normalized scale
inline double target_loss(const CostTensor& cost, std::span<const int> selected) {
  if (selected.size() != cost.rows) throw std::invalid_argument("target_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < cost.rows; ++i) {
    int k = selected[i];
    if (k < 0 || static_cast<std::size_t>(k) >= cost.num_k)
      throw std::invalid_argument("target_loss: selected index out of range");
    acc += cost.at(i, static_cast<std::size_t>(k));
  }
  return acc / static_cast<double>(cost.rows);
}

inline void write_cost_csv(std::ostream& os, const CostTensor& cost) {
  os << "instance_id,k_index,cost\n";
  for (std::size_t i = 0; i < cost.rows; ++i)
    for (std::size_t k = 0; k < cost.num_k; ++k)
      os << i << ',' << k << ',' << fmt_g9(cost.at(i, k)) << '\n';
}

// Reads the table produced by write_cost_csv back into a tensor. The CSV does
// not carry lambda or the cost kind, so those fields keep their defaults;
// training only consumes the values. Every (instance, k) cell must appear
// exactly once.
inline CostTensor read_cost_csv(std::istream& is, const std::string& name) {
  std::string line;
  if (!std::getline(is, line)) throw data_error(name + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "instance_id,k_index,cost")
    throw data_error(name + " line 1: expected header instance_id,k_index,cost");
  std::vector<std::size_t> ids;
  std::vector<std::size_t> ks;
  std::vector<double> vals;
  std::size_t lineno = 1;
  std::size_t max_id = 0;
  std::size_t max_k = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string where = name + " line " + std::to_string(lineno);
    std::size_t c1 = line.find(',');
    std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw data_error(where + ": expected 3 fields");
    try {
      std::size_t id = std::stoul(line.substr(0, c1));
      std::size_t k = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
      double v = std::stod(line.substr(c2 + 1));
      if (!(v >= 0.0 && v <= 1.0)) throw data_error(where + ": cost outside [0,1]");
      ids.push_back(id);
      ks.push_back(k);
      vals.push_back(v);
      max_id = std::max(max_id, id);
      max_k = std::max(max_k, k);
    } catch (const std::logic_error&) {
      throw data_error(where + ": bad numeric field");
    }
  }
  if (vals.empty()) throw data_error(name + ": no data rows");
  CostTensor t;
  t.rows = max_id + 1;
  t.num_k = max_k + 1;
  t.values.assign(t.rows * t.num_k, -1.0);
  for (std::size_t j = 0; j < vals.size(); ++j) {
    double& cell = t.values[ids[j] * t.num_k + ks[j]];
    if (cell >= 0.0)
      throw data_error(name + ": duplicate entry for instance " + std::to_string(ids[j]));
    cell = vals[j];
  }
  for (double v : t.values)
    if (v < 0.0) throw data_error(name + ": missing entries, the grid is not dense");
  return t;
}

}  // namespace cardset
