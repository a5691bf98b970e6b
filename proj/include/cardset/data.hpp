#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cardset/core.hpp"
#include "cardset/rng.hpp"
#include "cardset/util.hpp"

namespace cardset {

// Row membership after a split. Datasets start untagged; split() assigns one
// tag per row.
enum class Split : std::uint8_t { train = 0, calibration = 1, test = 2 };

struct Dataset {
  RealMatrix features;           // m x d
  std::vector<int> labels;       // m entries in [0, n_classes)
  int n_classes = 0;
  std::vector<Split> tags;       // empty until split() runs

  static Dataset checked(RealMatrix features, std::vector<int> labels, int n_classes) {
    if (n_classes < 1) throw data_error("Dataset: n_classes must be positive");
    if (labels.size() != features.rows)
      throw data_error("Dataset: have " + std::to_string(features.rows) + " feature rows but " +
                       std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= n_classes)
        throw data_error("Dataset: label " + std::to_string(labels[i]) + " at row " +
                         std::to_string(i) + " outside [0," + std::to_string(n_classes) + ")");
    }
    return Dataset{std::move(features), std::move(labels), n_classes, {}};
  }

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
};

// Isotropic Gaussian mixture: one spherical component per class, shared
// stddev. Empty means/priors stand for "use the seeded defaults"; call
// resolved() to fill them in explicitly.
struct GaussianSpec {
  int n_classes = 10;
  int dim = 100;
  std::vector<double> means;     // n_classes x dim row-major, or empty
  double sigma = 1.0;
  std::vector<double> priors;    // n_classes entries, or empty for uniform
  std::uint64_t seed = 1;
};

namespace detail {

constexpr double mean_sphere_radius = 2.0;

inline void validate_spec(const GaussianSpec& spec) {
  if (spec.n_classes < 2) throw config_error("GaussianSpec: need at least 2 classes");
  if (spec.dim < 1) throw config_error("GaussianSpec: dim must be positive");
  if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma))
    throw config_error("GaussianSpec: sigma must be positive and finite");
  std::size_t k = static_cast<std::size_t>(spec.n_classes);
  if (!spec.means.empty()) {
    if (spec.means.size() != k * static_cast<std::size_t>(spec.dim))
      throw config_error("GaussianSpec: means must hold n_classes*dim values");
    require_finite(spec.means, "GaussianSpec means");
  }
  if (!spec.priors.empty()) {
    if (spec.priors.size() != k) throw config_error("GaussianSpec: priors size mismatch");
    double sum = 0.0;
    for (double p : spec.priors) {
      if (!(p >= 0.0 && p <= 1.0)) throw config_error("GaussianSpec: prior outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol::prob_sum)
      throw config_error("GaussianSpec: priors sum to " + std::to_string(sum));
  }
}

}  // namespace detail

// Fills in defaulted fields: means drawn uniformly on the sphere of radius 2
// (a deterministic function of the seed), priors uniform. Idempotent, so
// posterior evaluation and generation can both start from the same call.
inline GaussianSpec resolved(const GaussianSpec& spec) {
  detail::validate_spec(spec);
  GaussianSpec out = spec;
  std::size_t k = static_cast<std::size_t>(spec.n_classes);
  std::size_t d = static_cast<std::size_t>(spec.dim);
  if (out.means.empty()) {
    Rng rng(derive_seed(spec.seed, 0x4D45414Eu));
    out.means.resize(k * d);
    for (std::size_t c = 0; c < k; ++c) {
      double* mu = out.means.data() + c * d;
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          mu[j] = rng.normal();
          norm2 += mu[j] * mu[j];
        }
      } while (norm2 < 1e-24);
      double scale = detail::mean_sphere_radius / std::sqrt(norm2);
      for (std::size_t j = 0; j < d; ++j) mu[j] *= scale;
    }
  }
  if (out.priors.empty()) out.priors.assign(k, 1.0 / static_cast<double>(k));
  return out;
}

inline Dataset generate_gaussian(const GaussianSpec& spec, std::size_t m) {
  if (m < 1) throw config_error("generate_gaussian: m must be positive");
  GaussianSpec rs = resolved(spec);
  std::size_t k = static_cast<std::size_t>(rs.n_classes);
  std::size_t d = static_cast<std::size_t>(rs.dim);
  Rng rng(derive_seed(rs.seed, 0x5A4D504Cu));
  std::vector<int> labels(m);
  std::vector<double> features(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    double u = rng.uniform();
    double cdf = 0.0;
    std::size_t y = k - 1;  // catch-all for u landing past accumulated rounding
    for (std::size_t c = 0; c < k; ++c) {
      cdf += rs.priors[c];
      if (u < cdf) {
        y = c;
        break;
      }
    }
    labels[i] = static_cast<int>(y);
    const double* mu = rs.means.data() + y * d;
    double* x = features.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) x[j] = mu[j] + rs.sigma * rng.normal();
  }
  return Dataset::checked(RealMatrix::checked(m, d, std::move(features)), std::move(labels),
                          rs.n_classes);
}

// Class posterior of the mixture at one feature vector, computed from
// log-density differences so distant classes underflow to zero instead of
// poisoning the normalizer. Requires a resolved spec (explicit means).
inline ProbVector true_posterior(const GaussianSpec& spec, std::span<const double> feature) {
  detail::validate_spec(spec);
  if (spec.means.empty() || spec.priors.empty())
    throw config_error("true_posterior: spec must be resolved (explicit means and priors)");
  std::size_t k = static_cast<std::size_t>(spec.n_classes);
  std::size_t d = static_cast<std::size_t>(spec.dim);
  if (feature.size() != d) throw data_error("true_posterior: feature dim mismatch");
  std::vector<double> logw(k, -std::numeric_limits<double>::infinity());
  double inv2s2 = 1.0 / (2.0 * spec.sigma * spec.sigma);
  for (std::size_t c = 0; c < k; ++c) {
    if (spec.priors[c] <= 0.0) continue;
    const double* mu = spec.means.data() + c * d;
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double t = feature[j] - mu[j];
      dist2 += t * t;
    }
    logw[c] = std::log(spec.priors[c]) - dist2 * inv2s2;
  }
  double peak = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  std::vector<double> p(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (std::isinf(logw[c])) continue;
    p[c] = std::exp(logw[c] - peak);
    total += p[c];
  }
  for (double& v : p) v /= total;
  return ProbVector::checked(std::move(p));
}

// ---------------------------------------------------------------------------
// CSV persistence. Schema: header "f0,...,f{d-1},label", one row per sample,
// decimal point, no quoting. Values are written with shortest round-trip
// formatting, so a reload reproduces the stored doubles exactly.

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline double parse_double(std::string_view tok, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw data_error(where + ": bad numeric field '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw data_error(where + ": non-finite value");
  return v;
}

inline int parse_label(std::string_view tok, const std::string& where) {
  int v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw data_error(where + ": bad label field '" + std::string(tok) + "'");
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace detail

inline void save_csv(std::ostream& os, const Dataset& ds) {
  std::string line;
  for (std::size_t j = 0; j < ds.dim(); ++j) {
    line += 'f';
    line += std::to_string(j);
    line += ',';
  }
  line += "label\n";
  os << line;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    line.clear();
    auto row = ds.features.row(i);
    for (double v : row) {
      detail::append_double(line, v);
      line += ',';
    }
    line += std::to_string(ds.labels[i]);
    line += '\n';
    os << line;
  }
  if (!os) throw data_error("save_csv: write failed");
}

inline void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw data_error("save_csv: cannot open " + path);
  save_csv(os, ds);
}

// Reads a dataset in the schema above. n_classes == 0 infers the class count
// as max(label)+1; a positive value is enforced as the label range instead.
// Error messages carry the 1-based line number of the offending row.
inline Dataset load_csv(std::istream& is, const std::string& name, int n_classes = 0) {
  std::string line;
  if (!std::getline(is, line)) throw data_error(name + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_fields(line);
  if (header.size() < 2 || header.back() != "label")
    throw data_error(name + " line 1: expected header f0,...,label");
  std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j))
      throw data_error(name + " line 1: expected column f" + std::to_string(j) + ", found '" +
                       std::string(header[j]) + "'");
  }
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string where = name + " line " + std::to_string(lineno);
    auto fields = detail::split_fields(line);
    if (fields.size() != d + 1)
      throw data_error(where + ": expected " + std::to_string(d + 1) + " fields, found " +
                       std::to_string(fields.size()));
    for (std::size_t j = 0; j < d; ++j) features.push_back(detail::parse_double(fields[j], where));
    int y = detail::parse_label(fields.back(), where);
    if (y < 0 || (n_classes > 0 && y >= n_classes))
      throw data_error(where + ": label " + std::to_string(y) + " out of range");
    labels.push_back(y);
  }
  if (labels.empty()) throw data_error(name + ": no data rows");
  int resolved_classes = n_classes;
  if (resolved_classes == 0)
    resolved_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::size_t rows = labels.size();  // before the moves below consume the vectors
  return Dataset::checked(RealMatrix::checked(rows, d, std::move(features)), std::move(labels),
                          resolved_classes);
}

inline Dataset load_csv(const std::string& path, int n_classes = 0) {
  std::ifstream is(path);
  if (!is) throw data_error("load_csv: cannot open " + path);
  return load_csv(is, path, n_classes);
}

// ---------------------------------------------------------------------------
// JSON sidecar for the generator spec, so a dataset file can be regenerated
// or scored against its true posterior later. All fields are persisted,
// including the seed and the resolved means.

inline nlohmann::json spec_to_json(const GaussianSpec& spec) {
  GaussianSpec rs = resolved(spec);
  std::size_t d = static_cast<std::size_t>(rs.dim);
  nlohmann::json means = nlohmann::json::array();
  for (int c = 0; c < rs.n_classes; ++c) {
    means.push_back(std::vector<double>(rs.means.begin() + c * d, rs.means.begin() + (c + 1) * d));
  }
  return nlohmann::json{{"n_classes", rs.n_classes}, {"dim", rs.dim},
                        {"sigma", rs.sigma},         {"seed", rs.seed},
                        {"priors", rs.priors},       {"means", means}};
}

inline GaussianSpec spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"n_classes", "dim",    "sigma",
                                              "seed",      "priors", "means"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw config_error("GaussianSpec json: unknown key '" + it.key() + "'");
  }
  GaussianSpec spec;
  try {
    if (j.contains("n_classes")) spec.n_classes = j.at("n_classes").get<int>();
    if (j.contains("dim")) spec.dim = j.at("dim").get<int>();
    if (j.contains("sigma")) spec.sigma = j.at("sigma").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("priors")) spec.priors = j.at("priors").get<std::vector<double>>();
    if (j.contains("means")) {
      for (const auto& row : j.at("means")) {
        auto vals = row.get<std::vector<double>>();
        spec.means.insert(spec.means.end(), vals.begin(), vals.end());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("GaussianSpec json: ") + e.what());
  }
  detail::validate_spec(spec);
  return spec;
}

inline void write_spec_json(const std::string& path, const GaussianSpec& spec) {
  std::ofstream os(path);
  if (!os) throw data_error("write_spec_json: cannot open " + path);
  os << spec_to_json(spec).dump(2) << '\n';
}

inline GaussianSpec read_spec_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("read_spec_json: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("read_spec_json: " + path + ": " + e.what());
  }
  return spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Splitting. Rows are shuffled by the seed and tagged train / calibration /
// test in that order; the input row order is preserved, only tags change.

inline Dataset split(Dataset ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw config_error("split: fraction outside [0,1]");
    sum += f;
  }
  if (std::abs(sum - 1.0) > tol::prob_sum) throw config_error("split: fractions must sum to 1");
  std::size_t m = ds.size();
  auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(m)));
  auto n_cal = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(m)));
  if (n_train + n_cal > m) throw config_error("split: rounded fractions exceed the row count");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x53504C49u));
  rng.shuffle(order);
  ds.tags.assign(m, Split::test);
  for (std::size_t i = 0; i < n_train; ++i) ds.tags[order[i]] = Split::train;
  for (std::size_t i = n_train; i < n_train + n_cal; ++i) ds.tags[order[i]] = Split::calibration;
  return ds;
}

// Copies the rows carrying one tag, keeping their relative order.
inline Dataset subset(const Dataset& ds, Split which) {
  if (ds.tags.size() != ds.size()) throw data_error("subset: dataset has not been split");
  std::vector<double> features;
  std::vector<int> labels;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.tags[i] != which) continue;
    auto row = ds.features.row(i);
    features.insert(features.end(), row.begin(), row.end());
    labels.push_back(ds.labels[i]);
  }
  if (labels.empty()) throw data_error("subset: selected split is empty");
  std::size_t rows = labels.size();  // before the moves below consume the vectors
  return Dataset::checked(RealMatrix::checked(rows, ds.dim(), std::move(features)),
                          std::move(labels), ds.n_classes);
}

}  // namespace cardset
