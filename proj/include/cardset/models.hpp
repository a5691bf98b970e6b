#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cardset/core.hpp"
#include "cardset/cost.hpp"
#include "cardset/losses.hpp"
#include "cardset/rng.hpp"
#include "cardset/util.hpp"

namespace cardset {

// ---------------------------------------------------------------------------
// Models: a linear scorer for the base classifier and a two-hidden-layer
// rectifier network for the cardinality selector, plus a deterministic
// minibatch Adam trainer that minimizes any surrogate from the losses header.

// Which surrogate the trainer minimizes. The cost-sensitive weighting is
// implied by the training entry point (selector training weights terms by the
// cost rows, base training uses the observed label).
struct SurrogateSpec {
  bool comp = true;
  CompSumKind cs = CompSumKind::logistic();
  ConstrainedKind ck{};

  static SurrogateSpec comp_sum(CompSumKind k) { return {true, k, {}}; }
  static SurrogateSpec constrained(ConstrainedKind k) { return {false, {}, k}; }

  std::string name() const { return comp ? cs.name() : ck.name(); }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  double weight_decay = 1e-5;  // decoupled, applied directly to parameters
  int epochs = 100;
  std::uint64_t seed = 1;
  SurrogateSpec surrogate{};
  int hidden1 = 64;  // selector network widths
  int hidden2 = 64;
  // early stop: quit after `patience` consecutive epochs in which the average
  // training surrogate improves on the best seen by less than min_improvement
  double min_improvement = 1e-6;
  int patience = 5;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw config_error("TrainConfig: learning_rate must be positive");
  if (cfg.batch_size < 1) throw config_error("TrainConfig: batch_size must be at least 1");
  if (!(cfg.weight_decay >= 0.0)) throw config_error("TrainConfig: weight_decay must be nonnegative");
  if (cfg.epochs < 0) throw config_error("TrainConfig: epochs must be nonnegative");
  if (cfg.hidden1 < 1 || cfg.hidden2 < 1) throw config_error("TrainConfig: hidden widths must be positive");
  if (cfg.patience < 1) throw config_error("TrainConfig: patience must be at least 1");
  if (!(cfg.min_improvement >= 0.0)) throw config_error("TrainConfig: min_improvement must be nonnegative");
}

struct LinearModel {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> w;  // in_dim x out_dim, row-major by input
  std::vector<double> b;  // out_dim

  std::vector<double> scores(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_dim)
      throw data_error("LinearModel: feature dimension mismatch");
    std::vector<double> s(b);
    for (int i = 0; i < in_dim; ++i) {
      double xi = x[i];
      const double* wr = w.data() + static_cast<std::size_t>(i) * out_dim;
      for (int j = 0; j < out_dim; ++j) s[j] += xi * wr[j];
    }
    return s;
  }
};

struct MlpModel {
  int in_dim = 0;
  int hidden1 = 0;
  int hidden2 = 0;
  int out_dim = 0;
  std::vector<double> w1, b1;  // in_dim x hidden1
  std::vector<double> w2, b2;  // hidden1 x hidden2
  std::vector<double> w3, b3;  // hidden2 x out_dim

  std::vector<double> scores(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_dim)
      throw data_error("MlpModel: feature dimension mismatch");
    std::vector<double> a1(b1), a2(b2), s(b3);
    for (int i = 0; i < in_dim; ++i) {
      double xi = x[i];
      const double* wr = w1.data() + static_cast<std::size_t>(i) * hidden1;
      for (int j = 0; j < hidden1; ++j) a1[j] += xi * wr[j];
    }
    for (auto& v : a1) v = std::max(0.0, v);
    for (int i = 0; i < hidden1; ++i) {
      double ai = a1[i];
      const double* wr = w2.data() + static_cast<std::size_t>(i) * hidden2;
      for (int j = 0; j < hidden2; ++j) a2[j] += ai * wr[j];
    }
    for (auto& v : a2) v = std::max(0.0, v);
    for (int i = 0; i < hidden2; ++i) {
      double ai = a2[i];
      const double* wr = w3.data() + static_cast<std::size_t>(i) * out_dim;
      for (int j = 0; j < out_dim; ++j) s[j] += ai * wr[j];
    }
    return s;
  }
};

namespace detail {

// C += A * B with A m x k, B k x n, C m x n, all row-major. The i-l-j order
// keeps the inner loop contiguous in both B and C.
inline void gemm(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      double a = A[static_cast<std::size_t>(i) * k + l];
      if (a == 0.0) continue;
      const double* br = B + static_cast<std::size_t>(l) * n;
      double* cr = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) cr[j] += a * br[j];
    }
}

// C += A^T * B with A m x k, B m x n, C k x n
inline void gemm_at_b(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      double a = A[static_cast<std::size_t>(i) * k + l];
      if (a == 0.0) continue;
      const double* br = B + static_cast<std::size_t>(i) * n;
      double* cr = C + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) cr[j] += a * br[j];
    }
}

// C += A * B^T with A m x k, B n x k, C m x n
inline void gemm_a_bt(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double* ar = A + static_cast<std::size_t>(i) * k;
      const double* br = B + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += ar[l] * br[l];
      C[static_cast<std::size_t>(i) * n + j] += acc;
    }
}

inline void glorot_fill(std::vector<double>& w, int fan_in, int fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w) v = rng.uniform(-limit, limit);
}

}  // namespace detail

inline LinearModel init_linear(int in_dim, int out_dim, std::uint64_t seed) {
  LinearModel m;
  m.in_dim = in_dim;
  m.out_dim = out_dim;
  m.w.resize(static_cast<std::size_t>(in_dim) * out_dim);
  m.b.assign(out_dim, 0.0);
  Rng rng(derive_seed(seed, 0xB00F));
  detail::glorot_fill(m.w, in_dim, out_dim, rng);
  return m;
}

inline MlpModel init_mlp(int in_dim, int h1, int h2, int out_dim, std::uint64_t seed) {
  MlpModel m;
  m.in_dim = in_dim;
  m.hidden1 = h1;
  m.hidden2 = h2;
  m.out_dim = out_dim;
  m.w1.resize(static_cast<std::size_t>(in_dim) * h1);
  m.b1.assign(h1, 0.0);
  m.w2.resize(static_cast<std::size_t>(h1) * h2);
  m.b2.assign(h2, 0.0);
  m.w3.resize(static_cast<std::size_t>(h2) * out_dim);
  m.b3.assign(out_dim, 0.0);
  Rng rng(derive_seed(seed, 0xB00F));
  detail::glorot_fill(m.w1, in_dim, h1, rng);
  detail::glorot_fill(m.w2, h1, h2, rng);
  detail::glorot_fill(m.w3, h2, out_dim, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.

struct AdamState {
  std::vector<double> m, v;
  long long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
                      const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw data_error("adam_step: shape mismatch");
  if (!all_finite(grads))
    throw training_divergence("adam_step: non-finite gradient at step " +
                              std::to_string(state.t + 1));
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++state.t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + eps) + cfg.weight_decay * params[i]);
  }
  if (!all_finite(params))
    throw training_divergence("adam_step: parameters left finite range at step " +
                              std::to_string(state.t));
}

namespace detail {

// Average surrogate and score-space gradients for a batch of score rows.
// Rows of dS come back scaled by 1/batch so the downstream matrix products
// produce the gradient of the batch mean.
template <typename PerRow>
double batch_loss_grad(const std::vector<double>& S, std::vector<double>& dS, int rows, int cols,
                       PerRow&& per_row) {
  double total = 0.0;
  dS.assign(S.size(), 0.0);
  for (int r = 0; r < rows; ++r) {
    std::span<const double> srow(S.data() + static_cast<std::size_t>(r) * cols, cols);
    if (!all_finite(srow))
      throw training_divergence("training: non-finite scores; lower the learning rate");
    total += per_row(r, srow, dS.data() + static_cast<std::size_t>(r) * cols);
  }
  double inv = 1.0 / rows;
  for (auto& v : dS) v *= inv;
  return total * inv;
}

struct EarlyStop {
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;

  // returns true when training should stop
  bool update(double epoch_loss, const TrainConfig& cfg) {
    if (best - epoch_loss < cfg.min_improvement)
      ++stall;
    else
      stall = 0;
    best = std::min(best, epoch_loss);
    return stall >= cfg.patience;
  }
};

inline double per_row_surrogate(std::span<const double> s, int label, const SurrogateSpec& spec) {
  return spec.comp ? comp_sum_loss(s, label, spec.cs) : constrained_loss(s, label, spec.ck);
}

inline void per_row_surrogate_grad(std::span<const double> s, int label, const SurrogateSpec& spec,
                                   double* out) {
  if (spec.comp) {
    auto g = comp_sum_grad(s, label, spec.cs);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] += g[i];
  } else {
    auto g = constrained_grad(s, label, spec.ck);
    for (std::size_t i = 0; i < g.grad.size(); ++i) out[i] += g.grad[i];
  }
}

inline double per_row_cost_surrogate(std::span<const double> s, std::span<const double> cost_row,
                                     const SurrogateSpec& spec) {
  return spec.comp ? cost_sensitive_comp_sum(s, cost_row, spec.cs)
                   : cost_sensitive_constrained(s, cost_row, spec.ck);
}

inline void per_row_cost_surrogate_grad(std::span<const double> s, std::span<const double> cost_row,
                                        const SurrogateSpec& spec, double* out) {
  if (spec.comp) {
    auto g = cost_sensitive_comp_sum_grad(s, cost_row, spec.cs);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] += g[i];
  } else {
    auto g = cost_sensitive_constrained_grad(s, cost_row, spec.ck);
    for (std::size_t i = 0; i < g.grad.size(); ++i) out[i] += g.grad[i];
  }
}

}  // namespace detail

// Multinomial base classifier. Minimizes the configured surrogate (logistic
// by default) of the true label; deterministic for a fixed (data, config)
// pair. Training never returns a model worse than its initialization on the
// full training surrogate.
inline LinearModel train_base(const RealMatrix& X, std::span<const int> labels, int n_labels,
                              const TrainConfig& cfg) {
  validate(cfg);
  if (X.rows != labels.size()) throw data_error("train_base: feature/label row mismatch");
  if (n_labels < 2) throw data_error("train_base: need at least 2 classes");
  std::vector<char> seen(n_labels, 0);
  for (int y : labels) {
    if (y < 0 || y >= n_labels) throw data_error("train_base: label out of range");
    seen[y] = 1;
  }
  if (std::count(seen.begin(), seen.end(), char(1)) < 2)
    throw data_error("train_base: need at least 2 classes present");

  int m = static_cast<int>(X.rows), d = static_cast<int>(X.cols), n = n_labels;
  LinearModel model = init_linear(d, n, cfg.seed);
  if (cfg.epochs == 0) return model;

  std::vector<double> w0 = model.w, b0 = model.b;
  auto full_loss = [&](const LinearModel& mm) {
    double acc = 0.0;
    for (int r = 0; r < m; ++r)
      acc += detail::per_row_surrogate(mm.scores(X.row(r)), labels[r], cfg.surrogate);
    return acc / m;
  };
  double initial = full_loss(model);

  std::vector<double> params(model.w.size() + model.b.size());
  std::copy(model.w.begin(), model.w.end(), params.begin());
  std::copy(model.b.begin(), model.b.end(), params.begin() + model.w.size());
  AdamState state(params.size());
  Rng shuffler(derive_seed(cfg.seed, 0x5Eu));
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);

  int B = std::min(cfg.batch_size, m);
  std::vector<double> Xb, S, dS, grad(params.size());
  detail::EarlyStop stop;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffler.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0; start < m; start += B) {
      int nb = std::min(B, m - start);
      Xb.assign(static_cast<std::size_t>(nb) * d, 0.0);
      for (int r = 0; r < nb; ++r) {
        auto row = X.row(order[start + r]);
        std::copy(row.begin(), row.end(), Xb.begin() + static_cast<std::size_t>(r) * d);
      }
      S.assign(static_cast<std::size_t>(nb) * n, 0.0);
      for (int r = 0; r < nb; ++r)
        std::copy(params.begin() + model.w.size(), params.end(),
                  S.begin() + static_cast<std::size_t>(r) * n);
      detail::gemm(Xb.data(), params.data(), S.data(), nb, d, n);

      double batch_loss = detail::batch_loss_grad(S, dS, nb, n, [&](int r, auto srow, double* out) {
        int y = labels[order[start + r]];
        double v = detail::per_row_surrogate(srow, y, cfg.surrogate);
        detail::per_row_surrogate_grad(srow, y, cfg.surrogate, out);
        return v;
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      detail::gemm_at_b(Xb.data(), dS.data(), grad.data(), nb, d, n);
      for (int r = 0; r < nb; ++r)
        for (int j = 0; j < n; ++j)
          grad[model.w.size() + j] += dS[static_cast<std::size_t>(r) * n + j];
      adam_step(params, grad, state, cfg);
      epoch_sum += batch_loss * nb;
    }
    if (stop.update(epoch_sum / m, cfg)) break;
  }

  std::copy(params.begin(), params.begin() + model.w.size(), model.w.begin());
  std::copy(params.begin() + model.w.size(), params.end(), model.b.begin());
  if (full_loss(model) > initial) {
    // optimizer overshot on this configuration; fall back to the start point
    model.w = std::move(w0);
    model.b = std::move(b0);
  }
  return model;
}

// Cardinality selector: two-hidden-layer rectifier network minimizing the
// cost-sensitive surrogate against the per-instance cost rows.
inline MlpModel train_selector(const RealMatrix& X, const CostTensor& cost, const TrainConfig& cfg) {
  validate(cfg);
  if (X.rows != cost.rows) throw data_error("train_selector: feature/cost row mismatch");
  if (cost.num_k < 2)
    throw config_error("train_selector: selection over a single candidate is vacuous");

  int m = static_cast<int>(X.rows), d = static_cast<int>(X.cols);
  int h1 = cfg.hidden1, h2 = cfg.hidden2, n = static_cast<int>(cost.num_k);
  MlpModel model = init_mlp(d, h1, h2, n, cfg.seed);
  if (cfg.epochs == 0) return model;

  std::size_t off_w1 = 0, off_b1 = off_w1 + model.w1.size(), off_w2 = off_b1 + model.b1.size(),
              off_b2 = off_w2 + model.w2.size(), off_w3 = off_b2 + model.b2.size(),
              off_b3 = off_w3 + model.w3.size();
  std::vector<double> params(off_b3 + model.b3.size());
  auto pack = [&](const MlpModel& mm) {
    std::copy(mm.w1.begin(), mm.w1.end(), params.begin() + off_w1);
    std::copy(mm.b1.begin(), mm.b1.end(), params.begin() + off_b1);
    std::copy(mm.w2.begin(), mm.w2.end(), params.begin() + off_w2);
    std::copy(mm.b2.begin(), mm.b2.end(), params.begin() + off_b2);
    std::copy(mm.w3.begin(), mm.w3.end(), params.begin() + off_w3);
    std::copy(mm.b3.begin(), mm.b3.end(), params.begin() + off_b3);
  };
  auto unpack = [&](MlpModel& mm) {
    std::copy(params.begin() + off_w1, params.begin() + off_b1, mm.w1.begin());
    std::copy(params.begin() + off_b1, params.begin() + off_w2, mm.b1.begin());
    std::copy(params.begin() + off_w2, params.begin() + off_b2, mm.w2.begin());
    std::copy(params.begin() + off_b2, params.begin() + off_w3, mm.b2.begin());
    std::copy(params.begin() + off_w3, params.begin() + off_b3, mm.w3.begin());
    std::copy(params.begin() + off_b3, params.end(), mm.b3.begin());
  };
  pack(model);

  MlpModel snapshot = model;
  auto full_loss = [&](const MlpModel& mm) {
    double acc = 0.0;
    for (int r = 0; r < m; ++r)
      acc += detail::per_row_cost_surrogate(mm.scores(X.row(r)), cost.row(r), cfg.surrogate);
    return acc / m;
  };
  double initial = full_loss(model);

  AdamState state(params.size());
  Rng shuffler(derive_seed(cfg.seed, 0x5Eu));
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);

  int B = std::min(cfg.batch_size, m);
  std::vector<double> Xb, Z1, A1, Z2, A2, S, dS, dZ2, dZ1, grad(params.size());
  detail::EarlyStop stop;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffler.shuffle(order);
    double epoch_sum = 0.0;
    for (int start = 0; start < m; start += B) {
      int nb = std::min(B, m - start);
      Xb.assign(static_cast<std::size_t>(nb) * d, 0.0);
      for (int r = 0; r < nb; ++r) {
        auto row = X.row(order[start + r]);
        std::copy(row.begin(), row.end(), Xb.begin() + static_cast<std::size_t>(r) * d);
      }

      auto broadcast = [&](std::vector<double>& M, std::size_t off, int width) {
        M.assign(static_cast<std::size_t>(nb) * width, 0.0);
        for (int r = 0; r < nb; ++r)
          std::copy(params.begin() + off, params.begin() + off + width,
                    M.begin() + static_cast<std::size_t>(r) * width);
      };
      broadcast(Z1, off_b1, h1);
      detail::gemm(Xb.data(), params.data() + off_w1, Z1.data(), nb, d, h1);
      A1 = Z1;
      for (auto& v : A1) v = std::max(0.0, v);
      broadcast(Z2, off_b2, h2);
      detail::gemm(A1.data(), params.data() + off_w2, Z2.data(), nb, h1, h2);
      A2 = Z2;
      for (auto& v : A2) v = std::max(0.0, v);
      broadcast(S, off_b3, n);
      detail::gemm(A2.data(), params.data() + off_w3, S.data(), nb, h2, n);

      double batch_loss = detail::batch_loss_grad(S, dS, nb, n, [&](int r, auto srow, double* out) {
        auto crow = cost.row(order[start + r]);
        double v = detail::per_row_cost_surrogate(srow, crow, cfg.surrogate);
        detail::per_row_cost_surrogate_grad(srow, crow, cfg.surrogate, out);
        return v;
      });

      std::fill(grad.begin(), grad.end(), 0.0);
      detail::gemm_at_b(A2.data(), dS.data(), grad.data() + off_w3, nb, h2, n);
      for (int r = 0; r < nb; ++r)
        for (int j = 0; j < n; ++j) grad[off_b3 + j] += dS[static_cast<std::size_t>(r) * n + j];

      dZ2.assign(static_cast<std::size_t>(nb) * h2, 0.0);
      detail::gemm_a_bt(dS.data(), params.data() + off_w3, dZ2.data(), nb, n, h2);
      for (std::size_t i = 0; i < dZ2.size(); ++i)
        if (Z2[i] <= 0.0) dZ2[i] = 0.0;
      detail::gemm_at_b(A1.data(), dZ2.data(), grad.data() + off_w2, nb, h1, h2);
      for (int r = 0; r < nb; ++r)
        for (int j = 0; j < h2; ++j) grad[off_b2 + j] += dZ2[static_cast<std::size_t>(r) * h2 + j];

      dZ1.assign(static_cast<std::size_t>(nb) * h1, 0.0);
      detail::gemm_a_bt(dZ2.data(), params.data() + off_w2, dZ1.data(), nb, h2, h1);
      for (std::size_t i = 0; i < dZ1.size(); ++i)
        if (Z1[i] <= 0.0) dZ1[i] = 0.0;
      detail::gemm_at_b(Xb.data(), dZ1.data(), grad.data() + off_w1, nb, d, h1);
      for (int r = 0; r < nb; ++r)
        for (int j = 0; j < h1; ++j) grad[off_b1 + j] += dZ1[static_cast<std::size_t>(r) * h1 + j];

      adam_step(params, grad, state, cfg);
      epoch_sum += batch_loss * nb;
    }
    if (stop.update(epoch_sum / m, cfg)) break;
  }

  unpack(model);
  if (full_loss(model) > initial) {
    // optimizer overshot on this configuration; fall back to the start point
    model = std::move(snapshot);
  }
  return model;
}

// Selected cardinality: K[argmax of model outputs], ties toward the larger
// K entry (consistent with the library-wide tie rule).
inline int predict_k(const MlpModel& model, std::span<const double> feature,
                     std::span<const int> K) {
  if (static_cast<int>(K.size()) != model.out_dim)
    throw data_error("predict_k: candidate list does not match model output");
  for (std::size_t i = 1; i < K.size(); ++i)
    if (K[i] <= K[i - 1]) throw config_error("predict_k: K must be strictly increasing");
  auto s = model.scores(feature);
  return K[static_cast<std::size_t>(argmax_tie_high(s))];
}

inline ScoreMatrix score_matrix(const LinearModel& model, const RealMatrix& X) {
  std::vector<double> vals;
  vals.reserve(X.rows * model.out_dim);
  for (std::size_t r = 0; r < X.rows; ++r) {
    auto s = model.scores(X.row(r));
    vals.insert(vals.end(), s.begin(), s.end());
  }
  return ScoreMatrix::checked(X.rows, model.out_dim, std::move(vals));
}

inline ScoreMatrix score_matrix(const MlpModel& model, const RealMatrix& X) {
  std::vector<double> vals;
  vals.reserve(X.rows * model.out_dim);
  for (std::size_t r = 0; r < X.rows; ++r) {
    auto s = model.scores(X.row(r));
    vals.insert(vals.end(), s.begin(), s.end());
  }
  return ScoreMatrix::checked(X.rows, model.out_dim, std::move(vals));
}

// ---------------------------------------------------------------------------
// Checkpoints: 8-byte magic, u32 shape header, then parameters as IEEE
// doubles, all little endian. Round trips are bit exact.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  if (!is.read(reinterpret_cast<char*>(buf), 4)) throw data_error("checkpoint: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64_block(std::ostream& os, const std::vector<double>& vals) {
  for (double d : vals) {
    auto bits = std::bit_cast<std::uint64_t>(d);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(buf, 8);
  }
}

inline void read_f64_block(std::istream& is, std::vector<double>& vals, std::size_t count) {
  vals.resize(count);
  for (std::size_t j = 0; j < count; ++j) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw data_error("checkpoint: truncated data");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    vals[j] = std::bit_cast<double>(bits);
  }
}

inline void expect_magic(std::istream& is, const char* magic) {
  char buf[8];
  if (!is.read(buf, 8) || !std::equal(buf, buf + 8, magic))
    throw data_error(std::string("checkpoint: bad magic, expected ") + magic);
}

}  // namespace detail

inline void save_linear(std::ostream& os, const LinearModel& m) {
  os.write("CSETLIN1", 8);
  detail::write_u32(os, static_cast<std::uint32_t>(m.in_dim));
  detail::write_u32(os, static_cast<std::uint32_t>(m.out_dim));
  detail::write_f64_block(os, m.w);
  detail::write_f64_block(os, m.b);
}

inline LinearModel load_linear(std::istream& is) {
  detail::expect_magic(is, "CSETLIN1");
  LinearModel m;
  m.in_dim = static_cast<int>(detail::read_u32(is));
  m.out_dim = static_cast<int>(detail::read_u32(is));
  if (m.in_dim < 1 || m.out_dim < 2) throw data_error("checkpoint: bad linear shape");
  detail::read_f64_block(is, m.w, static_cast<std::size_t>(m.in_dim) * m.out_dim);
  detail::read_f64_block(is, m.b, static_cast<std::size_t>(m.out_dim));
  require_finite(m.w, "load_linear");
  require_finite(m.b, "load_linear");
  return m;
}

inline void save_mlp(std::ostream& os, const MlpModel& m) {
  os.write("CSETMLP1", 8);
  detail::write_u32(os, static_cast<std::uint32_t>(m.in_dim));
  detail::write_u32(os, static_cast<std::uint32_t>(m.hidden1));
  detail::write_u32(os, static_cast<std::uint32_t>(m.hidden2));
  detail::write_u32(os, static_cast<std::uint32_t>(m.out_dim));
  detail::write_f64_block(os, m.w1);
  detail::write_f64_block(os, m.b1);
  detail::write_f64_block(os, m.w2);
  detail::write_f64_block(os, m.b2);
  detail::write_f64_block(os, m.w3);
  detail::write_f64_block(os, m.b3);
}

inline MlpModel load_mlp(std::istream& is) {
  detail::expect_magic(is, "CSETMLP1");
  MlpModel m;
  m.in_dim = static_cast<int>(detail::read_u32(is));
  m.hidden1 = static_cast<int>(detail::read_u32(is));
  m.hidden2 = static_cast<int>(detail::read_u32(is));
  m.out_dim = static_cast<int>(detail::read_u32(is));
  if (m.in_dim < 1 || m.hidden1 < 1 || m.hidden2 < 1 || m.out_dim < 2)
    throw data_error("checkpoint: bad mlp shape");
  detail::read_f64_block(is, m.w1, static_cast<std::size_t>(m.in_dim) * m.hidden1);
  detail::read_f64_block(is, m.b1, static_cast<std::size_t>(m.hidden1));
  detail::read_f64_block(is, m.w2, static_cast<std::size_t>(m.hidden1) * m.hidden2);
  detail::read_f64_block(is, m.b2, static_cast<std::size_t>(m.hidden2));
  detail::read_f64_block(is, m.w3, static_cast<std::size_t>(m.hidden2) * m.out_dim);
  detail::read_f64_block(is, m.b3, static_cast<std::size_t>(m.out_dim));
  require_finite(m.w1, "load_mlp");
  require_finite(m.w2, "load_mlp");
  require_finite(m.w3, "load_mlp");
  require_finite(m.b1, "load_mlp");
  require_finite(m.b2, "load_mlp");
  require_finite(m.b3, "load_mlp");
  return m;
}

// ---------------------------------------------------------------------------
// End-to-end gradient check: backprop through the selector network and the
// cost-sensitive surrogate against central finite differences of the batch
// mean. Returns the worst relative disagreement over every parameter.

inline double selector_grad_check(MlpModel model, const RealMatrix& X, const CostTensor& cost,
                                  SurrogateSpec spec, double fd_step = 1e-6) {
  if (X.rows != cost.rows) throw data_error("selector_grad_check: row mismatch");
  auto mean_loss = [&](const MlpModel& mm) {
    double acc = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r)
      acc += detail::per_row_cost_surrogate(mm.scores(X.row(r)), cost.row(r), spec);
    return acc / static_cast<double>(X.rows);
  };

  // analytic batch gradient, parameter block by parameter block, through
  // per-sample backprop
  int d = model.in_dim, h1 = model.hidden1, h2 = model.hidden2, n = model.out_dim;
  std::size_t total = model.w1.size() + model.b1.size() + model.w2.size() + model.b2.size() +
                      model.w3.size() + model.b3.size();
  std::vector<double> grad(total, 0.0);
  std::size_t off_w1 = 0, off_b1 = off_w1 + model.w1.size(), off_w2 = off_b1 + model.b1.size(),
              off_b2 = off_w2 + model.w2.size(), off_w3 = off_b2 + model.b2.size(),
              off_b3 = off_w3 + model.w3.size();
  for (std::size_t r = 0; r < X.rows; ++r) {
    auto x = X.row(r);
    std::vector<double> z1(model.b1), z2(model.b2), s(model.b3);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < h1; ++j) z1[j] += x[i] * model.w1[static_cast<std::size_t>(i) * h1 + j];
    std::vector<double> a1(z1);
    for (auto& v : a1) v = std::max(0.0, v);
    for (int i = 0; i < h1; ++i)
      for (int j = 0; j < h2; ++j) z2[j] += a1[i] * model.w2[static_cast<std::size_t>(i) * h2 + j];
    std::vector<double> a2(z2);
    for (auto& v : a2) v = std::max(0.0, v);
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < n; ++j) s[j] += a2[i] * model.w3[static_cast<std::size_t>(i) * n + j];

    std::vector<double> ds(n, 0.0);
    detail::per_row_cost_surrogate_grad(s, cost.row(r), spec, ds.data());
    std::vector<double> da2(h2, 0.0), da1(h1, 0.0);
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < n; ++j) {
        grad[off_w3 + static_cast<std::size_t>(i) * n + j] += a2[i] * ds[j];
        da2[i] += model.w3[static_cast<std::size_t>(i) * n + j] * ds[j];
      }
    for (int j = 0; j < n; ++j) grad[off_b3 + j] += ds[j];
    for (int i = 0; i < h2; ++i)
      if (z2[i] <= 0.0) da2[i] = 0.0;
    for (int i = 0; i < h1; ++i)
      for (int j = 0; j < h2; ++j) {
        grad[off_w2 + static_cast<std::size_t>(i) * h2 + j] += a1[i] * da2[j];
        da1[i] += model.w2[static_cast<std::size_t>(i) * h2 + j] * da2[j];
      }
    for (int j = 0; j < h2; ++j) grad[off_b2 + j] += da2[j];
    for (int i = 0; i < h1; ++i)
      if (z1[i] <= 0.0) da1[i] = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < h1; ++j) grad[off_w1 + static_cast<std::size_t>(i) * h1 + j] += x[i] * da1[j];
    for (int j = 0; j < h1; ++j) grad[off_b1 + j] += da1[j];
  }
  for (auto& v : grad) v /= static_cast<double>(X.rows);

  auto param_at = [&](std::size_t idx) -> double* {
    if (idx < off_b1) return &model.w1[idx - off_w1];
    if (idx < off_w2) return &model.b1[idx - off_b1];
    if (idx < off_b2) return &model.w2[idx - off_w2];
    if (idx < off_w3) return &model.b2[idx - off_b2];
    if (idx < off_b3) return &model.w3[idx - off_w3];
    return &model.b3[idx - off_b3];
  };

  double worst = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    double* p = param_at(idx);
    double saved = *p;
    *p = saved + fd_step;
    double up = mean_loss(model);
    *p = saved - fd_step;
    double down = mean_loss(model);
    *p = saved;
    double fd = (up - down) / (2.0 * fd_step);
    double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-2});
    worst = std::max(worst, std::abs(fd - grad[idx]) / denom);
  }
  return worst;
}

}  // namespace cardset
