// Calibrated routing: per-expert logits, temperature softmax, fusion with the
// normalized importance weights, and the residual + LayerNorm + Dropout
// post-processing that yields the calibrated embedding.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trinityx/adapters.hpp"
#include "trinityx/error.hpp"
#include "trinityx/expert_bank.hpp"
#include "trinityx/numeric.hpp"
#include "trinityx/rng.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

struct Router {
  Matrix w;  // n x d_model; row i is expert i's logit head
  Vector b;  // n
  double tau = 0.7;
  Vector ln_gain;  // d_model
  Vector ln_bias;  // d_model
  double dropout_p = 0.1;
  bool renormalize_alpha = false;
  /// 0 keeps every expert; k > 0 zeroes alpha outside the k most probable.
  std::size_t top_k = 0;

  std::size_t n_experts() const noexcept { return w.rows(); }
  std::size_t d_model() const noexcept { return w.cols(); }

  static Router init(std::size_t n, std::size_t d_model, Rng& rng, double tau = 0.7, double dropout_p = 0.1) {
    Router r{Matrix(n, d_model), Vector(n, 0.0), tau, Vector(d_model, 1.0), Vector(d_model, 0.0), dropout_p};
    const double s = 0.1 / std::sqrt(static_cast<double>(d_model));
    for (double& v : r.w.data()) v = rng.normal(0.0, s);
    return r;
  }

  void validate() const {
    if (!(tau > 0.0)) throw DomainError("router: tau must be > 0");
    if (b.size() != w.rows() || ln_gain.size() != w.cols() || ln_bias.size() != w.cols())
      throw ShapeError("router parameter shapes inconsistent");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw DomainError("router: dropout_p must be in [0, 1)");
  }
};

struct RoutingState {
  Vector logits;
  Vector probs;
  Vector prev_probs;
  Vector alpha;
  std::size_t step = 0;
};

inline RoutingState initial_state(std::size_t n) {
  if (n == 0) throw ArgumentError("initial_state: need at least one expert");
  return {Vector(n, 0.0), Vector(n, 0.0), Vector(n, 1.0 / static_cast<double>(n)), Vector(n, 0.0), 0};
}

/// alpha_i = pi_i * gamma_tilde_i, optionally divided by sum(alpha).
inline Vector fuse_weights(std::span<const double> pi, const WeightVector& gamma, bool renormalize = false) {
  if (pi.size() != gamma.normalized.size())
    throw ShapeError("fuse_weights: pi " + shape_str(pi.size()) + " vs gamma " + shape_str(gamma.normalized.size()));
  Vector alpha(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) alpha[i] = pi[i] * gamma.normalized[i];
  if (renormalize) {
    const double total = std::accumulate(alpha.begin(), alpha.end(), 0.0);
    if (!(total > 0.0)) throw NumericalError("fuse_weights: cannot renormalize zero alpha");
    for (double& a : alpha) a /= total;
  }
  return alpha;
}

/// sum_i alpha_i * y_i
inline Vector fused_decomposition(std::span<const double> alpha, std::span<const Vector> expert_outputs) {
  if (alpha.size() != expert_outputs.size())
    throw ShapeError("fused_decomposition: " + std::to_string(alpha.size()) + " weights for " +
                     std::to_string(expert_outputs.size()) + " outputs");
  if (expert_outputs.empty()) throw ArgumentError("fused_decomposition: no expert outputs");
  const std::size_t d = expert_outputs.front().size();
  Vector y(d, 0.0);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (expert_outputs[i].size() != d) throw ShapeError("fused_decomposition: ragged expert outputs");
    axpy(alpha[i], expert_outputs[i], y);
  }
  return y;
}

/// Indices of the k largest probabilities (ties to the lower index).
inline std::vector<bool> top_k_mask(std::span<const double> pi, std::size_t k) {
  std::vector<bool> keep(pi.size(), true);
  if (k == 0 || k >= pi.size()) return keep;
  std::vector<std::size_t> order(pi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pi[a] > pi[b]; });
  std::fill(keep.begin(), keep.end(), false);
  for (std::size_t i = 0; i < k; ++i) keep[order[i]] = true;
  return keep;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Every intermediate of one routing forward pass.
struct RouteTrace {
  Vector logits;
  Vector probs;
  std::vector<bool> kept;      // top-k selection (all true when dense)
  Vector alpha_raw;            // pi * gamma_tilde, before top-k and renormalization
  Vector alpha;
  std::vector<Vector> expert_outputs;
  std::vector<ExpertCache> expert_caches;
  Vector fused;                // sum alpha_i y_i
  LayerNormCache ln_cache;
  Vector normalized;           // layer_norm(fused + h)
  Vector dropout_mask;
  Vector y_cal;
};

/// The forward pass shared by route() and the trainer. When `forced_alpha`
/// is non-empty it replaces the learned fusion weights (used while the
/// experts are fine-tuned on their own dimension).
inline RouteTrace route_forward(const Router& router, std::span<const double> h, const ExpertBank& bank, Mode mode,
                                Rng& rng, std::span<const double> forced_alpha = {}) {
  router.validate();
  if (h.size() != router.d_model() || h.size() != bank.d_model())
    throw ShapeError("route: h " + shape_str(h.size()) + " vs router d_model " + std::to_string(router.d_model()));
  if (router.n_experts() != bank.size())
    throw ShapeError("route: router has " + std::to_string(router.n_experts()) + " heads for " +
                     std::to_string(bank.size()) + " experts");
  RouteTrace t;
  t.logits = linear_forward(router.w, router.b, h);
  if (!all_finite(t.logits)) throw NumericalError("route: non-finite router logits");
  t.probs = softmax_temperature(t.logits, router.tau);
  t.kept = top_k_mask(t.probs, router.top_k);
  if (!forced_alpha.empty()) {
    if (forced_alpha.size() != bank.size()) throw ShapeError("route: forced alpha length mismatch");
    t.alpha_raw.assign(forced_alpha.begin(), forced_alpha.end());
    t.kept.assign(bank.size(), true);
    t.alpha = t.alpha_raw;
  } else {
    t.alpha_raw = fuse_weights(t.probs, bank.weights, false);
    t.alpha = t.alpha_raw;
    for (std::size_t i = 0; i < t.alpha.size(); ++i)
      if (!t.kept[i]) t.alpha[i] = 0.0;
    if (router.renormalize_alpha) {
      const double total = std::accumulate(t.alpha.begin(), t.alpha.end(), 0.0);
      for (double& a : t.alpha) a /= total;
    }
  }
  t.expert_outputs.resize(bank.size());
  t.expert_caches.resize(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i)
    t.expert_outputs[i] = expert_forward(bank.experts[i], h, &t.expert_caches[i]);
  t.fused = fused_decomposition(t.alpha, t.expert_outputs);
  Vector residual = t.fused;
  axpy(1.0, h, residual);
  t.normalized = layer_norm(residual, router.ln_gain, router.ln_bias, kLayerNormEps, &t.ln_cache);
  t.dropout_mask = dropout_mask(t.normalized.size(), router.dropout_p, mode, rng);
  if (mode == Mode::eval || router.dropout_p == 0.0) {
    t.y_cal = t.normalized;
  } else {
    t.y_cal.resize(t.normalized.size());
    for (std::size_t i = 0; i < t.y_cal.size(); ++i) t.y_cal[i] = t.normalized[i] * t.dropout_mask[i];
  }
  return t;
}

struct RouteResult {
  Vector y_cal;
  RoutingState state;
};

/// One calibrated routing step. The returned state carries pi into
/// prev_probs and advances the step counter.
inline RouteResult route(const Router& router, std::span<const double> h, const ExpertBank& bank,
                         const RoutingState& state, Mode mode, Rng& rng) {
  if (state.prev_probs.size() != bank.size()) throw ShapeError("route: routing state has wrong expert count");
  RouteTrace t = route_forward(router, h, bank, mode, rng);
  RoutingState next{t.logits, t.probs, t.probs, t.alpha, state.step + 1};
  return {std::move(t.y_cal), std::move(next)};
}

}  // namespace trinityx
