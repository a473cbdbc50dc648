// Routing regularizers, the composite objective and the inverse-loss update
// of the importance weights.
#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>

#include "trinityx/adapters.hpp"
#include "trinityx/error.hpp"
#include "trinityx/numeric.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

/// Sign applied to the entropy term. `paper` adds +lambda1 * H(pi) to the
/// minimized objective (which sharpens routing); `prose` subtracts it
/// (which rewards diverse routing).
enum class EntropySign { paper, prose };

/// supervised: -log pi[dimension label].
/// load_balance: squared coefficient of variation of the batch-mean pi.
enum class GatingKind { supervised, load_balance };

struct LossConfig {
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  double gating_coeff = 0.1;
  double learning_rate = 0.05;
  std::size_t epochs = 3;
  std::size_t batch_size = 8;
  bool renormalize_alpha = false;
  bool enable_gl = true;
  bool enable_rl = true;
  EntropySign entropy_sign = EntropySign::paper;
  GatingKind gating_kind = GatingKind::supervised;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || gating_coeff < 0) throw ConfigError("loss weights must be >= 0");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }

  double entropy_weight() const {
    if (!enable_rl) return 0.0;
    return entropy_sign == EntropySign::paper ? lambda1 : -lambda1;
  }
  double kl_weight() const { return enable_rl ? lambda2 : 0.0; }
  double gating_weight() const { return enable_gl ? gating_coeff : 0.0; }
};

struct LossBreakdown {
  double task = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double gating = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    task += o.task, entropy += o.entropy, kl += o.kl, gating += o.gating, total += o.total;
    return *this;
  }
  LossBreakdown& operator*=(double s) {
    task *= s, entropy *= s, kl *= s, gating *= s, total *= s;
    return *this;
  }
  LossBreakdown& operator/=(double d) {
    task /= d, entropy /= d, kl /= d, gating /= d, total /= d;
    return *this;
  }
};

namespace detail {
inline void require_simplex(std::span<const double> p, double tol, const char* who) {
  if (p.empty()) throw DomainError(std::string(who) + ": empty distribution");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= -tol)) throw DomainError(std::string(who) + ": negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) throw DomainError(std::string(who) + ": distribution sums to " + std::to_string(total));
}
}  // namespace detail

/// -sum pi_i ln pi_i, with 0 ln 0 = 0.
inline double entropy_loss(std::span<const double> pi) {
  detail::require_simplex(pi, 1e-6, "entropy_loss");
  double h = 0.0;
  for (double p : pi)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

/// d entropy / d pi_i = -(ln pi_i + 1)
inline Vector entropy_grad(std::span<const double> pi) {
  Vector g(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) g[i] = pi[i] > 0.0 ? -(std::log(pi[i]) + 1.0) : 0.0;
  return g;
}

/// KL(pi || pi_prev) = sum pi_i ln(pi_i / pi_prev_i)
inline double kl_loss(std::span<const double> pi, std::span<const double> pi_prev) {
  if (pi.size() != pi_prev.size())
    throw ShapeError("kl_loss: " + shape_str(pi.size()) + " vs " + shape_str(pi_prev.size()));
  detail::require_simplex(pi, 1e-6, "kl_loss");
  detail::require_simplex(pi_prev, 1e-6, "kl_loss");
  double kl = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    if (pi[i] <= 0.0) continue;
    if (pi_prev[i] < kLogEps) throw DomainError("kl_loss: pi_prev has zero mass where pi is positive");
    kl += pi[i] * std::log(pi[i] / pi_prev[i]);
  }
  return kl;
}

/// d KL / d pi_i with pi_prev held fixed.
inline Vector kl_grad(std::span<const double> pi, std::span<const double> pi_prev) {
  Vector g(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) g[i] = pi[i] > 0.0 ? std::log(pi[i] / pi_prev[i]) + 1.0 : 0.0;
  return g;
}

/// -ln(pi[label] + eps): routing cross-entropy against the dimension label.
inline double gating_loss(std::span<const double> pi, std::size_t dim_label) {
  if (dim_label >= pi.size())
    throw IndexError("gating_loss: label " + std::to_string(dim_label) + " out of range for " +
                     std::to_string(pi.size()) + " experts");
  return -std::log(pi[dim_label] + kLogEps);
}

inline Vector gating_grad(std::span<const double> pi, std::size_t dim_label) {
  Vector g(pi.size(), 0.0);
  g[dim_label] = -1.0 / (pi[dim_label] + kLogEps);
  return g;
}

/// n * sum m_i^2 / (sum m)^2 - 1 for the mean routing distribution m.
inline double load_balance_loss(std::span<const double> mean_pi) {
  const double n = static_cast<double>(mean_pi.size());
  const double s = std::accumulate(mean_pi.begin(), mean_pi.end(), 0.0);
  double sq = 0.0;
  for (double m : mean_pi) sq += m * m;
  return n * sq / (s * s) - 1.0;
}

inline Vector load_balance_grad(std::span<const double> mean_pi) {
  const double n = static_cast<double>(mean_pi.size());
  const double s = std::accumulate(mean_pi.begin(), mean_pi.end(), 0.0);
  double sq = 0.0;
  for (double m : mean_pi) sq += m * m;
  Vector g(mean_pi.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = n * (2.0 * mean_pi[i] / (s * s) - 2.0 * sq / (s * s * s));
  return g;
}

/// Weighted sum; disabled terms contribute exactly zero. The raw parts are
/// kept in the breakdown regardless so that ablation arms stay comparable.
inline LossBreakdown total_loss(LossBreakdown parts, const LossConfig& cfg) {
  for (double v : {parts.task, parts.entropy, parts.kl, parts.gating})
    if (!std::isfinite(v)) throw NumericalError("total_loss: non-finite loss component");
  parts.total = parts.task;
  if (cfg.enable_rl) parts.total += cfg.entropy_weight() * parts.entropy + cfg.kl_weight() * parts.kl;
  if (cfg.enable_gl) parts.total += cfg.gating_weight() * parts.gating;
  return parts;
}

inline constexpr double kLossFloor = 1e-6;

/// raw_i <- (1 - ema) raw_i + ema * scale / max(L_i, kLossFloor), then renormalize.
inline WeightVector update_task_weights(const WeightVector& gamma, std::span<const double> expert_losses,
                                        double scale = 0.1, double ema = 0.5) {
  if (expert_losses.size() != gamma.size())
    throw ShapeError("update_task_weights: " + std::to_string(expert_losses.size()) + " losses for " +
                     std::to_string(gamma.size()) + " weights");
  if (!(ema >= 0.0 && ema <= 1.0)) throw DomainError("update_task_weights: ema must be in [0, 1]");
  if (ema == 0.0) return gamma;
  Vector raw = gamma.raw;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (expert_losses[i] < 0.0 || !std::isfinite(expert_losses[i]))
      throw DomainError("update_task_weights: invalid loss for expert " + std::to_string(i));
    raw[i] = (1.0 - ema) * raw[i] + ema * (scale / std::max(expert_losses[i], kLossFloor));
  }
  return normalize_weights(raw);
}

}  // namespace trinityx
