// Neural primitives with hand-written backward passes.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "trinityx/error.hpp"
#include "trinityx/rng.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

/// Added inside every log so that log(0) never happens.
inline constexpr double kLogEps = 1e-12;
/// Variance floor inside the LayerNorm square root.
inline constexpr double kLayerNormEps = 1e-5;

enum class Mode { train, eval };

/// W x + b
inline Vector linear_forward(const Matrix& w, std::span<const double> b, std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size())
    throw ShapeError("linear_forward: W " + shape_str(w.rows(), w.cols()) + ", b " + shape_str(b.size()) +
                     ", x " + shape_str(x.size()));
  Vector out = matvec(w, x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

/// softmax(z / tau), stabilized by subtracting max(z) / tau.
inline Vector softmax_temperature(std::span<const double> z, double tau) {
  if (!(tau > 0.0)) throw DomainError("softmax_temperature: tau must be > 0, got " + std::to_string(tau));
  if (z.empty()) throw ShapeError("softmax_temperature: empty logits");
  if (!all_finite(z)) throw NumericalError("softmax_temperature: non-finite logits");
  const double zmax = *std::max_element(z.begin(), z.end());
  Vector out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - zmax) / tau);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

/// Given p = softmax(z / tau) and dL/dp, returns dL/dz.
inline Vector softmax_temperature_backward(std::span<const double> p, std::span<const double> grad_p, double tau) {
  const double inner = dot(p, grad_p);
  Vector gz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) gz[i] = p[i] * (grad_p[i] - inner) / tau;
  return gz;
}

/// Intermediate values kept by layer_norm for its backward pass.
struct LayerNormCache {
  Vector normalized;  // (x - mean) / sigma
  double inv_sigma = 0.0;
};

inline Vector layer_norm(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
                         double eps = kLayerNormEps, LayerNormCache* cache = nullptr) {
  if (x.size() != gain.size() || x.size() != bias.size())
    throw ShapeError("layer_norm: x " + shape_str(x.size()) + ", gain " + shape_str(gain.size()) + ", bias " +
                     shape_str(bias.size()));
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be > 0");
  if (x.empty()) throw ShapeError("layer_norm: empty input");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv_sigma = 1.0 / std::sqrt(var + eps);
  Vector xhat(x.size()), out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xhat[i] = (x[i] - mean) * inv_sigma;
    out[i] = gain[i] * xhat[i] + bias[i];
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_sigma = inv_sigma;
  }
  return out;
}

/// Backward of layer_norm. Accumulates into grad_gain / grad_bias (when
/// non-empty) and returns dL/dx.
inline Vector layer_norm_backward(const LayerNormCache& cache, std::span<const double> gain,
                                  std::span<const double> grad_out, std::span<double> grad_gain,
                                  std::span<double> grad_bias) {
  const std::size_t n = grad_out.size();
  Vector gxhat(n);
  double mean_g = 0.0, mean_gx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    gxhat[i] = grad_out[i] * gain[i];
    mean_g += gxhat[i];
    mean_gx += gxhat[i] * cache.normalized[i];
    if (!grad_gain.empty()) grad_gain[i] += grad_out[i] * cache.normalized[i];
    if (!grad_bias.empty()) grad_bias[i] += grad_out[i];
  }
  mean_g /= static_cast<double>(n);
  mean_gx /= static_cast<double>(n);
  Vector gx(n);
  for (std::size_t i = 0; i < n; ++i)
    gx[i] = cache.inv_sigma * (gxhat[i] - mean_g - cache.normalized[i] * mean_gx);
  return gx;
}

/// Inverted-dropout scale mask: each entry is 0 with probability p, else
/// 1 / (1 - p). Eval mode or p == 0 gives all ones and draws nothing.
inline Vector dropout_mask(std::size_t n, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must be in [0, 1), got " + std::to_string(p));
  Vector mask(n, 1.0);
  if (mode == Mode::eval || p == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mask;
}

inline Vector dropout(std::span<const double> x, double p, Mode mode, Rng& rng) {
  const Vector mask = dropout_mask(x.size(), p, mode, rng);
  if (mode == Mode::eval || p == 0.0) return Vector(x.begin(), x.end());
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return out;
}

/// -log(probs[target] + kLogEps)
inline double cross_entropy(std::span<const double> probs, std::size_t target) {
  if (target >= probs.size())
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(probs.size()) + " classes");
  double total = 0.0;
  for (double p : probs) total += p;
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("cross_entropy: probabilities do not sum to 1");
  return -std::log(probs[target] + kLogEps);
}

inline Vector relu(std::span<const double> x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

}  // namespace trinityx
