// Central finite-difference verification of analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <utility>

#include "trinityx/error.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// A loss callable maps a flat parameter vector to (loss, dloss/dparams).
template <typename F>
concept LossWithGradient = requires(F f, std::span<const double> p) {
  { f(p) } -> std::convertible_to<std::pair<double, Vector>>;
};

/// Compares the analytic gradient at `params` against
/// (f(p + h e_k) - f(p - h e_k)) / 2h for every coordinate k. The relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
template <LossWithGradient F>
GradCheckResult grad_check(F&& loss_fn, std::span<const double> params, double step) {
  if (!(step > 0.0)) throw DomainError("grad_check: step must be > 0");
  Vector theta(params.begin(), params.end());
  auto [loss0, analytic] = loss_fn(std::span<const double>(theta));
  if (!std::isfinite(loss0)) throw NumericalError("grad_check: non-finite loss at base point");
  if (analytic.size() != theta.size())
    throw ShapeError("grad_check: gradient length " + std::to_string(analytic.size()) + " vs params " +
                     std::to_string(theta.size()));
  GradCheckResult res;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double orig = theta[k];
    theta[k] = orig + step;
    const double up = loss_fn(std::span<const double>(theta)).first;
    theta[k] = orig - step;
    const double down = loss_fn(std::span<const double>(theta)).first;
    theta[k] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError("grad_check: non-finite loss perturbing parameter " + std::to_string(k));
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[k] - numeric) / denom;
    if (rel > res.max_rel_error) res = {rel, k, analytic[k], numeric};
  }
  return res;
}

}  // namespace trinityx
