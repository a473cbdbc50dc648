// The full desk-scale model: backbone -> experts -> calibrated routing ->
// linear task head, with the composite loss and its analytic gradient.
#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "trinityx/error.hpp"
#include "trinityx/expert_bank.hpp"
#include "trinityx/losses.hpp"
#include "trinityx/numeric.hpp"
#include "trinityx/rng.hpp"
#include "trinityx/router.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

struct ModelDims {
  std::size_t d_feat = 500;
  std::size_t d_model = 64;
  std::size_t hidden = 128;
  std::size_t rank = 8;
  std::size_t n_experts = 3;
  std::size_t n_classes = 2;
};

/// Linear classifier over the calibrated embedding.
struct TaskHead {
  Matrix w;  // n_classes x d_model
  Vector b;  // n_classes
};

struct Model {
  ExpertBank bank;
  Router router;
  TaskHead head;

  std::size_t n_classes() const noexcept { return head.w.rows(); }

  static Model init(const ModelDims& dims, double tau, double dropout_p, Rng& rng) {
    Model m;
    m.bank = ExpertBank::init(dims.d_feat, dims.d_model, dims.hidden, dims.rank, dims.n_experts, rng);
    m.router = Router::init(dims.n_experts, dims.d_model, rng, tau, dropout_p);
    m.head = {Matrix(dims.n_classes, dims.d_model), Vector(dims.n_classes, 0.0)};
    const double s = 1.0 / std::sqrt(static_cast<double>(dims.d_model));
    for (double& v : m.head.w.data()) v = rng.normal(0.0, s);
    return m;
  }

  void validate() const {
    bank.validate();
    router.validate();
    if (router.n_experts() != bank.size() || router.d_model() != bank.d_model())
      throw ShapeError("router does not match expert bank");
    if (head.w.cols() != bank.d_model() || head.b.size() != head.w.rows() || head.w.rows() == 0)
      throw ShapeError("task head does not match d_model");
  }
};

/// Which parameter groups receive gradient updates.
struct Trainable {
  bool router = true;
  bool layer_norm = true;
  bool head = true;
  bool expert_base = false;
  bool task_vectors = true;
  /// Empty means every expert.
  std::vector<bool> experts;

  bool expert(std::size_t i) const { return experts.empty() || (i < experts.size() && experts[i]); }
};

/// Visits trainable tensors in a fixed order. Works on a Model and on a
/// gradient buffer of the same layout alike.
template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, Model>
void for_each_trainable(M& m, const Trainable& t, F&& f) {
  if (t.router) {
    f(std::span(m.router.w.data()));
    f(std::span(m.router.b));
  }
  if (t.layer_norm) {
    f(std::span(m.router.ln_gain));
    f(std::span(m.router.ln_bias));
  }
  if (t.head) {
    f(std::span(m.head.w.data()));
    f(std::span(m.head.b));
  }
  for (std::size_t i = 0; i < m.bank.experts.size(); ++i) {
    if (!t.expert(i)) continue;
    auto& e = m.bank.experts[i];
    if (t.expert_base) {
      f(std::span(e.w1.data()));
      f(std::span(e.b1));
      f(std::span(e.w2.data()));
      f(std::span(e.b2));
    }
    if (t.task_vectors) {
      f(std::span(e.task_vector.down.data()));
      f(std::span(e.task_vector.up.data()));
    }
  }
}

/// Gradient buffer: same layout as the model, all trainable values zero.
inline Model zeros_like(const Model& m) {
  Model z = m;
  Trainable all{true, true, true, true, true, {}};
  for_each_trainable(z, all, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return z;
}

inline Vector flatten(const Model& m, const Trainable& t) {
  Vector out;
  for_each_trainable(m, t, [&](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

inline void unflatten(Model& m, const Trainable& t, std::span<const double> flat) {
  std::size_t off = 0;
  for_each_trainable(m, t, [&](std::span<double> s) {
    if (off + s.size() > flat.size()) throw ShapeError("unflatten: parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), s.size(), s.begin());
    off += s.size();
  });
  if (off != flat.size()) throw ShapeError("unflatten: parameter vector too long");
}

/// Labels attached to one training example.
struct Target {
  std::size_t class_label = 0;
  std::size_t dim_label = 0;
};

/// Forward pass of one example, everything the backward pass needs.
struct ExampleForward {
  RouteTrace trace;
  Vector class_logits;
  Vector class_probs;
  LossBreakdown parts;  // unweighted parts; total filled by total_loss
};

/// Forward with all loss parts. `forced_alpha` (non-empty) replaces the
/// learned fusion weights; see route_forward. The gating part here is the
/// supervised routing cross-entropy; the load-balance variant is a batch
/// quantity computed by batch_loss.
inline ExampleForward forward_example(const Model& m, std::span<const double> h, const Target& target,
                                      std::span<const double> prev_probs, const LossConfig& cfg, Mode mode, Rng& rng,
                                      std::span<const double> forced_alpha = {}) {
  ExampleForward f;
  f.trace = route_forward(m.router, h, m.bank, mode, rng, forced_alpha);
  f.class_logits = linear_forward(m.head.w, m.head.b, f.trace.y_cal);
  f.class_probs = softmax_temperature(f.class_logits, 1.0);
  f.parts.task = cross_entropy(f.class_probs, target.class_label);
  f.parts.entropy = entropy_loss(f.trace.probs);
  f.parts.kl = kl_loss(f.trace.probs, prev_probs);
  f.parts.gating = gating_loss(f.trace.probs, target.dim_label);
  f.parts = total_loss(f.parts, cfg);
  return f;
}

/// Backpropagates `scale` * (example loss) into `grad`. `extra_grad_pi` is
/// added to dL/dpi before the softmax backward (batch-level terms).
/// When `routing_terms` is false only the task loss is differentiated.
inline void backward_example(const Model& m, std::span<const double> h, const ExampleForward& f,
                             const Target& target, std::span<const double> prev_probs, const LossConfig& cfg,
                             double scale, Model& grad, bool routing_terms = true, bool forced = false,
                             std::span<const double> extra_grad_pi = {}) {
  const auto& t = f.trace;
  const std::size_t n = m.bank.size();

  // task head: d(-log(p_c + eps)) / d logit_k = -p_c / (p_c + eps) * (delta_kc - p_k)
  const double pc = f.class_probs[target.class_label];
  const double coef = -pc / (pc + kLogEps);
  Vector g_logits(f.class_probs.size());
  for (std::size_t k = 0; k < g_logits.size(); ++k)
    g_logits[k] = scale * coef * ((k == target.class_label ? 1.0 : 0.0) - f.class_probs[k]);
  add_outer(grad.head.w, g_logits, t.y_cal);
  axpy(1.0, g_logits, grad.head.b);
  Vector g_ycal = matvec_t(m.head.w, g_logits);

  // dropout and layer norm
  for (std::size_t i = 0; i < g_ycal.size(); ++i) g_ycal[i] *= t.dropout_mask[i];
  const Vector g_resid = layer_norm_backward(t.ln_cache, m.router.ln_gain, g_ycal, grad.router.ln_gain,
                                             grad.router.ln_bias);

  // fusion: y = sum alpha_i y_i
  Vector g_alpha(n);
  for (std::size_t i = 0; i < n; ++i) {
    g_alpha[i] = dot(g_resid, t.expert_outputs[i]);
    if (t.alpha[i] == 0.0) continue;
    Vector g_y = g_resid;
    for (double& v : g_y) v *= t.alpha[i];
    expert_backward(m.bank.experts[i], h, t.expert_caches[i], g_y, grad.bank.experts[i]);
  }
  if (forced) return;

  // alpha -> pi (through top-k mask and optional renormalization)
  Vector g_alpha_raw(n, 0.0);
  if (m.router.renormalize_alpha) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (t.kept[i]) s += t.alpha_raw[i];
    const double inner = dot(g_alpha, t.alpha);
    for (std::size_t i = 0; i < n; ++i)
      if (t.kept[i]) g_alpha_raw[i] = (g_alpha[i] - inner) / s;
  } else {
    for (std::size_t i = 0; i < n; ++i)
      if (t.kept[i]) g_alpha_raw[i] = g_alpha[i];
  }
  Vector g_pi(n);
  for (std::size_t i = 0; i < n; ++i) g_pi[i] = g_alpha_raw[i] * m.bank.weights.normalized[i];

  if (routing_terms) {
    const double we = cfg.entropy_weight(), wk = cfg.kl_weight();
    const double wg = cfg.gating_kind == GatingKind::supervised ? cfg.gating_weight() : 0.0;
    if (we != 0.0) axpy(scale * we, entropy_grad(t.probs), g_pi);
    if (wk != 0.0) axpy(scale * wk, kl_grad(t.probs, prev_probs), g_pi);
    if (wg != 0.0) axpy(scale * wg, gating_grad(t.probs, target.dim_label), g_pi);
    if (!extra_grad_pi.empty()) axpy(1.0, extra_grad_pi, g_pi);
  }

  const Vector g_z = softmax_temperature_backward(t.probs, g_pi, m.router.tau);
  add_outer(grad.router.w, g_z, h);
  axpy(1.0, g_z, grad.router.b);
}

/// One labelled example with its frozen hidden state.
struct HiddenExample {
  Vector h;
  Target target;
};

struct BatchResult {
  LossBreakdown mean;   // mean parts and mean total over the batch
  Vector mean_probs;    // batch-mean pi; becomes the next step's pi_prev
  std::vector<ExampleForward> forwards;
};

/// Mean composite loss over a batch and (when `grad` is non-null) its
/// gradient. All examples share `prev_probs`. With the load-balance gating
/// kind the gating part is the balance loss of the batch-mean pi, reported
/// identically for each example.
inline BatchResult batch_loss(const Model& m, std::span<const HiddenExample* const> batch,
                              std::span<const double> prev_probs, const LossConfig& cfg, Mode mode, Rng& rng,
                              Model* grad) {
  if (batch.empty()) throw ArgumentError("batch_loss: empty batch");
  const std::size_t n = m.bank.size();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchResult r;
  r.mean_probs.assign(n, 0.0);
  r.forwards.reserve(batch.size());
  for (const HiddenExample* ex : batch) {
    r.forwards.push_back(forward_example(m, ex->h, ex->target, prev_probs, cfg, mode, rng));
    axpy(inv_b, r.forwards.back().trace.probs, r.mean_probs);
  }
  Vector lb_grad;
  if (cfg.gating_kind == GatingKind::load_balance) {
    const double lb = load_balance_loss(r.mean_probs);
    for (auto& f : r.forwards) {
      f.parts.gating = lb;
      f.parts = total_loss(f.parts, cfg);
    }
    lb_grad = load_balance_grad(r.mean_probs);
    // d/dpi_b of wg * LB(mean pi) = wg * grad / B
    for (double& v : lb_grad) v *= cfg.gating_weight() * inv_b;
  }
  for (const auto& f : r.forwards) {
    LossBreakdown p = f.parts;
    p /= static_cast<double>(batch.size());
    r.mean += p;
  }
  if (grad) {
    for (std::size_t b = 0; b < batch.size(); ++b)
      backward_example(m, batch[b]->h, r.forwards[b], batch[b]->target, prev_probs, cfg, inv_b, *grad, true, false,
                       lb_grad);
  }
  return r;
}

}  // namespace trinityx
