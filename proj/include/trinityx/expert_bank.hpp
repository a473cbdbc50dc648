// Frozen input projection (the stand-in for pre-trained base parameters)
// plus the expert feed-forward adapters, one per alignment dimension.
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "trinityx/adapters.hpp"
#include "trinityx/error.hpp"
#include "trinityx/numeric.hpp"
#include "trinityx/rng.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

/// Expert order is fixed: helpful = 0, harmless = 1, honest = 2.
inline const std::vector<std::string>& dimension_names() {
  static const std::vector<std::string> names{"helpful", "harmless", "honest"};
  return names;
}

/// h = tanh(W_in x + b_in)
struct Backbone {
  Matrix w_in;  // d_model x d_feat
  Vector b_in;  // d_model
  bool frozen = true;

  std::size_t d_feat() const noexcept { return w_in.cols(); }
  std::size_t d_model() const noexcept { return w_in.rows(); }

  static Backbone init(std::size_t d_feat, std::size_t d_model, Rng& rng) {
    Backbone b{Matrix(d_model, d_feat), Vector(d_model, 0.0), true};
    const double scale = std::sqrt(1.0 / static_cast<double>(d_feat)) * 4.0;
    for (double& v : b.w_in.data()) v = rng.normal(0.0, scale);
    return b;
  }
};

inline Vector input_projection(const Backbone& bb, std::span<const double> features) {
  if (features.size() != bb.d_feat())
    throw ShapeError("input_projection: features " + shape_str(features.size()) + " vs backbone " +
                     shape_str(bb.d_model(), bb.d_feat()));
  Vector h = linear_forward(bb.w_in, bb.b_in, features);
  for (double& v : h) v = std::tanh(v);
  return h;
}

/// y = (W2 + up * down) relu(W1 h + b1) + b2. The task vector touches W2 only.
struct ExpertAdapter {
  Matrix w1;  // hidden x d_model
  Vector b1;  // hidden
  Matrix w2;  // d_model x hidden
  Vector b2;  // d_model
  TaskVector task_vector;  // delta shaped like w2

  std::size_t d_model() const noexcept { return w1.cols(); }
  std::size_t hidden() const noexcept { return w1.rows(); }

  void validate() const {
    const std::size_t d = w1.cols(), hid = w1.rows();
    if (b1.size() != hid || w2.rows() != d || w2.cols() != hid || b2.size() != d ||
        task_vector.d_out() != d || task_vector.d_in() != hid)
      throw ShapeError("expert adapter shapes inconsistent (d_model " + std::to_string(d) + ", hidden " +
                       std::to_string(hid) + ")");
  }

  /// He-initialized base weights with a zero task-vector delta.
  static ExpertAdapter init(std::string tag, std::size_t d_model, std::size_t hidden, std::size_t rank, Rng& rng) {
    ExpertAdapter e{Matrix(hidden, d_model), Vector(hidden, 0.0), Matrix(d_model, hidden), Vector(d_model, 0.0), {}};
    const double s1 = std::sqrt(2.0 / static_cast<double>(d_model));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
    for (double& v : e.w1.data()) v = rng.normal(0.0, s1);
    for (double& v : e.w2.data()) v = rng.normal(0.0, s2);
    e.task_vector = TaskVector::init(std::move(tag), d_model, hidden, rank, rng);
    return e;
  }
};

/// Activations kept for the expert backward pass.
struct ExpertCache {
  Vector pre;     // W1 h + b1
  Vector act;     // relu(pre)
  Vector down_a;  // down * act
};

inline Vector expert_forward(const ExpertAdapter& e, std::span<const double> h, ExpertCache* cache = nullptr) {
  if (h.size() != e.d_model())
    throw ShapeError("expert_forward: h " + shape_str(h.size()) + " vs expert d_model " + std::to_string(e.d_model()));
  Vector pre = linear_forward(e.w1, e.b1, h);
  Vector act = relu(pre);
  // (W2 + U D) a = W2 a + U (D a); the dense delta is never formed.
  Vector down_a = matvec(e.task_vector.down, act);
  Vector y = linear_forward(e.w2, e.b2, act);
  const Vector delta_out = matvec(e.task_vector.up, down_a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += delta_out[i];
  assert(y.size() == h.size());
  if (cache) *cache = {std::move(pre), std::move(act), std::move(down_a)};
  return y;
}

/// Same layout as `e` with every value zero; used as a gradient buffer.
inline ExpertAdapter zeros_like(const ExpertAdapter& e) {
  ExpertAdapter z = e;
  for (auto* m : {&z.w1, &z.w2, &z.task_vector.down, &z.task_vector.up}) std::fill(m->data().begin(), m->data().end(), 0.0);
  std::fill(z.b1.begin(), z.b1.end(), 0.0);
  std::fill(z.b2.begin(), z.b2.end(), 0.0);
  return z;
}

/// Accumulates parameter gradients for dL/dy = grad_y and returns dL/dh.
inline Vector expert_backward(const ExpertAdapter& e, std::span<const double> h, const ExpertCache& c,
                              std::span<const double> grad_y, ExpertAdapter& g) {
  const auto& tv = e.task_vector;
  add_outer(g.w2, grad_y, c.act);
  axpy(1.0, grad_y, g.b2);
  add_outer(g.task_vector.up, grad_y, c.down_a);
  const Vector ut_g = matvec_t(tv.up, grad_y);
  add_outer(g.task_vector.down, ut_g, c.act);
  Vector grad_act = matvec_t(e.w2, grad_y);
  const Vector from_delta = matvec_t(tv.down, ut_g);
  for (std::size_t i = 0; i < grad_act.size(); ++i) grad_act[i] = c.pre[i] > 0.0 ? grad_act[i] + from_delta[i] : 0.0;
  add_outer(g.w1, grad_act, h);
  axpy(1.0, grad_act, g.b1);
  return matvec_t(e.w1, grad_act);
}

struct ExpertBank {
  Backbone backbone;
  std::vector<ExpertAdapter> experts;
  WeightVector weights;

  std::size_t size() const noexcept { return experts.size(); }
  std::size_t d_model() const noexcept { return backbone.d_model(); }

  void validate() const {
    if (experts.empty()) throw ArgumentError("expert bank has no experts");
    if (weights.size() != experts.size())
      throw ShapeError("expert bank: " + std::to_string(weights.size()) + " weights for " +
                       std::to_string(experts.size()) + " experts");
    for (const auto& e : experts) {
      e.validate();
      if (e.d_model() != backbone.d_model()) throw ShapeError("expert d_model differs from backbone");
    }
  }

  /// All experts start from the same base FFN (drawn once); only their
  /// task vectors differ. Uniform raw weights of 1.0.
  static ExpertBank init(std::size_t d_feat, std::size_t d_model, std::size_t hidden, std::size_t rank, std::size_t n,
                         Rng& rng) {
    if (n == 0) throw ArgumentError("expert bank needs at least one expert");
    ExpertBank bank{Backbone::init(d_feat, d_model, rng), {}, uniform_weights(n)};
    Rng base_rng = rng.fork();
    const ExpertAdapter base = ExpertAdapter::init("base", d_model, hidden, rank, base_rng);
    for (std::size_t i = 0; i < n; ++i) {
      ExpertAdapter e = base;
      const std::string tag = i < dimension_names().size() ? dimension_names()[i] : "expert" + std::to_string(i);
      e.task_vector = TaskVector::init(tag, d_model, hidden, rank, rng);
      bank.experts.push_back(std::move(e));
    }
    return bank;
  }

  std::vector<TaskVector> task_vectors() const {
    std::vector<TaskVector> out;
    for (const auto& e : experts) out.push_back(e.task_vector);
    return out;
  }
};

}  // namespace trinityx
