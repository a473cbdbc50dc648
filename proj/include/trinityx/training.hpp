// Training schedule: backbone pre-training, per-expert fine-tuning, then the
// joint routed phase; importance weights updated once per epoch.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trinityx/adapters.hpp"
#include "trinityx/data.hpp"
#include "trinityx/error.hpp"
#include "trinityx/losses.hpp"
#include "trinityx/model.hpp"
#include "trinityx/rng.hpp"

namespace trinityx {

/// inverse_loss: EMA toward scale / mean task loss per expert.
/// similarity: inner product of each task vector with the reference vector.
enum class GammaMode { inverse_loss, similarity };

struct TrainConfig {
  LossConfig loss;
  /// Leading epochs (out of loss.epochs) spent fine-tuning each expert on
  /// its own dimension; the rest are joint routed epochs.
  std::size_t expert_epochs = 1;
  /// Pre-training passes of the backbone before it is frozen.
  std::size_t backbone_epochs = 2;
  double backbone_lr = 0.5;
  GammaMode gamma_mode = GammaMode::inverse_loss;
  double gamma_scale = 0.1;
  double gamma_ema = 0.5;
  ReferenceMode reference_mode = ReferenceMode::centroid;
  std::size_t reference_index = 0;
  bool train_expert_base = false;

  void validate() const {
    loss.validate();
    if (expert_epochs > loss.epochs) throw ConfigError("expert_epochs exceeds epochs");
    if (!(backbone_lr > 0)) throw ConfigError("backbone_lr must be > 0");
    if (!(gamma_scale > 0)) throw ConfigError("gamma_scale must be > 0");
    if (!(gamma_ema >= 0 && gamma_ema <= 1)) throw ConfigError("gamma_ema must be in [0, 1]");
  }
};

struct FeaturizedExample {
  Vector features;
  Target target;
};

struct EpochRecord {
  std::string phase;                // "experts" or "joint"
  LossBreakdown loss;               // composite loss on the training split after the epoch
  LossBreakdown step_mean;          // mean over the optimizer steps of the epoch
  Vector expert_task_loss;          // mean task loss per dimension during the epoch
  Vector gamma_raw;
  Vector gamma;                     // normalized, after the end-of-epoch update
  double routing_accuracy = 0.0;    // training split, after the epoch
  double task_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double routing_accuracy = 0.0;  // final, training split
  double task_accuracy = 0.0;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"task", l.task}, {"entropy", l.entropy}, {"kl", l.kl}, {"gating", l.gating}, {"total", l.total}};
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"phase", e.phase},
                      {"loss", to_json(e.loss)},
                      {"step_mean", to_json(e.step_mean)},
                      {"expert_task_loss", e.expert_task_loss},
                      {"gamma_raw", e.gamma_raw},
                      {"gamma", e.gamma},
                      {"routing_accuracy", e.routing_accuracy},
                      {"task_accuracy", e.task_accuracy}});
  return {{"epochs", epochs}, {"routing_accuracy", r.routing_accuracy}, {"task_accuracy", r.task_accuracy}};
}

/// Hidden states through the (frozen) backbone.
inline std::vector<HiddenExample> project(const Backbone& bb, std::span<const FeaturizedExample> data) {
  std::vector<HiddenExample> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back({input_projection(bb, d.features), d.target});
  return out;
}

/// Eval-mode prediction for one hidden state.
struct Prediction {
  RouteTrace trace;
  Vector class_probs;
  std::size_t predicted_class = 0;
  std::size_t argmax_expert = 0;
};

inline Prediction predict(const Model& m, std::span<const double> h) {
  Rng unused(0);
  Prediction p;
  p.trace = route_forward(m.router, h, m.bank, Mode::eval, unused);
  p.class_probs = softmax_temperature(linear_forward(m.head.w, m.head.b, p.trace.y_cal), 1.0);
  p.predicted_class = argmax(p.class_probs);
  p.argmax_expert = argmax(p.trace.probs);
  return p;
}

struct Accuracy {
  double routing = 0.0;
  double task = 0.0;
};

inline Accuracy accuracy(const Model& m, std::span<const HiddenExample> data) {
  if (data.empty()) return {};
  std::size_t route_ok = 0, task_ok = 0;
  for (const auto& ex : data) {
    const Prediction p = predict(m, ex.h);
    route_ok += p.argmax_expert == ex.target.dim_label;
    task_ok += p.predicted_class == ex.target.class_label;
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(route_ok) / n, static_cast<double>(task_ok) / n};
}

/// Composite loss over `data` in fixed order, eval mode, batches of
/// `cfg.batch_size` with the batch-mean pi carried as pi_prev.
inline LossBreakdown evaluate_loss(const Model& m, std::span<const HiddenExample> data, const LossConfig& cfg) {
  if (data.empty()) throw ArgumentError("evaluate_loss: no examples");
  Rng unused(0);
  Vector prev(m.bank.size(), 1.0 / static_cast<double>(m.bank.size()));
  LossBreakdown sum;
  for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
    std::vector<const HiddenExample*> batch;
    for (std::size_t i = start; i < std::min(data.size(), start + cfg.batch_size); ++i) batch.push_back(&data[i]);
    BatchResult r = batch_loss(m, batch, prev, cfg, Mode::eval, unused, nullptr);
    r.mean *= static_cast<double>(batch.size());
    sum += r.mean;
    prev = r.mean_probs;
  }
  sum /= static_cast<double>(data.size());
  return sum;
}

inline void sgd_step(Model& m, const Model& grad, const Trainable& t, double lr) {
  std::vector<std::span<const double>> grads;
  for_each_trainable(grad, t, [&](std::span<const double> s) { grads.push_back(s); });
  std::size_t k = 0;
  for_each_trainable(m, t, [&](std::span<double> s) { axpy(-lr, grads[k++], s); });
}

/// Fits the backbone projection with a throwaway linear head on the joint
/// (dimension, class) label of the pooled corpus, then freezes it.
inline void pretrain_backbone(Backbone& bb, std::span<const FeaturizedExample> data, std::size_t n_dims,
                              std::size_t n_classes, std::size_t epochs, double lr, std::size_t batch_size, Rng& rng) {
  if (epochs == 0 || data.empty()) {
    bb.frozen = true;
    return;
  }
  const std::size_t n_out = n_dims * n_classes, d = bb.d_model();
  Matrix head(n_out, d);
  for (double& v : head.data()) v = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Vector head_b(n_out, 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      Matrix g_w(d, bb.d_feat()), g_head(n_out, d);
      Vector g_b(d, 0.0), g_head_b(n_out, 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = data[order[k]];
        const Vector h = input_projection(bb, ex.features);
        const Vector p = softmax_temperature(linear_forward(head, head_b, h), 1.0);
        const std::size_t label = ex.target.dim_label * n_classes + ex.target.class_label;
        Vector g_logits = p;
        g_logits[label] -= 1.0;
        for (double& v : g_logits) v *= scale;
        add_outer(g_head, g_logits, h);
        axpy(1.0, g_logits, g_head_b);
        Vector g_h = matvec_t(head, g_logits);
        for (std::size_t i = 0; i < d; ++i) g_h[i] *= 1.0 - h[i] * h[i];
        add_outer(g_w, g_h, ex.features);
        axpy(1.0, g_h, g_b);
      }
      axpy(-lr, g_w.data(), bb.w_in.data());
      axpy(-lr, g_b, bb.b_in);
      axpy(-lr, g_head.data(), head.data());
      axpy(-lr, g_head_b, head_b);
    }
  }
  bb.frozen = true;
}

inline WeightVector recompute_gamma(const Model& m, const TrainConfig& cfg, std::span<const double> expert_losses) {
  if (cfg.gamma_mode == GammaMode::inverse_loss)
    return update_task_weights(m.bank.weights, expert_losses, cfg.gamma_scale, cfg.gamma_ema);
  const auto tvs = m.bank.task_vectors();
  ReferenceSpec spec{cfg.reference_mode, cfg.reference_index, std::nullopt};
  const TaskVector ref = reference_vector(tvs, spec);
  Vector raw;
  for (const auto& t : tvs) raw.push_back(similarity(t, ref));
  return normalize_weights(raw);
}

/// Runs the full schedule on the training examples. Deterministic for a
/// given rng seed: all randomness (backbone init aside) comes from `rng`.
inline TrainReport train(Model& m, std::span<const FeaturizedExample> corpus, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  m.validate();
  if (corpus.empty()) throw ArgumentError("train: empty corpus");
  const std::size_t n = m.bank.size();
  for (const auto& ex : corpus) {
    if (ex.target.dim_label >= n) throw IndexError("train: dimension label out of range");
    if (ex.target.class_label >= m.n_classes()) throw IndexError("train: class label out of range");
  }
  m.router.renormalize_alpha = cfg.loss.renormalize_alpha;

  if (!m.bank.backbone.frozen || cfg.backbone_epochs > 0)
    pretrain_backbone(m.bank.backbone, corpus, n, m.n_classes(), cfg.backbone_epochs, cfg.backbone_lr,
                      cfg.loss.batch_size, rng);
  const std::vector<HiddenExample> data = project(m.bank.backbone, corpus);

  TrainReport report;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Vector prev(n, 1.0 / static_cast<double>(n));
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.loss.epochs; ++epoch) {
    const bool expert_phase = epoch < cfg.expert_epochs;
    Trainable trainable{!expert_phase, true, true, cfg.train_expert_base, true, {}};
    rng.shuffle(order);
    Vector loss_sum(n, 0.0), loss_count(n, 0.0);
    LossBreakdown step_sum;
    std::size_t steps = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.loss.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.loss.batch_size);
      std::vector<const HiddenExample*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&data[order[k]]);
      Model grad = zeros_like(m);
      LossBreakdown mean;
      const std::string where = " at step " + std::to_string(step + 1) + " (epoch " + std::to_string(epoch + 1) + ")";
      try {
        if (expert_phase) {
          // Each example only reaches the expert of its own dimension.
          const double inv_b = 1.0 / static_cast<double>(batch.size());
          for (const HiddenExample* ex : batch) {
            Vector onehot(n, 0.0);
            onehot[ex->target.dim_label] = 1.0;
            const ExampleForward f = forward_example(m, ex->h, ex->target, prev, cfg.loss, Mode::train, rng, onehot);
            backward_example(m, ex->h, f, ex->target, prev, cfg.loss, inv_b, grad, false, true);
            LossBreakdown p{f.parts.task, 0.0, 0.0, 0.0, f.parts.task};
            p /= static_cast<double>(batch.size());
            mean += p;
            loss_sum[ex->target.dim_label] += f.parts.task;
            loss_count[ex->target.dim_label] += 1.0;
          }
        } else {
          BatchResult r = batch_loss(m, batch, prev, cfg.loss, Mode::train, rng, &grad);
          for (std::size_t b = 0; b < batch.size(); ++b) {
            loss_sum[batch[b]->target.dim_label] += r.forwards[b].parts.task;
            loss_count[batch[b]->target.dim_label] += 1.0;
          }
          mean = r.mean;
          prev = r.mean_probs;
        }
      } catch (const NumericalError& e) {
        throw NumericalError(std::string("train: ") + e.what() + where);
      }
      ++step;
      if (!std::isfinite(mean.total)) throw NumericalError("train: non-finite loss" + where);
      sgd_step(m, grad, trainable, cfg.loss.learning_rate);
      step_sum += mean;
      ++steps;
    }

    EpochRecord rec;
    rec.phase = expert_phase ? "experts" : "joint";
    step_sum /= static_cast<double>(steps);
    rec.step_mean = step_sum;
    rec.expert_task_loss.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      rec.expert_task_loss[i] = loss_count[i] > 0 ? loss_sum[i] / loss_count[i] : 1.0;
    m.bank.weights = recompute_gamma(m, cfg, rec.expert_task_loss);
    rec.gamma_raw = m.bank.weights.raw;
    rec.gamma = m.bank.weights.normalized;
    try {
      rec.loss = evaluate_loss(m, data, cfg.loss);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("train: ") + e.what() + " after step " + std::to_string(step));
    }
    const Accuracy acc = accuracy(m, data);
    rec.routing_accuracy = acc.routing;
    rec.task_accuracy = acc.task;
    report.epochs.push_back(std::move(rec));
  }
  report.routing_accuracy = report.epochs.back().routing_accuracy;
  report.task_accuracy = report.epochs.back().task_accuracy;
  return report;
}

}  // namespace trinityx
