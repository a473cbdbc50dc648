// Low-rank task vectors: one behavioral delta per alignment dimension,
// their similarity weighting, negation and the naive (diagnostic) merge.
#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "trinityx/binary_io.hpp"
#include "trinityx/error.hpp"
#include "trinityx/rng.hpp"
#include "trinityx/tensor.hpp"

namespace trinityx {

/// Floor applied to raw importance weights so they stay strictly positive.
inline constexpr double kPositiveFloor = 1e-8;

/// Delta = up * down, with down (rank x d_in) and up (d_out x rank). The
/// delta has the shape of the weight matrix it is added to.
struct TaskVector {
  std::string tag;
  Matrix down;
  Matrix up;

  TaskVector() = default;
  TaskVector(std::string tag_, Matrix down_, Matrix up_) : tag(std::move(tag_)), down(std::move(down_)), up(std::move(up_)) {
    validate();
  }

  /// LoRA-style start: `down` small Gaussian, `up` zero, so the delta is 0.
  static TaskVector init(std::string tag, std::size_t d_out, std::size_t d_in, std::size_t rank, Rng& rng,
                         double stddev = 0.1) {
    Matrix down(rank, d_in);
    for (double& v : down.data()) v = rng.normal(0.0, stddev);
    return TaskVector(std::move(tag), std::move(down), Matrix(d_out, rank));
  }

  std::size_t d_out() const noexcept { return up.rows(); }
  std::size_t d_in() const noexcept { return down.cols(); }
  std::size_t rank() const noexcept { return down.rows(); }
  bool same_delta_shape(const TaskVector& o) const noexcept { return d_out() == o.d_out() && d_in() == o.d_in(); }

  void validate() const {
    if (down.rows() != up.cols() || down.rows() == 0 || down.cols() == 0 || up.rows() == 0)
      throw ShapeError("task vector factors inconsistent: down " + shape_str(down.rows(), down.cols()) + ", up " +
                       shape_str(up.rows(), up.cols()));
    if (!all_finite(down.data()) || !all_finite(up.data()))
      throw NumericalError("task vector '" + tag + "' has non-finite entries");
  }
};

inline Matrix delta_weight(const TaskVector& t) {
  t.validate();
  return matmul(t.up, t.down);
}

/// Frobenius inner product of the dense deltas, clamped below at kPositiveFloor.
inline double similarity(const TaskVector& t, const TaskVector& ref) {
  if (!t.same_delta_shape(ref))
    throw ShapeError("similarity: delta " + shape_str(t.d_out(), t.d_in()) + " vs " + shape_str(ref.d_out(), ref.d_in()));
  return std::max(frobenius(delta_weight(t), delta_weight(ref)), kPositiveFloor);
}

/// Flips the sign of `up`, so the delta flips sign exactly.
inline TaskVector negate(const TaskVector& t) {
  TaskVector out = t;
  for (double& v : out.up.data()) v = -v;
  return out;
}

enum class ReferenceMode { centroid, index, external };

struct ReferenceSpec {
  ReferenceMode mode = ReferenceMode::centroid;
  std::size_t index = 0;
  std::optional<TaskVector> external;
};

/// Reference task vector for similarity weighting.
///
/// centroid: mean of the dense deltas. The mean is re-expressed as a
///   low-rank pair without loss: if the stacked rank R = sum of ranks is at
///   most min(d_out, d_in), up = [up_1 ... up_n] / n and
///   down = [down_1; ...; down_n] (rank R); otherwise the mean delta itself
///   becomes one factor and an identity the other (rank min(d_out, d_in)).
/// index: copy of bank[index].
/// external: the user-supplied vector.
inline TaskVector reference_vector(std::span<const TaskVector> bank, const ReferenceSpec& spec = {}) {
  if (bank.empty()) throw ArgumentError("reference_vector: empty task-vector bank");
  const TaskVector& first = bank.front();
  for (const auto& t : bank)
    if (!t.same_delta_shape(first)) throw ShapeError("reference_vector: mixed delta shapes in bank");
  const std::size_t d_out = first.d_out(), d_in = first.d_in();
  switch (spec.mode) {
    case ReferenceMode::index:
      if (spec.index >= bank.size())
        throw IndexError("reference_vector: index " + std::to_string(spec.index) + " out of range");
      return bank[spec.index];
    case ReferenceMode::external:
      if (!spec.external) throw ArgumentError("reference_vector: external mode needs a vector");
      if (!spec.external->same_delta_shape(first)) throw ShapeError("reference_vector: external shape mismatch");
      return *spec.external;
    case ReferenceMode::centroid:
      break;
  }
  const double inv_n = 1.0 / static_cast<double>(bank.size());
  std::size_t total_rank = 0;
  for (const auto& t : bank) total_rank += t.rank();
  if (total_rank <= std::min(d_out, d_in)) {
    Matrix down(total_rank, d_in), up(d_out, total_rank);
    std::size_t off = 0;
    for (const auto& t : bank) {
      for (std::size_t r = 0; r < t.rank(); ++r) {
        for (std::size_t c = 0; c < d_in; ++c) down(off + r, c) = t.down(r, c);
        for (std::size_t c = 0; c < d_out; ++c) up(c, off + r) = t.up(c, r) * inv_n;
      }
      off += t.rank();
    }
    return TaskVector("reference", std::move(down), std::move(up));
  }
  Matrix mean(d_out, d_in);
  for (const auto& t : bank) mean += delta_weight(t);
  mean *= inv_n;
  if (d_in <= d_out) return TaskVector("reference", Matrix::identity(d_in), std::move(mean));
  return TaskVector("reference", std::move(mean), Matrix::identity(d_out));
}

/// Raw (gamma) and normalized (gamma tilde) importance weights.
struct WeightVector {
  Vector raw;
  Vector normalized;

  std::size_t size() const noexcept { return raw.size(); }
};

inline WeightVector normalize_weights(std::span<const double> raw) {
  if (raw.empty()) throw ArgumentError("normalize_weights: no weights");
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!(raw[i] >= kPositiveFloor))
      throw DomainError("normalize_weights: raw weight " + std::to_string(i) + " = " + std::to_string(raw[i]) +
                        " below positivity floor");
    total += raw[i];
  }
  WeightVector w{Vector(raw.begin(), raw.end()), Vector(raw.size())};
  for (std::size_t i = 0; i < raw.size(); ++i) w.normalized[i] = raw[i] / total;
  return w;
}

/// Uniform start: every raw weight 1.0.
inline WeightVector uniform_weights(std::size_t n) { return normalize_weights(Vector(n, 1.0)); }

/// theta0 + sum of deltas. Diagnostic only: shows what additive merging does.
inline Matrix naive_merge(const Matrix& theta0, std::span<const Matrix> deltas) {
  Matrix out = theta0;
  for (const auto& d : deltas) {
    if (!d.same_shape(theta0))
      throw ShapeError("naive_merge: delta " + shape_str(d.rows(), d.cols()) + " vs base " +
                       shape_str(theta0.rows(), theta0.cols()));
    out += d;
  }
  return out;
}

// TVX1 container: "TVX1", u64 d_out, u64 d_in, u64 rank, u64 tag length +
// UTF-8 bytes, then down (rank x d_in) and up (d_out x rank) as row-major
// little-endian f64.

inline void write_task_vector(std::ostream& os, const TaskVector& t) {
  binio::write_magic(os, "TVX1");
  binio::write_u64(os, t.d_out());
  binio::write_u64(os, t.d_in());
  binio::write_u64(os, t.rank());
  binio::write_string(os, t.tag);
  binio::write_values(os, t.down.data());
  binio::write_values(os, t.up.data());
}

inline TaskVector read_task_vector(std::istream& is) {
  binio::expect_magic(is, "TVX1");
  const auto d_out = binio::read_u64(is);
  const auto d_in = binio::read_u64(is);
  const auto r = binio::read_u64(is);
  constexpr std::uint64_t kMaxDim = 1u << 16;
  if (d_out == 0 || d_in == 0 || r == 0 || d_out > kMaxDim || d_in > kMaxDim || r > kMaxDim)
    throw IoError("TVX1: implausible shape");
  std::string tag = binio::read_string(is);
  Matrix down(r, d_in, binio::read_values(is, r * d_in));
  Matrix up(d_out, r, binio::read_values(is, d_out * r));
  return TaskVector(std::move(tag), std::move(down), std::move(up));
}

}  // namespace trinityx
