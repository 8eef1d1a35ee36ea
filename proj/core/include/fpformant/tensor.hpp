#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "fpformant/error.hpp"

namespace fpf {

/// Row-major tensor shape. An empty shape denotes a scalar (size 1).
using Shape = std::vector<std::size_t>;

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;         // empty until the first accumulation
  std::uint64_t producer_tape = 0;  // id of the tape whose op made this node

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
  void accumulate(std::span<const double> g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

/// Dense tensor of 64-bit floats with optional reverse-mode gradient tracking.
///
/// Tensor is a cheap shared handle: copies refer to the same storage. Forward
/// ops executed while a Tape is active record their gradient rules on it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_vector(std::vector<double> values, bool requires_grad = false);
  /// Uniform values in [-bound, bound] drawn from `rng`.
  static Tensor uniform(Shape shape, double bound, std::mt19937_64& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const;
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->data; }
  /// Mutable storage. Editing values that already participate in a recorded
  /// tape invalidates that tape's gradients; intended for initialization and
  /// finite-difference probes.
  std::span<double> values_mut() { return node_->data; }

  /// Scalar read; ContractError unless size() == 1.
  double value() const;
  double operator()(std::size_t i) const { return node_->data[i]; }
  double operator()(std::size_t i, std::size_t j) const {
    return node_->data[i * node_->shape[1] + j];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return node_->data[(i * node_->shape[1] + j) * node_->shape[2] + k];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty span if nothing has flowed into this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  }

  /// Deep copy with no gradient tracking.
  Tensor detached() const;
  /// Deep copy, optionally grad-tracked.
  Tensor clone(bool requires_grad) const;

  detail::TensorNode* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  detail::NodePtr node_;
};

/// Ordered record of executed operations (define-by-run tape).
///
/// Constructing a Tape makes it the active tape for the current thread; the
/// destructor restores the previous one. Ops append themselves in execution
/// order, which is a topological order by construction, and backward() visits
/// each recorded op exactly once in reverse.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse sweep from a scalar loss computed on this tape. Grads of all
  /// tensors this tape produced are reset first, so repeat sweeps are
  /// reproducible; leaf tensors keep accumulating until zero_grad().
  /// Accumulation is a plain sum over all paths and is deterministic.
  void backward(const Tensor& loss);

  /// Drop all recorded ops (keeps the tape active).
  void clear() {
    records_.clear();
    outputs_.clear();
  }
  std::size_t size() const { return records_.size(); }

  static Tape* active();
  void record(std::function<void()> backward_fn, const Tensor& output);

 private:
  std::vector<std::function<void()>> records_;
  std::vector<detail::NodePtr> outputs_;
  std::uint64_t id_ = 0;
  Tape* previous_ = nullptr;
};

// ---- elementwise and structural ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Broadcast-add a row vector [D] over every row of a [T, D] matrix.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);  // -> scalar
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // 2-D
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
/// Repeat row i of `a` repeats[i] times, preserving order (length regulation).
Tensor repeat_rows(const Tensor& a, std::span<const std::int64_t> repeats);
/// Inverted dropout with keep-probability 1-p; identity when p == 0.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

// ---- core numeric ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);
/// 1-D convolution over time with zero-padded "same" boundaries.
/// x: [T, C_in], kernel: [K, C_in, C_out] with odd K, bias: [C_out].
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);
/// Row gather: table [V, D], ids in [0, V). Gradient scatters into the
/// looked-up rows only.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);

// ---- numeric hygiene ----

bool all_finite(const Tensor& a);
void require_finite(const Tensor& a, const char* what);

/// Max relative error between analytic gradients and central finite
/// differences of a scalar-valued function f at x:
///   max_i |analytic_i - cd_i| / max(|analytic_i|, |cd_i|, 1e-8).
/// x must require gradients. Its storage is perturbed element by element
/// during the sweep and restored on exit.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double step = 1e-5);

/// Multi-step variant for functions with ReLU-style kinks: each element's
/// error is the MINIMUM of its single-step errors across `steps`, and the
/// maximum over elements is returned. Central differences carry two
/// step-dependent artifacts that plain backward code does not: a large step
/// can straddle a kink (even reviving a unit that is dead at the center
/// point, where the true subgradient is exactly zero), and a small step
/// loses the secant to floating-point cancellation. Both artifacts move
/// with the step; a genuinely wrong analytic gradient disagrees with the
/// secant at every step, so the per-element minimum isolates real bugs.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, std::span<const double> steps);

}  // namespace fpf
