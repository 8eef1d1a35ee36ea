#include "fpformant/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <utility>

namespace fpf {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void check_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " tensor, got shape " +
                         shape_str(a.shape()));
  }
}

}  // namespace

namespace {

Tensor make_op_output(Shape shape, std::vector<double> values,
                      bool requires_grad) {
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

}  // namespace

// ---- Tensor ----

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_size(shape)) {
    throw DimensionError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::uniform(Shape shape, double bound, std::mt19937_64& rng,
                       bool requires_grad) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::size_t n = shape_size(shape);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("dim: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

double Tensor::value() const {
  if (node_->data.size() != 1) {
    throw ContractError("value: tensor of shape " + shape_str(node_->shape) +
                        " is not a scalar");
  }
  return node_->data[0];
}

Tensor Tensor::detached() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

// ---- Tape ----

namespace {
std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace

Tape::Tape() : id_(next_tape_id()) {
  previous_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn, const Tensor& output) {
  output.node()->producer_tape = id_;
  records_.push_back(std::move(backward_fn));
  outputs_.push_back(output.node_ptr());
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss of shape " + shape_str(loss.shape()) +
                        " is not a scalar");
  }
  if (loss.node()->producer_tape != id_) {
    throw ContractError("backward: loss was not computed on this tape");
  }
  for (const auto& node : outputs_) {
    if (!node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

namespace {

/// True when the op should record a backward rule: some input needs
/// gradients and a tape is listening.
bool tracing(bool requires_grad) {
  return requires_grad && Tape::active() != nullptr;
}

/// Output-grad span for a closure; empty when no gradient reached the output.
std::span<const double> out_grad(const detail::NodePtr& out) {
  return out->grad;
}

}  // namespace

// ---- elementwise and structural ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::size_t n = a.size();
  std::vector<double> v(n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] + pb[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, bn, on] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (an->requires_grad) an->accumulate(g);
          if (bn->requires_grad) bn->accumulate(g);
        },
        out);
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::size_t n = a.size();
  std::vector<double> v(n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] - pb[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, bn, on] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (an->requires_grad) an->accumulate(g);
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
          }
        },
        out);
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::size_t n = a.size();
  std::vector<double> v(n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * pb[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, bn, on] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
              an->grad[i] += g[i] * bn->data[i];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
              bn->grad[i] += g[i] * an->data[i];
          }
        },
        out);
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  std::size_t n = a.size();
  std::vector<double> v(n);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * factor;
  bool rg = a.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on, factor] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            an->grad[i] += g[i] * factor;
        },
        out);
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double value) {
  std::size_t n = a.size();
  std::vector<double> v(n);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] + value;
  bool rg = a.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on] {
          auto g = out_grad(on);
          if (!g.empty()) an->accumulate(g);
        },
        out);
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  check_rank(a, 2, "add_row");
  check_rank(row, 1, "add_row");
  std::size_t t = a.dim(0), d = a.dim(1);
  if (row.dim(0) != d) {
    throw DimensionError("add_row: row of shape " + shape_str(row.shape()) +
                         " does not match matrix " + shape_str(a.shape()));
  }
  std::vector<double> v(t * d);
  const double* pa = a.values().data();
  const double* pr = row.values().data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = pa[i * d + j] + pr[j];
  bool rg = a.requires_grad() || row.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), rn = row.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, rn, on, t, d] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (an->requires_grad) an->accumulate(g);
          if (rn->requires_grad) {
            rn->ensure_grad();
            for (std::size_t i = 0; i < t; ++i)
              for (std::size_t j = 0; j < d; ++j) rn->grad[j] += g[i * d + j];
          }
        },
        out);
  }
  return out;
}

Tensor relu(const Tensor& a) {
  std::size_t n = a.size();
  std::vector<double> v(n);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  bool rg = a.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            if (an->data[i] > 0.0) an->grad[i] += g[i];
        },
        out);
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  bool rg = a.requires_grad();
  Tensor out = make_op_output(Shape{}, {acc}, rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          for (double& gi : an->grad) gi += g[0];
        },
        out);
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  }
  bool rg = a.requires_grad();
  Tensor out = make_op_output(std::move(shape),
                              std::vector<double>(a.values().begin(),
                                                  a.values().end()),
                              rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on] {
          auto g = out_grad(on);
          if (!g.empty()) an->accumulate(g);
        },
        out);
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check_rank(a, 2, "transpose");
  std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> v(r * c);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = pa[i * c + j];
  bool rg = a.requires_grad();
  Tensor out = make_op_output(Shape{c, r}, std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on, r, c] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              an->grad[i * c + j] += g[j * r + i];
        },
        out);
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  check_rank(a, 2, "slice_cols");
  std::size_t t = a.dim(0), d = a.dim(1);
  if (begin > end || end > d) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for width " +
                         std::to_string(d));
  }
  std::size_t w = end - begin;
  std::vector<double> v(t * w);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = pa[i * d + begin + j];
  bool rg = a.requires_grad();
  Tensor out = make_op_output(Shape{t, w}, std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on, t, d, w, begin] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < w; ++j)
              an->grad[i * d + begin + j] += g[i * w + j];
        },
        out);
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no tensors given");
  std::size_t t = 0, total = 0;
  bool rg = false;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    check_rank(parts[p], 2, "concat_cols");
    if (p == 0) {
      t = parts[p].dim(0);
    } else if (parts[p].dim(0) != t) {
      throw DimensionError("concat_cols: row count mismatch " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(parts[p].shape()));
    }
    total += parts[p].dim(1);
    rg = rg || parts[p].requires_grad();
  }
  std::vector<double> v(t * total);
  std::size_t off = 0;
  for (const Tensor& part : parts) {
    std::size_t w = part.dim(1);
    const double* pp = part.values().data();
    for (std::size_t i = 0; i < t; ++i)
      std::memcpy(v.data() + i * total + off, pp + i * w, w * sizeof(double));
    off += w;
  }
  Tensor out = make_op_output(Shape{t, total}, std::move(v), rg);
  if (tracing(rg)) {
    std::vector<detail::NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& part : parts) nodes.push_back(part.node_ptr());
    auto on = out.node_ptr();
    Tape::active()->record(
        [nodes, on, t, total] {
          auto g = out_grad(on);
          if (g.empty()) return;
          std::size_t off = 0;
          for (const auto& node : nodes) {
            std::size_t w = node->shape[1];
            if (node->requires_grad) {
              node->ensure_grad();
              for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < w; ++j)
                  node->grad[i * w + j] += g[i * total + off + j];
            }
            off += w;
          }
        },
        out);
  }
  return out;
}

Tensor repeat_rows(const Tensor& a, std::span<const std::int64_t> repeats) {
  check_rank(a, 2, "repeat_rows");
  std::size_t t = a.dim(0), d = a.dim(1);
  if (repeats.size() != t) {
    throw DimensionError("repeat_rows: " + std::to_string(repeats.size()) +
                         " repeat counts for " + std::to_string(t) + " rows");
  }
  std::size_t total = 0;
  for (std::int64_t r : repeats) {
    if (r < 0)
      throw ContractError("repeat_rows: negative repeat count " +
                          std::to_string(r));
    total += static_cast<std::size_t>(r);
  }
  if (total == 0)
    throw ContractError("repeat_rows: all repeat counts are zero");
  std::vector<double> v(total * d);
  const double* pa = a.values().data();
  std::size_t o = 0;
  for (std::size_t i = 0; i < t; ++i)
    for (std::int64_t r = 0; r < repeats[i]; ++r, ++o)
      std::memcpy(v.data() + o * d, pa + i * d, d * sizeof(double));
  bool rg = a.requires_grad();
  Tensor out = make_op_output(Shape{total, d}, std::move(v), rg);
  if (tracing(rg)) {
    std::vector<std::int64_t> reps(repeats.begin(), repeats.end());
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on, reps, d] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          std::size_t o = 0;
          for (std::size_t i = 0; i < reps.size(); ++i)
            for (std::int64_t r = 0; r < reps[i]; ++r, ++o)
              for (std::size_t j = 0; j < d; ++j)
                an->grad[i * d + j] += g[o * d + j];
        },
        out);
  }
  return out;
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: probability " + std::to_string(p) +
                      " outside [0, 1)");
  }
  if (p == 0.0) return a;
  std::size_t n = a.size();
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(n);
  double inv_keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) mask[i] = keep(rng) ? inv_keep : 0.0;
  std::vector<double> v(n);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = pa[i] * mask[i];
  bool rg = a.requires_grad();
  Tensor out = make_op_output(a.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on, mask = std::move(mask)] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i)
            an->grad[i] += g[i] * mask[i];
        },
        out);
  }
  return out;
}

// ---- core numeric ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> v(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* vrow = v.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) vrow[j] += av * brow[j];
    }
  }
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = make_op_output(Shape{m, n}, std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, bn, on, m, k, n] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (an->requires_grad) {
            // dA = dC * B^T
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
              const double* grow = g.data() + i * n;
              double* darow = an->grad.data() + i * k;
              for (std::size_t p = 0; p < k; ++p) {
                const double* brow = bn->data.data() + p * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                darow[p] += acc;
              }
            }
          }
          if (bn->requires_grad) {
            // dB = A^T * dC
            bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
              const double* arow = an->data.data() + i * k;
              const double* grow = g.data() + i * n;
              for (std::size_t p = 0; p < k; ++p) {
                double av = arow[p];
                double* dbrow = bn->grad.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
              }
            }
          }
        },
        out);
  }
  return out;
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(a.shape()));
  }
  const Shape& s = a.shape();
  std::size_t outer = 1, inner = 1, n = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::vector<double> v(a.size());
  const double* pa = a.values().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      std::size_t base = o * n * inner + r;
      double mx = pa[base];
      for (std::size_t i = 1; i < n; ++i)
        mx = std::max(mx, pa[base + i * inner]);
      double denom = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(pa[base + i * inner] - mx);
        v[base + i * inner] = e;
        denom += e;
      }
      double inv = 1.0 / denom;
      for (std::size_t i = 0; i < n; ++i) v[base + i * inner] *= inv;
    }
  }
  bool rg = a.requires_grad();
  Tensor out = make_op_output(s, std::move(v), rg);
  if (tracing(rg)) {
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [an, on, outer, inner, n] {
          auto g = out_grad(on);
          if (g.empty()) return;
          an->ensure_grad();
          const double* y = on->data.data();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t r = 0; r < inner; ++r) {
              std::size_t base = o * n * inner + r;
              double dot = 0.0;
              for (std::size_t i = 0; i < n; ++i)
                dot += g[base + i * inner] * y[base + i * inner];
              for (std::size_t i = 0; i < n; ++i) {
                std::size_t idx = base + i * inner;
                an->grad[idx] += y[idx] * (g[idx] - dot);
              }
            }
          }
        },
        out);
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() == 0) {
    throw DimensionError("layer_norm: scalar input has no feature axis");
  }
  std::size_t d = x.shape().back();
  check_rank(gain, 1, "layer_norm");
  check_rank(bias, 1, "layer_norm");
  if (gain.dim(0) != d || bias.dim(0) != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) +
                         " / bias " + shape_str(bias.shape()) +
                         " do not match feature width " + std::to_string(d));
  }
  std::size_t rows = x.size() / d;
  std::vector<double> v(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* px = x.values().data();
  const double* pg = gain.values().data();
  const double* pb = bias.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      double h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      v[r * d + j] = h * pg[j] + pb[j];
    }
  }
  bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor out = make_op_output(x.shape(), std::move(v), rg);
  if (tracing(rg)) {
    auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr(),
         on = out.node_ptr();
    Tape::active()->record(
        [xn, gn, bn, on, rows, d, xhat = std::move(xhat),
         inv_std = std::move(inv_std)] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < d; ++j)
                gn->grad[j] += g[r * d + j] * xhat[r * d + j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[r * d + j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            const double* pg = gn->data.data();
            double invd = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
              double mean_gy = 0.0, mean_gyxhat = 0.0;
              for (std::size_t j = 0; j < d; ++j) {
                double gy = g[r * d + j] * pg[j];
                mean_gy += gy;
                mean_gyxhat += gy * xhat[r * d + j];
              }
              mean_gy *= invd;
              mean_gyxhat *= invd;
              for (std::size_t j = 0; j < d; ++j) {
                double gy = g[r * d + j] * pg[j];
                xn->grad[r * d + j] +=
                    inv_std[r] *
                    (gy - mean_gy - xhat[r * d + j] * mean_gyxhat);
              }
            }
          }
        },
        out);
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  check_rank(x, 2, "conv1d");
  check_rank(kernel, 3, "conv1d");
  check_rank(bias, 1, "conv1d");
  std::size_t t = x.dim(0), cin = x.dim(1);
  std::size_t kk = kernel.dim(0), kci = kernel.dim(1), cout = kernel.dim(2);
  if (kci != cin) {
    throw DimensionError("conv1d: kernel " + shape_str(kernel.shape()) +
                         " does not match input channels " +
                         std::to_string(cin));
  }
  if (bias.dim(0) != cout) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) +
                         " does not match output channels " +
                         std::to_string(cout));
  }
  if (kk % 2 == 0) {
    throw ConfigError("conv1d: kernel width " + std::to_string(kk) +
                      " must be odd for same-padding");
  }
  std::size_t half = kk / 2;
  std::vector<double> v(t * cout);
  const double* px = x.values().data();
  const double* pw = kernel.values().data();
  const double* pb = bias.values().data();
  for (std::size_t i = 0; i < t; ++i) {
    double* orow = v.data() + i * cout;
    for (std::size_t co = 0; co < cout; ++co) orow[co] = pb[co];
    for (std::size_t k = 0; k < kk; ++k) {
      std::ptrdiff_t s = static_cast<std::ptrdiff_t>(i + k) -
                         static_cast<std::ptrdiff_t>(half);
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(t)) continue;
      const double* xrow = px + static_cast<std::size_t>(s) * cin;
      const double* wk = pw + k * cin * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        double xv = xrow[ci];
        if (xv == 0.0) continue;
        const double* wrow = wk + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
      }
    }
  }
  bool rg =
      x.requires_grad() || kernel.requires_grad() || bias.requires_grad();
  Tensor out = make_op_output(Shape{t, cout}, std::move(v), rg);
  if (tracing(rg)) {
    auto xn = x.node_ptr(), wn = kernel.node_ptr(), bn = bias.node_ptr(),
         on = out.node_ptr();
    Tape::active()->record(
        [xn, wn, bn, on, t, cin, kk, cout, half] {
          auto g = out_grad(on);
          if (g.empty()) return;
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < t; ++i)
              for (std::size_t co = 0; co < cout; ++co)
                bn->grad[co] += g[i * cout + co];
          }
          bool need_x = xn->requires_grad, need_w = wn->requires_grad;
          if (!need_x && !need_w) return;
          if (need_x) xn->ensure_grad();
          if (need_w) wn->ensure_grad();
          const double* pw = wn->data.data();
          for (std::size_t i = 0; i < t; ++i) {
            const double* grow = g.data() + i * cout;
            for (std::size_t k = 0; k < kk; ++k) {
              std::ptrdiff_t s = static_cast<std::ptrdiff_t>(i + k) -
                                 static_cast<std::ptrdiff_t>(half);
              if (s < 0 || s >= static_cast<std::ptrdiff_t>(t)) continue;
              std::size_t su = static_cast<std::size_t>(s);
              for (std::size_t ci = 0; ci < cin; ++ci) {
                if (need_w) {
                  double xv = xn->data[su * cin + ci];
                  double* dwrow = wn->grad.data() + (k * cin + ci) * cout;
                  for (std::size_t co = 0; co < cout; ++co)
                    dwrow[co] += xv * grow[co];
                }
                if (need_x) {
                  const double* wrow = pw + (k * cin + ci) * cout;
                  double acc = 0.0;
                  for (std::size_t co = 0; co < cout; ++co)
                    acc += wrow[co] * grow[co];
                  xn->grad[su * cin + ci] += acc;
                }
              }
            }
          }
        },
        out);
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table,
                        std::span<const std::int64_t> ids) {
  check_rank(table, 2, "embedding_lookup");
  std::size_t vocab = table.dim(0), d = table.dim(1);
  for (std::int64_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InputError("embedding_lookup: id " + std::to_string(id) +
                       " outside table of " + std::to_string(vocab) +
                       " rows");
    }
  }
  std::vector<double> v(ids.size() * d);
  const double* pt = table.values().data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::memcpy(v.data() + i * d,
                pt + static_cast<std::size_t>(ids[i]) * d,
                d * sizeof(double));
  bool rg = table.requires_grad();
  Tensor out = make_op_output(Shape{ids.size(), d}, std::move(v), rg);
  if (tracing(rg)) {
    std::vector<std::int64_t> idv(ids.begin(), ids.end());
    auto tn = table.node_ptr(), on = out.node_ptr();
    Tape::active()->record(
        [tn, on, idv = std::move(idv), d] {
          auto g = out_grad(on);
          if (g.empty()) return;
          tn->ensure_grad();
          for (std::size_t i = 0; i < idv.size(); ++i) {
            double* trow =
                tn->grad.data() + static_cast<std::size_t>(idv[i]) * d;
            for (std::size_t j = 0; j < d; ++j) trow[j] += g[i * d + j];
          }
        },
        out);
  }
  return out;
}

// ---- numeric hygiene ----

bool all_finite(const Tensor& a) {
  for (double x : a.values())
    if (!std::isfinite(x)) return false;
  return true;
}

void require_finite(const Tensor& a, const char* what) {
  if (!all_finite(a)) {
    throw NumericError(std::string(what) + ": non-finite value encountered");
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, std::span<const double> steps) {
  if (!x.requires_grad()) {
    throw ContractError("grad_check: probe tensor does not require gradients");
  }
  if (steps.empty()) {
    throw ContractError("grad_check: no finite-difference steps given");
  }
  for (double step : steps) {
    if (step <= 0.0) {
      throw ContractError("grad_check: step must be positive");
    }
  }
  auto eval = [&f](const Tensor& probe) {
    Tensor out = f(probe);
    if (out.size() != 1) {
      throw ContractError("grad_check: function output of shape " +
                          shape_str(out.shape()) + " is not a scalar");
    }
    require_finite(out, "grad_check function output");
    return out;
  };

  Tensor probe = x;  // same storage, non-const handle
  std::vector<double> analytic(x.size(), 0.0);
  {
    Tape tape;
    Tensor out = eval(probe);
    probe.zero_grad();
    tape.backward(out);
    auto g = probe.grad();
    for (std::size_t i = 0; i < g.size(); ++i) analytic[i] = g[i];
  }

  auto vals = probe.values_mut();
  // Per element, keep the smallest error over the step list; an element's
  // analytic gradient is wrong only if no step agrees with it.
  std::vector<double> best(vals.size(),
                           std::numeric_limits<double>::infinity());
  for (double step : steps) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + step;
      double fp = eval(probe).value();
      vals[i] = orig - step;
      double fm = eval(probe).value();
      vals[i] = orig;
      double cd = (fp - fm) / (2.0 * step);
      double denom = std::max({std::abs(analytic[i]), std::abs(cd), 1e-8});
      best[i] = std::min(best[i], std::abs(analytic[i] - cd) / denom);
    }
  }
  double max_rel = 0.0;
  for (double e : best) max_rel = std::max(max_rel, e);
  return max_rel;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double step) {
  const double steps[] = {step};
  return grad_check(f, x, std::span<const double>(steps));
}

}  // namespace fpf
