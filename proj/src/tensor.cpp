#include "gritcap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <utility>

#include "gritcap/error.hpp"

namespace gritcap {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::weak_ptr<Tape> tape;  // set for op outputs recorded in a graph
};

using BackwardFn = std::function<void(const std::vector<double>& grad_out)>;

struct Node {
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

class Tape : public std::enable_shared_from_this<Tape> {
 public:
  void add(const char* op, const Tensor& output, BackwardFn fn) {
    output.impl()->requires_grad = true;
    output.impl()->tape = weak_from_this();
    names_.push_back(op);
    nodes_.push_back(Node{output.handle(), std::move(fn)});
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<const char*>& names() const { return names_; }
  bool consumed() const { return consumed_; }

  void backward(const Tensor& loss) {
    if (consumed_) throw Error("backward: graph already consumed; record a new graph");
    if (loss.numel() != 1) {
      throw ValidationError("backward: loss must be a scalar, got shape " +
                            shape_to_string(loss.shape()));
    }
    consumed_ = true;
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward(it->output->grad);
    }
    // Saved activations are no longer needed.
    nodes_.clear();
  }

 private:
  std::vector<Node> nodes_;
  std::vector<const char*> names_;
  bool consumed_ = false;
};

thread_local Tape* g_active_tape = nullptr;

}  // namespace detail

using detail::TensorImpl;

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ValidationError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw ValidationError("tensor of shape " + shape_to_string(shape) + " needs " +
                          std::to_string(shape_numel(shape)) + " values, got " +
                          std::to_string(values.size()));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

TensorImpl& Tensor::checked() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }
std::size_t Tensor::numel() const { return checked().value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ValidationError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const { return numel() / cols(); }

std::span<const double> Tensor::values() const { return checked().value; }
std::span<double> Tensor::mutable_values() { return checked().value; }

double Tensor::item() const {
  if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_to_string(shape()));
  return checked().value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) {
    throw ValidationError("index (" + std::to_string(row) + ", " + std::to_string(col) +
                          ") out of range for shape " + shape_to_string(shape()));
  }
  return checked().value[row * cols() + col];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool on) { checked().requires_grad = on; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::vector<double> Tensor::grad() const {
  const TensorImpl& t = checked();
  return t.grad.empty() ? std::vector<double>(t.value.size(), 0.0) : t.grad;
}

std::span<double> Tensor::mutable_grad() {
  TensorImpl& t = checked();
  if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
  return t.grad;
}

void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const {
  const TensorImpl& t = checked();
  return Tensor(t.shape, t.value, false);
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph() : tape_(std::make_shared<detail::Tape>()) {}
Graph::~Graph() = default;

Graph::Recording::Recording(Graph& graph) : previous_(detail::g_active_tape) {
  detail::g_active_tape = graph.tape_.get();
}

Graph::Recording::~Recording() { detail::g_active_tape = previous_; }

std::size_t Graph::size() const { return tape_->size(); }

std::vector<std::string> Graph::op_names() const {
  return {tape_->names().begin(), tape_->names().end()};
}

bool Graph::consumed() const { return tape_->consumed(); }

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.impl()->tape.lock() != tape_) {
    throw ValidationError("backward: loss was not recorded in this graph");
  }
  tape_->backward(loss);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ValidationError("backward: undefined loss");
  auto tape = loss.impl()->tape.lock();
  if (!tape) throw ValidationError("backward: loss is not attached to a live recorded graph");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Op helpers

namespace {

// The active tape when any input takes part in differentiation.
detail::Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  detail::Tape* tape = detail::g_active_tape;
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

std::vector<double>& grad_of(const Tensor& t) {
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.impl()->value.size(), 0.0);
  return g;
}

Tensor make(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), std::move(values), false);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
                        " and " + shape_to_string(b.shape()));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ValidationError(std::string(op) + ": expected a 2-D tensor, got shape " +
                          shape_to_string(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* A = a.values().data();
  const double* B = b.values().data();
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Tensor out = make({m, n}, std::move(c));
  if (auto* tape = recording_tape({&a, &b})) {
    tape->add("matmul", out, [a, b, m, k, n](const std::vector<double>& g) {
      const double* A = a.values().data();
      const double* B = b.values().data();
      if (a.requires_grad()) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* brow = B + p * n;
            const double* grow = &g[i * n];
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
        }
      }
      if (b.requires_grad()) {
        auto& gb = grad_of(b);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = &g[i * n];
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            double* gbrow = &gb[p * n];
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto v = a.values();
  std::vector<double> t(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = v[i * c + j];
  Tensor out = make({c, r}, std::move(t));
  if (auto* tape = recording_tape({&a})) {
    tape->add("transpose", out, [a, r, c](const std::vector<double>& g) {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

namespace {

template <typename Fwd>
Tensor elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, double da_sign,
                   double db_sign, bool product) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
  const auto va = a.values();
  const auto vb = b.values();
  std::vector<double> r(va.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = fwd(va[i], vb[i]);
  Tensor out = make(a.shape(), std::move(r));
  if (auto* tape = recording_tape({&a, &b})) {
    tape->add(op, out, [a, b, da_sign, db_sign, product](const std::vector<double>& g) {
      const auto va = a.values();
      const auto vb = b.values();
      if (a.requires_grad()) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += product ? g[i] * vb[i] : da_sign * g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += product ? g[i] * va[i] : db_sign * g[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise("mul", a, b, [](double x, double y) { return x * y; }, 0.0, 0.0, true);
}

Tensor scale(const Tensor& a, double factor) {
  const auto v = a.values();
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = v[i] * factor;
  Tensor out = make(a.shape(), std::move(r));
  if (auto* tape = recording_tape({&a})) {
    tape->add("scale", out, [a, factor](const std::vector<double>& g) {
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || bias.dim(0) != x.cols()) shape_error("add_bias", x, bias);
  const std::size_t rows = x.rows(), cols = x.cols();
  const auto vx = x.values();
  const auto vb = bias.values();
  std::vector<double> r(vx.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) r[i * cols + j] = vx[i * cols + j] + vb[j];
  Tensor out = make(x.shape(), std::move(r));
  if (auto* tape = recording_tape({&x, &bias})) {
    tape->add("add_bias", out, [x, bias, rows, cols](const std::vector<double>& g) {
      if (x.requires_grad()) {
        auto& gx = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto& gb = grad_of(bias);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  const auto v = x.values();
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = v[i] > 0.0 ? v[i] : 0.0;
  Tensor out = make(x.shape(), std::move(r));
  if (auto* tape = recording_tape({&x})) {
    tape->add("relu", out, [x](const std::vector<double>& g) {
      const auto v = x.values();
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (v[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

namespace {

void require_finite(const char* op, std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ValidationError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ValidationError("softmax: needs at least one axis");
  const auto v = x.values();
  require_finite("softmax", v);
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> y(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &v[r * n];
    double* out = &y[r * n];
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[j] /= z;
  }
  Tensor out = make(x.shape(), y);
  if (auto* tape = recording_tape({&x})) {
    tape->add("softmax", out, [x, y = std::move(y), rows, n](const std::vector<double>& g) {
      auto& gx = grad_of(x);
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) throw ValidationError("log_softmax: needs at least one axis");
  const auto v = x.values();
  require_finite("log_softmax", v);
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> y(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &v[r * n];
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = in[j] - lse;
  }
  Tensor out = make(x.shape(), y);
  if (auto* tape = recording_tape({&x})) {
    tape->add("log_softmax", out, [x, y = std::move(y), rows, n](const std::vector<double>& g) {
      auto& gx = grad_of(x);
      for (std::size_t r = 0; r < rows; ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gs;
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || gain.shape() != Shape{x.cols()}) shape_error("layer_norm", x, gain);
  if (bias.shape() != Shape{x.cols()}) shape_error("layer_norm", x, bias);
  const std::size_t rows = x.rows(), n = x.cols();
  const auto v = x.values();
  const auto vg = gain.values();
  const auto vb = bias.values();
  std::vector<double> xhat(v.size()), inv_std(rows), y(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &v[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      y[r * n + j] = xhat[r * n + j] * vg[j] + vb[j];
    }
  }
  Tensor out = make(x.shape(), std::move(y));
  if (auto* tape = recording_tape({&x, &gain, &bias})) {
    tape->add("layer_norm", out,
              [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
               n](const std::vector<double>& g) {
                const auto vg = gain.values();
                if (gain.requires_grad()) {
                  auto& gg = grad_of(gain);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
                }
                if (bias.requires_grad()) {
                  auto& gb = grad_of(bias);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                }
                if (x.requires_grad()) {
                  auto& gx = grad_of(x);
                  const double dn = static_cast<double>(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = g[r * n + j] * vg[j];
                      sum_d += d;
                      sum_dx += d * xhat[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = g[r * n + j] * vg[j];
                      gx[r * n + j] +=
                          inv_std[r] / dn * (dn * d - sum_d - xhat[r * n + j] * sum_dx);
                    }
                  }
                }
              });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  double s = 0.0;
  for (double e : v) s += e;
  Tensor out = make({}, {s});
  if (auto* tape = recording_tape({&x})) {
    tape->add("sum", out, [x](const std::vector<double>& g) {
      auto& gx = grad_of(x);
      for (auto& e : gx) e += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank2("gather_rows", table);
  if (ids.empty()) throw ValidationError("gather_rows: no ids");
  const std::size_t n = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= n) {
      throw ValidationError("gather_rows: id " + std::to_string(id) + " out of range for " +
                            std::to_string(n) + " rows");
    }
  }
  const auto v = table.values();
  std::vector<double> r(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t)
    std::copy_n(&v[static_cast<std::size_t>(ids[t]) * d], d, &r[t * d]);
  Tensor out = make({ids.size(), d}, std::move(r));
  if (auto* tape = recording_tape({&table})) {
    tape->add("gather_rows", out,
              [table, ids = std::vector<int>(ids.begin(), ids.end()), d](const std::vector<double>& g) {
                auto& gt = grad_of(table);
                for (std::size_t t = 0; t < ids.size(); ++t)
                  for (std::size_t j = 0; j < d; ++j)
                    gt[static_cast<std::size_t>(ids[t]) * d + j] += g[t * d + j];
              });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank2("slice_cols", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || start + count > cols) {
    throw ValidationError("slice_cols: columns [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") out of range for shape " +
                          shape_to_string(x.shape()));
  }
  const auto v = x.values();
  std::vector<double> r(rows * count);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(&v[i * cols + start], count, &r[i * count]);
  Tensor out = make({rows, count}, std::move(r));
  if (auto* tape = recording_tape({&x})) {
    tape->add("slice_cols", out, [x, rows, cols, start, count](const std::vector<double>& g) {
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * cols + start + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.dim(0) != rows) shape_error("concat_cols", parts.front(), p);
    cols += p.dim(1);
  }
  std::vector<double> r(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    const auto v = p.values();
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(&v[i * pc], pc, &r[i * cols + offset]);
    offset += pc;
  }
  Tensor out = make({rows, cols}, std::move(r));
  detail::Tape* tape = nullptr;
  if (detail::g_active_tape) {
    for (const auto& p : parts) {
      if (p.requires_grad()) tape = detail::g_active_tape;
    }
  }
  if (tape) {
    tape->add("concat_cols", out, [parts, rows, cols](const std::vector<double>& g) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t pc = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = grad_of(p);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + offset + j];
        }
        offset += pc;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  require_rank2("cross_entropy", logits);
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != rows) {
    throw ValidationError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(rows) + " logit rows");
  }
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= n) {
      throw ValidationError("cross_entropy: target " + std::to_string(t) +
                            " out of range for vocabulary size " + std::to_string(n));
    }
  }
  const auto v = logits.values();
  require_finite("cross_entropy", v);
  std::vector<double> probs(v.size());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &v[r * n];
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (probs[r * n + j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= z;
    if (targets[r] == ignore_id) continue;
    total -= in[targets[r]] - mx - std::log(z);
    ++count;
  }
  Tensor out = make({}, {count ? total / static_cast<double>(count) : 0.0});
  if (count == 0) return out;
  if (auto* tape = recording_tape({&logits})) {
    tape->add("cross_entropy", out,
              [logits, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
               ignore_id, rows, n, count](const std::vector<double>& g) {
                auto& gl = grad_of(logits);
                const double w = g[0] / static_cast<double>(count);
                for (std::size_t r = 0; r < rows; ++r) {
                  if (tg[r] == ignore_id) continue;
                  for (std::size_t j = 0; j < n; ++j) gl[r * n + j] += w * probs[r * n + j];
                  gl[r * n + static_cast<std::size_t>(tg[r])] -= w;
                }
              });
  }
  return out;
}

Tensor causal_mask(std::size_t t) {
  if (t == 0) throw ValidationError("causal_mask: empty sequence");
  std::vector<double> m(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = kMaskValue;
  return make({t, t}, std::move(m));
}

// ---------------------------------------------------------------------------
// Finite differences

GradCheckResult finite_diff_check(const std::function<Tensor()>& f, Tensor& x, double h) {
  if (!x.requires_grad()) throw ValidationError("finite_diff_check: x must require grad");
  GradCheckResult result;
  x.zero_grad();
  {
    Graph graph;
    Tensor loss;
    {
      auto rec = graph.record();
      loss = f();
    }
    if (loss.numel() != 1) throw ValidationError("finite_diff_check: f must be scalar-valued");
    if (loss.impl()->tape.lock()) graph.backward(loss);
  }
  result.analytic = x.grad();
  x.zero_grad();

  auto values = x.mutable_values();
  result.numeric.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double fp = f().item();
    values[i] = orig - h;
    const double fm = f().item();
    values[i] = orig;
    result.numeric[i] = (fp - fm) / (2.0 * h);

    const double a = result.analytic[i];
    const double nu = result.numeric[i];
    const double abs_err = std::abs(a - nu);
    const double rel = abs_err / std::max(1e-8, std::abs(a) + std::abs(nu));
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
    }
    result.max_abs_error = std::max(result.max_abs_error, abs_err);
  }
  return result;
}

GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                                  double h) {
  return finite_diff_check([&] { return f(x); }, x, h);
}

}  // namespace gritcap
