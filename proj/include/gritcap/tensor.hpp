#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gritcap {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl;
class Tape;
}  // namespace detail

/// Dense row-major tensor of doubles.
///
/// A Tensor is a shared handle: copies alias the same storage, like the
/// handles of most autograd libraries. Leaves created with requires_grad=true
/// (parameters) collect gradients; values produced by ops while a Graph is
/// recording are linked into that graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  // Leading dimensions flattened / last dimension, for row-wise ops.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Direct write access, for optimizers and finite-difference probes.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Independent copy with no graph link and requires_grad = false.
  Tensor detach() const;

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& handle() const noexcept { return impl_; }

 private:
  detail::TensorImpl& checked() const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Records the ops executed on this thread while a Recording is alive.
///
/// Nodes are stored in creation order, so the list is a topological order and
/// backward() walks it in reverse exactly once. A graph is single-use: a
/// second backward() throws.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  class Recording {
   public:
    explicit Recording(Graph& graph);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    detail::Tape* previous_;
  };

  [[nodiscard]] Recording record() { return Recording(*this); }

  std::size_t size() const;
  // Op tags in creation order.
  std::vector<std::string> op_names() const;
  bool consumed() const;

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws when loss is not a scalar
  // recorded in this graph, or when the graph was already consumed.
  void backward(const Tensor& loss);

 private:
  std::shared_ptr<detail::Tape> tape_;
};

// Runs backward on the graph that recorded `loss`.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes are checked; mismatches throw ValidationError
// naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k]·[k,n]
Tensor transpose(const Tensor& a);                      // 2-D only
Tensor add(const Tensor& a, const Tensor& b);           // identical shapes
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // element-wise
Tensor scale(const Tensor& a, double factor);
Tensor add_bias(const Tensor& x, const Tensor& bias);   // bias over the last dim
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x);                        // along the last dim
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor sum(const Tensor& x);                            // scalar
Tensor mean(const Tensor& x);                           // scalar
// Rows of `table` ([n, d]) selected by index, giving [ids.size(), d].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
// skipping positions whose target equals ignore_id. Returns 0 when every
// position is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id = -1);

// Additive causal mask [t, t]: 0 on and below the diagonal, a large negative
// finite value above it.
Tensor causal_mask(std::size_t t);
inline constexpr double kMaskValue = -1e30;

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares the recorded gradient of scalar f() with respect to the leaf `x`
/// against central differences (f(x+h e_i) - f(x-h e_i)) / 2h. The relative
/// error per coordinate is |a - n| / max(1e-8, |a| + |n|). `x` must require
/// grad; its values are restored afterwards. f is re-run for every probe.
GradCheckResult finite_diff_check(const std::function<Tensor()>& f, Tensor& x, double h = 1e-5);

// Convenience overload for f(x).
GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                                  double h = 1e-5);

}  // namespace gritcap
