#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace kdream::ad {

/// Dense row-major matrix of doubles. Vectors are 1×n rows.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), v_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(1, n, std::move(values));
  }
  static Tensor identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  std::string shape_str() const;

  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  std::span<double> data() { return v_; }
  std::span<const double> data() const { return v_; }
  const std::vector<double>& values() const { return v_; }
  std::vector<double>& values() { return v_; }

  Tensor transposed() const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> v_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records operations for one reverse sweep. Single owner; independent tapes may run on
/// separate threads. Node ids are a topological order, so backward walks them in reverse.
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, std::size_t self)>;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input excluded from differentiation.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Accumulated gradient after backward(); a zero tensor of matching shape if none flowed.
  Tensor grad(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Reverse sweep from a 1×1 output. Gradients accumulate additively across fan-out.
  void backward(Var output);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

  // Op plumbing.
  Var record(Tensor value, std::vector<std::size_t> parents, Adjoint adjoint);
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  /// Grad buffer of `id`, allocated on first use; nullptr when the node needs no gradient.
  Tensor* grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Adjoint adjoint;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (n×c) plus row vector b (1×c) on every row.
Var add_row(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// Column concatenation ⊕.
Var concat(Var a, Var b);
Var concat(const std::vector<Var>& parts);
Var row_softmax(Var a);
/// Softmax over entries with mask(i,j) != 0; masked entries get probability 0.
/// Every row must keep at least one entry.
Var masked_row_softmax(Var a, const Tensor& mask);
Var leaky_relu(Var a, double slope);
Var tanh(Var a);
Var sigmoid(Var a);
/// 1×1 sum of all entries.
Var sum(Var a);
/// 1×c column sums (sum over rows).
Var sum_rows(Var a);
/// 1×1 mean of (a − b)².
Var mean_squared_error(Var a, Var b);
/// 1×1 sum of (a − b)².
Var squared_distance(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// N×c → N²×2c, row i·N+j = [a_i ⊕ a_j].
Var pair_concat(Var a);
/// N×c → N²×c, row i·N+j = a_i ⊙ a_j.
Var pair_hadamard(Var a);
/// N×c → N²×c, row i·N+j = a_i + a_j.
Var pair_sum(Var a);
/// (a + aᵀ)/2 with a zero diagonal; a must be square.
Var symmetrize(Var a);

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

/// Central differences per coordinate of `point`, compared with `analytic`.
/// Relative error is |a − n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f, std::vector<double> point,
                           std::span<const double> analytic, double eps = 1e-4, double floor = 1e-6);

}  // namespace kdream::ad
