#include "kdream/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "kdream/error.hpp"

namespace kdream::ad {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), v_(std::move(values)) {
  if (v_.size() != rows * cols)
    throw DimensionError("tensor value count " + std::to_string(v_.size()) + " does not match shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor::shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

Tensor Tensor::transposed() const {
  Tensor t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Adjoint adjoint) {
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_[p].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(adjoint) : Adjoint{}});
  return {this, nodes_.size() - 1};
}

Tensor* Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows())
    n.grad = Tensor(n.value.rows(), n.value.cols());
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.rows() == n.value.rows() && n.grad.cols() == n.value.cols()) return n.grad;
  return Tensor(n.value.rows(), n.value.cols());
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Tensor();
}

void Tape::backward(Var output) {
  const auto& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1)
    throw DimensionError("backward needs a scalar output, got " + out.shape_str());
  zero_grad();
  if (auto* g = grad_buffer(output.id)) (*g)[0] = 1.0;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.needs_grad || !n.adjoint || n.grad.size() == 0) continue;
    n.adjoint(*this, id);
  }
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape || !a.tape) throw Error(ErrorKind::kInvalidArgument, "operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

// out += op(a)·op(b), op optionally transposing.
void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
  ConstMap am(a.data().data(), a.rows(), a.cols());
  ConstMap bm(b.data().data(), b.rows(), b.cols());
  Eigen::Map<RowMat> om(out.data().data(), out.rows(), out.cols());
  if (!ta && !tb)
    om.noalias() += am * bm;
  else if (ta && !tb)
    om.noalias() += am.transpose() * bm;
  else if (!ta && tb)
    om.noalias() += am * bm.transpose();
  else
    om.noalias() += am.transpose() * bm.transpose();
}

template <typename F, typename DF>
Var elementwise(Var a, F f, DF df) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.record(std::move(y), {a.id}, [ai = a.id, df](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& x = t.node_value(ai);
    const Tensor& y = t.node_value(self);
    if (Tensor* ga = t.grad_buffer(ai))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = t.node_value(a.id);
  const Tensor& B = t.node_value(b.id);
  if (A.cols() != B.rows()) throw DimensionError("matmul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Tensor out(A.rows(), B.cols());
  gemm_acc(A, false, B, false, out);
  return t.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* ga = t.grad_buffer(ai)) gemm_acc(G, false, t.node_value(bi), true, *ga);
    if (Tensor* gb = t.grad_buffer(bi)) gemm_acc(t.node_value(ai), true, G, false, *gb);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = t.node_value(a.id);
  const Tensor& B = t.node_value(b.id);
  require_same_shape("add", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return t.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    for (auto id : {ai, bi})
      if (Tensor* g = t.grad_buffer(id))
        for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = t.node_value(a.id);
  const Tensor& B = t.node_value(b.id);
  require_same_shape("sub", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return t.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
    if (Tensor* g = t.grad_buffer(bi))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] -= G[i];
  });
}

Var add_row(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = t.node_value(a.id);
  const Tensor& B = t.node_value(b.id);
  if (B.rows() != 1 || B.cols() != A.cols())
    throw DimensionError("add_row: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Tensor out = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) += B[c];
  return t.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
    if (Tensor* g = t.grad_buffer(bi))
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < G.cols(); ++c) (*g)[c] += G(r, c);
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = t.node_value(a.id);
  const Tensor& B = t.node_value(b.id);
  require_same_shape("hadamard", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    const Tensor& A = t.node_value(ai);
    const Tensor& B = t.node_value(bi);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i] * B[i];
    if (Tensor* g = t.grad_buffer(bi))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i] * A[i];
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor out = t.node_value(a.id);
  for (auto& v : out.values()) v *= s;
  return t.record(std::move(out), {a.id}, [ai = a.id, s](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += s * G[i];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kInvalidArgument, "concat of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t rows = t.node_value(parts.front().id).rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (auto p : parts) {
    tape_of(parts.front(), p);
    const Tensor& v = t.node_value(p.id);
    if (v.rows() != rows)
      throw DimensionError("concat: row mismatch " + t.node_value(parts.front().id).shape_str() + " vs " +
                           v.shape_str());
    cols += v.cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (auto id : ids) {
    const Tensor& v = t.node_value(id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  return t.record(std::move(out), ids, [ids](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t w = t.node_value(id).cols();
      if (Tensor* g = t.grad_buffer(id))
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) (*g)(r, c) += G(r, off + c);
      off += w;
    }
  });
}

Var concat(Var a, Var b) { return concat(std::vector<Var>{a, b}); }

namespace {

Var softmax_impl(Var a, const Tensor* mask) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols()))
    throw DimensionError("masked_row_softmax: shape mismatch " + x.shape_str() + " vs mask " + mask->shape_str());
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (!mask || (*mask)(r, c) != 0) mx = std::max(mx, x(r, c));
    if (mx == -INFINITY) throw Error(ErrorKind::kInvalidArgument, "softmax row with no admissible entries");
    double z = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double e = (!mask || (*mask)(r, c) != 0) ? std::exp(x(r, c) - mx) : 0.0;
      y(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= z;
  }
  return t.record(std::move(y), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    const Tensor& y = t.node_value(self);
    Tensor* g = t.grad_buffer(ai);
    if (!g) return;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += G(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) (*g)(r, c) += y(r, c) * (G(r, c) - dot);
    }
  });
}

}  // namespace

Var row_softmax(Var a) { return softmax_impl(a, nullptr); }
Var masked_row_softmax(Var a, const Tensor& mask) { return softmax_impl(a, &mask); }

Var leaky_relu(Var a, double slope) {
  return elementwise(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var tanh(Var a) {
  return elementwise(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  double s = 0;
  for (double v : x.values()) s += v;
  return t.record(Tensor(1, 1, s), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const double g0 = t.out_grad(self)[0];
    if (Tensor* g = t.grad_buffer(ai))
      for (auto& v : g->values()) v += g0;
  });
}

Var sum_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  return t.record(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t r = 0; r < g->rows(); ++r)
        for (std::size_t c = 0; c < g->cols(); ++c) (*g)(r, c) += G[c];
  });
}

namespace {

Var squared_error(Var a, Var b, bool mean, const char* op) {
  Tape& t = tape_of(a, b);
  const Tensor& A = t.node_value(a.id);
  const Tensor& B = t.node_value(b.id);
  require_same_shape(op, A, B);
  double s = 0;
  for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
  const double k = mean ? 1.0 / static_cast<double>(A.size()) : 1.0;
  return t.record(Tensor(1, 1, s * k), {a.id, b.id}, [ai = a.id, bi = b.id, k](Tape& t, std::size_t self) {
    const double g0 = t.out_grad(self)[0];
    const Tensor& A = t.node_value(ai);
    const Tensor& B = t.node_value(bi);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < A.size(); ++i) (*g)[i] += 2.0 * k * g0 * (A[i] - B[i]);
    if (Tensor* g = t.grad_buffer(bi))
      for (std::size_t i = 0; i < A.size(); ++i) (*g)[i] -= 2.0 * k * g0 * (A[i] - B[i]);
  });
}

}  // namespace

Var mean_squared_error(Var a, Var b) { return squared_error(a, b, true, "mean_squared_error"); }
Var squared_distance(Var a, Var b) { return squared_error(a, b, false, "squared_distance"); }

Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.record(t.node_value(a.id).transposed(), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < G.cols(); ++c) (*g)(c, r) += G(r, c);
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  if (rows * cols != x.size())
    throw DimensionError("reshape: cannot view " + x.shape_str() + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  return t.record(Tensor(rows, cols, x.values()), {a.id}, [ai = a.id](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < G.size(); ++i) (*g)[i] += G[i];
  });
}

Var pair_concat(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n * n, 2 * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        out(i * n + j, k) = x(i, k);
        out(i * n + j, c + k) = x(j, k);
      }
  return t.record(std::move(out), {a.id}, [ai = a.id, n, c](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < c; ++k) {
            (*g)(i, k) += G(i * n + j, k);
            (*g)(j, k) += G(i * n + j, c + k);
          }
  });
}

Var pair_hadamard(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n * n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < c; ++k) out(i * n + j, k) = x(i, k) * x(j, k);
  return t.record(std::move(out), {a.id}, [ai = a.id, n, c](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    const Tensor& x = t.node_value(ai);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < c; ++k) {
            const double gij = G(i * n + j, k);
            (*g)(i, k) += gij * x(j, k);
            (*g)(j, k) += gij * x(i, k);
          }
  });
}

Var pair_sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out(n * n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < c; ++k) out(i * n + j, k) = x(i, k) + x(j, k);
  return t.record(std::move(out), {a.id}, [ai = a.id, n, c](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < c; ++k) {
            (*g)(i, k) += G(i * n + j, k);
            (*g)(j, k) += G(i * n + j, k);
          }
  });
}

Var symmetrize(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.node_value(a.id);
  if (x.rows() != x.cols()) throw DimensionError("symmetrize: matrix is not square: " + x.shape_str());
  const std::size_t n = x.rows();
  Tensor out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = i == j ? 0.0 : 0.5 * (x(i, j) + x(j, i));
  return t.record(std::move(out), {a.id}, [ai = a.id, n](Tape& t, std::size_t self) {
    const Tensor& G = t.out_grad(self);
    if (Tensor* g = t.grad_buffer(ai))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) (*g)(i, j) += 0.5 * (G(i, j) + G(j, i));
  });
}

GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f, std::vector<double> point,
                           std::span<const double> analytic, double eps, double floor) {
  if (analytic.size() != point.size())
    throw DimensionError("grad_check: gradient has " + std::to_string(analytic.size()) + " entries, point has " +
                         std::to_string(point.size()));
  GradCheckResult res;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + eps;
    const double fp = f(point);
    point[i] = orig - eps;
    const double fm = f(point);
    point[i] = orig;
    const double numeric = (fp - fm) / (2 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > res.max_rel_error) res = {rel, i, analytic[i], numeric};
  }
  return res;
}

}  // namespace kdream::ad
