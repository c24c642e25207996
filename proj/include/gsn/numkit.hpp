#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gsn/error.hpp"
#include "gsn/rng.hpp"

namespace gsn {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("Tensor2: buffer of " + std::to_string(data_.size()) +
                       " entries cannot hold " + shape_string());
  }

  static Tensor2 row_vector(std::span<const double> v) {
    return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Tensor2 identity(std::size_t n) {
    Tensor2 t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  Vector column(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void append_row(std::span<const double> r) {
    if (rows_ == 0 && cols_ == 0) cols_ = r.size();
    if (r.size() != cols_)
      throw ShapeError("append_row: row of " + std::to_string(r.size()) + " into " +
                       shape_string());
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  Tensor2 transposed() const {
    Tensor2 t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape " + a.shape_string() + " vs " +
                     b.shape_string());
}

// ---------------------------------------------------------------------------
// Span kernels. The network works on single examples, so these are the hot
// loops; the Tensor2 operations below are thin wrappers.
namespace kernel {

/// out[c] += sum_k in[k] * w(k, c)
inline void accumulate_rows(std::span<const double> in, const Tensor2& w, std::span<double> out) {
  const std::size_t cols = w.cols();
  for (std::size_t k = 0; k < in.size(); ++k) {
    const double v = in[k];
    if (v == 0.0) continue;
    const double* wr = w.row(k).data();
    for (std::size_t c = 0; c < cols; ++c) out[c] += v * wr[c];
  }
}

/// out[c] = bias[c] + sum_k in[k] * w(k, c)
inline void affine_rows(std::span<const double> in, const Tensor2& w, std::span<const double> bias,
                        std::span<double> out) {
  std::copy(bias.begin(), bias.end(), out.begin());
  accumulate_rows(in, w, out);
}

/// out[k] += sum_c in[c] * w(k, c)  (multiplication by the transpose)
inline void accumulate_transposed(std::span<const double> in, const Tensor2& w,
                                  std::span<double> out) {
  const std::size_t cols = w.cols();
  for (std::size_t k = 0; k < w.rows(); ++k) {
    const double* wr = w.row(k).data();
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += in[c] * wr[c];
    out[k] += acc;
  }
}

/// g(k, c) += a[k] * b[c]
inline void add_outer(std::span<const double> a, std::span<const double> b, Tensor2& g) {
  const std::size_t cols = g.cols();
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double v = a[k];
    if (v == 0.0) continue;
    double* gr = g.row(k).data();
    for (std::size_t c = 0; c < cols; ++c) gr[c] += v * b[c];
  }
}

}  // namespace kernel

/// out = input * weights + bias (bias broadcast over rows).
inline Tensor2 affine(const Tensor2& input, const Tensor2& weights, std::span<const double> bias) {
  if (input.cols() != weights.rows() || bias.size() != weights.cols())
    throw ShapeError("affine: input " + input.shape_string() + " weights " +
                     weights.shape_string() + " bias " + std::to_string(bias.size()));
  Tensor2 out(input.rows(), weights.cols());
  for (std::size_t r = 0; r < input.rows(); ++r)
    kernel::affine_rows(input.row(r), weights, bias, out.row(r));
  return out;
}

inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  const Vector zero(b.cols(), 0.0);
  return affine(a, b, zero);
}

inline Vector matvec(const Tensor2& a, std::span<const double> x) {
  if (a.cols() != x.size())
    throw ShapeError("matvec: " + a.shape_string() + " * " + std::to_string(x.size()));
  Vector y(a.rows(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    y[r] = std::inner_product(row.begin(), row.end(), x.begin(), 0.0);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Stochastic tanh unit: h = eta_out + tanh(eta_in + a).

/// Sampled noise of one noisy_tanh_forward call; replaying it reproduces the
/// pass exactly and makes the unit differentiable in `a`.
struct NoiseTape {
  Tensor2 eta_in;
  Tensor2 eta_out;
  Tensor2 activation;  // tanh(eta_in + a)
};

inline void check_noise_levels(double sigma_in, double sigma_out) {
  if (!(sigma_in >= 0.0) || !(sigma_out >= 0.0))
    throw ParameterError("noise standard deviations must be nonnegative");
}

/// Draws the noise and evaluates the unit. With sigma = 0 no draws are consumed.
inline std::pair<Tensor2, NoiseTape> noisy_tanh_forward(const Tensor2& a, double sigma_in,
                                                        double sigma_out, RngStream& rng) {
  check_noise_levels(sigma_in, sigma_out);
  NoiseTape tape{Tensor2(a.rows(), a.cols()), Tensor2(a.rows(), a.cols()),
                 Tensor2(a.rows(), a.cols())};
  Tensor2 h(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ei = sigma_in > 0.0 ? sigma_in * rng.normal() : 0.0;
    const double eo = sigma_out > 0.0 ? sigma_out * rng.normal() : 0.0;
    const double t = std::tanh(ei + a.data()[i]);
    tape.eta_in.data()[i] = ei;
    tape.eta_out.data()[i] = eo;
    tape.activation.data()[i] = t;
    h.data()[i] = eo + t;
  }
  return {std::move(h), std::move(tape)};
}

/// Re-evaluates the unit at a new pre-activation using the recorded noise.
inline Tensor2 noisy_tanh_replay(const Tensor2& a, const NoiseTape& tape) {
  require_same_shape(a, tape.eta_in, "noisy_tanh_replay");
  Tensor2 h(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    h.data()[i] = tape.eta_out.data()[i] + std::tanh(tape.eta_in.data()[i] + a.data()[i]);
  return h;
}

/// grad_a = grad_h * (1 - tanh^2(eta_in + a)). eta_out is additive and
/// contributes nothing.
inline Tensor2 noisy_tanh_backward(const NoiseTape& tape, const Tensor2& grad_h) {
  require_same_shape(tape.activation, grad_h, "noisy_tanh_backward");
  Tensor2 grad_a(grad_h.rows(), grad_h.cols());
  for (std::size_t i = 0; i < grad_h.size(); ++i) {
    const double t = tape.activation.data()[i];
    grad_a.data()[i] = grad_h.data()[i] * (1.0 - t * t);
  }
  return grad_a;
}

// ---------------------------------------------------------------------------
// Small dense linear algebra for the exact finite-state checks.

/// Solves a * x = b by Gaussian elimination with partial pivoting.
inline Vector solve(Tensor2 a, Vector b, double pivot_tol = 1e-14) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n)
    throw ShapeError("solve: matrix " + a.shape_string() + " rhs " + std::to_string(b.size()));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < pivot_tol) throw NumericalError("solve: singular matrix");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

/// Inverse via Gauss-Jordan with partial pivoting.
inline Tensor2 inverse(Tensor2 a, double pivot_tol = 1e-14) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("inverse: non-square " + a.shape_string());
  Tensor2 inv = Tensor2::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < pivot_tol) throw NumericalError("inverse: singular matrix");
    if (piv != col)
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a(col, c), a(piv, c));
        std::swap(inv(col, c), inv(piv, c));
      }
    const double d = a(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a(col, c) /= d;
      inv(col, c) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= f * a(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

/// Numerical rank by elimination with full pivoting; entries below `tol`
/// (relative to the largest magnitude) count as zero.
inline std::size_t rank(Tensor2 a, double tol = 1e-10) {
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0;
  const std::size_t m = a.rows(), n = a.cols();
  std::size_t r = 0;
  std::vector<bool> used_col(n, false);
  for (; r < std::min(m, n); ++r) {
    double best = 0.0;
    std::size_t br = 0, bc = 0;
    for (std::size_t i = r; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (!used_col[j] && std::abs(a(i, j)) > best) {
          best = std::abs(a(i, j));
          br = i;
          bc = j;
        }
    if (best <= tol * scale) break;
    for (std::size_t j = 0; j < n; ++j) std::swap(a(r, j), a(br, j));
    used_col[bc] = true;
    for (std::size_t i = r + 1; i < m; ++i) {
      const double f = a(i, bc) / a(r, bc);
      for (std::size_t j = 0; j < n; ++j) a(i, j) -= f * a(r, j);
    }
  }
  return r;
}

/// Max absolute row sum.
inline double norm_inf(const Tensor2& a) {
  double best = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (double v : a.row(r)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

inline double norm_l1(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw ShapeError("total_variation: lengths " + std::to_string(p.size()) + " and " +
                     std::to_string(q.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

/// Throws DomainError unless every entry is >= 0 and every column sums to 1
/// within `tol`.
inline void check_column_stochastic(const Tensor2& m, double tol, const std::string& what) {
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      if (!(m(r, c) >= 0.0)) throw DomainError(what + ": negative or NaN entry");
      s += m(r, c);
    }
    if (std::abs(s - 1.0) > tol)
      throw DomainError(what + ": column " + std::to_string(c) + " sums to " + std::to_string(s));
  }
}

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace gsn
