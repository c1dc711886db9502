#include "lace/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lace/kernels.hpp"

namespace lace {

bool Vector::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> vals)
    : rows_(rows), cols_(cols), data_(vals) {
  if (data_.size() != rows * cols)
    throw std::invalid_argument("Matrix: initializer size does not match shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diag(std::span<const double> d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Vector Matrix::col(std::size_t j) const {
  Vector v(rows_);
  for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
  return v;
}

void Matrix::set_col(std::size_t j, const Vector& v) {
  for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

namespace {

void require_symmetric(const Matrix& a) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("sym_eig: matrix is not square (" +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ")");
  double max_abs = 1.0;
  for (double v : a.span()) max_abs = std::max(max_abs, std::abs(v));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * max_abs)
        throw std::invalid_argument("sym_eig: matrix is not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
}

}  // namespace

SymEig sym_eig(const Matrix& input) {
  require_symmetric(input);
  const std::size_t n = input.rows();

  Matrix a = input;
  Matrix u = Matrix::identity(n);

  // Cyclic Jacobi sweeps. Rotations kill one off-diagonal pair at a time;
  // ~log(precision) sweeps suffice for any symmetric matrix.
  constexpr int kMaxSweeps = 100;
  double off = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      total += a(i, j) * a(i, j);
      if (i != j) off += a(i, j) * a(i, j);
    }
  const double tol = 1e-30 * std::max(total, 1e-300);

  int sweep = 0;
  while (off > tol) {
    if (++sweep > kMaxSweeps)
      throw std::runtime_error("sym_eig: Jacobi iteration failed to converge");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
        const double c = std::cos(theta);
        const double s = std::sin(theta);

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double ukp = u(k, p);
          const double ukq = u(k, q);
          u(k, p) = c * ukp - s * ukq;
          u(k, q) = s * ukp + c * ukq;
        }
      }
    }
    off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) off += a(i, j) * a(i, j);
  }

  // Descending eigenvalue order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEig out;
  out.eigenvalues = Vector(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.eigenvalues[j] = a(src, src);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, j) = u(i, src);
  }

  // Sign convention: first component with magnitude > 1e-12 made positive.
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = out.eigenvectors(i, j);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0)
          for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = -out.eigenvectors(k, j);
        break;
      }
    }
  }
  return out;
}

Matrix psd_from_factor(const Matrix& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("psd_from_factor: factor must be square");
  Matrix out(m.rows(), m.rows());
  kern::gemm_nt(m.data(), m.data(), out.data(), m.rows(), m.cols(), m.rows());
  // Exact symmetry despite FP rounding in the two dot orders.
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = i + 1; j < out.cols(); ++j) out(j, i) = out(i, j);
  return out;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("cholesky: matrix must be square");
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * std::max(1.0, std::abs(a(i, j))))
        throw std::invalid_argument("cholesky: matrix is not symmetric");

  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j) - kern::sqnorm(l.row(j), j);
    if (diag <= 0.0)
      throw std::invalid_argument("cholesky: matrix is not positive definite");
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - kern::dot(l.row(i), l.row(j), j)) / l(j, j);
  }
  return l;
}

Vector normalize(const Vector& v, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("normalize: eps must be > 0");
  const double r = std::sqrt(kern::sqnorm(v.data(), v.dim())) + eps;
  Vector out = v;
  kern::scale(out.data(), 1.0 / r, out.dim());
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Matrix c(a.rows(), b.cols());
  kern::gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  Matrix c(a.rows(), b.rows());
  kern::gemm_nt(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: shape mismatch");
  Matrix c(a.cols(), b.cols());
  kern::gemm_tn(a.data(), b.data(), c.data(), a.cols(), a.rows(), b.cols());
  return c;
}

Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.dim()) throw std::invalid_argument("matvec: shape mismatch");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = kern::dot(a.row(i), x.data(), a.cols());
  return y;
}

Vector matvec_t(const Matrix& a, const Vector& x) {
  if (a.rows() != x.dim()) throw std::invalid_argument("matvec_t: shape mismatch");
  Vector y(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) kern::axpy(x[i], a.row(i), y.data(), a.cols());
  return y;
}

double dot(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("dot: shape mismatch");
  return kern::dot(a.data(), b.data(), a.dim());
}

double norm(const Vector& v) { return std::sqrt(kern::sqnorm(v.data(), v.dim())); }

Vector sub(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("sub: shape mismatch");
  Vector out(a.dim());
  kern::sub(a.data(), b.data(), out.data(), a.dim());
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.span().size(); ++i)
    m = std::max(m, std::abs(a.span()[i] - b.span()[i]));
  return m;
}

double frobenius_norm(const Matrix& a) {
  return std::sqrt(kern::sqnorm(a.data(), a.span().size()));
}

}  // namespace lace
