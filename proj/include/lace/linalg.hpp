#pragma once

// Dense row-major linear algebra for the whitening path. Everything is
// double precision; the gradient checks depend on it.

#include <cstddef>
#include <span>
#include <vector>

namespace lace {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim) : data_(dim, 0.0) {}
  Vector(std::initializer_list<double> vals) : data_(vals) {}
  static Vector from(std::span<const double> vals) {
    Vector v;
    v.data_.assign(vals.begin(), vals.end());
    return v;
  }

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> span() const { return data_; }
  std::span<double> span() { return data_; }
  bool all_finite() const;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> vals);

  static Matrix identity(std::size_t n);
  static Matrix diag(std::span<const double> d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  bool all_finite() const;

  Vector col(std::size_t j) const;
  void set_col(std::size_t j, const Vector& v);
  Matrix transposed() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Eigendecomposition of a symmetric matrix: eigenvalues in descending order,
// eigenvectors as orthonormal columns. Sign convention: the first entry of
// each eigenvector with magnitude > 1e-12 is positive.
struct SymEig {
  Vector eigenvalues;
  Matrix eigenvectors;
};

// Cyclic Jacobi. Throws std::invalid_argument for non-square or asymmetric
// input (tolerance 1e-9 relative), std::runtime_error if sweeps do not
// converge.
SymEig sym_eig(const Matrix& a);

// M * M^T; PSD by construction. Throws std::invalid_argument if M not square.
Matrix psd_from_factor(const Matrix& m);

// Lower Cholesky factor of an SPD matrix; throws std::invalid_argument when
// the matrix is not symmetric positive definite.
Matrix cholesky(const Matrix& a);

// v / (||v||_2 + eps). eps > 0 keeps the zero vector at zero.
Vector normalize(const Vector& v, double eps);

// Matrix/vector arithmetic on top of the kernels.
Matrix matmul(const Matrix& a, const Matrix& b);       // A*B
Matrix matmul_nt(const Matrix& a, const Matrix& b);    // A*B^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);    // A^T*B
Vector matvec(const Matrix& a, const Vector& x);       // A*x
Vector matvec_t(const Matrix& a, const Vector& x);     // A^T*x
double dot(const Vector& a, const Vector& b);
double norm(const Vector& v);
Vector sub(const Vector& a, const Vector& b);

double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);

}  // namespace lace
