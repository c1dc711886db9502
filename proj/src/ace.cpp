#include "lace/ace.hpp"

#include <cmath>
#include <stdexcept>

#include "lace/kernels.hpp"

namespace lace {

WhitenOp build_whitener(const Matrix& inv_cov, const Vector& mean) {
  if (inv_cov.rows() != inv_cov.cols())
    throw std::invalid_argument("build_whitener: inv_cov must be square");
  if (inv_cov.rows() != mean.dim())
    throw std::invalid_argument("build_whitener: mean dimension mismatch");

  const SymEig eig = sym_eig(inv_cov);
  const std::size_t d = inv_cov.rows();

  // rotation = diag(sqrt(clamped eigenvalues)) * U^T
  WhitenOp op;
  op.rotation = Matrix(d, d);
  op.mean = mean;
  for (std::size_t i = 0; i < d; ++i) {
    const double lam = std::max(eig.eigenvalues[i], kEigenvalueClamp);
    const double s = std::sqrt(lam);
    for (std::size_t j = 0; j < d; ++j) op.rotation(i, j) = s * eig.eigenvectors(j, i);
  }
  return op;
}

WhitenedBatch whiten(const WhitenOp& op, const Matrix& batch, double eps) {
  const std::size_t d = op.dim();
  if (batch.cols() != d)
    throw std::invalid_argument("whiten: batch column count does not match whitener");

  WhitenedBatch out;
  out.features = Matrix(batch.rows(), d);
  out.pre_norms = Vector(batch.rows());

  Vector centered(d);
  Vector rotated(d);
  for (std::size_t n = 0; n < batch.rows(); ++n) {
    kern::sub(batch.row(n), op.mean.data(), centered.data(), d);
    for (std::size_t i = 0; i < d; ++i)
      rotated[i] = kern::dot(op.rotation.row(i), centered.data(), d);
    const double r = std::sqrt(kern::sqnorm(rotated.data(), d));
    out.pre_norms[n] = r;
    const double inv = 1.0 / (r + eps);
    for (std::size_t i = 0; i < d; ++i) out.features(n, i) = rotated[i] * inv;
  }
  return out;
}

AceValue ace_statistic(const Vector& x, const Vector& s, const Vector& mean,
                       const Matrix& inv_cov) {
  const std::size_t d = x.dim();
  if (s.dim() != d || mean.dim() != d || inv_cov.rows() != d || inv_cov.cols() != d)
    throw std::invalid_argument("ace_statistic: dimension mismatch");

  const Vector u = sub(x, mean);
  const Vector as = matvec(inv_cov, s);
  const Vector au = matvec(inv_cov, u);
  const double t = dot(s, as);
  const double r = dot(u, au);
  if (t <= 0.0 || r <= 0.0) return {0.0, true};
  const double q = dot(s, au);
  return {q / (std::sqrt(t) * std::sqrt(r)), false};
}

Matrix ace_scores(const WhitenedBatch& batch, const Matrix& signatures,
                  const WhitenOp& whitener, double eps) {
  const std::size_t d = whitener.dim();
  if (signatures.rows() != d)
    throw std::invalid_argument("ace_scores: signature dimension mismatch");
  if (batch.features.cols() != d)
    throw std::invalid_argument("ace_scores: batch dimension mismatch");

  // Whitened, normalized signatures as rows of a C x d matrix.
  const std::size_t C = signatures.cols();
  Matrix sig_hat(C, d);
  Vector z(d);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += whitener.rotation(i, j) * signatures(j, c);
      z[i] = acc;
    }
    const double inv = 1.0 / (std::sqrt(kern::sqnorm(z.data(), d)) + eps);
    for (std::size_t i = 0; i < d; ++i) sig_hat(c, i) = z[i] * inv;
  }

  return matmul_nt(batch.features, sig_hat);
}

}  // namespace lace
