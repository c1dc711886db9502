#pragma once

// The adaptive cosine estimator: whitening by background statistics and the
// cosine score in the whitened space. Two equivalent routes are exposed —
// the raw quadratic-form statistic and the explicit whiten-then-dot path —
// and tests hold them to 1e-9 of each other.

#include "lace/linalg.hpp"

namespace lace {

// Eigenvalues below this are clamped before the whitening scales are formed,
// so rank-deficient factors cannot blow up the rotation.
inline constexpr double kEigenvalueClamp = 1e-8;

// Affine whitener: x -> rotation * (x - mean). rotation = sqrt(L) * U^T with
// U L U^T the eigendecomposition of the inverse background covariance, so
// that rotation^T * rotation = inv_cov (up to the clamp).
struct WhitenOp {
  Matrix rotation;  // d x d
  Vector mean;      // d
  std::size_t dim() const { return mean.dim(); }
};

struct WhitenedBatch {
  Matrix features;   // B x d, rows unit-normalized (eps floor)
  Vector pre_norms;  // B, norms before normalization
};

WhitenOp build_whitener(const Matrix& inv_cov, const Vector& mean);

WhitenedBatch whiten(const WhitenOp& op, const Matrix& batch, double eps);

struct AceValue {
  double value = 0.0;
  bool degenerate = false;  // s = 0 or x = mean: value forced to 0
};

// Eq-3 form: s^T S^-1 (x-mu) / (sqrt(s^T S^-1 s) * sqrt((x-mu)^T S^-1 (x-mu))).
AceValue ace_statistic(const Vector& x, const Vector& s, const Vector& mean,
                       const Matrix& inv_cov);

// Scores of every batch row against every signature column (B x C), computed
// in the whitened space: entry (n,c) = normalized whitened signature_c dot
// whitened row n.
Matrix ace_scores(const WhitenedBatch& batch, const Matrix& signatures,
                  const WhitenOp& whitener, double eps);

}  // namespace lace
