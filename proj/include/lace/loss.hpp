#pragma once

// LACE: cross entropy over per-class adaptive-cosine scores, with learned
// signatures, background mean, and a PSD-by-construction inverse background
// covariance (factor M, used as M*M^T). Analytic gradients cover every
// learned tensor plus the embeddings, so a backbone can train through the
// head. Finite differences arbitrate correctness (see tests/ and the
// gradcheck CLI command).

#include <span>
#include <vector>

#include "lace/linalg.hpp"
#include "lace/rng.hpp"

namespace lace {

struct AblationFlags {
  bool use_mean = true;  // false: background mean pinned at 0
  bool use_cov = true;   // false: inverse covariance pinned at identity
};

struct LaceParams {
  Matrix signatures;  // d x C
  Vector mean;        // d
  Matrix factor;      // d x d; M*M^T acts as the inverse covariance
  AblationFlags ablation;

  std::size_t dim() const { return mean.dim(); }
  std::size_t classes() const { return signatures.cols(); }

  // Signatures ~ N(0, 1/sqrt(d)), mean ~ N(0, 0.01^2), factor = I + small
  // noise so early training matches cosine softmax.
  static LaceParams init(std::size_t d, std::size_t classes, Rng& rng,
                         AblationFlags ablation = {});
};

struct LossOutput {
  double loss = 0.0;
  Matrix probabilities;  // B x C, rows sum to 1
  Matrix scores;         // B x C
};

struct GradientSet {
  Matrix d_signatures;  // d x C
  Vector d_mean;        // d
  Matrix d_factor;      // d x d
  Matrix d_embeddings;  // B x d
};

LossOutput lace_forward(const LaceParams& params, const Matrix& embeddings,
                        std::span<const int> labels, double eps);

// Score matrix alone (B x C), for prediction paths that have no labels.
Matrix lace_scores(const LaceParams& params, const Matrix& embeddings, double eps);

// Exact gradient of lace_forward. The inverse-covariance cotangent reaches
// the factor through d(M M^T) = G M + G^T M; embedding gradients are the
// per-sample negatives of the mean contributions (both enter only through
// x_n - mu). When `forward_out` is given it receives the forward results.
GradientSet lace_backward(const LaceParams& params, const Matrix& embeddings,
                          std::span<const int> labels, double eps,
                          LossOutput* forward_out = nullptr);

// The closed forms printed at the end of the paper's derivations, kept as a
// comparison path. They replace the softmax cotangent with fixed weights
// (signatures: -(1 - p_nc)/B over every sample; mean/covariance: unit weight
// over the non-label classes), which disagrees with the exact differential
// whenever probabilities are informative. d_embeddings is left zero (the
// derivations do not cover it).
GradientSet lace_backward_paper_forms(const LaceParams& params,
                                      const Matrix& embeddings,
                                      std::span<const int> labels, double eps);

struct ParamCount {
  std::size_t signatures;        // d*C
  std::size_t mean;              // d
  std::size_t factor;            // d*d
  std::size_t extra_vs_softmax;  // d*(d+1): mean + factor
};

ParamCount lace_param_count(std::size_t d, std::size_t classes);

// ---------------------------------------------------------------------------
// Baseline heads.

enum class BaselineVariant { plain_softmax, cosine_margin };

struct BaselineHead {
  Matrix weights;  // d x C
  Vector bias;     // C (unused by cosine_margin)
  BaselineVariant variant = BaselineVariant::plain_softmax;
  double margin = 0.0;  // cosine_margin m
  double gamma = 1.0;   // cosine_margin scale

  std::size_t dim() const { return weights.rows(); }
  std::size_t classes() const { return weights.cols(); }

  static BaselineHead softmax(std::size_t d, std::size_t classes, Rng& rng);
  static BaselineHead cosface(std::size_t d, std::size_t classes, double margin,
                              double gamma, Rng& rng);
};

// Standard cross entropy over W^T z + b logits.
LossOutput softmax_ce_forward(const BaselineHead& head, const Matrix& embeddings,
                              std::span<const int> labels);

// Same loss with logits evaluated as ||W_c|| ||z_n|| cos(theta); requires a
// zero bias. Algebraically identical to softmax_ce_forward.
LossOutput softmax_ce_angular_form(const BaselineHead& head,
                                   const Matrix& embeddings,
                                   std::span<const int> labels);

// Large-margin cosine loss: logits = gamma * (cos(theta_c) - m * [c = label]).
LossOutput cosine_margin_forward(const BaselineHead& head, const Matrix& embeddings,
                                 std::span<const int> labels);

struct BaselineGradients {
  Matrix d_weights;
  Vector d_bias;
  Matrix d_embeddings;
};

// Gradients for whichever variant the head carries.
BaselineGradients baseline_backward(const BaselineHead& head,
                                    const Matrix& embeddings,
                                    std::span<const int> labels,
                                    LossOutput* forward_out = nullptr);

// Row-stable softmax cross entropy shared by every head: fills probabilities
// from logits and returns the mean negative log-likelihood.
double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                             Matrix& probabilities);

}  // namespace lace
