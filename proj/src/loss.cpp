#include "lace/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "lace/kernels.hpp"

namespace lace {

namespace {

void validate_batch(std::size_t d, std::size_t classes, const Matrix& embeddings,
                    std::span<const int> labels, double eps) {
  if (embeddings.rows() == 0)
    throw std::invalid_argument("loss: empty batch");
  if (embeddings.cols() != d)
    throw std::invalid_argument("loss: embedding dimension " +
                                std::to_string(embeddings.cols()) +
                                " does not match head dimension " + std::to_string(d));
  if (labels.size() != embeddings.rows())
    throw std::invalid_argument("loss: label count does not match batch size");
  for (std::size_t n = 0; n < labels.size(); ++n)
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes)
      throw std::invalid_argument("loss: label " + std::to_string(labels[n]) +
                                  " out of range [0," + std::to_string(classes) + ")");
  if (!embeddings.all_finite())
    throw std::invalid_argument("loss: non-finite embedding");
  if (!(eps > 0.0)) throw std::invalid_argument("loss: eps must be > 0");
}

// Everything the backward pass reuses from the forward computation.
struct ForwardCache {
  Matrix centered;  // B x d: u_n = x_n - mu (or x_n when the mean is ablated)
  bool identity_cov = false;
  Matrix inv_cov;   // d x d, empty when identity_cov
  Matrix as;        // d x C: A * S
  Matrix au;        // B x d: rows (A * u_n)^T
  Matrix q;         // B x C: u_n^T A s_c
  Vector st;        // C: sqrt(s_c^T A s_c)
  Vector sr;        // B: sqrt(u_n^T A u_n)
  Matrix scores;    // B x C
};

ForwardCache run_forward(const LaceParams& params, const Matrix& embeddings,
                         double eps) {
  const std::size_t B = embeddings.rows();
  const std::size_t d = params.dim();
  const std::size_t C = params.classes();

  ForwardCache f;
  f.identity_cov = !params.ablation.use_cov;

  if (params.ablation.use_mean) {
    f.centered = Matrix(B, d);
    for (std::size_t n = 0; n < B; ++n)
      kern::sub(embeddings.row(n), params.mean.data(), f.centered.row(n), d);
  } else {
    f.centered = embeddings;
  }

  if (f.identity_cov) {
    f.as = params.signatures;
    f.au = f.centered;
  } else {
    f.inv_cov = psd_from_factor(params.factor);
    f.as = matmul(f.inv_cov, params.signatures);
    f.au = matmul(f.centered, f.inv_cov);  // A symmetric: (u^T A) = (A u)^T
  }

  f.q = matmul(f.centered, f.as);

  f.st = Vector(C);
  for (std::size_t c = 0; c < C; ++c) {
    double t = 0.0;
    for (std::size_t i = 0; i < d; ++i) t += params.signatures(i, c) * f.as(i, c);
    f.st[c] = std::sqrt(std::max(t, 0.0));
  }
  f.sr = Vector(B);
  for (std::size_t n = 0; n < B; ++n)
    f.sr[n] = std::sqrt(std::max(kern::dot(f.centered.row(n), f.au.row(n), d), 0.0));

  f.scores = Matrix(B, C);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      f.scores(n, c) = f.q(n, c) / ((f.st[c] + eps) * (f.sr[n] + eps));
  return f;
}

// dL/d(everything) for arbitrary per-(n,c) score cotangents. w_sig drives the
// signature gradient, w_cov drives the centered-sample path (mean, embeddings,
// covariance); the exact gradient uses the softmax cotangent for both.
GradientSet backward_core(const LaceParams& params, const ForwardCache& f,
                          const Matrix& w_sig, const Matrix& w_cov, double eps) {
  const std::size_t B = f.centered.rows();
  const std::size_t d = params.dim();
  const std::size_t C = params.classes();

  GradientSet g;
  g.d_signatures = Matrix(d, C);
  g.d_mean = Vector(d);
  g.d_factor = Matrix(d, d);
  g.d_embeddings = Matrix(B, d);

  // den, and the weight/coefficient tables both paths share.
  Matrix w1_sig(B, C), w1_cov(B, C);
  Vector beta_sig(C), beta_cov(C);  // s_c s_c^T coefficients, per class
  Vector gamma(B);                  // u_n u_n^T coefficients, per sample
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double den = (f.st[c] + eps) * (f.sr[n] + eps);
      const double den2 = den * den;
      w1_sig(n, c) = w_sig(n, c) / den;
      w1_cov(n, c) = w_cov(n, c) / den;
      const double q = f.q(n, c);
      if (f.st[c] > 0.0) {
        const double common = q * (f.sr[n] + eps) / (den2 * f.st[c]);
        beta_sig[c] += w_sig(n, c) * common;
        beta_cov[c] += w_cov(n, c) * common;
      }
      if (f.sr[n] > 0.0)
        gamma[n] += w_cov(n, c) * q * (f.st[c] + eps) / (den2 * f.sr[n]);
    }
  }

  // dS = A * (U^T W1) - (A S) colscale(beta_sig)
  {
    Matrix v1 = matmul_tn(f.centered, w1_sig);  // d x C
    Matrix dS = f.identity_cov ? std::move(v1) : matmul(f.inv_cov, v1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t c = 0; c < C; ++c)
        g.d_signatures(i, c) = dS(i, c) - f.as(i, c) * beta_sig[c];
  }

  // dU_n = A * (sum_c w1 s_c) - gamma_n * (A u_n)
  {
    Matrix v2 = matmul_nt(w1_cov, params.signatures);  // B x d
    Matrix du = f.identity_cov ? std::move(v2) : matmul(v2, f.inv_cov);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t i = 0; i < d; ++i)
        g.d_embeddings(n, i) = du(n, i) - gamma[n] * f.au(n, i);
  }

  // The mean enters every sample as x_n - mu, so its gradient is the negative
  // column sum of the embedding gradients.
  if (params.ablation.use_mean)
    for (std::size_t n = 0; n < B; ++n)
      kern::axpy(-1.0, g.d_embeddings.row(n), g.d_mean.data(), d);

  if (!f.identity_cov) {
    // G = dL/dA with A treated as unstructured, then chained onto the factor.
    Matrix term1 = matmul(params.signatures, matmul_tn(w1_cov, f.centered));

    Matrix sig_scaled = params.signatures;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t c = 0; c < C; ++c) sig_scaled(i, c) *= 0.5 * beta_cov[c];
    Matrix term2 = matmul_nt(sig_scaled, params.signatures);

    Matrix cen_scaled = f.centered;
    for (std::size_t n = 0; n < B; ++n)
      kern::scale(cen_scaled.row(n), 0.5 * gamma[n], d);
    Matrix term3 = matmul_tn(cen_scaled, f.centered);

    Matrix big_g(d, d);
    for (std::size_t i = 0; i < d * d; ++i)
      big_g.span()[i] = term1.span()[i] - term2.span()[i] - term3.span()[i];

    // d(M M^T) chain: dM = (G + G^T) M
    Matrix sym(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) sym(i, j) = big_g(i, j) + big_g(j, i);
    g.d_factor = matmul(sym, params.factor);
  }

  return g;
}

Matrix softmax_cotangent(const LossOutput& out, std::span<const int> labels) {
  const std::size_t B = out.probabilities.rows();
  const std::size_t C = out.probabilities.cols();
  Matrix w(B, C);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      w(n, c) = (out.probabilities(n, c) -
                 (static_cast<std::size_t>(labels[n]) == c ? 1.0 : 0.0)) *
                inv_b;
  return w;
}

}  // namespace

LaceParams LaceParams::init(std::size_t d, std::size_t classes, Rng& rng,
                            AblationFlags ablation) {
  LaceParams p;
  p.ablation = ablation;
  p.signatures = Matrix(d, classes);
  const double sig_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : p.signatures.span()) v = sig_std * rng.gaussian();
  p.mean = Vector(d);
  for (std::size_t i = 0; i < d; ++i) p.mean[i] = 0.01 * rng.gaussian();
  p.factor = Matrix::identity(d);
  for (double& v : p.factor.span()) v += 0.01 * rng.gaussian();
  return p;
}

double softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                             Matrix& probabilities) {
  const std::size_t B = logits.rows();
  const std::size_t C = logits.cols();
  probabilities = Matrix(B, C);
  double loss = 0.0;
  for (std::size_t n = 0; n < B; ++n) {
    const double m = kern::max(logits.row(n), C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double e = std::exp(logits(n, c) - m);
      probabilities(n, c) = e;
      z += e;
    }
    kern::scale(probabilities.row(n), 1.0 / z, C);
    loss -= logits(n, static_cast<std::size_t>(labels[n])) - m - std::log(z);
  }
  return loss / static_cast<double>(B);
}

LossOutput lace_forward(const LaceParams& params, const Matrix& embeddings,
                        std::span<const int> labels, double eps) {
  validate_batch(params.dim(), params.classes(), embeddings, labels, eps);
  const ForwardCache f = run_forward(params, embeddings, eps);
  LossOutput out;
  out.scores = f.scores;
  out.loss = softmax_cross_entropy(out.scores, labels, out.probabilities);
  return out;
}

Matrix lace_scores(const LaceParams& params, const Matrix& embeddings, double eps) {
  if (embeddings.cols() != params.dim())
    throw std::invalid_argument("lace_scores: embedding dimension mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("lace_scores: eps must be > 0");
  return run_forward(params, embeddings, eps).scores;
}

GradientSet lace_backward(const LaceParams& params, const Matrix& embeddings,
                          std::span<const int> labels, double eps,
                          LossOutput* forward_out) {
  validate_batch(params.dim(), params.classes(), embeddings, labels, eps);
  const ForwardCache f = run_forward(params, embeddings, eps);
  LossOutput out;
  out.scores = f.scores;
  out.loss = softmax_cross_entropy(out.scores, labels, out.probabilities);
  const Matrix w = softmax_cotangent(out, labels);
  GradientSet g = backward_core(params, f, w, w, eps);
  if (forward_out != nullptr) *forward_out = std::move(out);
  return g;
}

GradientSet lace_backward_paper_forms(const LaceParams& params,
                                      const Matrix& embeddings,
                                      std::span<const int> labels, double eps) {
  validate_batch(params.dim(), params.classes(), embeddings, labels, eps);
  const ForwardCache f = run_forward(params, embeddings, eps);
  LossOutput out;
  out.scores = f.scores;
  out.loss = softmax_cross_entropy(out.scores, labels, out.probabilities);

  const std::size_t B = embeddings.rows();
  const std::size_t C = params.classes();
  const double inv_b = 1.0 / static_cast<double>(B);

  // Signature weights: -(1 - p_nc)/B for every sample, label or not.
  Matrix w_sig(B, C);
  // Mean/covariance weights: +1/B on the non-label classes only.
  Matrix w_cov(B, C);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      w_sig(n, c) = (out.probabilities(n, c) - 1.0) * inv_b;
      w_cov(n, c) = static_cast<std::size_t>(labels[n]) == c ? 0.0 : inv_b;
    }

  GradientSet g = backward_core(params, f, w_sig, w_cov, eps);
  g.d_embeddings = Matrix(B, params.dim());
  return g;
}

ParamCount lace_param_count(std::size_t d, std::size_t classes) {
  if (d < 1 || classes < 1)
    throw std::invalid_argument("lace_param_count: d and C must be >= 1");
  ParamCount pc;
  pc.signatures = d * classes;
  pc.mean = d;
  pc.factor = d * d;
  pc.extra_vs_softmax = d * (d + 1);
  return pc;
}

// ---------------------------------------------------------------------------

BaselineHead BaselineHead::softmax(std::size_t d, std::size_t classes, Rng& rng) {
  BaselineHead h;
  h.variant = BaselineVariant::plain_softmax;
  h.weights = Matrix(d, classes);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : h.weights.span()) v = std_dev * rng.gaussian();
  h.bias = Vector(classes);
  return h;
}

BaselineHead BaselineHead::cosface(std::size_t d, std::size_t classes, double margin,
                                   double gamma, Rng& rng) {
  if (!(gamma > 0.0)) throw std::invalid_argument("cosface: gamma must be > 0");
  if (margin < 0.0) throw std::invalid_argument("cosface: margin must be >= 0");
  BaselineHead h = softmax(d, classes, rng);
  h.variant = BaselineVariant::cosine_margin;
  h.margin = margin;
  h.gamma = gamma;
  return h;
}

LossOutput softmax_ce_forward(const BaselineHead& head, const Matrix& embeddings,
                              std::span<const int> labels) {
  validate_batch(head.dim(), head.classes(), embeddings, labels, 1.0);
  LossOutput out;
  out.scores = matmul(embeddings, head.weights);
  for (std::size_t n = 0; n < out.scores.rows(); ++n)
    for (std::size_t c = 0; c < out.scores.cols(); ++c)
      out.scores(n, c) += head.bias[c];
  out.loss = softmax_cross_entropy(out.scores, labels, out.probabilities);
  return out;
}

LossOutput softmax_ce_angular_form(const BaselineHead& head,
                                   const Matrix& embeddings,
                                   std::span<const int> labels) {
  for (std::size_t c = 0; c < head.bias.dim(); ++c)
    if (head.bias[c] != 0.0)
      throw std::invalid_argument("softmax_ce_angular_form: bias must be zero");
  validate_batch(head.dim(), head.classes(), embeddings, labels, 1.0);

  const std::size_t B = embeddings.rows();
  const std::size_t d = head.dim();
  const std::size_t C = head.classes();

  Vector w_norm(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += head.weights(i, c) * head.weights(i, c);
    w_norm[c] = std::sqrt(s);
  }

  LossOutput out;
  out.scores = Matrix(B, C);
  for (std::size_t n = 0; n < B; ++n) {
    const double z_norm = std::sqrt(kern::sqnorm(embeddings.row(n), d));
    for (std::size_t c = 0; c < C; ++c) {
      double cos_theta = 0.0;
      if (w_norm[c] > 0.0 && z_norm > 0.0) {
        double p = 0.0;
        for (std::size_t i = 0; i < d; ++i) p += head.weights(i, c) * embeddings(n, i);
        cos_theta = p / (w_norm[c] * z_norm);
      }
      out.scores(n, c) = w_norm[c] * z_norm * cos_theta;
    }
  }
  out.loss = softmax_cross_entropy(out.scores, labels, out.probabilities);
  return out;
}

namespace {

// cos(theta) table between embedding rows and weight columns, zero where
// either side has zero norm.
Matrix cosine_table(const Matrix& weights, const Matrix& embeddings,
                    Vector& w_norm, Vector& z_norm) {
  const std::size_t B = embeddings.rows();
  const std::size_t d = weights.rows();
  const std::size_t C = weights.cols();
  w_norm = Vector(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += weights(i, c) * weights(i, c);
    w_norm[c] = std::sqrt(s);
  }
  z_norm = Vector(B);
  for (std::size_t n = 0; n < B; ++n)
    z_norm[n] = std::sqrt(kern::sqnorm(embeddings.row(n), d));

  Matrix cos = matmul(embeddings, weights);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      if (w_norm[c] > 0.0 && z_norm[n] > 0.0)
        cos(n, c) /= w_norm[c] * z_norm[n];
      else
        cos(n, c) = 0.0;
    }
  return cos;
}

}  // namespace

LossOutput cosine_margin_forward(const BaselineHead& head, const Matrix& embeddings,
                                 std::span<const int> labels) {
  if (!(head.gamma > 0.0))
    throw std::invalid_argument("cosine_margin_forward: gamma must be > 0");
  validate_batch(head.dim(), head.classes(), embeddings, labels, 1.0);

  Vector w_norm, z_norm;
  LossOutput out;
  out.scores = cosine_table(head.weights, embeddings, w_norm, z_norm);
  for (std::size_t n = 0; n < out.scores.rows(); ++n)
    for (std::size_t c = 0; c < out.scores.cols(); ++c) {
      const double margin = (static_cast<std::size_t>(labels[n]) == c) ? head.margin : 0.0;
      out.scores(n, c) = head.gamma * (out.scores(n, c) - margin);
    }
  out.loss = softmax_cross_entropy(out.scores, labels, out.probabilities);
  return out;
}

BaselineGradients baseline_backward(const BaselineHead& head,
                                    const Matrix& embeddings,
                                    std::span<const int> labels,
                                    LossOutput* forward_out) {
  const std::size_t B = embeddings.rows();
  const std::size_t d = head.dim();
  const std::size_t C = head.classes();

  BaselineGradients g;
  g.d_weights = Matrix(d, C);
  g.d_bias = Vector(C);

  if (head.variant == BaselineVariant::plain_softmax) {
    const LossOutput out = softmax_ce_forward(head, embeddings, labels);
    const Matrix dlogits = softmax_cotangent(out, labels);
    g.d_weights = matmul_tn(embeddings, dlogits);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < C; ++c) g.d_bias[c] += dlogits(n, c);
    g.d_embeddings = matmul_nt(dlogits, head.weights);
    if (forward_out != nullptr) *forward_out = out;
    return g;
  }

  // cosine_margin: logits = gamma * (cos - m*onehot); bias unused.
  const LossOutput out = cosine_margin_forward(head, embeddings, labels);
  if (forward_out != nullptr) *forward_out = out;
  Matrix dcos = softmax_cotangent(out, labels);
  kern::scale(dcos.data(), head.gamma, dcos.span().size());

  Vector w_norm, z_norm;
  const Matrix cos = cosine_table(head.weights, embeddings, w_norm, z_norm);

  g.d_embeddings = Matrix(B, d);
  for (std::size_t n = 0; n < B; ++n) {
    if (z_norm[n] == 0.0) continue;
    for (std::size_t c = 0; c < C; ++c) {
      if (w_norm[c] == 0.0) continue;
      const double a = dcos(n, c);
      if (a == 0.0) continue;
      // d cos / d z = (w_hat - cos * z_hat) / ||z||
      for (std::size_t i = 0; i < d; ++i) {
        const double w_hat = head.weights(i, c) / w_norm[c];
        const double z_hat = embeddings(n, i) / z_norm[n];
        g.d_embeddings(n, i) += a * (w_hat - cos(n, c) * z_hat) / z_norm[n];
        g.d_weights(i, c) += a * (z_hat - cos(n, c) * w_hat) / w_norm[c];
      }
    }
  }
  return g;
}

}  // namespace lace
