#include "lace/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "lace/kernels.hpp"

namespace lace {

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::lace: return "lace";
    case LossKind::softmax: return "softmax";
    case LossKind::cosine_margin: return "cosface";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) && lr != 0.0) throw std::invalid_argument("config: lr must be >= 0");
  if (lr < 0.0) throw std::invalid_argument("config: lr must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("config: val_fraction must be in (0,1)");
  if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("config: eps must be > 0");
  if (!(cosface_gamma > 0.0))
    throw std::invalid_argument("config: cosface_gamma must be > 0");
  if (cosface_margin < 0.0)
    throw std::invalid_argument("config: cosface_margin must be >= 0");
}

NumericalFailure::NumericalFailure(std::size_t epoch_, std::size_t batch_index_,
                                   double max_abs_grad_)
    : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch_) +
                         ", batch " + std::to_string(batch_index_) +
                         " (max |grad| = " + std::to_string(max_abs_grad_) + ")"),
      epoch(epoch_),
      batch_index(batch_index_),
      max_abs_grad(max_abs_grad_) {}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, std::size_t t, const TrainConfig& cfg) {
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, double(t));
  const double corr2 = 1.0 - std::pow(b2, double(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / corr1;
    const double v_hat = state.v[i] / corr2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {}

bool EarlyStopper::observe(double val_loss) {
  ++epochs_seen_;
  if (epochs_seen_ == 1 || val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epochs_seen_;
    stale_ = 0;
    last_improved_ = true;
    return false;
  }
  last_improved_ = false;
  return ++stale_ >= patience_;
}

Matrix head_scores(const Head& head, const Matrix& embeddings, double eps) {
  if (const auto* lace = std::get_if<LaceParams>(&head))
    return lace_scores(*lace, embeddings, eps);
  const auto& base = std::get<BaselineHead>(head);
  // Labels only shift margin logits; for scoring we want the raw table, which
  // for cosface is gamma*cos and for softmax the plain logits.
  const std::size_t B = embeddings.rows();
  if (base.variant == BaselineVariant::plain_softmax) {
    Matrix scores = matmul(embeddings, base.weights);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t c = 0; c < base.classes(); ++c) scores(n, c) += base.bias[c];
    return scores;
  }
  BaselineHead no_margin = base;
  no_margin.margin = 0.0;  // inference scores are the margin-free gamma*cos
  std::vector<int> zeros(B, 0);
  return cosine_margin_forward(no_margin, embeddings, zeros).scores;
}

std::vector<int> predict_labels(const Matrix& scores) {
  std::vector<int> pred(scores.rows());
  for (std::size_t n = 0; n < scores.rows(); ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols(); ++c)
      if (scores(n, c) > scores(n, best)) best = c;
    pred[n] = int(best);
  }
  return pred;
}

namespace {

std::size_t head_classes(const Head& head) {
  if (const auto* lace = std::get_if<LaceParams>(&head)) return lace->classes();
  return std::get<BaselineHead>(head).classes();
}

struct Snapshot {
  std::vector<double> backbone;
  Head head;
};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

EvalResult evaluate(const Backbone& model, const Head& head, const Matrix& inputs,
                    std::span<const int> labels, const TrainConfig& cfg) {
  if (inputs.rows() == 0) throw std::invalid_argument("evaluate: empty split");
  const std::size_t classes = head_classes(head);
  EvalResult r;
  r.per_class_accuracy.assign(classes, 0.0);
  std::vector<double> class_total(classes, 0.0);

  const std::size_t chunk = 512;
  Tape tape;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < inputs.rows(); start += chunk) {
    const std::size_t n = std::min(chunk, inputs.rows() - start);
    Matrix x(n, inputs.cols());
    std::copy(inputs.row(start), inputs.row(start) + n * inputs.cols(), x.data());
    const Matrix emb = model.forward(x, tape);
    const Matrix scores = head_scores(head, emb, cfg.eps);
    Matrix probs;
    loss_sum += softmax_cross_entropy(scores, labels.subspan(start, n), probs) * double(n);
    const std::vector<int> pred = predict_labels(scores);
    for (std::size_t i = 0; i < n; ++i) {
      const int truth = labels[start + i];
      class_total[std::size_t(truth)] += 1.0;
      if (pred[i] == truth) {
        ++correct;
        r.per_class_accuracy[std::size_t(truth)] += 1.0;
      }
    }
  }
  r.accuracy = double(correct) / double(inputs.rows());
  r.mean_loss = loss_sum / double(inputs.rows());
  for (std::size_t c = 0; c < classes; ++c)
    if (class_total[c] > 0.0) r.per_class_accuracy[c] /= class_total[c];
  return r;
}

TrainReport train(const TrainConfig& cfg, Backbone& model, Head& head,
                  const SplitDataset& data) {
  cfg.validate();
  if (data.train_x.rows() == 0) throw std::invalid_argument("train: empty dataset");

  const auto t_start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  // One Adam state per parameter group; frozen groups never get a state.
  AdamState adam_backbone(model.num_params());
  std::vector<AdamState> adam_head;
  if (auto* lace = std::get_if<LaceParams>(&head)) {
    adam_head.emplace_back(lace->signatures.span().size());
    adam_head.emplace_back(cfg.ablation.use_mean ? lace->mean.dim() : 0);
    adam_head.emplace_back(cfg.ablation.use_cov ? lace->factor.span().size() : 0);
  } else {
    auto& base = std::get<BaselineHead>(head);
    adam_head.emplace_back(base.weights.span().size());
    adam_head.emplace_back(base.variant == BaselineVariant::plain_softmax
                               ? base.bias.dim()
                               : 0);
  }

  TrainReport report;
  EarlyStopper stopper(cfg.patience);
  Snapshot best{model.params(), head};

  std::vector<std::size_t> order(data.train_x.rows());
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  Tape tape;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);

    double train_loss = 0.0;
    std::size_t train_correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const std::vector<std::size_t> rows(order.begin() + long(start),
                                          order.begin() + long(start + n));
      const Matrix x = assemble_batch(data, rows, rng, cfg.augment);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = data.train_y[rows[i]];

      const Matrix emb = model.forward(x, tape);

      LossOutput out;
      Matrix d_emb;
      double grad_peak = 0.0;
      ++step;
      if (auto* lace = std::get_if<LaceParams>(&head)) {
        GradientSet g = lace_backward(*lace, emb, y, cfg.eps, &out);
        d_emb = std::move(g.d_embeddings);
        grad_peak = std::max({max_abs(g.d_signatures.span()), max_abs(g.d_mean.span()),
                              max_abs(g.d_factor.span()), max_abs(d_emb.span())});
        if (!std::isfinite(out.loss))
          throw NumericalFailure(epoch, batch_index, grad_peak);
        adam_step(lace->signatures.span(), g.d_signatures.span(), adam_head[0], step, cfg);
        if (cfg.ablation.use_mean)
          adam_step(lace->mean.span(), g.d_mean.span(), adam_head[1], step, cfg);
        if (cfg.ablation.use_cov)
          adam_step(lace->factor.span(), g.d_factor.span(), adam_head[2], step, cfg);
      } else {
        auto& base = std::get<BaselineHead>(head);
        BaselineGradients g = baseline_backward(base, emb, y, &out);
        d_emb = std::move(g.d_embeddings);
        grad_peak = std::max({max_abs(g.d_weights.span()), max_abs(g.d_bias.span()),
                              max_abs(d_emb.span())});
        if (!std::isfinite(out.loss))
          throw NumericalFailure(epoch, batch_index, grad_peak);
        adam_step(base.weights.span(), g.d_weights.span(), adam_head[0], step, cfg);
        if (base.variant == BaselineVariant::plain_softmax)
          adam_step(base.bias.span(), g.d_bias.span(), adam_head[1], step, cfg);
      }

      const std::vector<double> backbone_grads = model.backward(tape, d_emb);
      grad_peak = std::max(grad_peak, max_abs(backbone_grads));
      if (!std::isfinite(grad_peak)) throw NumericalFailure(epoch, batch_index, grad_peak);
      adam_step(model.params(), backbone_grads, adam_backbone, step, cfg);

      train_loss += out.loss * double(n);
      const std::vector<int> pred = predict_labels(out.scores);
      for (std::size_t i = 0; i < n; ++i)
        if (pred[i] == y[i]) ++train_correct;
    }

    const EvalResult val = evaluate(model, head, data.val_x, data.val_y, cfg);
    EpochStats es;
    es.epoch = epoch;
    es.train_loss = train_loss / double(order.size());
    es.train_acc = double(train_correct) / double(order.size());
    es.val_loss = val.mean_loss;
    es.val_acc = val.accuracy;
    report.epochs.push_back(es);

    const bool stop = stopper.observe(val.mean_loss);
    if (stopper.last_improved()) best = Snapshot{model.params(), head};
    report.stop_epoch = epoch;
    if (stop) {
      report.stop_reason = "early_stop";
      break;
    }
    if (epoch == cfg.max_epochs) report.stop_reason = "max_epochs";
  }

  model.params() = best.backbone;
  head = best.head;
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best_loss();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

TrainOutcome run_training(const TrainConfig& cfg,
                          const std::variant<MlpSpec, CnnSpec>& arch,
                          const SplitDataset& data) {
  cfg.validate();
  Backbone model = std::holds_alternative<MlpSpec>(arch)
                       ? Backbone(Mlp(std::get<MlpSpec>(arch)))
                       : Backbone(Cnn(std::get<CnnSpec>(arch)));
  Rng rng(cfg.seed);
  model.init_he(rng);

  const std::size_t d = model.embed_dim();
  const std::size_t classes = data.num_classes;
  Head head = [&]() -> Head {
    switch (cfg.loss) {
      case LossKind::lace:
        return LaceParams::init(d, classes, rng, cfg.ablation);
      case LossKind::softmax:
        return BaselineHead::softmax(d, classes, rng);
      case LossKind::cosine_margin:
        return BaselineHead::cosface(d, classes, cfg.cosface_margin,
                                     cfg.cosface_gamma, rng);
    }
    throw std::logic_error("run_training: bad loss kind");
  }();

  TrainOutcome out{std::move(model), std::move(head), {}};
  out.report = train(cfg, out.model, out.head, data);
  return out;
}

void write_epochs_csv(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[128];
  for (const EpochStats& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch,
                  e.train_loss, e.train_acc, e.val_loss, e.val_acc);
    out << buf;
  }
}

std::string format_summary(const TrainConfig& cfg, const TrainReport& report,
                           const EvalResult& test) {
  char buf[128];
  std::string s;
  auto kv = [&](const char* key, const std::string& value) {
    s += key;
    s += " = ";
    s += value;
    s += "\n";
  };
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv("loss", loss_kind_name(cfg.loss));
  kv("seed", std::to_string(cfg.seed));
  kv("use_mean", cfg.ablation.use_mean ? "true" : "false");
  kv("use_cov", cfg.ablation.use_cov ? "true" : "false");
  kv("epochs_run", std::to_string(report.stop_epoch));
  kv("stop_reason", report.stop_reason);
  kv("best_epoch", std::to_string(report.best_epoch));
  kv("best_val_loss", fmt(report.best_val_loss));
  kv("test_loss", fmt(test.mean_loss));
  kv("test_accuracy", fmt(test.accuracy));
  std::string pca;
  for (std::size_t c = 0; c < test.per_class_accuracy.size(); ++c) {
    if (c > 0) pca += ",";
    pca += fmt(test.per_class_accuracy[c]);
  }
  kv("per_class_accuracy", pca);
  return s;
}

}  // namespace lace
