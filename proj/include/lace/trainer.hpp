#pragma once

// Mini-batch training: seeded shuffles, Adam on the backbone plus whichever
// head is selected, validation-based early stopping with best-snapshot
// restore. Single-threaded and bit-reproducible for a fixed (seed, config,
// data) triple.

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lace/backbone.hpp"
#include "lace/data.hpp"
#include "lace/loss.hpp"

namespace lace {

enum class LossKind { lace, softmax, cosine_margin };

const char* loss_kind_name(LossKind k);

struct TrainConfig {
  std::size_t max_epochs = 300;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.10;
  AblationFlags ablation;
  LossKind loss = LossKind::lace;
  double cosface_margin = 0.4;
  double cosface_gamma = 30.0;
  double eps = 1e-12;  // normalization floor inside the LACE head
  bool augment = true; // honor the dataset's augmentation recipe

  void validate() const;  // throws std::invalid_argument
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0, train_acc = 0.0;
  double val_loss = 0.0, val_acc = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t stop_epoch = 0;
  std::string stop_reason;  // "early_stop" or "max_epochs"
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double wall_seconds = 0.0;
};

// Training aborted on a non-finite loss; carries the diagnostics the spec
// asks for.
class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(std::size_t epoch, std::size_t batch_index, double max_abs_grad);
  std::size_t epoch;
  std::size_t batch_index;
  double max_abs_grad;
};

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update, step count t >= 1.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, std::size_t t, const TrainConfig& cfg);

// Stop once the observed loss has not improved for `patience` consecutive
// epochs. Pure bookkeeping, unit-tested against synthetic traces.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);
  // Returns true when training should stop after this observation.
  bool observe(double val_loss);
  bool last_improved() const { return last_improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t epochs_seen_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_loss_ = 0.0;
  bool last_improved_ = false;
};

using Head = std::variant<LaceParams, BaselineHead>;

// Scores used for prediction: ACE scores for LACE, logits for baselines.
Matrix head_scores(const Head& head, const Matrix& embeddings, double eps);

// Lowest index wins exact ties.
std::vector<int> predict_labels(const Matrix& scores);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<double> per_class_accuracy;
};

EvalResult evaluate(const Backbone& model, const Head& head, const Matrix& inputs,
                    std::span<const int> labels, const TrainConfig& cfg);

// Trains model and head in place on the prepared split and returns the
// per-epoch report; parameters end at the best-validation-loss snapshot.
TrainReport train(const TrainConfig& cfg, Backbone& model, Head& head,
                  const SplitDataset& data);

// Convenience: seeded init of head + backbone followed by train().
struct TrainOutcome {
  Backbone model;
  Head head;
  TrainReport report;
};
TrainOutcome run_training(const TrainConfig& cfg,
                          const std::variant<MlpSpec, CnnSpec>& arch,
                          const SplitDataset& data);

void write_epochs_csv(const std::string& path, const TrainReport& report);

// Deterministic key=value block for summary.txt (no timestamps, byte-stable
// across reruns).
std::string format_summary(const TrainConfig& cfg, const TrainReport& report,
                           const EvalResult& test);

}  // namespace lace
