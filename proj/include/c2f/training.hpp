// Learning procedures: distant supervision (pipeline), REINFORCE with a
// geometric curriculum, soft attention end to end, and the flat reader.
#pragma once

#include "c2f/config.hpp"
#include "c2f/evaluation.hpp"
#include "c2f/model.hpp"
#include "c2f/optim.hpp"
#include "c2f/selection.hpp"
#include "c2f/text.hpp"
#include "c2f/util.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace c2f {

// ---------------------------------------------------------------------------
// Objectives, recorded on the model's tape. All are log-likelihoods (<= 0)
// to be maximized.

/// log p(s* | x, d) + log p(y* | s*, x); requires ex.gold.
Var pipeline_objective(Bound& b, const PreparedExample& ex, const RunConfig& cfg);

struct ReinforceTerms {
  Var reward;           // log p(y* | sampled summary, x)
  Var sample_log_prob;  // log-probability of the ordered without-replacement sample
  std::vector<int> sampled;
};

/// Terms for a given ordered sample of sentence indices.
ReinforceTerms reinforce_terms(Bound& b, const PreparedExample& ex, const RunConfig& cfg,
                               const SelectionDistribution& dist, std::vector<int> sampled);
/// Samples cfg.k sentences from the selector and builds the terms.
ReinforceTerms reinforce_sample(Bound& b, const PreparedExample& ex, const RunConfig& cfg, Rng& rng);

/// Surrogate whose gradient is grad R + (R - baseline) grad log p(sample):
/// the reward coefficient is treated as a constant.
Var reinforce_surrogate(const ReinforceTerms& terms, double baseline = 0.0);

/// log p(y* | x, soft summary).
Var soft_objective(Bound& b, const PreparedExample& ex, const RunConfig& cfg);

/// log p(y* | x, first budget document tokens).
Var base_objective(Bound& b, const FlatExample& ex);

// ---------------------------------------------------------------------------

struct StepReport {
  double objective = 0;  // value of the objective (the reward on REINFORCE steps)
  bool distant = false;  // distant supervision objective used
  std::vector<int> sampled;
  double reward = 0;
  double grad_norm = 0;  // global norm before clipping
  bool skipped = false;  // optimizer rejected a non-finite gradient
};

struct BatchReport {
  int examples = 0;
  int distant_steps = 0;
  double objective_sum = 0;
  double grad_norm = 0;
  bool skipped = false;
};

/// Owns the optimizer state and the curriculum / sampling streams of a run.
class Trainer {
 public:
  Trainer(Model& model, const RunConfig& cfg);

  /// Adds weight * d(-objective) for one example into the parameter grads.
  StepReport accumulate(const PreparedExample& ex, int epoch, double weight);
  StepReport accumulate(const FlatExample& ex, double weight);

  // Single-example optimizer steps.
  StepReport pipeline_step(const PreparedExample& ex);
  StepReport reinforce_step(const PreparedExample& ex, int epoch);
  StepReport soft_step(const PreparedExample& ex);
  StepReport base_step(const FlatExample& ex);

  /// Batch step: gradients averaged over the batch, one optimizer update.
  BatchReport train_batch(std::span<const PreparedExample* const> batch, int epoch);
  BatchReport train_batch(std::span<const FlatExample* const> batch);

  /// Curriculum coin: true with probability decay^epoch.
  bool use_distant(int epoch);

  const RunConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  double reward_baseline() const { return baseline_; }

 private:
  StepReport accumulate_method(const PreparedExample& ex, Method method, int epoch, double weight);
  StepReport finish_step(StepReport r);

  Model& model_;
  RunConfig cfg_;
  ad::Adam<Real> opt_;
  Rng curriculum_;
  Rng sampling_;
  double baseline_ = 0;
  bool baseline_seen_ = false;
};

// ---------------------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  std::string split;
  std::optional<double> answer_acc;
  std::optional<double> sent_acc;
  std::optional<double> objective;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const EpochMetrics& m);

struct TrainingData {
  std::vector<RawExample> train;
  std::vector<RawExample> dev;
};

struct TrainingOptions {
  std::string out_dir;  // checkpoints, metrics.csv and run.json; empty writes nothing
  std::function<void(const std::string&)> log;
  /// Called on every metrics row; returning true ends training after that epoch.
  std::function<bool(const EpochMetrics&)> stop;
};

struct TrainingResult {
  Vocabulary vocab;
  Model model;  // after the last epoch
  std::vector<EpochMetrics> metrics;
  std::vector<double> distant_fraction;  // per trained epoch (index 0 is epoch 1)
  int best_epoch = 0;
  double best_dev_answer_acc = 0;
  double final_dev_answer_acc = 0;
  std::optional<double> final_dev_sent_acc;
};

/// Builds the vocabulary on the train split, trains cfg.epochs epochs with
/// per-epoch dev evaluation and checkpoints ("epoch-<e>.ckpt", "best.ckpt").
TrainingResult run_training(const TrainingData& data, const RunConfig& cfg, const TrainingOptions& opts = {});

/// Copy of all parameter values.
Model clone_model(const Model& model);

}  // namespace c2f
