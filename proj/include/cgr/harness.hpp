#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cgr/baselines.hpp"
#include "cgr/contextrnn.hpp"
#include "cgr/metrics.hpp"
#include "cgr/taskgen.hpp"
#include "cgr/taskmodel.hpp"

namespace cgr {

enum class LearnerKind { Context, Adam, EWC, OWP };

std::string learner_name(LearnerKind k);
LearnerKind learner_from_name(const std::string& name);

struct ExperimentConfig {
  std::vector<int> task_order = {0, 1, 2, 3, 4, 5};
  int tm_trials_per_task = 500;
  int batches_per_task = 1000;
  int batch_size = 256;
  int eval_every = 25;  // batches between evaluations
  int n_eval = 200;     // test trials per task and evaluation
  int n_ll_eval = 100;  // trials for task-model LL evaluation
  int fisher_trials = 256;
  int owp_trials = 256;
  int compgen_adapt_trials = 512;
  uint64_t seed = 0;
  int threads = 1;
  std::string preset = "paper";

  GenConfig gen;
  RNNConfig rnn;
  TaskModelConfig tm;

  double context_lr = 1e-3;
  double baseline_lr = 0.01;
  double l2_coef = 1e-5;
  double activity_thresh = 1e-3;
  double ewc_lambda = 1e5;
  double owp_ridge = 1e-3;

  void validate() const;
};

// "paper" keeps the defaults above; "desk" shrinks to laptop scale; "smoke"
// is for fast tests.
void apply_preset(ExperimentConfig& cfg, const std::string& name);

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// Per task phase, isolation accounting for the no-forgetting property:
// contexts that were allocated before the phase and never gated nor
// L2-regularized during it must come out bit-identical.
struct IsolationRecord {
  int task = -1;
  std::vector<int> untouched_contexts;
  bool all_identical = true;
};

struct ContinualResult {
  MetricsLog log;
  TaskModelState tm;
  ContextBank bank;
  TrainState ts;
  GeneralRNN net;  // baselines only
  std::vector<IsolationRecord> isolation;
  TaskSuite suite;
};

// Sequential training over cfg.task_order: task-model trials first, then RNN
// batches gated by training-time inference; evaluation uses test-time
// inference. Baselines run the identical protocol on the general RNN.
ContinualResult run_continual(const ExperimentConfig& cfg, LearnerKind kind,
                              const std::string& run_id, MetricsLog* shared_log = nullptr);

// Forward transfer: train A then B (run "fwd-A-B"), plus a from-scratch
// reference for B (run "scratch-B", emitted once per distinct B).
MetricsLog run_transfer_forward(const ExperimentConfig& cfg,
                                const std::vector<std::pair<int, int>>& pairs,
                                LearnerKind kind = LearnerKind::Context);

// Backward transfer: train A for short_budget batches, then B, evaluating A
// throughout.
MetricsLog run_transfer_backward(const ExperimentConfig& cfg,
                                 const std::vector<std::pair<int, int>>& pairs, int short_budget,
                                 LearnerKind kind = LearnerKind::Context);

struct CompgenResult {
  MetricsLog log;
  bool bank_frozen_ok = true;  // context learner: RNN untouched during adaptation
  int trials_to_80pct = -1;    // earliest evaluated trial count reaching 80%
};

// Pretrain on M'Pro, M'Anti, MemoryPro; then adapt to MemoryAnti. The context
// learner freezes the RNN and updates only the task model; baselines keep
// training the full model.
CompgenResult run_compgen(const ExperimentConfig& cfg, LearnerKind kind);

// Mean per-trial log likelihood of fresh trials of task c under the learned
// parameters, and under the merged ground truth.
double mean_trial_ll(const TaskModelState& tm, const TaskSuite& suite, const GenConfig& gen,
                     int c, int n_trials, uint64_t seed);
double mean_ground_truth_ll(const TaskSuite& suite, const GenConfig& gen, int c, int n_trials,
                            uint64_t seed);

// Fraction of steps whose test-time argmax epoch matches the true path with
// F and M merged.
double test_time_path_accuracy(const TaskModelState& tm, const TaskSuite& suite,
                               const GenConfig& gen, int c, int n_trials, uint64_t seed);

// Per-trial log rows "(trial_index, task_id, ll, n_encountered_epochs)".
std::string tm_ll_log_to_text(const std::vector<std::array<double, 4>>& rows);

}  // namespace cgr
