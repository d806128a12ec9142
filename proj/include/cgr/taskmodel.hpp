#pragma once

#include <vector>

#include "cgr/common.hpp"
#include "cgr/taskgen.hpp"

namespace cgr {

struct TaskModelConfig {
  int z_slots = 16;          // epoch slots available to the learner
  int c_slots = 12;          // task slots
  double eta_params = 0.2;   // parameter blend rate
  double eta_stats = 0.02;   // sufficient-statistic decay
  int em_iters = 2;          // K
  double match_tol = 0.35;   // Euclidean distance for recognizing a familiar segment mean
  double gate_thresh = 0.01; // posterior visitation mass required to update an emission cell
  double seg_thresh_mult = 6.0;  // change-point threshold, units of sigma_hat
  double sigma_init = 0.1;
  double lambda_self_init = 0.8;  // self-transition prior for a newly seen task

  void validate() const;
};

// Which (c, x) and (x, z) combinations have been encountered. Bits are only
// ever set, never cleared.
struct EncounterTables {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> f_cx;  // C x Nx
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> f_xz;  // Nx x Z

  EncounterTables() = default;
  EncounterTables(int c_slots, int n_x, int z_slots);
  bool slot_used(int z) const { return f_xz.col(z).any(); }
  int n_encountered_slots() const;
};

struct TaskModelParams {
  int n_x = 8;
  int z_slots = 16;
  int c_slots = 12;
  std::vector<Mat> q_hat;       // z -> (n_x x 8) emission means
  double sigma_hat = 0.1;
  std::vector<Mat> lambda_hat;  // c -> (Z x Z), row-stochastic
  Mat pi_hat;                   // C x Z
  std::vector<char> task_seen;  // c -> pi/lambda initialized

  TaskModelParams() = default;
  TaskModelParams(const TaskModelConfig& cfg, int n_x);
};

// Decayed accumulators of single-trial expected statistics. Also used for the
// raw single-trial statistics X.
struct SuffStats {
  std::vector<Mat> emit_sum;  // z -> (n_x x 8) sum of gamma * q
  Mat emit_cnt;               // Z x Nx
  std::vector<Mat> trans_cnt; // c -> (Z x Z)
  Mat init_cnt;               // C x Z
  double resid_sum = 0.0;     // sum of gamma * ||q - q_hat||^2
  double obs_cnt = 0.0;       // total posterior mass (= sum of T)

  SuffStats() = default;
  SuffStats(const TaskModelConfig& cfg, int n_x);
};

struct PosteriorBundle {
  // gamma[x] is T x Z holding the joint p(z_t = z, x | q_{1:T}, c).
  std::vector<Mat> gamma;
  // xi[x][t-1] is Z x Z holding p(z_{t-1} = z, z_t = z', x | q_{1:T}, c).
  std::vector<std::vector<Mat>> xi;
  double ll = 0.0;  // log p(q_{1:T} | c)
};

enum class ObsMode { Full, InputsOnly };

struct ForwardMessages {
  std::vector<Mat> log_alpha;  // x -> T x Z, rows normalized to logsumexp 0
  std::vector<Vec> log_norm;   // x -> T
  Vec ll_x;                    // log p(obs | x, c)
  double ll = 0.0;             // log p(obs | c)
};

ForwardMessages forward_messages(const Mat& obs, int c, const TaskModelParams& params,
                                 const EncounterTables& tables, ObsMode mode = ObsMode::Full);

std::vector<Mat> backward_messages(const Mat& obs, int c, const TaskModelParams& params,
                                   const EncounterTables& tables, ObsMode mode = ObsMode::Full);

PosteriorBundle smooth(const Mat& q, int c, const TaskModelParams& params,
                       const EncounterTables& tables);

// Causal filtering posteriors p(z_t | obs_{1:t}, c) for every t, marginalized
// over the trial variable. Training-time inference conditions on the full
// observations; test-time inference sees only the input channels.
Mat train_time_infer(const Mat& q, int c, const TaskModelParams& params,
                     const EncounterTables& tables);
Mat test_time_infer(const Mat& s, int c, const TaskModelParams& params,
                    const EncounterTables& tables);

// Expected single-trial sufficient statistics under the smoothed posterior.
SuffStats getstats(const Mat& q, int c, const TaskModelParams& params,
                   const EncounterTables& tables, const TaskModelConfig& cfg);

struct GateMask {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> emit;  // Z x Nx
  int task = -1;  // only this task's transition/initial rows update
};

// Theta <- Theta (1 - eta M) + eta f(S) M, elementwise over the gated cells;
// rows of f with no mass are left untouched.
void em_update(TaskModelParams& params, const SuffStats& stats, const GateMask& gate,
               const TaskModelConfig& cfg);

struct InitResult {
  int x_r = -1;
  int new_cells = 0;
};

// Per-trial segmentation + slot allocation applied before learning a trial
// (seeding emission means for unfamiliar segments, consistent with the
// encounter tables).
InitResult incremental_init(TaskModelParams& params, EncounterTables& tables, const Mat& q, int c,
                            const TaskModelConfig& cfg);

struct TaskModelState {
  TaskModelConfig cfg;
  TaskModelParams params;
  SuffStats stats;
  EncounterTables tables;

  TaskModelState() = default;
  TaskModelState(const TaskModelConfig& cfg_, int n_x);
};

// One online-EM step on a single trial; state is committed only on success.
// Returns the trial log likelihood under the pre-update (post-init) params.
double learn_trial(TaskModelState& state, const Mat& q, int c);

// Reference parameters built from the generative suite with F and M merged;
// useful for evaluation and sanity tests.
TaskModelState ground_truth_state(const TaskSuite& suite, const GenConfig& gen,
                                  const TaskModelConfig& cfg);

// Maps each used slot to the nearest generative epoch (F and M count as one),
// for scoring inferred paths against ground truth.
std::vector<int> map_slots_to_epochs(const TaskModelParams& params, const EncounterTables& tables,
                                     const TaskSuite& suite);

}  // namespace cgr
