#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cgr/common.hpp"
#include "cgr/rng.hpp"

namespace cgr {

// Epoch vocabulary shared by all tasks.
namespace epoch {
enum : int { F = 0, S, RP, RA, M, RMP, RMA, SDM, RDMP, RDMA, kCount };
}

// Task identities; the two memory variants without a memory epoch are
// appended by make_mprime_tasks.
namespace task {
enum : int { DelayPro = 0, DelayAnti, MemoryPro, MemoryAnti, DMPro, DMAnti, MPrimePro, MPrimeAnti };
}

struct GenConfig {
  double sigma = 0.05;          // emission noise std
  int n_x = 8;                  // trial-variable count
  int min_epoch_dur = 5;        // steps
  double self_prob = 0.9;       // per-step stay probability after min duration
  int trial_len = 50;           // T
  double input_noise_std = 0.044721359549995793928;  // sqrt(2/alpha)*sigma_in, alpha=0.1, sigma_in=0.01
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct EpochDef {
  int epoch_id = 0;
  std::string label;
  // mean_table[x] = (s_bar in R^5, y_bar in R^3) for trial variable x.
  std::vector<std::pair<Vec, Vec>> mean_table;
  bool is_response = false;
  bool fixation_required = false;  // fixation cue on: mean input channel 5 is 0

  Vec obs_mean(int x) const;  // concatenated [s_bar, y_bar]
};

struct TaskDef {
  int task_id = 0;
  std::string name;
  std::vector<int> epoch_order;  // deterministic epoch sequence
  Vec initial_probs;             // over epoch ids, sums to 1
  Mat transitions;               // row-stochastic over epoch ids
  std::set<int> terminal_epochs;
};

struct Trial {
  Mat s;                    // T x 5
  Mat y;                    // T x 3
  int c = 0;                // task id
  std::vector<int> z_true;  // length T
  int x_true = 0;

  int length() const { return static_cast<int>(s.rows()); }
  Mat q() const;  // T x 8, [s y]
};

struct TaskSuite {
  std::vector<EpochDef> epochs;
  std::vector<TaskDef> tasks;

  const TaskDef& task(int c) const;
  int n_tasks() const { return static_cast<int>(tasks.size()); }
};

// The six-task suite from the default generative family; theta_x = (x-1)*pi/4
// for the angle tasks and the eight (gamma, gamma') pairs for the DM tasks.
TaskSuite build_default_suite(const GenConfig& cfg);

// Memory-guided variants without the memory epoch: F -> S -> R_{M,P/A}.
// Reuses the suite's epoch definitions.
std::pair<TaskDef, TaskDef> make_mprime_tasks(const TaskSuite& suite);

// Suite with the two M' tasks appended (ids task::MPrimePro/MPrimeAnti).
TaskSuite with_mprime(const TaskSuite& suite);

// Length-T epoch path: hold each epoch min_epoch_dur steps, continue with
// self_prob per step, then advance along epoch_order; the last epoch absorbs.
std::vector<int> sample_epoch_path(const TaskDef& task, const GenConfig& cfg, Rng& rng);

Trial sample_trial(const TaskSuite& suite, int c, const GenConfig& cfg, Rng& rng);

// Input noise is added only when a trial is served to an RNN, never to the
// task model.
Mat noisy_inputs(const Trial& trial, const GenConfig& cfg, Rng& rng);

// log p(q_{1:T} | c) under the true parameters with F and M merged into one
// epoch, via the same forward recursion the task model uses.
double ground_truth_ll(const TaskSuite& suite, const Trial& trial, const GenConfig& cfg);

// Serialization (versioned, round-trip exact on floats).
std::string suite_to_json(const TaskSuite& suite);
TaskSuite suite_from_json(const std::string& text);

// Columnar trial dump: one row per step, "t c x z s1..s5 y1..y3".
std::string trial_to_text(const Trial& trial);

}  // namespace cgr
