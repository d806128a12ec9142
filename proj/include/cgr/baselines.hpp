#pragma once

#include <vector>

#include "cgr/common.hpp"
#include "cgr/contextrnn.hpp"
#include "cgr/rng.hpp"

namespace cgr {

// Unconstrained RNN with a one-hot task input, shared across tasks; the
// comparison substrate for vanilla Adam, EWC and OWP.
struct GeneralRNN {
  RNNConfig cfg;
  int n_tasks = 0;
  Mat W_rec;   // N x N
  Mat W_in;    // N x in
  Mat W_task;  // N x n_tasks
  Vec b_in;    // N
  Mat W_out;   // out x N
  Vec b_out;   // out

  GeneralRNN() = default;
  GeneralRNN(const RNNConfig& cfg_, int n_tasks_, Rng& rng);
  long parameter_count() const;
};

struct GeneralGrads {
  Mat W_rec, W_in, W_task;
  Vec b_in;
  Mat W_out;
  Vec b_out;

  GeneralGrads() = default;
  explicit GeneralGrads(const GeneralRNN& net);
  void setZero();
  void accumulate(const GeneralGrads& o);
  void scale(double a);
};

struct GeneralCache {
  Mat H;     // (T+1) x N
  Mat Phi;   // (T+1) x N
  Mat S;     // T x in
  Mat Yhat;  // T x out
  int c = 0;
};

GeneralCache general_forward(const GeneralRNN& net, const Mat& s, int c, Rng& rng,
                             bool noisy = true);
GeneralGrads general_backward(const GeneralRNN& net, const GeneralCache& cache, const Mat& y,
                              const Mat& mask);

struct FlatAdam {
  GeneralGrads m, v;
  long step = 0;
  double lr = 0.01;
  double l2 = 1e-5;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  FlatAdam() = default;
  FlatAdam(const GeneralRNN& net, double lr_);
};

void general_adam_step(GeneralRNN& net, FlatAdam& adam, const GeneralGrads& grads);

// ---- EWC -------------------------------------------------------------

struct EwcState {
  GeneralGrads fisher;      // accumulated diagonal Fisher, summed over tasks
  GeneralRNN theta_star;    // snapshot at the end of the previous task
  double lambda = 1e5;
  bool has_snapshot = false;

  EwcState() = default;
  explicit EwcState(const GeneralRNN& net, double lambda_ = 1e5);
};

// Adds lambda * F_i * (theta_i - theta*_i) to every gradient entry.
void ewc_adjust_grads(const GeneralRNN& net, const EwcState& ewc, GeneralGrads& grads);

// Empirical squared-gradient estimate of the Fisher diagonal at the current
// parameters, averaged over n_trials; summed into ewc.fisher and snapshots
// theta*.
void ewc_finish_task(EwcState& ewc, const GeneralRNN& net, const TaskSuite& suite,
                     const GenConfig& gen, int c, int n_trials, Rng& rng);

// ---- OWP -------------------------------------------------------------

struct OwpState {
  Mat ZZt;   // over [phi(h); s; onehot(c)]
  Mat HHt;   // over pre-activations h
  double n_points = 0.0;
  double ridge_coef = 1e-3;  // lambda = ridge_coef * n_points
  Mat P1;     // right projection for [W_rec W_in W_task]
  Mat P2;     // left projection
  Mat P1out;  // right projection for W_out (phi(h) block of ZZt)

  OwpState() = default;
  OwpState(const GeneralRNN& net, double ridge_coef_ = 1e-3);
  bool empty() const { return n_points == 0.0; }
};

// Accumulates activity outer products from trials of the just-finished task
// and refreshes the cached projections.
void owp_update_stats(OwpState& owp, const GeneralRNN& net, const TaskSuite& suite,
                      const GenConfig& gen, int c, int n_trials, Rng& rng);

// Two-sided projected gradient P2 G P1 for the concatenated recurrent/input/
// task weights, and G P1out for the readout. Identity before any task.
void owp_project(const OwpState& owp, GeneralGrads& grads);

}  // namespace cgr
