#pragma once

#include <vector>

#include "cgr/common.hpp"
#include "cgr/rng.hpp"
#include "cgr/taskgen.hpp"

namespace cgr {

struct RNNConfig {
  int n_hidden = 256;
  int rank = 3;
  double alpha = 0.1;    // decay rate
  double sigma_r = 0.05; // recurrent noise std
  bool relu = true;      // otherwise tanh
  int input_dim = 5;
  int output_dim = 3;

  void validate() const;
};

// One context's weight set: a low-rank recurrent component U V^T plus its own
// input/output weights and biases.
struct ContextWeights {
  Mat U, V;    // N x r
  Mat W_in;    // N x in
  Vec b_in;    // N
  Mat W_out;   // out x N
  Vec b_out;   // out

  void setZero(const RNNConfig& cfg);
  double squaredNorm() const;
};

struct ContextBank {
  RNNConfig cfg;
  std::vector<ContextWeights> ctx;
  std::vector<bool> allocated;

  ContextBank() = default;
  ContextBank(const RNNConfig& cfg_, int n_slots);
  int n_slots() const { return static_cast<int>(ctx.size()); }
  int n_allocated() const;
  long parameter_count() const;
};

// Gaussian init scaled so a fresh component has O(1) spectral norm and does
// not perturb already-trained contexts.
void allocate_context(ContextBank& bank, int z, Rng& rng);

// Sparse gating row: (context, weight) pairs, renormalized over allocated
// slots. Throws when no allocated slot carries mass.
using GateRow = std::vector<std::pair<int, double>>;
GateRow active_contexts(const ContextBank& bank, const Eigen::Ref<const RowVec>& p_z,
                        double threshold = 0.0);

// Effective composed weights for one gating distribution. The recurrent part
// stays factored; dense_rec() materializes it for tests only.
struct EffectiveWeights {
  GateRow zw;
  Mat W_in;
  Vec b_in;
  Mat W_out;
  Vec b_out;

  Vec apply_rec(const ContextBank& bank, const Vec& phi_h) const;
  Mat dense_rec(const ContextBank& bank) const;
};

EffectiveWeights compose_weights(const ContextBank& bank, const Eigen::Ref<const RowVec>& p_z);

Vec step(const Vec& h, const Vec& s_t, const ContextBank& bank, const EffectiveWeights& w,
         Rng& rng, double sigma_r);

struct ForwardCache {
  Mat H;      // (T+1) x N, row t holds h_t (row 0 = h_0 = 0)
  Mat Phi;    // (T+1) x N, phi(h_t)
  Mat S;      // inputs as consumed
  Mat P;      // T x n_slots gating actually applied (renormalized)
  Mat Yhat;   // T x out
};

// Weights are recomposed from the gating at every step; gating rows are
// renormalized over allocated slots (entries below gate_floor dropped so
// never-gated contexts stay exactly untouched).
ForwardCache forward_trial(const ContextBank& bank, const Mat& gating, const Mat& s, Rng& rng,
                           bool noisy = true, double gate_floor = 0.0);

double weighted_mse(const Mat& yhat, const Mat& y, const Mat& mask);

// m = 1 on response-epoch steps, 0.2 elsewhere (per output channel and step).
Mat loss_mask(const Trial& trial, const TaskSuite& suite);

struct BankGrads {
  std::vector<ContextWeights> g;
  std::vector<bool> touched;

  BankGrads() = default;
  explicit BankGrads(const ContextBank& bank);
  void accumulate(const BankGrads& other);
  void scale(double a);
};

// Exact BPTT gradients of weighted_mse for every context component; the
// gating is treated as constant and the cached noisy trajectory is
// differentiated pathwise.
BankGrads backward_trial(const ContextBank& bank, const ForwardCache& cache, const Mat& y,
                         const Mat& mask);

struct AdamSlot {
  ContextWeights m, v;
  long step = 0;
  double lr = 1e-3;
  bool l2_on = false;
};

struct TrainState {
  std::vector<AdamSlot> slot;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 1e-3;
  double lr_decay = 0.5;    // applied per finished task to active contexts
  double l2_coef = 1e-5;
  double activity_thresh = 1e-3;  // p(z|task) above this marks a context active

  TrainState() = default;
  TrainState(const ContextBank& bank, double base_lr_);
};

// Standard Adam with bias correction and per-context learning rates. Only
// touched or L2-active contexts are stepped, so never-gated contexts stay
// bit-identical.
void adam_step(ContextBank& bank, TrainState& ts, const BankGrads& grads);

void decay_lr(TrainState& ts, const std::vector<bool>& active);

// Correct iff the fixation output stays at or below 0.5 while the fixation
// cue is on and the mean response-epoch output direction is within pi/10 of
// the target direction.
bool evaluate_perf(const Mat& yhat, const Trial& trial, const TaskSuite& suite);

}  // namespace cgr
