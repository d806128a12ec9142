#include "cgr/taskmodel.hpp"

#include <algorithm>
#include <cmath>

#include "cgr/hmm.hpp"
#include "cgr/numerics.hpp"

namespace cgr {

void TaskModelConfig::validate() const {
  if (z_slots < 1 || c_slots < 1) throw ConfigError("taskmodel slot counts must be >= 1");
  if (!(eta_params > 0.0 && eta_params <= 1.0)) throw ConfigError("eta_params must be in (0, 1]");
  if (!(eta_stats >= 0.0 && eta_stats < 1.0)) throw ConfigError("eta_stats must be in [0, 1)");
  if (em_iters < 1) throw ConfigError("em_iters must be >= 1");
  if (match_tol <= 0.0) throw ConfigError("match_tol must be > 0");
  if (gate_thresh < 0.0) throw ConfigError("gate_thresh must be >= 0");
  if (sigma_init <= 0.0) throw ConfigError("sigma_init must be > 0");
}

EncounterTables::EncounterTables(int c_slots, int n_x, int z_slots) {
  f_cx.setConstant(c_slots, n_x, false);
  f_xz.setConstant(n_x, z_slots, false);
}

int EncounterTables::n_encountered_slots() const {
  int n = 0;
  for (int z = 0; z < f_xz.cols(); ++z)
    if (f_xz.col(z).any()) ++n;
  return n;
}

TaskModelParams::TaskModelParams(const TaskModelConfig& cfg, int n_x_)
    : n_x(n_x_), z_slots(cfg.z_slots), c_slots(cfg.c_slots) {
  q_hat.assign(z_slots, Mat::Zero(n_x, kObsDim));
  sigma_hat = cfg.sigma_init;
  lambda_hat.assign(c_slots, Mat::Identity(z_slots, z_slots));
  pi_hat = Mat::Zero(c_slots, z_slots);
  task_seen.assign(c_slots, 0);
}

SuffStats::SuffStats(const TaskModelConfig& cfg, int n_x) {
  emit_sum.assign(cfg.z_slots, Mat::Zero(n_x, kObsDim));
  emit_cnt = Mat::Zero(cfg.z_slots, n_x);
  trans_cnt.assign(cfg.c_slots, Mat::Zero(cfg.z_slots, cfg.z_slots));
  init_cnt = Mat::Zero(cfg.c_slots, cfg.z_slots);
}

TaskModelState::TaskModelState(const TaskModelConfig& cfg_, int n_x) : cfg(cfg_) {
  cfg.validate();
  params = TaskModelParams(cfg, n_x);
  stats = SuffStats(cfg, n_x);
  tables = EncounterTables(cfg.c_slots, n_x, cfg.z_slots);
}

namespace {

void check_task(const TaskModelParams& params, int c) {
  if (c < 0 || c >= params.c_slots) throw ConfigError("task id out of range: " + std::to_string(c));
  if (!params.task_seen[c])
    throw InferenceError("task " + std::to_string(c) + " not encountered yet");
}

// T x Z log emission densities for one trial variable; unencountered cells
// contribute -inf. In InputsOnly mode only the 5 input channels are scored.
Mat emission_table(const Mat& obs, const TaskModelParams& params, const EncounterTables& tables,
                   int x, ObsMode mode) {
  const int T = static_cast<int>(obs.rows());
  const int Z = params.z_slots;
  const int dim = (mode == ObsMode::Full) ? kObsDim : kInputDim;
  const double sigma2 = params.sigma_hat * params.sigma_hat;
  const double log_const = -0.5 * dim * (kLog2Pi + std::log(sigma2));

  Mat out(T, Z);
  out.setConstant(kNegInf);
  for (int z = 0; z < Z; ++z) {
    if (!tables.f_xz(x, z)) continue;
    const auto mean = params.q_hat[z].row(x).head(dim);
    out.col(z) = ((obs.rowwise() - mean).rowwise().squaredNorm() * (-0.5 / sigma2)).array() +
                 log_const;
  }
  return out;
}

Mat log_of(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) > 0.0 ? std::log(m(i, j)) : kNegInf;
  return out;
}

Vec log_of(const Vec& v) {
  Vec out(v.size());
  for (int i = 0; i < v.size(); ++i) out(i) = v(i) > 0.0 ? std::log(v(i)) : kNegInf;
  return out;
}

struct Passes {
  std::vector<Mat> log_emit;  // per x
  ForwardMessages fwd;
  Mat log_trans;
  Vec log_pi;
};

Passes run_forward(const Mat& obs, int c, const TaskModelParams& params,
                   const EncounterTables& tables, ObsMode mode) {
  check_task(params, c);
  if (obs.rows() < 1) throw InferenceError("empty observation sequence");
  Passes p;
  p.log_trans = log_of(params.lambda_hat[c]);
  p.log_pi = log_of(Vec(params.pi_hat.row(c).transpose()));
  p.fwd.ll_x.resize(params.n_x);
  int worst_dead = -1;
  for (int x = 0; x < params.n_x; ++x) {
    p.log_emit.push_back(emission_table(obs, params, tables, x, mode));
    auto f = hmm::forward(p.log_emit.back(), p.log_pi, p.log_trans);
    p.fwd.ll_x(x) = f.ll;
    if (f.dead_t >= 0) worst_dead = std::max(worst_dead, f.dead_t);
    p.fwd.log_alpha.push_back(std::move(f.log_alpha));
    p.fwd.log_norm.push_back(std::move(f.log_norm));
  }
  const double log_px = -std::log(static_cast<double>(params.n_x));
  p.fwd.ll = log_sum_exp(p.fwd.ll_x.array() + log_px);
  if (p.fwd.ll == kNegInf)
    throw InferenceError("zero likelihood at t=" + std::to_string(worst_dead) +
                         " for task " + std::to_string(c));
  return p;
}

}  // namespace

ForwardMessages forward_messages(const Mat& obs, int c, const TaskModelParams& params,
                                 const EncounterTables& tables, ObsMode mode) {
  return run_forward(obs, c, params, tables, mode).fwd;
}

std::vector<Mat> backward_messages(const Mat& obs, int c, const TaskModelParams& params,
                                   const EncounterTables& tables, ObsMode mode) {
  check_task(params, c);
  const Mat log_trans = log_of(params.lambda_hat[c]);
  std::vector<Mat> out;
  for (int x = 0; x < params.n_x; ++x)
    out.push_back(hmm::backward(emission_table(obs, params, tables, x, mode), log_trans));
  return out;
}

PosteriorBundle smooth(const Mat& q, int c, const TaskModelParams& params,
                       const EncounterTables& tables) {
  Passes p = run_forward(q, c, params, tables, ObsMode::Full);
  const int T = static_cast<int>(q.rows());
  const int Z = params.z_slots;
  const double log_px = -std::log(static_cast<double>(params.n_x));

  PosteriorBundle b;
  b.ll = p.fwd.ll;
  // posterior weight of each trial variable
  Vec log_wx = (p.fwd.ll_x.array() + log_px) - b.ll;

  b.gamma.assign(params.n_x, Mat::Zero(T, Z));
  b.xi.assign(params.n_x, {});
  Mat pair(Z, Z);
  for (int x = 0; x < params.n_x; ++x) {
    b.xi[x].assign(std::max(0, T - 1), Mat::Zero(Z, Z));
    const double wx = std::exp(log_wx(x));
    if (wx < 1e-300) continue;
    const Mat log_beta = hmm::backward(p.log_emit[x], p.log_trans);
    const Mat& la = p.fwd.log_alpha[x];
    for (int t = 0; t < T; ++t) {
      // alpha_t * beta_t renormalized row-wise; the per-step constants cancel.
      Vec row = la.row(t).transpose() + log_beta.row(t).transpose();
      const double norm = log_sum_exp(row);
      for (int z = 0; z < Z; ++z)
        b.gamma[x](t, z) = row(z) == kNegInf ? 0.0 : wx * std::exp(row(z) - norm);
    }
    for (int t = 1; t < T; ++t) {
      double m = kNegInf;
      for (int z = 0; z < Z; ++z)
        for (int zp = 0; zp < Z; ++zp) {
          pair(z, zp) = la(t - 1, z) + p.log_trans(z, zp) + p.log_emit[x](t, zp) +
                        log_beta(t, zp);
          if (pair(z, zp) > m) m = pair(z, zp);
        }
      if (m == kNegInf) continue;
      double acc = 0.0;
      for (int z = 0; z < Z; ++z)
        for (int zp = 0; zp < Z; ++zp)
          if (pair(z, zp) != kNegInf) acc += std::exp(pair(z, zp) - m);
      const double scale = wx / acc;
      for (int z = 0; z < Z; ++z)
        for (int zp = 0; zp < Z; ++zp)
          b.xi[x][t - 1](z, zp) =
              pair(z, zp) == kNegInf ? 0.0 : scale * std::exp(pair(z, zp) - m);
    }
  }
  return b;
}

namespace {

Mat filter_posterior(const Mat& obs, int c, const TaskModelParams& params,
                     const EncounterTables& tables, ObsMode mode) {
  Passes p = run_forward(obs, c, params, tables, mode);
  const int T = static_cast<int>(obs.rows());
  const int Z = params.z_slots;
  const double log_px = -std::log(static_cast<double>(params.n_x));

  // cumulative normalizers give log p(obs_{1:t} | x, c) up to time t
  Mat cum(T, params.n_x);
  for (int x = 0; x < params.n_x; ++x) {
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
      acc += p.fwd.log_norm[x](t);
      cum(t, x) = std::isfinite(acc) ? acc : kNegInf;
      if (!std::isfinite(acc)) acc = kNegInf;
    }
  }

  Mat out = Mat::Zero(T, Z);
  Vec lw(params.n_x);
  for (int t = 0; t < T; ++t) {
    for (int x = 0; x < params.n_x; ++x) lw(x) = cum(t, x) + log_px;
    const double norm = log_sum_exp(lw);
    if (norm == kNegInf)
      throw InferenceError("zero likelihood at t=" + std::to_string(t) + " for task " +
                           std::to_string(c));
    for (int x = 0; x < params.n_x; ++x) {
      const double wx = std::exp(lw(x) - norm);
      if (wx < 1e-300) continue;
      for (int z = 0; z < Z; ++z) {
        const double a = p.fwd.log_alpha[x](t, z);
        if (a != kNegInf) out(t, z) += wx * std::exp(a);
      }
    }
  }
  return out;
}

}  // namespace

Mat train_time_infer(const Mat& q, int c, const TaskModelParams& params,
                     const EncounterTables& tables) {
  return filter_posterior(q, c, params, tables, ObsMode::Full);
}

Mat test_time_infer(const Mat& s, int c, const TaskModelParams& params,
                    const EncounterTables& tables) {
  return filter_posterior(s, c, params, tables, ObsMode::InputsOnly);
}

namespace {

SuffStats stats_from_bundle(const PosteriorBundle& b, const Mat& q, int c,
                            const TaskModelParams& params, const TaskModelConfig& cfg) {
  SuffStats x(cfg, params.n_x);
  const int T = static_cast<int>(q.rows());
  for (int xv = 0; xv < params.n_x; ++xv) {
    const Mat& g = b.gamma[xv];
    for (int t = 0; t < T; ++t)
      for (int z = 0; z < params.z_slots; ++z) {
        const double w = g(t, z);
        if (w <= 0.0) continue;
        x.emit_sum[z].row(xv) += w * q.row(t);
        x.emit_cnt(z, xv) += w;
        x.resid_sum += w * (q.row(t) - params.q_hat[z].row(xv)).squaredNorm();
      }
    for (int z = 0; z < params.z_slots; ++z) x.init_cnt(c, z) += g(0, z);
    for (const auto& xi_t : b.xi[xv]) x.trans_cnt[c] += xi_t;
  }
  x.obs_cnt = static_cast<double>(T);
  return x;
}

}  // namespace

SuffStats getstats(const Mat& q, int c, const TaskModelParams& params,
                   const EncounterTables& tables, const TaskModelConfig& cfg) {
  return stats_from_bundle(smooth(q, c, params, tables), q, c, params, cfg);
}

void em_update(TaskModelParams& params, const SuffStats& stats, const GateMask& gate,
               const TaskModelConfig& cfg) {
  const double eta = cfg.eta_params;
  // rows below this mass carry no information (and subnormal sums would
  // overflow the normalization)
  constexpr double kCountFloor = 1e-12;
  for (int z = 0; z < params.z_slots; ++z)
    for (int x = 0; x < params.n_x; ++x) {
      if (!gate.emit(z, x)) continue;
      const double cnt = stats.emit_cnt(z, x);
      if (cnt <= kCountFloor) continue;
      params.q_hat[z].row(x) =
          (1.0 - eta) * params.q_hat[z].row(x) + eta * (stats.emit_sum[z].row(x) / cnt);
    }

  if (gate.task >= 0) {
    const int c = gate.task;
    Mat& lam = params.lambda_hat[c];
    for (int z = 0; z < params.z_slots; ++z) {
      const double row_sum = stats.trans_cnt[c].row(z).sum();
      if (row_sum <= kCountFloor) continue;
      lam.row(z) = (1.0 - eta) * lam.row(z) + eta * (stats.trans_cnt[c].row(z) / row_sum);
    }
    const double init_sum = stats.init_cnt.row(c).sum();
    if (init_sum > kCountFloor)
      params.pi_hat.row(c) =
          (1.0 - eta) * params.pi_hat.row(c) + eta * (stats.init_cnt.row(c) / init_sum);
  }

  if (stats.obs_cnt > 0.0) {
    const double var_new = std::max(1e-12, stats.resid_sum / (kObsDim * stats.obs_cnt));
    const double var = (1.0 - eta) * params.sigma_hat * params.sigma_hat + eta * var_new;
    params.sigma_hat = std::sqrt(var);
  }
}

namespace {

struct Cluster {
  Vec mean;
  double weight = 0.0;
};

// Change-point segmentation on consecutive differences, then merging of
// segment means within match_tol; deterministic stand-in for per-trial
// K-means on a piecewise constant signal.
std::vector<Cluster> cluster_trial(const Mat& q, const TaskModelParams& params,
                                   const TaskModelConfig& cfg) {
  const int T = static_cast<int>(q.rows());
  const double thresh = cfg.seg_thresh_mult * params.sigma_hat;
  std::vector<Cluster> clusters;
  int start = 0;
  for (int t = 1; t <= T; ++t) {
    const bool boundary = (t == T) || ((q.row(t) - q.row(t - 1)).norm() > thresh);
    if (!boundary) continue;
    Cluster seg;
    seg.weight = static_cast<double>(t - start);
    seg.mean = q.middleRows(start, t - start).colwise().mean().transpose();
    bool merged = false;
    for (auto& cl : clusters) {
      if ((cl.mean - seg.mean).norm() < cfg.match_tol) {
        cl.mean = (cl.mean * cl.weight + seg.mean * seg.weight) / (cl.weight + seg.weight);
        cl.weight += seg.weight;
        merged = true;
        break;
      }
    }
    if (!merged) clusters.push_back(std::move(seg));
    start = t;
  }
  return clusters;
}

// Best stored slot for a cluster mean under trial variable x, or -1. Ties in
// distance resolve to the lowest slot index.
int match_slot(const Cluster& cl, int x, const TaskModelParams& params,
               const EncounterTables& tables, const TaskModelConfig& cfg) {
  int best = -1;
  double best_d = cfg.match_tol;
  for (int z = 0; z < params.z_slots; ++z) {
    if (!tables.f_xz(x, z)) continue;
    const double d = (params.q_hat[z].row(x).transpose() - cl.mean).norm();
    if (d < best_d) {
      best_d = d;
      best = z;
    }
  }
  return best;
}

void init_task_params(TaskModelParams& params, const EncounterTables& tables, int c,
                      const TaskModelConfig& cfg) {
  std::vector<int> used;
  for (int z = 0; z < params.z_slots; ++z)
    if (tables.slot_used(z)) used.push_back(z);
  Mat lam = Mat::Identity(params.z_slots, params.z_slots);
  Vec pi = Vec::Zero(params.z_slots);
  const int m = static_cast<int>(used.size());
  for (int z : used) {
    pi(z) = 1.0 / m;
    if (m > 1) {
      lam(z, z) = cfg.lambda_self_init;
      const double off = (1.0 - cfg.lambda_self_init) / (m - 1);
      for (int zp : used)
        if (zp != z) lam(z, zp) = off;
    }
  }
  params.lambda_hat[c] = lam;
  params.pi_hat.row(c) = pi.transpose();
  params.task_seen[c] = 1;
}

}  // namespace

InitResult incremental_init(TaskModelParams& params, EncounterTables& tables, const Mat& q, int c,
                            const TaskModelConfig& cfg) {
  if (c < 0 || c >= params.c_slots)
    throw SlotExhaustion("task id " + std::to_string(c) + " exceeds c_slots; increase c_slots");

  const auto clusters = cluster_trial(q, params, cfg);
  const int n_cl = static_cast<int>(clusters.size());
  const int n_x = params.n_x;

  // matches(j, x): slot explaining cluster j under trial variable x, or -1.
  Eigen::MatrixXi matches(n_cl, n_x);
  for (int j = 0; j < n_cl; ++j)
    for (int x = 0; x < n_x; ++x) matches(j, x) = match_slot(clusters[j], x, params, tables, cfg);

  // Temporal consistency pass. Segments commit the candidate set in trial
  // order, so an early discriminating segment (e.g. the stimulus) pins the
  // trial variable before later segments whose observation model happens to
  // coincide with a cell of a different trial variable (R_MA at angle theta
  // equals R_MP at theta + pi) can hijack the assignment.
  std::vector<bool> cand(n_x, true);
  for (int j = 0; j < n_cl; ++j) {
    std::vector<bool> next = cand;
    bool any = false;
    for (int x = 0; x < n_x; ++x) {
      next[x] = cand[x] && matches(j, x) >= 0;
      any = any || next[x];
    }
    if (any) cand = next;  // conflicting segments stay unexplained and seed fresh cells
  }

  std::vector<int> n_matched(n_x, 0);
  for (int x = 0; x < n_x; ++x)
    for (int j = 0; j < n_cl; ++j)
      if (matches(j, x) >= 0) ++n_matched[x];

  // Cost of an assignment: how many globally fresh epoch slots its unmatched
  // segments would consume (simulating lowest-free allocation in order).
  auto new_global_slots = [&](int x) {
    std::vector<bool> taken(params.z_slots, false);
    int fresh = 0;
    for (int j = 0; j < n_cl; ++j) {
      if (matches(j, x) >= 0) continue;
      int slot = -1;
      for (int z = 0; z < params.z_slots; ++z)
        if (!tables.f_xz(x, z) && !taken[z]) {
          slot = z;
          break;
        }
      if (slot < 0) return params.z_slots + 1;  // would exhaust; worst cost
      taken[slot] = true;
      if (!tables.slot_used(slot)) ++fresh;
    }
    return fresh;
  };

  auto better = [&](int a, int b) {  // is a a better choice than b
    if (b < 0) return true;
    if (n_matched[a] != n_matched[b]) return n_matched[a] > n_matched[b];
    const bool ma = tables.f_cx(c, a), mb = tables.f_cx(c, b);
    if (ma != mb) return ma;
    return a < b;
  };

  int best_c = -1;
  for (int x = 0; x < n_x; ++x)
    if (cand[x] && better(x, best_c)) best_c = x;
  int fresh_x = -1;
  for (int x = 0; x < n_x; ++x)
    if (!tables.f_cx(c, x)) {
      fresh_x = x;
      break;
    }

  int x_r = best_c;
  if (fresh_x >= 0 && (x_r < 0 || new_global_slots(fresh_x) < new_global_slots(x_r)))
    x_r = fresh_x;
  if (x_r < 0)
    for (int x = 0; x < n_x; ++x)
      if (better(x, x_r)) x_r = x;
  if (x_r < 0) throw SlotExhaustion("no trial-variable slot available; increase n_x");

  InitResult res;
  res.x_r = x_r;
  tables.f_cx(c, x_r) = true;

  for (int j = 0; j < n_cl; ++j) {
    if (matches(j, x_r) >= 0) continue;  // already explained under x_r
    int slot = -1;
    for (int z = 0; z < params.z_slots; ++z)
      if (!tables.f_xz(x_r, z)) {
        slot = z;
        break;
      }
    if (slot < 0) throw SlotExhaustion("all epoch slots in use; increase z_slots");
    params.q_hat[slot].row(x_r) = clusters[j].mean.transpose();
    tables.f_xz(x_r, slot) = true;
    ++res.new_cells;
  }

  if (!params.task_seen[c]) init_task_params(params, tables, c, cfg);
  return res;
}

namespace {

SuffStats decayed_plus(const SuffStats& s, const SuffStats& x, double keep) {
  SuffStats out = s;
  for (size_t z = 0; z < out.emit_sum.size(); ++z)
    out.emit_sum[z] = keep * out.emit_sum[z] + x.emit_sum[z];
  out.emit_cnt = keep * out.emit_cnt + x.emit_cnt;
  for (size_t c = 0; c < out.trans_cnt.size(); ++c)
    out.trans_cnt[c] = keep * out.trans_cnt[c] + x.trans_cnt[c];
  out.init_cnt = keep * out.init_cnt + x.init_cnt;
  out.resid_sum = keep * out.resid_sum + x.resid_sum;
  out.obs_cnt = keep * out.obs_cnt + x.obs_cnt;
  return out;
}

}  // namespace

double learn_trial(TaskModelState& state, const Mat& q, int c) {
  const TaskModelConfig& cfg = state.cfg;
  TaskModelParams theta = state.params;
  EncounterTables tables = state.tables;
  incremental_init(theta, tables, q, c, cfg);

  TaskModelParams hat_theta = theta;
  SuffStats hat_s;
  double ll0 = 0.0;
  for (int k = 0; k < cfg.em_iters; ++k) {
    PosteriorBundle bundle = smooth(q, c, hat_theta, tables);
    if (k == 0) ll0 = bundle.ll;
    SuffStats x = stats_from_bundle(bundle, q, c, hat_theta, cfg);
    hat_s = decayed_plus(state.stats, x, 1.0 - cfg.eta_stats);
    GateMask gate;
    gate.emit = x.emit_cnt.array() > cfg.gate_thresh;
    gate.task = c;
    hat_theta = theta;
    em_update(hat_theta, hat_s, gate, cfg);
  }
  state.params = std::move(hat_theta);
  state.stats = std::move(hat_s);
  state.tables = std::move(tables);
  return ll0;
}

TaskModelState ground_truth_state(const TaskSuite& suite, const GenConfig& gen,
                                  const TaskModelConfig& cfg) {
  // merged slot layout: every epoch except M, with M folded onto F
  std::vector<int> slot_of(suite.epochs.size(), -1);
  std::vector<int> slot_epochs;
  for (size_t e = 0; e < suite.epochs.size(); ++e) {
    if (static_cast<int>(e) == epoch::M) continue;
    slot_of[e] = static_cast<int>(slot_epochs.size());
    slot_epochs.push_back(static_cast<int>(e));
  }
  slot_of[epoch::M] = slot_of[epoch::F];
  const int Z = static_cast<int>(slot_epochs.size());
  if (cfg.z_slots < Z) throw ConfigError("z_slots too small for ground truth state");

  TaskModelState st(cfg, gen.n_x);
  st.params.sigma_hat = gen.sigma;
  for (int z = 0; z < Z; ++z) {
    for (int x = 0; x < gen.n_x; ++x) {
      st.params.q_hat[z].row(x) = suite.epochs[slot_epochs[z]].obs_mean(x).transpose();
      st.tables.f_xz(x, z) = true;
    }
  }
  for (const auto& task : suite.tasks) {
    const int c = task.task_id;
    if (c >= cfg.c_slots) throw ConfigError("c_slots too small for ground truth state");
    Mat lam = Mat::Identity(cfg.z_slots, cfg.z_slots);
    Vec weight = Vec::Zero(Z);
    Mat acc = Mat::Zero(Z, Z);
    for (int e : task.epoch_order) {
      const int z = slot_of[e];
      for (size_t j = 0; j < suite.epochs.size(); ++j) acc(z, slot_of[j]) += task.transitions(e, j);
      weight(z) += 1.0;
    }
    for (int z = 0; z < Z; ++z)
      if (weight(z) > 0.0) {
        lam.row(z).setZero();
        lam.row(z).head(Z) = acc.row(z) / weight(z);
      }
    st.params.lambda_hat[c] = lam;
    Vec pi = Vec::Zero(cfg.z_slots);
    for (size_t e = 0; e < suite.epochs.size(); ++e) pi(slot_of[e]) += task.initial_probs(e);
    st.params.pi_hat.row(c) = pi.transpose();
    st.params.task_seen[c] = 1;
    for (int x = 0; x < gen.n_x; ++x) st.tables.f_cx(c, x) = true;
  }
  return st;
}

std::vector<int> map_slots_to_epochs(const TaskModelParams& params, const EncounterTables& tables,
                                     const TaskSuite& suite) {
  std::vector<int> out(params.z_slots, -1);
  const int n_e = static_cast<int>(suite.epochs.size());

  // transition mass flowing into a slot under the tasks that contain a given
  // epoch; disambiguates content-identical epochs (R_MA at theta equals R_MP
  // at theta + pi)
  auto inflow = [&](int z, int e) {
    double mass = 0.0;
    for (const auto& task : suite.tasks) {
      if (task.task_id >= params.c_slots || !params.task_seen[task.task_id]) continue;
      bool has_epoch = false;
      for (int eo : task.epoch_order)
        if (eo == e) has_epoch = true;
      if (!has_epoch) continue;
      mass += params.pi_hat(task.task_id, z);
      for (int zp = 0; zp < params.z_slots; ++zp)
        if (zp != z) mass += params.lambda_hat[task.task_id](zp, z);
    }
    return mass;
  };

  for (int z = 0; z < params.z_slots; ++z) {
    if (!tables.slot_used(z)) continue;
    Vec votes = Vec::Zero(n_e);
    for (int x = 0; x < params.n_x; ++x) {
      if (!tables.f_xz(x, z)) continue;
      double best_d = std::numeric_limits<double>::infinity();
      for (int e = 0; e < n_e; ++e)
        for (int xx = 0; xx < params.n_x; ++xx)
          best_d = std::min(
              best_d, (params.q_hat[z].row(x).transpose() - suite.epochs[e].obs_mean(xx)).norm());
      for (int e = 0; e < n_e; ++e) {
        double d = std::numeric_limits<double>::infinity();
        for (int xx = 0; xx < params.n_x; ++xx)
          d = std::min(d,
                       (params.q_hat[z].row(x).transpose() - suite.epochs[e].obs_mean(xx)).norm());
        if (d <= best_d + 1e-9) votes(e) += 1.0;  // all co-minimal epochs get the vote
      }
    }
    int e_max = 0;
    double best_score = -1.0;
    for (int e = 0; e < n_e; ++e) {
      if (votes(e) <= 0.0) continue;
      const double score = votes(e) + 1e-3 * inflow(z, e);
      if (score > best_score) {
        best_score = score;
        e_max = e;
      }
    }
    out[z] = (e_max == epoch::M) ? epoch::F : e_max;
  }
  return out;
}

}  // namespace cgr
