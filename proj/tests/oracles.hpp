#pragma once

// Test-only reference implementations, kept independent of the library's
// inference and gradient paths.

#include <cmath>
#include <vector>

#include "cgr/common.hpp"
#include "cgr/contextrnn.hpp"
#include "cgr/numerics.hpp"
#include "cgr/taskmodel.hpp"

namespace cgr::oracle {

// Exhaustive enumeration over all (z-path, x) combinations of the factored
// chain. log_emit[x] is T x Z; log_trans/log_pi in log space.
struct EnumResult {
  double ll = kNegInf;
  std::vector<Mat> gamma;              // [x] -> T x Z joint posterior
  std::vector<std::vector<Mat>> xi;    // [x][t-1] -> Z x Z joint posterior
};

inline EnumResult enumerate_posteriors(const std::vector<Mat>& log_emit, const Vec& log_pi,
                                       const Mat& log_trans, const Vec& log_px) {
  const int n_x = static_cast<int>(log_emit.size());
  const int T = static_cast<int>(log_emit[0].rows());
  const int Z = static_cast<int>(log_emit[0].cols());

  EnumResult res;
  res.gamma.assign(n_x, Mat::Zero(T, Z));
  res.xi.assign(n_x, std::vector<Mat>(std::max(0, T - 1), Mat::Zero(Z, Z)));

  // first pass: total log evidence via logsumexp over paths
  std::vector<int> path(T, 0);
  std::vector<double> weights;
  std::vector<std::pair<int, std::vector<int>>> entries;
  for (int x = 0; x < n_x; ++x) {
    std::fill(path.begin(), path.end(), 0);
    while (true) {
      double lp = log_px(x) + log_pi(path[0]) + log_emit[x](0, path[0]);
      for (int t = 1; t < T; ++t)
        lp += log_trans(path[t - 1], path[t]) + log_emit[x](t, path[t]);
      if (lp != kNegInf) {
        weights.push_back(lp);
        entries.emplace_back(x, path);
      }
      int t = T - 1;
      while (t >= 0 && ++path[t] == Z) path[t--] = 0;
      if (t < 0) break;
    }
  }
  if (weights.empty()) return res;
  res.ll = log_sum_exp(Eigen::Map<Vec>(weights.data(), weights.size()));

  for (size_t i = 0; i < entries.size(); ++i) {
    const double w = std::exp(weights[i] - res.ll);
    const int x = entries[i].first;
    const auto& p = entries[i].second;
    for (int t = 0; t < T; ++t) res.gamma[x](t, p[t]) += w;
    for (int t = 1; t < T; ++t) res.xi[x][t - 1](p[t - 1], p[t]) += w;
  }
  return res;
}

// Same enumeration driven from TaskModelParams, for direct comparison with
// smooth()/forward_messages().
inline EnumResult enumerate_taskmodel(const Mat& q, int c, const TaskModelParams& params,
                                      const EncounterTables& tables) {
  const int T = static_cast<int>(q.rows());
  const int Z = params.z_slots;
  const double sigma2 = params.sigma_hat * params.sigma_hat;
  std::vector<Mat> log_emit(params.n_x, Mat::Constant(T, Z, kNegInf));
  for (int x = 0; x < params.n_x; ++x)
    for (int z = 0; z < Z; ++z) {
      if (!tables.f_xz(x, z)) continue;
      for (int t = 0; t < T; ++t)
        log_emit[x](t, z) = log_gauss_iso(
            (q.row(t) - params.q_hat[z].row(x)).squaredNorm(), kObsDim, sigma2);
    }
  Vec log_pi(Z), log_px = Vec::Constant(params.n_x, -std::log(double(params.n_x)));
  Mat log_trans(Z, Z);
  for (int z = 0; z < Z; ++z) {
    const double p = params.pi_hat(c, z);
    log_pi(z) = p > 0 ? std::log(p) : kNegInf;
    for (int zp = 0; zp < Z; ++zp) {
      const double t = params.lambda_hat[c](z, zp);
      log_trans(z, zp) = t > 0 ? std::log(t) : kNegInf;
    }
  }
  return enumerate_posteriors(log_emit, log_pi, log_trans, log_px);
}

// Central finite differences of the deterministic (noise-off) trial loss with
// respect to every allocated context parameter.
inline double trial_loss(const ContextBank& bank, const Mat& gating, const Mat& s, const Mat& y,
                         const Mat& mask) {
  Rng rng(0);
  ForwardCache fc = forward_trial(bank, gating, s, rng, false);
  return weighted_mse(fc.Yhat, y, mask);
}

struct FdReport {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline void fd_check_block(ContextBank& bank, double* data, long n, const double* analytic,
                           const Mat& gating, const Mat& s, const Mat& y, const Mat& mask,
                           double step, FdReport& rep) {
  for (long i = 0; i < n; ++i) {
    const double orig = data[i];
    data[i] = orig + step;
    const double lp = trial_loss(bank, gating, s, y, mask);
    data[i] = orig - step;
    const double lm = trial_loss(bank, gating, s, y, mask);
    data[i] = orig;
    const double fd = (lp - lm) / (2.0 * step);
    const double g = analytic[i];
    const double denom = std::max({1e-3, std::abs(fd), std::abs(g)});
    rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - g) / denom);
    ++rep.checked;
  }
}

inline FdReport finite_difference_check(ContextBank& bank, const Mat& gating, const Mat& s,
                                        const Mat& y, const Mat& mask, double step = 1e-5) {
  Rng rng(0);
  ForwardCache fc = forward_trial(bank, gating, s, rng, false);
  BankGrads grads = backward_trial(bank, fc, y, mask);
  FdReport rep;
  for (int z = 0; z < bank.n_slots(); ++z) {
    if (!bank.allocated[z]) continue;
    auto& w = bank.ctx[z];
    auto& g = grads.g[z];
    fd_check_block(bank, w.U.data(), w.U.size(), g.U.data(), gating, s, y, mask, step, rep);
    fd_check_block(bank, w.V.data(), w.V.size(), g.V.data(), gating, s, y, mask, step, rep);
    fd_check_block(bank, w.W_in.data(), w.W_in.size(), g.W_in.data(), gating, s, y, mask, step,
                   rep);
    fd_check_block(bank, w.b_in.data(), w.b_in.size(), g.b_in.data(), gating, s, y, mask, step,
                   rep);
    fd_check_block(bank, w.W_out.data(), w.W_out.size(), g.W_out.data(), gating, s, y, mask, step,
                   rep);
    fd_check_block(bank, w.b_out.data(), w.b_out.size(), g.b_out.data(), gating, s, y, mask, step,
                   rep);
  }
  return rep;
}

}  // namespace cgr::oracle
