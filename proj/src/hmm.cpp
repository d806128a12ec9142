#include "cgr/hmm.hpp"

#include <cmath>

#include "cgr/numerics.hpp"

namespace cgr::hmm {

Forward forward(const Mat& log_emit, const Vec& log_pi, const Mat& log_trans) {
  const int T = static_cast<int>(log_emit.rows());
  const int Z = static_cast<int>(log_emit.cols());
  Forward f;
  f.log_alpha.resize(T, Z);
  f.log_norm.resize(T);

  Vec cur = log_pi + log_emit.row(0).transpose();
  Vec next(Z);
  for (int t = 0;; ++t) {
    const double norm = log_sum_exp(cur);
    if (norm == kNegInf) {
      // Keep the valid prefix; filtering may still use steps before dead_t.
      f.dead_t = t;
      f.ll = kNegInf;
      f.log_alpha.bottomRows(T - t).setConstant(kNegInf);
      f.log_norm.tail(T - t).setConstant(kNegInf);
      return f;
    }
    f.log_norm(t) = norm;
    f.log_alpha.row(t) = (cur.array() - norm).transpose();

    if (t + 1 == T) break;
    for (int z = 0; z < Z; ++z) {
      double m = kNegInf;
      for (int zp = 0; zp < Z; ++zp) {
        const double v = f.log_alpha(t, zp) + log_trans(zp, z);
        if (v > m) m = v;
      }
      if (m == kNegInf) {
        next(z) = kNegInf;
      } else {
        double acc = 0.0;
        for (int zp = 0; zp < Z; ++zp) {
          const double v = f.log_alpha(t, zp) + log_trans(zp, z);
          if (v != kNegInf) acc += std::exp(v - m);
        }
        next(z) = m + std::log(acc);
      }
      next(z) += log_emit(t + 1, z);
    }
    cur = next;
  }
  f.ll = f.log_norm.sum();
  return f;
}

Mat backward(const Mat& log_emit, const Mat& log_trans) {
  const int T = static_cast<int>(log_emit.rows());
  const int Z = static_cast<int>(log_emit.cols());
  Mat log_beta(T, Z);
  log_beta.row(T - 1).setZero();
  for (int t = T - 2; t >= 0; --t) {
    for (int z = 0; z < Z; ++z) {
      double m = kNegInf;
      for (int zp = 0; zp < Z; ++zp) {
        const double v = log_trans(z, zp) + log_emit(t + 1, zp) + log_beta(t + 1, zp);
        if (v > m) m = v;
      }
      if (m == kNegInf) {
        log_beta(t, z) = kNegInf;
        continue;
      }
      double acc = 0.0;
      for (int zp = 0; zp < Z; ++zp) {
        const double v = log_trans(z, zp) + log_emit(t + 1, zp) + log_beta(t + 1, zp);
        if (v != kNegInf) acc += std::exp(v - m);
      }
      log_beta(t, z) = m + std::log(acc);
    }
  }
  return log_beta;
}

}  // namespace cgr::hmm
