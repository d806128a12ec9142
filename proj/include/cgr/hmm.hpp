#pragma once

#include "cgr/common.hpp"

namespace cgr::hmm {

// Forward (filtering) pass over one discrete chain, all in log space.
// log_alpha rows are normalized to logsumexp 0; log_norm holds the per-step
// normalizers, so ll = log_norm.sum(). dead_t >= 0 marks the first step at
// which every state had zero likelihood (ll is -inf then).
struct Forward {
  Mat log_alpha;  // T x Z
  Vec log_norm;   // T
  double ll = 0.0;
  int dead_t = -1;
};

Forward forward(const Mat& log_emit, const Vec& log_pi, const Mat& log_trans);

// Backward (smoothing) pass; returns T x Z log beta with beta_T = 1.
Mat backward(const Mat& log_emit, const Mat& log_trans);

}  // namespace cgr::hmm
