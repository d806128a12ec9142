#include "cgr/contextrnn.hpp"

#include <cmath>

#include "cgr/numerics.hpp"

namespace cgr {

void RNNConfig::validate() const {
  if (n_hidden < 1) throw ConfigError("rnn.n_hidden must be >= 1");
  if (rank < 1) throw ConfigError("rnn.rank must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("rnn.alpha must be in (0, 1]");
  if (sigma_r < 0.0) throw ConfigError("rnn.sigma_r must be >= 0");
}

void ContextWeights::setZero(const RNNConfig& cfg) {
  U = Mat::Zero(cfg.n_hidden, cfg.rank);
  V = Mat::Zero(cfg.n_hidden, cfg.rank);
  W_in = Mat::Zero(cfg.n_hidden, cfg.input_dim);
  b_in = Vec::Zero(cfg.n_hidden);
  W_out = Mat::Zero(cfg.output_dim, cfg.n_hidden);
  b_out = Vec::Zero(cfg.output_dim);
}

double ContextWeights::squaredNorm() const {
  return U.squaredNorm() + V.squaredNorm() + W_in.squaredNorm() + b_in.squaredNorm() +
         W_out.squaredNorm() + b_out.squaredNorm();
}

ContextBank::ContextBank(const RNNConfig& cfg_, int n_slots) : cfg(cfg_) {
  cfg.validate();
  ctx.resize(n_slots);
  allocated.assign(n_slots, false);
}

int ContextBank::n_allocated() const {
  int n = 0;
  for (bool a : allocated) n += a;
  return n;
}

long ContextBank::parameter_count() const {
  long per = 2L * cfg.n_hidden * cfg.rank + cfg.n_hidden * cfg.input_dim + cfg.n_hidden +
             cfg.output_dim * cfg.n_hidden + cfg.output_dim;
  return per * n_allocated();
}

void allocate_context(ContextBank& bank, int z, Rng& rng) {
  if (z < 0 || z >= bank.n_slots()) throw ConfigError("context slot out of range");
  if (bank.allocated[z]) throw ConfigError("context slot " + std::to_string(z) + " already allocated");
  const auto& cfg = bank.cfg;
  ContextWeights w;
  w.setZero(cfg);
  const double uv_std = 1.0 / (std::sqrt(static_cast<double>(cfg.n_hidden)) *
                               std::sqrt(static_cast<double>(cfg.rank)));
  for (int i = 0; i < cfg.n_hidden; ++i)
    for (int r = 0; r < cfg.rank; ++r) {
      w.U(i, r) = uv_std * rng.normal();
      w.V(i, r) = uv_std * rng.normal();
    }
  const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  for (int i = 0; i < cfg.n_hidden; ++i)
    for (int j = 0; j < cfg.input_dim; ++j) w.W_in(i, j) = in_std * rng.normal();
  const double out_std = 1.0 / std::sqrt(static_cast<double>(cfg.n_hidden));
  for (int i = 0; i < cfg.output_dim; ++i)
    for (int j = 0; j < cfg.n_hidden; ++j) w.W_out(i, j) = out_std * rng.normal();
  bank.ctx[z] = std::move(w);
  bank.allocated[z] = true;
}

GateRow active_contexts(const ContextBank& bank, const Eigen::Ref<const RowVec>& p_z,
                        double threshold) {
  GateRow row;
  double mass = 0.0;
  for (int z = 0; z < p_z.size() && z < bank.n_slots(); ++z) {
    if (!bank.allocated[z]) continue;
    const double p = p_z(z);
    if (p > threshold) {
      row.emplace_back(z, p);
      mass += p;
    }
  }
  if (mass <= 0.0) throw InferenceError("gating has no mass on allocated contexts");
  for (auto& [z, p] : row) p /= mass;
  return row;
}

EffectiveWeights compose_weights(const ContextBank& bank, const Eigen::Ref<const RowVec>& p_z) {
  EffectiveWeights w;
  w.zw = active_contexts(bank, p_z);
  const auto& cfg = bank.cfg;
  w.W_in = Mat::Zero(cfg.n_hidden, cfg.input_dim);
  w.b_in = Vec::Zero(cfg.n_hidden);
  w.W_out = Mat::Zero(cfg.output_dim, cfg.n_hidden);
  w.b_out = Vec::Zero(cfg.output_dim);
  for (const auto& [z, p] : w.zw) {
    w.W_in.noalias() += p * bank.ctx[z].W_in;
    w.b_in.noalias() += p * bank.ctx[z].b_in;
    w.W_out.noalias() += p * bank.ctx[z].W_out;
    w.b_out.noalias() += p * bank.ctx[z].b_out;
  }
  return w;
}

Vec EffectiveWeights::apply_rec(const ContextBank& bank, const Vec& phi_h) const {
  Vec out = Vec::Zero(bank.cfg.n_hidden);
  for (const auto& [z, p] : zw)
    out.noalias() += p * (bank.ctx[z].U * (bank.ctx[z].V.transpose() * phi_h));
  return out;
}

Mat EffectiveWeights::dense_rec(const ContextBank& bank) const {
  Mat out = Mat::Zero(bank.cfg.n_hidden, bank.cfg.n_hidden);
  for (const auto& [z, p] : zw) out.noalias() += p * (bank.ctx[z].U * bank.ctx[z].V.transpose());
  return out;
}

namespace {

inline void apply_phi(const RNNConfig& cfg, const Vec& h, Vec& phi) {
  if (cfg.relu)
    phi = h.cwiseMax(0.0);
  else
    phi = h.array().tanh().matrix();
}

void check_finite(const Vec& h, int t) {
  if (!h.allFinite())
    throw InferenceError("non-finite hidden state at t=" + std::to_string(t));
}

}  // namespace

Vec step(const Vec& h, const Vec& s_t, const ContextBank& bank, const EffectiveWeights& w,
         Rng& rng, double sigma_r) {
  const auto& cfg = bank.cfg;
  Vec phi(cfg.n_hidden);
  apply_phi(cfg, h, phi);
  Vec bracket = w.apply_rec(bank, phi);
  bracket.noalias() += w.W_in * s_t;
  bracket += w.b_in;
  if (sigma_r > 0.0) {
    const double noise_scale = std::sqrt(2.0 / cfg.alpha) * sigma_r;
    for (int i = 0; i < cfg.n_hidden; ++i) bracket(i) += noise_scale * rng.normal();
  }
  return (1.0 - cfg.alpha) * h + cfg.alpha * bracket;
}

ForwardCache forward_trial(const ContextBank& bank, const Mat& gating, const Mat& s, Rng& rng,
                           bool noisy, double gate_floor) {
  const auto& cfg = bank.cfg;
  const int T = static_cast<int>(s.rows());
  if (gating.rows() != T) throw ConfigError("gating length does not match inputs");

  ForwardCache cache;
  cache.H = Mat::Zero(T + 1, cfg.n_hidden);
  cache.Phi = Mat::Zero(T + 1, cfg.n_hidden);
  cache.S = s;
  cache.P = Mat::Zero(T, gating.cols());
  cache.Yhat.resize(T, cfg.output_dim);

  const double sigma_r = noisy ? cfg.sigma_r : 0.0;
  const double noise_scale = std::sqrt(2.0 / cfg.alpha) * sigma_r;
  Vec h = Vec::Zero(cfg.n_hidden);
  Vec phi = Vec::Zero(cfg.n_hidden);
  Vec bracket(cfg.n_hidden);
  Vec yhat(cfg.output_dim);
  for (int t = 0; t < T; ++t) {
    const GateRow zw = active_contexts(bank, gating.row(t), gate_floor);
    for (const auto& [z, p] : zw) cache.P(t, z) = p;

    bracket.setZero();
    for (const auto& [z, p] : zw) {
      bracket.noalias() += p * (bank.ctx[z].U * (bank.ctx[z].V.transpose() * phi));
      bracket.noalias() += p * (bank.ctx[z].W_in * s.row(t).transpose());
      bracket.noalias() += p * bank.ctx[z].b_in;
    }
    if (sigma_r > 0.0)
      for (int i = 0; i < cfg.n_hidden; ++i) bracket(i) += noise_scale * rng.normal();
    h = (1.0 - cfg.alpha) * h + cfg.alpha * bracket;
    check_finite(h, t);
    apply_phi(cfg, h, phi);
    cache.H.row(t + 1) = h.transpose();
    cache.Phi.row(t + 1) = phi.transpose();

    yhat.setZero();
    for (const auto& [z, p] : zw) {
      yhat.noalias() += p * (bank.ctx[z].W_out * phi);
      yhat.noalias() += p * bank.ctx[z].b_out;
    }
    cache.Yhat.row(t) = yhat.transpose();
  }
  return cache;
}

double weighted_mse(const Mat& yhat, const Mat& y, const Mat& mask) {
  return (mask.array() * (y - yhat).array().square()).sum() /
         static_cast<double>(y.rows() * y.cols());
}

Mat loss_mask(const Trial& trial, const TaskSuite& suite) {
  const int T = trial.length();
  Mat m(T, kOutputDim);
  for (int t = 0; t < T; ++t)
    m.row(t).setConstant(suite.epochs[trial.z_true[t]].is_response ? 1.0 : 0.2);
  return m;
}

BankGrads::BankGrads(const ContextBank& bank) {
  g.resize(bank.n_slots());
  touched.assign(bank.n_slots(), false);
  for (int z = 0; z < bank.n_slots(); ++z)
    if (bank.allocated[z]) g[z].setZero(bank.cfg);
}

void BankGrads::accumulate(const BankGrads& other) {
  for (size_t z = 0; z < g.size(); ++z) {
    if (!other.touched[z]) continue;
    touched[z] = true;
    g[z].U += other.g[z].U;
    g[z].V += other.g[z].V;
    g[z].W_in += other.g[z].W_in;
    g[z].b_in += other.g[z].b_in;
    g[z].W_out += other.g[z].W_out;
    g[z].b_out += other.g[z].b_out;
  }
}

void BankGrads::scale(double a) {
  for (size_t z = 0; z < g.size(); ++z) {
    if (!touched[z]) continue;
    g[z].U *= a;
    g[z].V *= a;
    g[z].W_in *= a;
    g[z].b_in *= a;
    g[z].W_out *= a;
    g[z].b_out *= a;
  }
}

BankGrads backward_trial(const ContextBank& bank, const ForwardCache& cache, const Mat& y,
                         const Mat& mask) {
  const auto& cfg = bank.cfg;
  const int T = static_cast<int>(y.rows());
  if (cache.Yhat.rows() != T) throw InferenceError("forward cache missing or wrong length");

  BankGrads grads(bank);
  const double scale = 2.0 / static_cast<double>(y.rows() * y.cols());
  // dL/dyhat
  Mat dy = scale * (mask.array() * (cache.Yhat - y).array()).matrix();

  Vec delta_next = Vec::Zero(cfg.n_hidden);  // dL/dh_{t+1}
  Vec dphi(cfg.n_hidden), dh(cfg.n_hidden), gvec(cfg.n_hidden), phi_prev(cfg.n_hidden);

  auto active_at = [&](int t) {
    GateRow zw;
    for (int z = 0; z < cache.P.cols(); ++z)
      if (cache.P(t, z) != 0.0) zw.emplace_back(z, cache.P(t, z));
    return zw;
  };

  for (int t = T - 1; t >= 0; --t) {
    const GateRow zw = active_at(t);
    const Vec dyt = dy.row(t).transpose();
    const Vec phi_t = cache.Phi.row(t + 1).transpose();
    const Vec h_t = cache.H.row(t + 1).transpose();

    // readout: yhat_t = sum_z p W_out_z phi(h_t) + p b_out_z
    dphi.setZero();
    for (const auto& [z, p] : zw) {
      grads.touched[z] = true;
      grads.g[z].W_out.noalias() += p * (dyt * phi_t.transpose());
      grads.g[z].b_out.noalias() += p * dyt;
      dphi.noalias() += p * (bank.ctx[z].W_out.transpose() * dyt);
    }

    // dL/dh_t: readout at t, leak to t+1, recurrent path through phi(h_t)
    Vec phi_grad(cfg.n_hidden);
    if (cfg.relu)
      phi_grad = (h_t.array() > 0.0).cast<double>().matrix();
    else
      phi_grad = (1.0 - phi_t.array().square()).matrix();

    dh = dphi.cwiseProduct(phi_grad);
    if (t + 1 < T) {
      dh.noalias() += (1.0 - cfg.alpha) * delta_next;
      // W_rec^{(t+1)T} (alpha delta_{t+1}), factored through V U^T
      Vec w = Vec::Zero(cfg.n_hidden);
      for (const auto& [z, p] : active_at(t + 1))
        w.noalias() += p * (bank.ctx[z].V * (bank.ctx[z].U.transpose() * delta_next));
      dh.noalias() += cfg.alpha * w.cwiseProduct(phi_grad);
    }

    // parameter grads of the step-t bracket
    gvec = cfg.alpha * dh;
    phi_prev = cache.Phi.row(t).transpose();
    const Vec s_t = cache.S.row(t).transpose();
    for (const auto& [z, p] : zw) {
      grads.g[z].U.noalias() += p * (gvec * (bank.ctx[z].V.transpose() * phi_prev).transpose());
      grads.g[z].V.noalias() += p * (phi_prev * (bank.ctx[z].U.transpose() * gvec).transpose());
      grads.g[z].W_in.noalias() += p * (gvec * s_t.transpose());
      grads.g[z].b_in.noalias() += p * gvec;
    }
    delta_next = dh;
  }
  return grads;
}

TrainState::TrainState(const ContextBank& bank, double base_lr_) : base_lr(base_lr_) {
  slot.resize(bank.n_slots());
  for (int z = 0; z < bank.n_slots(); ++z) {
    slot[z].lr = base_lr;
    if (bank.allocated[z]) {
      slot[z].m.setZero(bank.cfg);
      slot[z].v.setZero(bank.cfg);
    }
  }
}

namespace {

void adam_update(Mat& theta, Mat& m, Mat& v, const Mat& g, double lr, double b1, double b2,
                 double eps, double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
  theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

void adam_update(Vec& theta, Vec& m, Vec& v, const Vec& g, double lr, double b1, double b2,
                 double eps, double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
  theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace

void adam_step(ContextBank& bank, TrainState& ts, const BankGrads& grads) {
  for (int z = 0; z < bank.n_slots(); ++z) {
    if (!bank.allocated[z]) continue;
    AdamSlot& a = ts.slot[z];
    if (a.m.U.size() == 0) {  // slot allocated after TrainState construction
      a.m.setZero(bank.cfg);
      a.v.setZero(bank.cfg);
    }
    if (!grads.touched[z] && !a.l2_on) continue;

    ContextWeights g = grads.touched[z] ? grads.g[z] : [&] {
      ContextWeights zero;
      zero.setZero(bank.cfg);
      return zero;
    }();
    if (a.l2_on) {
      g.U += ts.l2_coef * bank.ctx[z].U;
      g.V += ts.l2_coef * bank.ctx[z].V;
      g.W_in += ts.l2_coef * bank.ctx[z].W_in;
      g.b_in += ts.l2_coef * bank.ctx[z].b_in;
      g.W_out += ts.l2_coef * bank.ctx[z].W_out;
      g.b_out += ts.l2_coef * bank.ctx[z].b_out;
    }

    a.step += 1;
    const double bc1 = 1.0 - std::pow(ts.beta1, static_cast<double>(a.step));
    const double bc2 = 1.0 - std::pow(ts.beta2, static_cast<double>(a.step));
    auto& w = bank.ctx[z];
    adam_update(w.U, a.m.U, a.v.U, g.U, a.lr, ts.beta1, ts.beta2, ts.eps, bc1, bc2);
    adam_update(w.V, a.m.V, a.v.V, g.V, a.lr, ts.beta1, ts.beta2, ts.eps, bc1, bc2);
    adam_update(w.W_in, a.m.W_in, a.v.W_in, g.W_in, a.lr, ts.beta1, ts.beta2, ts.eps, bc1, bc2);
    adam_update(w.b_in, a.m.b_in, a.v.b_in, g.b_in, a.lr, ts.beta1, ts.beta2, ts.eps, bc1, bc2);
    adam_update(w.W_out, a.m.W_out, a.v.W_out, g.W_out, a.lr, ts.beta1, ts.beta2, ts.eps, bc1,
                bc2);
    adam_update(w.b_out, a.m.b_out, a.v.b_out, g.b_out, a.lr, ts.beta1, ts.beta2, ts.eps, bc1,
                bc2);
  }
}

void decay_lr(TrainState& ts, const std::vector<bool>& active) {
  for (size_t z = 0; z < ts.slot.size() && z < active.size(); ++z)
    if (active[z]) ts.slot[z].lr *= ts.lr_decay;
}

bool evaluate_perf(const Mat& yhat, const Trial& trial, const TaskSuite& suite) {
  const int T = trial.length();
  double sx = 0.0, sy = 0.0;
  int n_resp = 0;
  int resp_epoch = -1;
  for (int t = 0; t < T; ++t) {
    const auto& e = suite.epochs[trial.z_true[t]];
    if (e.fixation_required && yhat(t, 2) > 0.5) return false;  // broke fixation
    if (e.is_response) {
      sx += yhat(t, 0);
      sy += yhat(t, 1);
      ++n_resp;
      resp_epoch = trial.z_true[t];
    }
  }
  if (n_resp == 0) return false;
  const auto& target = suite.epochs[resp_epoch].mean_table[trial.x_true].second;
  const double want = std::atan2(target(1), target(0));
  const double got = std::atan2(sy / n_resp, sx / n_resp);
  return angle_diff(got, want) < 0.31415926535897932;  // pi/10
}

}  // namespace cgr
