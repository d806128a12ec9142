#include "cgr/baselines.hpp"

#include <cmath>

#include "cgr/numerics.hpp"
#include "cgr/taskgen.hpp"

namespace cgr {

GeneralRNN::GeneralRNN(const RNNConfig& cfg_, int n_tasks_, Rng& rng)
    : cfg(cfg_), n_tasks(n_tasks_) {
  cfg.validate();
  const int N = cfg.n_hidden;
  const double rec_std = 1.0 / std::sqrt(static_cast<double>(N));
  const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  W_rec.resize(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) W_rec(i, j) = rec_std * rng.normal();
  W_in.resize(N, cfg.input_dim);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < cfg.input_dim; ++j) W_in(i, j) = in_std * rng.normal();
  W_task.resize(N, n_tasks);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < n_tasks; ++j) W_task(i, j) = rec_std * rng.normal();
  b_in = Vec::Zero(N);
  W_out.resize(cfg.output_dim, N);
  for (int i = 0; i < cfg.output_dim; ++i)
    for (int j = 0; j < N; ++j) W_out(i, j) = rec_std * rng.normal();
  b_out = Vec::Zero(cfg.output_dim);
}

long GeneralRNN::parameter_count() const {
  return W_rec.size() + W_in.size() + W_task.size() + b_in.size() + W_out.size() + b_out.size();
}

GeneralGrads::GeneralGrads(const GeneralRNN& net) {
  W_rec = Mat::Zero(net.W_rec.rows(), net.W_rec.cols());
  W_in = Mat::Zero(net.W_in.rows(), net.W_in.cols());
  W_task = Mat::Zero(net.W_task.rows(), net.W_task.cols());
  b_in = Vec::Zero(net.b_in.size());
  W_out = Mat::Zero(net.W_out.rows(), net.W_out.cols());
  b_out = Vec::Zero(net.b_out.size());
}

void GeneralGrads::setZero() {
  W_rec.setZero();
  W_in.setZero();
  W_task.setZero();
  b_in.setZero();
  W_out.setZero();
  b_out.setZero();
}

void GeneralGrads::accumulate(const GeneralGrads& o) {
  W_rec += o.W_rec;
  W_in += o.W_in;
  W_task += o.W_task;
  b_in += o.b_in;
  W_out += o.W_out;
  b_out += o.b_out;
}

void GeneralGrads::scale(double a) {
  W_rec *= a;
  W_in *= a;
  W_task *= a;
  b_in *= a;
  W_out *= a;
  b_out *= a;
}

GeneralCache general_forward(const GeneralRNN& net, const Mat& s, int c, Rng& rng, bool noisy) {
  const auto& cfg = net.cfg;
  const int T = static_cast<int>(s.rows());
  const int N = cfg.n_hidden;
  GeneralCache cache;
  cache.H = Mat::Zero(T + 1, N);
  cache.Phi = Mat::Zero(T + 1, N);
  cache.S = s;
  cache.Yhat.resize(T, cfg.output_dim);
  cache.c = c;

  const double noise_scale = noisy ? std::sqrt(2.0 / cfg.alpha) * cfg.sigma_r : 0.0;
  Vec h = Vec::Zero(N), phi = Vec::Zero(N), bracket(N);
  const Vec task_in = net.W_task.col(c);
  for (int t = 0; t < T; ++t) {
    bracket.noalias() = net.W_rec * phi;
    bracket.noalias() += net.W_in * s.row(t).transpose();
    bracket += task_in + net.b_in;
    if (noise_scale > 0.0)
      for (int i = 0; i < N; ++i) bracket(i) += noise_scale * rng.normal();
    h = (1.0 - cfg.alpha) * h + cfg.alpha * bracket;
    if (!h.allFinite()) throw InferenceError("non-finite hidden state at t=" + std::to_string(t));
    if (cfg.relu)
      phi = h.cwiseMax(0.0);
    else
      phi = h.array().tanh().matrix();
    cache.H.row(t + 1) = h.transpose();
    cache.Phi.row(t + 1) = phi.transpose();
    cache.Yhat.row(t) = (net.W_out * phi + net.b_out).transpose();
  }
  return cache;
}

GeneralGrads general_backward(const GeneralRNN& net, const GeneralCache& cache, const Mat& y,
                              const Mat& mask) {
  const auto& cfg = net.cfg;
  const int T = static_cast<int>(y.rows());
  const int N = cfg.n_hidden;
  GeneralGrads g(net);
  const double scale = 2.0 / static_cast<double>(y.rows() * y.cols());
  Mat dy = scale * (mask.array() * (cache.Yhat - y).array()).matrix();

  Vec delta_next = Vec::Zero(N), dh(N), gvec(N);
  for (int t = T - 1; t >= 0; --t) {
    const Vec dyt = dy.row(t).transpose();
    const Vec phi_t = cache.Phi.row(t + 1).transpose();
    const Vec h_t = cache.H.row(t + 1).transpose();

    g.W_out.noalias() += dyt * phi_t.transpose();
    g.b_out += dyt;

    Vec phi_grad(N);
    if (cfg.relu)
      phi_grad = (h_t.array() > 0.0).cast<double>().matrix();
    else
      phi_grad = (1.0 - phi_t.array().square()).matrix();

    dh = (net.W_out.transpose() * dyt).cwiseProduct(phi_grad);
    if (t + 1 < T) {
      dh.noalias() += (1.0 - cfg.alpha) * delta_next;
      dh.noalias() += cfg.alpha * (net.W_rec.transpose() * delta_next).cwiseProduct(phi_grad);
    }

    gvec = cfg.alpha * dh;
    g.W_rec.noalias() += gvec * cache.Phi.row(t);
    g.W_in.noalias() += gvec * cache.S.row(t);
    g.W_task.col(cache.c) += gvec;
    g.b_in += gvec;
    delta_next = dh;
  }
  return g;
}

FlatAdam::FlatAdam(const GeneralRNN& net, double lr_) : m(net), v(net), lr(lr_) {}

namespace {

void adam_one(Mat& th, Mat& m, Mat& v, const Mat& g, double lr, double b1, double b2, double eps,
              double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
  th.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

void adam_one(Vec& th, Vec& m, Vec& v, const Vec& g, double lr, double b1, double b2, double eps,
              double bc1, double bc2) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
  th.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace

void general_adam_step(GeneralRNN& net, FlatAdam& adam, const GeneralGrads& grads) {
  GeneralGrads g = grads;
  if (adam.l2 > 0.0) {
    g.W_rec += adam.l2 * net.W_rec;
    g.W_in += adam.l2 * net.W_in;
    g.W_task += adam.l2 * net.W_task;
    g.b_in += adam.l2 * net.b_in;
    g.W_out += adam.l2 * net.W_out;
    g.b_out += adam.l2 * net.b_out;
  }
  adam.step += 1;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
  adam_one(net.W_rec, adam.m.W_rec, adam.v.W_rec, g.W_rec, adam.lr, adam.beta1, adam.beta2,
           adam.eps, bc1, bc2);
  adam_one(net.W_in, adam.m.W_in, adam.v.W_in, g.W_in, adam.lr, adam.beta1, adam.beta2, adam.eps,
           bc1, bc2);
  adam_one(net.W_task, adam.m.W_task, adam.v.W_task, g.W_task, adam.lr, adam.beta1, adam.beta2,
           adam.eps, bc1, bc2);
  adam_one(net.b_in, adam.m.b_in, adam.v.b_in, g.b_in, adam.lr, adam.beta1, adam.beta2, adam.eps,
           bc1, bc2);
  adam_one(net.W_out, adam.m.W_out, adam.v.W_out, g.W_out, adam.lr, adam.beta1, adam.beta2,
           adam.eps, bc1, bc2);
  adam_one(net.b_out, adam.m.b_out, adam.v.b_out, g.b_out, adam.lr, adam.beta1, adam.beta2,
           adam.eps, bc1, bc2);
}

EwcState::EwcState(const GeneralRNN& net, double lambda_) : fisher(net), lambda(lambda_) {}

namespace {

void ewc_term(const Mat& th, const Mat& star, const Mat& f, double lambda, Mat& g) {
  g.array() += lambda * f.array() * (th - star).array();
}
void ewc_term(const Vec& th, const Vec& star, const Vec& f, double lambda, Vec& g) {
  g.array() += lambda * f.array() * (th - star).array();
}

}  // namespace

void ewc_adjust_grads(const GeneralRNN& net, const EwcState& ewc, GeneralGrads& grads) {
  if (!ewc.has_snapshot) return;
  ewc_term(net.W_rec, ewc.theta_star.W_rec, ewc.fisher.W_rec, ewc.lambda, grads.W_rec);
  ewc_term(net.W_in, ewc.theta_star.W_in, ewc.fisher.W_in, ewc.lambda, grads.W_in);
  ewc_term(net.W_task, ewc.theta_star.W_task, ewc.fisher.W_task, ewc.lambda, grads.W_task);
  ewc_term(net.b_in, ewc.theta_star.b_in, ewc.fisher.b_in, ewc.lambda, grads.b_in);
  ewc_term(net.W_out, ewc.theta_star.W_out, ewc.fisher.W_out, ewc.lambda, grads.W_out);
  ewc_term(net.b_out, ewc.theta_star.b_out, ewc.fisher.b_out, ewc.lambda, grads.b_out);
}

void ewc_finish_task(EwcState& ewc, const GeneralRNN& net, const TaskSuite& suite,
                     const GenConfig& gen, int c, int n_trials, Rng& rng) {
  GeneralGrads acc(net);
  for (int i = 0; i < n_trials; ++i) {
    Trial trial = sample_trial(suite, c, gen, rng);
    const Mat s = noisy_inputs(trial, gen, rng);
    GeneralCache cache = general_forward(net, s, c, rng, true);
    GeneralGrads g = general_backward(net, cache, trial.y, loss_mask(trial, suite));
    acc.W_rec.array() += g.W_rec.array().square();
    acc.W_in.array() += g.W_in.array().square();
    acc.W_task.array() += g.W_task.array().square();
    acc.b_in.array() += g.b_in.array().square();
    acc.W_out.array() += g.W_out.array().square();
    acc.b_out.array() += g.b_out.array().square();
  }
  acc.scale(1.0 / n_trials);
  ewc.fisher.accumulate(acc);
  ewc.theta_star = net;
  ewc.has_snapshot = true;
}

OwpState::OwpState(const GeneralRNN& net, double ridge_coef_) : ridge_coef(ridge_coef_) {
  const int nz = net.cfg.n_hidden + net.cfg.input_dim + net.n_tasks;
  ZZt = Mat::Zero(nz, nz);
  HHt = Mat::Zero(net.cfg.n_hidden, net.cfg.n_hidden);
}

namespace {

Mat ridge_inverse(const Mat& acc, double lambda) {
  const int n = static_cast<int>(acc.rows());
  Mat a = acc / lambda + Mat::Identity(n, n);
  Mat inv = a.llt().solve(Mat::Identity(n, n));
  return 0.5 * (inv + inv.transpose());  // keep it exactly symmetric
}

}  // namespace

void owp_update_stats(OwpState& owp, const GeneralRNN& net, const TaskSuite& suite,
                      const GenConfig& gen, int c, int n_trials, Rng& rng) {
  const int N = net.cfg.n_hidden;
  const int nz = static_cast<int>(owp.ZZt.rows());
  Vec z(nz);
  for (int i = 0; i < n_trials; ++i) {
    Trial trial = sample_trial(suite, c, gen, rng);
    const Mat s = noisy_inputs(trial, gen, rng);
    GeneralCache cache = general_forward(net, s, c, rng, true);
    for (int t = 0; t < trial.length(); ++t) {
      z.setZero();
      z.head(N) = cache.Phi.row(t + 1).transpose();
      z.segment(N, net.cfg.input_dim) = s.row(t).transpose();
      z(N + net.cfg.input_dim + c) = 1.0;
      owp.ZZt.noalias() += z * z.transpose();
      owp.HHt.noalias() += cache.H.row(t + 1).transpose() * cache.H.row(t + 1);
      owp.n_points += 1.0;
    }
  }
  const double lambda = owp.ridge_coef * owp.n_points;
  owp.P1 = ridge_inverse(owp.ZZt, lambda);
  owp.P2 = ridge_inverse(owp.HHt, lambda);
  owp.P1out = ridge_inverse(owp.ZZt.topLeftCorner(N, N), lambda);
}

void owp_project(const OwpState& owp, GeneralGrads& grads) {
  if (owp.empty()) return;
  const int N = static_cast<int>(grads.W_rec.rows());
  const int in = static_cast<int>(grads.W_in.cols());
  const int nc = static_cast<int>(grads.W_task.cols());
  Mat G(N, N + in + nc);
  G << grads.W_rec, grads.W_in, grads.W_task;
  G = owp.P2 * G * owp.P1;
  grads.W_rec = G.leftCols(N);
  grads.W_in = G.middleCols(N, in);
  grads.W_task = G.rightCols(nc);
  grads.W_out = grads.W_out * owp.P1out;
}

}  // namespace cgr
