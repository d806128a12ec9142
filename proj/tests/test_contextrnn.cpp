#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>

#include "cgr/contextrnn.hpp"
#include "cgr/numerics.hpp"
#include "cgr/taskgen.hpp"
#include "oracles.hpp"

using namespace cgr;

namespace {

RNNConfig small_cfg(int n = 8, int r = 2) {
  RNNConfig cfg;
  cfg.n_hidden = n;
  cfg.rank = r;
  cfg.sigma_r = 0.0;
  return cfg;
}

ContextBank random_bank(const RNNConfig& cfg, int slots, int n_alloc, uint64_t seed) {
  ContextBank bank(cfg, slots);
  for (int z = 0; z < n_alloc; ++z) {
    Rng rng(seed, z);
    allocate_context(bank, z, rng);
  }
  return bank;
}

Mat random_gating(int T, int slots, int active, Rng& rng) {
  Mat g = Mat::Zero(T, slots);
  for (int t = 0; t < T; ++t) {
    double sum = 0.0;
    for (int z = 0; z < active; ++z) {
      g(t, z) = rng.uniform_pos();
      sum += g(t, z);
    }
    g.row(t) /= sum;
  }
  return g;
}

}  // namespace

TEST_CASE("compose_weights: single context and mixtures") {
  RNNConfig cfg = small_cfg(6, 2);
  ContextBank bank = random_bank(cfg, 4, 2, 1);

  RowVec p = RowVec::Zero(4);
  p(0) = 1.0;
  EffectiveWeights w = compose_weights(bank, p);
  CHECK((w.dense_rec(bank) - bank.ctx[0].U * bank.ctx[0].V.transpose()).norm() < 1e-14);
  CHECK((w.W_in - bank.ctx[0].W_in).norm() == 0.0);

  RowVec half = RowVec::Zero(4);
  half(0) = 0.5;
  half(1) = 0.5;
  EffectiveWeights wh = compose_weights(bank, half);
  Mat want = 0.5 * (bank.ctx[0].U * bank.ctx[0].V.transpose() +
                    bank.ctx[1].U * bank.ctx[1].V.transpose());
  CHECK((wh.dense_rec(bank) - want).norm() < 1e-14);

  // mass on an unallocated slot is renormalized away
  RowVec leak = RowVec::Zero(4);
  leak(0) = 0.3;
  leak(3) = 0.7;  // slot 3 unallocated
  EffectiveWeights wl = compose_weights(bank, leak);
  CHECK((wl.dense_rec(bank) - w.dense_rec(bank)).norm() < 1e-14);

  // no allocated mass at all is an error
  RowVec dead = RowVec::Zero(4);
  dead(3) = 1.0;
  CHECK_THROWS_AS(compose_weights(bank, dead), InferenceError);
}

TEST_CASE("composition is linear in the gating") {
  RNNConfig cfg = small_cfg(6, 2);
  ContextBank bank = random_bank(cfg, 3, 3, 2);
  Rng rng(3);
  RowVec p(3), q(3);
  for (int z = 0; z < 3; ++z) {
    p(z) = rng.uniform_pos();
    q(z) = rng.uniform_pos();
  }
  p /= p.sum();
  q /= q.sum();
  for (double a : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    RowVec mix = a * p + (1.0 - a) * q;
    Mat lhs = compose_weights(bank, mix).dense_rec(bank);
    Mat rhs = a * compose_weights(bank, p).dense_rec(bank) +
              (1.0 - a) * compose_weights(bank, q).dense_rec(bank);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("effective recurrent rank is bounded by rank times active contexts") {
  RNNConfig cfg = small_cfg(16, 2);
  ContextBank bank = random_bank(cfg, 3, 3, 4);
  RowVec p(3);
  p << 0.2, 0.5, 0.3;
  Mat w = compose_weights(bank, p).dense_rec(bank);
  Eigen::JacobiSVD<Mat> svd(w);
  int numeric_rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > 1e-10) ++numeric_rank;
  CHECK(numeric_rank <= cfg.rank * 3);
}

TEST_CASE("step: leak, pure map and noise variance") {
  RNNConfig cfg = small_cfg(16, 2);
  cfg.alpha = 0.1;
  ContextBank bank(cfg, 1);
  Rng arng(7);
  allocate_context(bank, 0, arng);
  bank.ctx[0].setZero(cfg);  // isolate the leak term
  RowVec p = RowVec::Ones(1);
  EffectiveWeights w = compose_weights(bank, p);

  Rng rng(9);
  Vec h = Vec::Ones(cfg.n_hidden);
  Vec h2 = step(h, Vec::Zero(cfg.input_dim), bank, w, rng, 0.0);
  CHECK((h2 - 0.9 * h).cwiseAbs().maxCoeff() < 1e-15);

  // alpha = 1 is a pure map
  RNNConfig cfg1 = cfg;
  cfg1.alpha = 1.0;
  ContextBank bank1(cfg1, 1);
  Rng arng1(7);
  allocate_context(bank1, 0, arng1);
  EffectiveWeights w1 = compose_weights(bank1, p);
  Vec s = Vec::Ones(cfg.input_dim);
  Vec got = step(h, s, bank1, w1, rng, 0.0);
  Vec phi = h.cwiseMax(0.0);
  Vec want = bank1.ctx[0].U * (bank1.ctx[0].V.transpose() * phi) + bank1.ctx[0].W_in * s +
             bank1.ctx[0].b_in;
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);

  // noise variance: var(h' - E h') = alpha^2 * (2/alpha) * sigma_r^2
  const double sigma_r = 0.05;
  const int n = 100000;
  Rng nrng(11);
  double sq = 0.0;
  Vec base = step(h, s, bank, w, nrng, 0.0);
  for (int i = 0; i < n; ++i) {
    Vec hn = step(h, s, bank, w, nrng, sigma_r);
    sq += (hn - base).squaredNorm();
  }
  const double var = sq / (static_cast<double>(n) * cfg.n_hidden);
  const double want_var = cfg.alpha * cfg.alpha * (2.0 / cfg.alpha) * sigma_r * sigma_r;
  CHECK(std::abs(var - want_var) / want_var < 0.03);
}

TEST_CASE("forward with constant gating reduces to an ordinary low-rank RNN") {
  RNNConfig cfg = small_cfg(12, 3);
  ContextBank bank = random_bank(cfg, 2, 1, 13);
  const int T = 7;
  Rng rng(17);
  Mat s(T, cfg.input_dim);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < cfg.input_dim; ++i) s(t, i) = rng.normal();
  Mat gating = Mat::Zero(T, 2);
  gating.col(0).setOnes();

  Rng fwd_rng(0);
  ForwardCache fc = forward_trial(bank, gating, s, fwd_rng, false);

  RowVec p = RowVec::Zero(2);
  p(0) = 1.0;
  EffectiveWeights w = compose_weights(bank, p);
  Vec h = Vec::Zero(cfg.n_hidden);
  Rng step_rng(0);
  for (int t = 0; t < T; ++t) {
    h = step(h, s.row(t).transpose(), bank, w, step_rng, 0.0);
    Vec y = w.W_out * h.cwiseMax(0.0) + w.b_out;
    CHECK((fc.H.row(t + 1).transpose() - h).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fc.Yhat.row(t).transpose() - y).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("noise-off forward is a pure function; gating order matters") {
  RNNConfig cfg = small_cfg(10, 2);
  ContextBank bank = random_bank(cfg, 3, 3, 19);
  Rng rng(23);
  const int T = 12;
  Mat s(T, cfg.input_dim);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < cfg.input_dim; ++i) s(t, i) = rng.normal();
  Mat gating = Mat::Zero(T, 3);
  for (int t = 0; t < T; ++t) gating(t, t < T / 2 ? 0 : 1) = 1.0;

  Rng r1(0), r2(0);
  ForwardCache a = forward_trial(bank, gating, s, r1, false);
  ForwardCache b = forward_trial(bank, gating, s, r2, false);
  CHECK(a.Yhat == b.Yhat);

  // permuting the gating sequence changes the output
  Mat flipped = Mat::Zero(T, 3);
  for (int t = 0; t < T; ++t) flipped(t, t < T / 2 ? 1 : 0) = 1.0;
  Rng r3(0);
  ForwardCache c = forward_trial(bank, flipped, s, r3, false);
  CHECK((a.Yhat - c.Yhat).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("weighted mse values") {
  Mat y(2, 3), yhat(2, 3), mask(2, 3);
  y.setZero();
  yhat.setZero();
  mask.setOnes();
  CHECK(weighted_mse(yhat, y, mask) == 0.0);

  yhat.setOnes();  // unit errors everywhere, all-response mask
  CHECK(weighted_mse(yhat, y, mask) == doctest::Approx(1.0));

  // two-step toy with mixed mask weights
  mask.row(0).setConstant(0.2);
  y(0, 0) = 1.0;
  yhat(0, 0) = 1.0;  // no error at (0,0)
  const double want = (0.2 * (0.0 + 1.0 + 1.0) + 1.0 * (1.0 + 1.0 + 1.0)) / 6.0;
  CHECK(weighted_mse(yhat, y, mask) == doctest::Approx(want));
}

TEST_CASE("loss mask is 1 on response steps and 0.2 elsewhere") {
  GenConfig gen;
  TaskSuite suite = build_default_suite(gen);
  Rng rng(29);
  Trial trial = sample_trial(suite, task::MemoryAnti, gen, rng);
  Mat mask = loss_mask(trial, suite);
  for (int t = 0; t < trial.length(); ++t) {
    const double want = suite.epochs[trial.z_true[t]].is_response ? 1.0 : 0.2;
    for (int i = 0; i < kOutputDim; ++i) CHECK(mask(t, i) == want);
  }
}

TEST_CASE("bptt gradients match central finite differences") {
  Rng rng(31);
  for (int rep = 0; rep < 4; ++rep) {
    RNNConfig cfg = small_cfg(8, 2);
    cfg.relu = (rep % 2 == 0);
    ContextBank bank = random_bank(cfg, 3, 3, 100 + rep);
    const int T = 5;
    Mat s(T, cfg.input_dim), y(T, cfg.output_dim), mask(T, cfg.output_dim);
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < cfg.input_dim; ++i) s(t, i) = rng.normal();
      for (int i = 0; i < cfg.output_dim; ++i) y(t, i) = rng.normal();
      mask.row(t).setConstant(t % 2 == 0 ? 1.0 : 0.2);
    }
    Mat gating = random_gating(T, 3, 3, rng);
    auto rep_out = oracle::finite_difference_check(bank, gating, s, y, mask);
    CHECK(rep_out.checked > 100);
    CHECK(rep_out.max_rel_err < 1e-4);
  }
}

TEST_CASE("never-gated context receives exactly zero gradient") {
  RNNConfig cfg = small_cfg(8, 2);
  ContextBank bank = random_bank(cfg, 3, 3, 37);
  Rng rng(41);
  const int T = 6;
  Mat s(T, cfg.input_dim), y(T, cfg.output_dim);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < cfg.input_dim; ++i) s(t, i) = rng.normal();
    for (int i = 0; i < cfg.output_dim; ++i) y(t, i) = rng.normal();
  }
  Mat mask = Mat::Ones(T, cfg.output_dim);
  Mat gating = random_gating(T, 3, 2, rng);  // slot 2 never gated

  Rng frng(0);
  ForwardCache fc = forward_trial(bank, gating, s, frng, false);
  BankGrads g = backward_trial(bank, fc, y, mask);
  CHECK_FALSE(g.touched[2]);
  CHECK(g.g[2].U.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.g[2].W_out.cwiseAbs().maxCoeff() == 0.0);

  // readout bias gradient has the closed form sum_t p_t(z) * dL/dyhat_t
  const double scale = 2.0 / static_cast<double>(T * cfg.output_dim);
  for (int z = 0; z < 2; ++z) {
    Vec want = Vec::Zero(cfg.output_dim);
    for (int t = 0; t < T; ++t)
      want += gating(t, z) * scale *
              (mask.row(t).array() * (fc.Yhat.row(t) - y.row(t)).array()).matrix().transpose();
    CHECK((g.g[z].b_out - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged; lr decay halves") {
  RNNConfig cfg = small_cfg(6, 2);
  ContextBank bank = random_bank(cfg, 2, 2, 43);
  TrainState ts(bank, 1e-3);
  ContextWeights before = bank.ctx[0];

  BankGrads g(bank);  // all zero, nothing touched
  adam_step(bank, ts, g);
  CHECK(bank.ctx[0].U == before.U);
  CHECK(bank.ctx[0].W_out == before.W_out);
  CHECK(ts.slot[0].step == 0);

  // touched with a real gradient moves parameters, deterministically
  g.touched[0] = true;
  g.g[0].U.setConstant(0.01);
  ContextBank bank2 = bank;
  TrainState ts2 = ts;
  adam_step(bank, ts, g);
  adam_step(bank2, ts2, g);
  CHECK(bank.ctx[0].U == bank2.ctx[0].U);
  CHECK((bank.ctx[0].U - before.U).cwiseAbs().maxCoeff() > 0.0);
  CHECK(bank.ctx[1].U == bank2.ctx[1].U);  // untouched slot bit-identical

  decay_lr(ts, {true, false});
  CHECK(ts.slot[0].lr == doctest::Approx(0.5e-3));
  CHECK(ts.slot[1].lr == doctest::Approx(1e-3));
}

TEST_CASE("allocation: spectral norm, double allocation guard") {
  RNNConfig cfg;
  cfg.n_hidden = 64;
  cfg.rank = 3;
  double max_norm = 0.0;
  for (int i = 0; i < 100; ++i) {
    ContextBank bank(cfg, 1);
    Rng rng(1000 + i);
    allocate_context(bank, 0, rng);
    RowVec p = RowVec::Ones(1);
    Eigen::JacobiSVD<Mat> svd(compose_weights(bank, p).dense_rec(bank));
    max_norm = std::max(max_norm, svd.singularValues()(0));
  }
  CHECK(max_norm < 3.0);

  ContextBank bank(cfg, 2);
  Rng rng(7);
  allocate_context(bank, 0, rng);
  CHECK_THROWS(allocate_context(bank, 0, rng));
  CHECK(bank.n_allocated() == 1);
}

TEST_CASE("performance judgment thresholds") {
  GenConfig gen;
  TaskSuite suite = build_default_suite(gen);
  Rng rng(47);
  Trial trial = sample_trial(suite, task::DelayPro, gen, rng);
  const int T = trial.length();

  // perfect playback of the target means is correct
  Mat yhat(T, kOutputDim);
  for (int t = 0; t < T; ++t)
    yhat.row(t) = suite.epochs[trial.z_true[t]].mean_table[trial.x_true].second.transpose();
  CHECK(evaluate_perf(yhat, trial, suite));

  // response direction off by pi/8 (> pi/10) is incorrect
  Mat rot = yhat;
  const double a = M_PI / 8.0;
  for (int t = 0; t < T; ++t) {
    if (!suite.epochs[trial.z_true[t]].is_response) continue;
    const double c = std::cos(a), s = std::sin(a);
    const double y0 = yhat(t, 0), y1 = yhat(t, 1);
    rot(t, 0) = c * y0 - s * y1;
    rot(t, 1) = s * y0 + c * y1;
  }
  CHECK_FALSE(evaluate_perf(rot, trial, suite));

  // fixation output above 0.5 during the stimulus epoch is incorrect
  Mat broke = yhat;
  for (int t = 0; t < T; ++t)
    if (trial.z_true[t] == epoch::S) {
      broke(t, 2) = 0.6;
      break;
    }
  CHECK_FALSE(evaluate_perf(broke, trial, suite));
}
