#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "cgr/numerics.hpp"
#include "cgr/taskgen.hpp"
#include "cgr/taskmodel.hpp"
#include "oracles.hpp"

using namespace cgr;

namespace {

GenConfig default_cfg() {
  GenConfig cfg;
  return cfg;
}

}  // namespace

TEST_CASE("default suite matches the closed-form mean table") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  REQUIRE(suite.epochs.size() == 10);
  REQUIRE(suite.tasks.size() == 6);

  // epoch S, x=0 (theta=0)
  const auto& s_row = suite.epochs[epoch::S].mean_table[0];
  CHECK(s_row.first(0) == doctest::Approx(1.0));
  CHECK(s_row.first(1) == doctest::Approx(0.0));
  CHECK(s_row.first.tail(3).norm() == doctest::Approx(0.0));
  CHECK(s_row.second.norm() == doctest::Approx(0.0));

  // F and M are the all-zero pair for every x
  for (int x = 0; x < cfg.n_x; ++x) {
    CHECK(suite.epochs[epoch::F].obs_mean(x).norm() == 0.0);
    CHECK(suite.epochs[epoch::M].obs_mean(x).norm() == 0.0);
  }

  // R_DMP with (gamma, gamma') = (0.5, 1): weaker first stimulus, respond at pi
  const auto& rdmp = suite.epochs[epoch::RDMP].mean_table[0];
  CHECK(rdmp.second(0) == doctest::Approx(-1.0));
  CHECK(rdmp.second(1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rdmp.second(2) == doctest::Approx(1.0));

  // full table: every epoch row agrees with the closed form
  const double pairs[8][2] = {{0.5, 1.0}, {1.0, 2.0}, {0.5, 2.0}, {0.2, 1.5},
                              {1.0, 0.5}, {2.0, 1.0}, {2.0, 0.5}, {1.5, 0.2}};
  for (int x = 0; x < 8; ++x) {
    const double th = x * M_PI / 4.0;
    auto expect = [&](int e) -> Vec { return suite.epochs[e].obs_mean(x); };
    Vec v;

    v = expect(epoch::S);
    CHECK(v(0) == doctest::Approx(std::cos(th)));
    CHECK(v(1) == doctest::Approx(std::sin(th)));
    CHECK(v(4) == 0.0);

    v = expect(epoch::RP);
    CHECK(v(4) == 1.0);
    CHECK(v(5) == doctest::Approx(std::cos(th)));
    CHECK(v(6) == doctest::Approx(std::sin(th)));
    CHECK(v(7) == 1.0);

    v = expect(epoch::RA);
    CHECK(v(5) == doctest::Approx(std::cos(th + M_PI)));
    CHECK(v(6) == doctest::Approx(std::sin(th + M_PI)));

    v = expect(epoch::RMP);
    CHECK(v.head(4).norm() == 0.0);
    CHECK(v(4) == 1.0);
    CHECK(v(5) == doctest::Approx(std::cos(th)));

    v = expect(epoch::SDM);
    const double g = pairs[x][0], gp = pairs[x][1];
    CHECK(v(0) == doctest::Approx(g));
    CHECK(v(1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v(2) == doctest::Approx(-gp));
    CHECK(v(4) == 1.0);
    CHECK(v(5) == 1.0);  // S_DM target row is [1, 0, 0]
    CHECK(v(7) == 0.0);

    v = expect(epoch::RDMP);
    const double phi_p = (g > gp) ? 0.0 : M_PI;
    CHECK(v(5) == doctest::Approx(std::cos(phi_p)));
    v = expect(epoch::RDMA);
    const double phi_a = (g < gp) ? 0.0 : M_PI;
    CHECK(v(5) == doctest::Approx(std::cos(phi_a)));
  }
}

TEST_CASE("task transition tables are row-stochastic with reachable support") {
  TaskSuite suite = build_default_suite(default_cfg());
  for (const auto& t : suite.tasks) {
    CHECK(std::abs(t.initial_probs.sum() - 1.0) < 1e-12);
    for (int i = 0; i < t.transitions.rows(); ++i)
      CHECK(std::abs(t.transitions.row(i).sum() - 1.0) < 1e-12);
    // initial mass only on the first epoch of the order
    for (int e = 0; e < t.initial_probs.size(); ++e)
      if (t.initial_probs(e) > 0.0)
        CHECK(e == t.epoch_order.front());
    // off-diagonal mass only along the task's epoch chain
    for (int i = 0; i < t.transitions.rows(); ++i)
      for (int j = 0; j < t.transitions.cols(); ++j) {
        if (i == j || t.transitions(i, j) == 0.0) continue;
        bool in_chain = false;
        for (size_t k = 0; k + 1 < t.epoch_order.size(); ++k)
          if (t.epoch_order[k] == i && t.epoch_order[k + 1] == j) in_chain = true;
        CHECK(in_chain);
      }
  }
}

TEST_CASE("epoch path follows the deterministic order with minimum durations") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    auto path = sample_epoch_path(suite.task(task::DelayPro), cfg, rng);
    REQUIRE(static_cast<int>(path.size()) == cfg.trial_len);
    // runs in order F, S, R_P with length >= min duration
    std::vector<std::pair<int, int>> runs;
    for (int t = 0; t < cfg.trial_len; ++t) {
      if (runs.empty() || runs.back().first != path[t]) runs.push_back({path[t], 0});
      runs.back().second++;
    }
    REQUIRE(runs.size() == 3);
    CHECK(runs[0].first == epoch::F);
    CHECK(runs[1].first == epoch::S);
    CHECK(runs[2].first == epoch::RP);
    for (auto& [e, len] : runs) CHECK(len >= cfg.min_epoch_dur);
  }
}

TEST_CASE("degenerate self probability is rejected") {
  GenConfig cfg = default_cfg();
  cfg.self_prob = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.self_prob = 0.9;
  cfg.trial_len = 10;  // < 4 epochs x 5 steps
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("trial too short for the epoch chain fails") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  cfg.trial_len = 14;  // < 3 x 5 for DelayPro
  Rng rng(1);
  CHECK_THROWS(sample_epoch_path(suite.task(task::DelayPro), cfg, rng));
}

TEST_CASE("empirical epoch duration matches the geometric-tail expectation") {
  GenConfig cfg = default_cfg();
  cfg.trial_len = 200;  // long trials so truncation is negligible
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(11);
  double total = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto path = sample_epoch_path(suite.task(task::DelayPro), cfg, rng);
    int d = 0;
    while (d < static_cast<int>(path.size()) && path[d] == epoch::F) ++d;
    total += d;
  }
  // analytic mean: min_dur + self_prob / (1 - self_prob)
  const double want = cfg.min_epoch_dur + cfg.self_prob / (1.0 - cfg.self_prob);
  CHECK(std::abs(total / n - want) / want < 0.05);
}

TEST_CASE("zero noise reproduces the mean table exactly") {
  GenConfig cfg = default_cfg();
  cfg.sigma = 1e-300;  // validation requires > 0; indistinguishable from zero
  TaskSuite suite = build_default_suite(default_cfg());
  Rng rng(2);
  Trial trial = sample_trial(suite, task::MemoryPro, cfg, rng);
  for (int t = 0; t < trial.length(); ++t) {
    const Vec mean = suite.epochs[trial.z_true[t]].obs_mean(trial.x_true);
    CHECK((trial.q().row(t).transpose() - mean).norm() < 1e-290);
  }
}

TEST_CASE("per-cell sample means concentrate on the table") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(7);
  // accumulate per (z, x) means over many MemoryPro trials
  std::map<std::pair<int, int>, std::pair<Vec, long>> acc;
  const int n_trials = 2000;
  for (int i = 0; i < n_trials; ++i) {
    Trial trial = sample_trial(suite, task::MemoryPro, cfg, rng);
    for (int t = 0; t < trial.length(); ++t) {
      auto key = std::make_pair(trial.z_true[t], trial.x_true);
      auto it = acc.find(key);
      if (it == acc.end())
        acc.emplace(key, std::make_pair(Vec(trial.q().row(t).transpose()), 1L));
      else {
        it->second.first += trial.q().row(t).transpose();
        it->second.second += 1;
      }
    }
  }
  for (const auto& [key, sum_n] : acc) {
    const auto& [sum, n] = sum_n;
    const Vec mean = sum / static_cast<double>(n);
    const Vec want = suite.epochs[key.first].obs_mean(key.second);
    // 3 sigma / sqrt(n) per coordinate, plus slack for the 8-dim max
    const double tol = 4.0 * cfg.sigma / std::sqrt(static_cast<double>(n));
    CHECK((mean - want).cwiseAbs().maxCoeff() < tol * 3);
  }
}

TEST_CASE("memory trials hold zero output until the response epoch") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(13);
  Trial trial = sample_trial(suite, task::MemoryPro, cfg, rng);
  const double th = trial.x_true * M_PI / 4.0;
  for (int t = 0; t < trial.length(); ++t) {
    if (trial.z_true[t] == epoch::M) {
      CHECK(trial.y.row(t).norm() < 1.0);  // zero mean plus noise
    } else if (trial.z_true[t] == epoch::RMP) {
      CHECK(trial.y(t, 0) == doctest::Approx(std::cos(th)).epsilon(0.5));
      CHECK(trial.y(t, 2) == doctest::Approx(1.0).epsilon(0.5));
    }
  }
}

TEST_CASE("trial variable run-length and transition-graph invariants") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(17);
  for (const auto& task : suite.tasks)
    for (int i = 0; i < 200; ++i) {
      Trial trial = sample_trial(suite, task.task_id, cfg, rng);
      int run = 1;
      for (int t = 1; t <= trial.length(); ++t) {
        if (t < trial.length() && trial.z_true[t] == trial.z_true[t - 1]) {
          ++run;
          continue;
        }
        CHECK(run >= cfg.min_epoch_dur);
        if (t < trial.length()) {
          CHECK(suite.task(task.task_id).transitions(trial.z_true[t - 1], trial.z_true[t]) > 0.0);
          run = 1;
        }
      }
    }
}

TEST_CASE("same seed gives identical trials") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  Rng a(99, 4), b(99, 4);
  Trial ta = sample_trial(suite, task::DMAnti, cfg, a);
  Trial tb = sample_trial(suite, task::DMAnti, cfg, b);
  CHECK(ta.x_true == tb.x_true);
  CHECK(ta.z_true == tb.z_true);
  CHECK(ta.s == tb.s);
  CHECK(ta.y == tb.y);
}

TEST_CASE("mprime tasks reuse memory response epochs without a memory epoch") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  auto [pro, anti] = make_mprime_tasks(suite);
  CHECK(pro.epoch_order == std::vector<int>({epoch::F, epoch::S, epoch::RMP}));
  CHECK(anti.epoch_order == std::vector<int>({epoch::F, epoch::S, epoch::RMA}));

  // stimulus is absent during the response epoch
  const Vec resp = suite.epochs[epoch::RMP].mean_table[2].first;
  CHECK(resp.head(4).norm() == 0.0);
  CHECK(resp(4) == 1.0);

  // M'Anti response mean is the anti direction
  const double th = 3 * M_PI / 4.0;
  const auto& anti_row = suite.epochs[epoch::RMA].mean_table[3];
  CHECK(anti_row.second(0) == doctest::Approx(std::cos(th + M_PI)));
  CHECK(anti_row.second(1) == doctest::Approx(std::sin(th + M_PI)));

  // differs from DelayPro only in the response epoch id
  const auto& dp = suite.task(task::DelayPro).epoch_order;
  CHECK(dp.size() == pro.epoch_order.size());
  CHECK(dp[0] == pro.epoch_order[0]);
  CHECK(dp[1] == pro.epoch_order[1]);
  CHECK(dp[2] != pro.epoch_order[2]);
}

TEST_CASE("ground truth ll: single-factor case") {
  // one epoch, one x, T=1: ll must equal the gaussian log density
  GenConfig cfg = default_cfg();
  cfg.n_x = 1;
  cfg.trial_len = 20;
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(31);
  Trial trial = sample_trial(suite, task::DelayPro, cfg, rng);
  // truncate to a single fixation step
  Trial one = trial;
  one.s = trial.s.topRows(1);
  one.y = trial.y.topRows(1);
  one.z_true = {epoch::F};
  const double ll = ground_truth_ll(suite, one, cfg);
  const double want = log_gauss_iso(one.q().row(0).squaredNorm(), kObsDim, cfg.sigma * cfg.sigma);
  CHECK(ll == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("ground truth ll matches enumeration on a small instance") {
  GenConfig cfg = default_cfg();
  cfg.n_x = 2;
  cfg.trial_len = 20;
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(37);
  for (int c : {task::DelayPro, task::MemoryPro, task::DMAnti}) {
    Trial trial = sample_trial(suite, c, cfg, rng);
    Trial six = trial;
    six.s = trial.s.topRows(6);
    six.y = trial.y.topRows(6);

    TaskModelConfig tmc;
    tmc.z_slots = 9;
    tmc.c_slots = 8;
    TaskModelState gt = ground_truth_state(suite, cfg, tmc);
    auto res = oracle::enumerate_taskmodel(six.q(), c, gt.params, gt.tables);
    CHECK(std::abs(ground_truth_ll(suite, six, cfg) - res.ll) < 1e-10);
  }
}

TEST_CASE("suite serialization round-trips exactly") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = with_mprime(build_default_suite(cfg));
  TaskSuite back = suite_from_json(suite_to_json(suite));
  REQUIRE(back.epochs.size() == suite.epochs.size());
  REQUIRE(back.tasks.size() == suite.tasks.size());
  for (size_t e = 0; e < suite.epochs.size(); ++e)
    for (int x = 0; x < cfg.n_x; ++x)
      CHECK(back.epochs[e].obs_mean(x) == suite.epochs[e].obs_mean(x));
  for (size_t t = 0; t < suite.tasks.size(); ++t) {
    CHECK(back.tasks[t].transitions == suite.tasks[t].transitions);
    CHECK(back.tasks[t].initial_probs == suite.tasks[t].initial_probs);
    CHECK(back.tasks[t].epoch_order == suite.tasks[t].epoch_order);
  }
}

TEST_CASE("trial dump has one row per step with 12 columns") {
  GenConfig cfg = default_cfg();
  TaskSuite suite = build_default_suite(cfg);
  Rng rng(41);
  Trial trial = sample_trial(suite, task::DelayAnti, cfg, rng);
  const std::string text = trial_to_text(trial);
  int rows = 0;
  size_t pos = 0;
  while ((pos = text.find('\n', pos)) != std::string::npos) {
    ++pos;
    ++rows;
  }
  CHECK(rows == trial.length() + 2);  // two header lines
  // count fields in the first data row
  const size_t start = text.find('\n', text.find('\n') + 1) + 1;
  const size_t end = text.find('\n', start);
  std::istringstream row(text.substr(start, end - start));
  int fields = 0;
  std::string tok;
  while (row >> tok) ++fields;
  CHECK(fields == 12);
}
