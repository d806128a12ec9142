#include "cgr/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include <nlohmann/json.hpp>

#include "cgr/hmm.hpp"
#include "cgr/numerics.hpp"

namespace cgr {

using json = nlohmann::ordered_json;

void GenConfig::validate() const {
  if (sigma <= 0.0) throw ConfigError("gen.sigma must be > 0");
  if (n_x < 1) throw ConfigError("gen.n_x must be >= 1");
  if (min_epoch_dur < 1) throw ConfigError("gen.min_epoch_dur must be >= 1");
  if (!(self_prob > 0.0 && self_prob < 1.0)) throw ConfigError("gen.self_prob must be in (0, 1)");
  // 4 epochs is the longest task in the suite.
  if (trial_len < 4 * min_epoch_dur) throw ConfigError("gen.trial_len too short for 4 epochs at min duration");
  if (input_noise_std < 0.0) throw ConfigError("gen.input_noise_std must be >= 0");
}

Vec EpochDef::obs_mean(int x) const {
  Vec q(kObsDim);
  q.head(kInputDim) = mean_table[x].first;
  q.tail(kOutputDim) = mean_table[x].second;
  return q;
}

Mat Trial::q() const {
  Mat out(s.rows(), kObsDim);
  out.leftCols(kInputDim) = s;
  out.rightCols(kOutputDim) = y;
  return out;
}

const TaskDef& TaskSuite::task(int c) const {
  for (const auto& t : tasks)
    if (t.task_id == c) return t;
  throw ConfigError("unknown task id " + std::to_string(c));
}

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;

// (gamma, gamma') strength pairs indexed by the trial variable in DM tasks.
const double kDmPairs[8][2] = {{0.5, 1.0}, {1.0, 2.0}, {0.5, 2.0}, {0.2, 1.5},
                               {1.0, 0.5}, {2.0, 1.0}, {2.0, 0.5}, {1.5, 0.2}};

Vec svec(double a, double b, double c, double d, double e) {
  Vec v(kInputDim);
  v << a, b, c, d, e;
  return v;
}

Vec yvec(double a, double b, double c) {
  Vec v(kOutputDim);
  v << a, b, c;
  return v;
}

EpochDef make_epoch(int id, const std::string& label, int n_x,
                    const std::function<std::pair<Vec, Vec>(int)>& row) {
  EpochDef e;
  e.epoch_id = id;
  e.label = label;
  e.mean_table.reserve(n_x);
  for (int x = 0; x < n_x; ++x) e.mean_table.push_back(row(x));
  e.is_response = (id == epoch::RP || id == epoch::RA || id == epoch::RMP || id == epoch::RMA ||
                   id == epoch::RDMP || id == epoch::RDMA);
  e.fixation_required = e.mean_table[0].first(4) < 0.5;
  return e;
}

TaskDef make_task(int id, const std::string& name, std::vector<int> order, int n_epochs,
                  double self_prob) {
  TaskDef t;
  t.task_id = id;
  t.name = name;
  t.epoch_order = std::move(order);
  t.initial_probs = Vec::Zero(n_epochs);
  t.initial_probs(t.epoch_order.front()) = 1.0;
  // row-stochastic; rows of epochs outside this task are absorbing so the
  // invariant holds everywhere.
  t.transitions = Mat::Identity(n_epochs, n_epochs);
  for (size_t i = 0; i + 1 < t.epoch_order.size(); ++i) {
    const int from = t.epoch_order[i];
    const int to = t.epoch_order[i + 1];
    t.transitions(from, from) = self_prob;
    t.transitions(from, to) = 1.0 - self_prob;
  }
  t.terminal_epochs = {t.epoch_order.back()};
  return t;
}

}  // namespace

TaskSuite build_default_suite(const GenConfig& cfg) {
  cfg.validate();
  if (cfg.n_x > 8) throw ConfigError("default suite defines at most 8 trial-variable values");
  const int n_x = cfg.n_x;
  auto theta = [&](int x) { return (n_x == 8) ? x * kPi / 4.0 : x * 2.0 * kPi / n_x; };

  TaskSuite suite;
  suite.epochs.resize(epoch::kCount);

  auto zero_row = [](int) { return std::make_pair(svec(0, 0, 0, 0, 0), yvec(0, 0, 0)); };
  suite.epochs[epoch::F] = make_epoch(epoch::F, "F", n_x, zero_row);
  suite.epochs[epoch::M] = make_epoch(epoch::M, "M", n_x, zero_row);

  suite.epochs[epoch::S] = make_epoch(epoch::S, "S", n_x, [&](int x) {
    return std::make_pair(svec(std::cos(theta(x)), std::sin(theta(x)), 0, 0, 0), yvec(0, 0, 0));
  });
  suite.epochs[epoch::RP] = make_epoch(epoch::RP, "R_P", n_x, [&](int x) {
    const double th = theta(x);
    return std::make_pair(svec(std::cos(th), std::sin(th), 0, 0, 1),
                          yvec(std::cos(th), std::sin(th), 1));
  });
  suite.epochs[epoch::RA] = make_epoch(epoch::RA, "R_A", n_x, [&](int x) {
    const double th = theta(x);
    return std::make_pair(svec(std::cos(th), std::sin(th), 0, 0, 1),
                          yvec(std::cos(th + kPi), std::sin(th + kPi), 1));
  });
  suite.epochs[epoch::RMP] = make_epoch(epoch::RMP, "R_MP", n_x, [&](int x) {
    const double th = theta(x);
    return std::make_pair(svec(0, 0, 0, 0, 1), yvec(std::cos(th), std::sin(th), 1));
  });
  suite.epochs[epoch::RMA] = make_epoch(epoch::RMA, "R_MA", n_x, [&](int x) {
    const double th = theta(x);
    return std::make_pair(svec(0, 0, 0, 0, 1), yvec(std::cos(th + kPi), std::sin(th + kPi), 1));
  });

  // DM epochs: two stimuli at theta=0 and theta'=pi with x-dependent strengths.
  const double th0 = 0.0, th1 = kPi;
  auto dm_inputs = [&](int x) {
    const double g = kDmPairs[x][0], gp = kDmPairs[x][1];
    return svec(g * std::cos(th0), g * std::sin(th0), gp * std::cos(th1), gp * std::sin(th1), 1);
  };
  suite.epochs[epoch::SDM] = make_epoch(epoch::SDM, "S_DM", n_x, [&](int x) {
    return std::make_pair(dm_inputs(x), yvec(1, 0, 0));
  });
  suite.epochs[epoch::RDMP] = make_epoch(epoch::RDMP, "R_DMP", n_x, [&](int x) {
    const double g = kDmPairs[x][0], gp = kDmPairs[x][1];
    const double phi = (g > gp) ? th0 : th1;
    return std::make_pair(dm_inputs(x), yvec(std::cos(phi), std::sin(phi), 1));
  });
  suite.epochs[epoch::RDMA] = make_epoch(epoch::RDMA, "R_DMA", n_x, [&](int x) {
    const double g = kDmPairs[x][0], gp = kDmPairs[x][1];
    const double phi = (g < gp) ? th0 : th1;
    return std::make_pair(dm_inputs(x), yvec(std::cos(phi), std::sin(phi), 1));
  });

  const int n_e = epoch::kCount;
  suite.tasks.push_back(make_task(task::DelayPro, "DelayPro", {epoch::F, epoch::S, epoch::RP}, n_e, cfg.self_prob));
  suite.tasks.push_back(make_task(task::DelayAnti, "DelayAnti", {epoch::F, epoch::S, epoch::RA}, n_e, cfg.self_prob));
  suite.tasks.push_back(make_task(task::MemoryPro, "MemoryPro", {epoch::F, epoch::S, epoch::M, epoch::RMP}, n_e, cfg.self_prob));
  suite.tasks.push_back(make_task(task::MemoryAnti, "MemoryAnti", {epoch::F, epoch::S, epoch::M, epoch::RMA}, n_e, cfg.self_prob));
  suite.tasks.push_back(make_task(task::DMPro, "DMPro", {epoch::F, epoch::SDM, epoch::RDMP}, n_e, cfg.self_prob));
  suite.tasks.push_back(make_task(task::DMAnti, "DMAnti", {epoch::F, epoch::SDM, epoch::RDMA}, n_e, cfg.self_prob));
  return suite;
}

std::pair<TaskDef, TaskDef> make_mprime_tasks(const TaskSuite& suite) {
  const int n_e = static_cast<int>(suite.epochs.size());
  // self_prob is recoverable from any non-terminal row of an existing task.
  const auto& d = suite.task(task::DelayPro);
  const double self_prob = d.transitions(epoch::F, epoch::F);
  TaskDef pro = make_task(task::MPrimePro, "MPrimePro", {epoch::F, epoch::S, epoch::RMP}, n_e, self_prob);
  TaskDef anti = make_task(task::MPrimeAnti, "MPrimeAnti", {epoch::F, epoch::S, epoch::RMA}, n_e, self_prob);
  return {pro, anti};
}

TaskSuite with_mprime(const TaskSuite& suite) {
  TaskSuite out = suite;
  auto [pro, anti] = make_mprime_tasks(suite);
  out.tasks.push_back(pro);
  out.tasks.push_back(anti);
  return out;
}

std::vector<int> sample_epoch_path(const TaskDef& task, const GenConfig& cfg, Rng& rng) {
  const int T = cfg.trial_len;
  const int n = static_cast<int>(task.epoch_order.size());
  if (n * cfg.min_epoch_dur > T)
    throw ConfigError("trial_len " + std::to_string(T) + " too short for task " + task.name);

  std::vector<int> path;
  path.reserve(T);
  for (int i = 0; i < n; ++i) {
    const int e = task.epoch_order[i];
    if (i == n - 1) {
      while (static_cast<int>(path.size()) < T) path.push_back(e);
      break;
    }
    // Remaining epochs still need their minimum durations.
    const int budget = T - static_cast<int>(path.size()) - (n - 1 - i) * cfg.min_epoch_dur;
    int dur = cfg.min_epoch_dur;
    while (dur < budget && rng.uniform() < cfg.self_prob) ++dur;
    for (int k = 0; k < dur; ++k) path.push_back(e);
  }
  return path;
}

Trial sample_trial(const TaskSuite& suite, int c, const GenConfig& cfg, Rng& rng) {
  const TaskDef& task = suite.task(c);
  Trial trial;
  trial.c = c;
  trial.x_true = rng.uniform_int(cfg.n_x);
  trial.z_true = sample_epoch_path(task, cfg, rng);
  const int T = static_cast<int>(trial.z_true.size());
  trial.s.resize(T, kInputDim);
  trial.y.resize(T, kOutputDim);
  for (int t = 0; t < T; ++t) {
    const auto& row = suite.epochs[trial.z_true[t]].mean_table[trial.x_true];
    for (int i = 0; i < kInputDim; ++i) trial.s(t, i) = row.first(i) + cfg.sigma * rng.normal();
    for (int i = 0; i < kOutputDim; ++i) trial.y(t, i) = row.second(i) + cfg.sigma * rng.normal();
  }
  return trial;
}

Mat noisy_inputs(const Trial& trial, const GenConfig& cfg, Rng& rng) {
  Mat s = trial.s;
  if (cfg.input_noise_std > 0.0)
    for (int t = 0; t < s.rows(); ++t)
      for (int i = 0; i < s.cols(); ++i) s(t, i) += cfg.input_noise_std * rng.normal();
  return s;
}

namespace {

// The learner cannot distinguish F from M (identical observation models), so
// the reference parameters merge them into one epoch.
struct MergedModel {
  std::vector<Mat> means;  // slot -> n_x x 8
  std::vector<Mat> log_trans;
  std::vector<Vec> log_pi;
  std::vector<int> task_ids;
  double sigma2 = 0.0;
  int n_x = 0;

  int task_index(int c) const {
    for (size_t i = 0; i < task_ids.size(); ++i)
      if (task_ids[i] == c) return static_cast<int>(i);
    throw ConfigError("ground truth: unknown task id " + std::to_string(c));
  }
};

MergedModel merged_model(const TaskSuite& suite, const GenConfig& cfg) {
  MergedModel m;
  m.sigma2 = cfg.sigma * cfg.sigma;
  m.n_x = cfg.n_x;
  // slot ids: every epoch except M, with M folded onto F.
  std::vector<int> slot_of(suite.epochs.size(), -1);
  std::vector<int> slot_epochs;
  for (size_t e = 0; e < suite.epochs.size(); ++e) {
    if (static_cast<int>(e) == epoch::M) continue;
    slot_of[e] = static_cast<int>(slot_epochs.size());
    slot_epochs.push_back(static_cast<int>(e));
  }
  slot_of[epoch::M] = slot_of[epoch::F];
  const int Z = static_cast<int>(slot_epochs.size());

  for (int z = 0; z < Z; ++z) {
    Mat mu(m.n_x, kObsDim);
    for (int x = 0; x < m.n_x; ++x) mu.row(x) = suite.epochs[slot_epochs[z]].obs_mean(x).transpose();
    m.means.push_back(mu);
  }

  for (const auto& task : suite.tasks) {
    Mat trans = Mat::Zero(Z, Z);
    Vec weight = Vec::Zero(Z);
    for (int e : task.epoch_order) {
      const int z = slot_of[e];
      for (size_t j = 0; j < suite.epochs.size(); ++j)
        trans(z, slot_of[j]) += task.transitions(e, j);
      weight(z) += 1.0;
    }
    for (int z = 0; z < Z; ++z) {
      if (weight(z) > 0.0)
        trans.row(z) /= weight(z);  // members of a merged slot share the row equally
      else
        trans(z, z) = 1.0;
    }
    Vec pi = Vec::Zero(Z);
    for (size_t e = 0; e < suite.epochs.size(); ++e) pi(slot_of[e]) += task.initial_probs(e);

    Mat lt(Z, Z);
    Vec lp(Z);
    for (int i = 0; i < Z; ++i) {
      lp(i) = pi(i) > 0.0 ? std::log(pi(i)) : kNegInf;
      for (int j = 0; j < Z; ++j) lt(i, j) = trans(i, j) > 0.0 ? std::log(trans(i, j)) : kNegInf;
    }
    m.log_trans.push_back(lt);
    m.log_pi.push_back(lp);
    m.task_ids.push_back(task.task_id);
  }
  return m;
}

}  // namespace

double ground_truth_ll(const TaskSuite& suite, const Trial& trial, const GenConfig& cfg) {
  const MergedModel m = merged_model(suite, cfg);
  const int ti = m.task_index(trial.c);
  const Mat q = trial.q();
  const int T = trial.length();
  const int Z = static_cast<int>(m.means.size());

  const double log_px = -std::log(static_cast<double>(m.n_x));
  Vec per_x(m.n_x);
  Mat log_emit(T, Z);
  for (int x = 0; x < m.n_x; ++x) {
    for (int t = 0; t < T; ++t)
      for (int z = 0; z < Z; ++z)
        log_emit(t, z) =
            log_gauss_iso((q.row(t).transpose() - m.means[z].row(x).transpose()).squaredNorm(),
                          kObsDim, m.sigma2);
    per_x(x) = hmm::forward(log_emit, m.log_pi[ti], m.log_trans[ti]).ll + log_px;
  }
  return log_sum_exp(per_x);
}

std::string suite_to_json(const TaskSuite& suite) {
  json j;
  j["format"] = "cgr-suite";
  j["version"] = 1;
  j["epochs"] = json::array();
  for (const auto& e : suite.epochs) {
    json je;
    je["epoch_id"] = e.epoch_id;
    je["label"] = e.label;
    je["is_response"] = e.is_response;
    je["fixation_required"] = e.fixation_required;
    json rows = json::array();
    for (const auto& [s, y] : e.mean_table) {
      json r;
      r["s"] = std::vector<double>(s.data(), s.data() + s.size());
      r["y"] = std::vector<double>(y.data(), y.data() + y.size());
      rows.push_back(r);
    }
    je["mean_table"] = rows;
    j["epochs"].push_back(je);
  }
  j["tasks"] = json::array();
  for (const auto& t : suite.tasks) {
    json jt;
    jt["task_id"] = t.task_id;
    jt["name"] = t.name;
    jt["epoch_order"] = t.epoch_order;
    jt["initial_probs"] = std::vector<double>(t.initial_probs.data(),
                                              t.initial_probs.data() + t.initial_probs.size());
    json rows = json::array();
    for (int i = 0; i < t.transitions.rows(); ++i) {
      std::vector<double> row(t.transitions.cols());
      for (int k = 0; k < t.transitions.cols(); ++k) row[k] = t.transitions(i, k);
      rows.push_back(row);
    }
    jt["transitions"] = rows;
    jt["terminal_epochs"] = std::vector<int>(t.terminal_epochs.begin(), t.terminal_epochs.end());
    j["tasks"].push_back(jt);
  }
  return j.dump(2);
}

TaskSuite suite_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != "cgr-suite") throw ConfigError("not a suite file");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported suite version");
  TaskSuite suite;
  for (const auto& je : j["epochs"]) {
    EpochDef e;
    e.epoch_id = je["epoch_id"].get<int>();
    e.label = je["label"].get<std::string>();
    e.is_response = je["is_response"].get<bool>();
    e.fixation_required = je["fixation_required"].get<bool>();
    for (const auto& r : je["mean_table"]) {
      auto sv = r["s"].get<std::vector<double>>();
      auto yv = r["y"].get<std::vector<double>>();
      e.mean_table.emplace_back(Eigen::Map<Vec>(sv.data(), sv.size()),
                                Eigen::Map<Vec>(yv.data(), yv.size()));
    }
    suite.epochs.push_back(std::move(e));
  }
  for (const auto& jt : j["tasks"]) {
    TaskDef t;
    t.task_id = jt["task_id"].get<int>();
    t.name = jt["name"].get<std::string>();
    t.epoch_order = jt["epoch_order"].get<std::vector<int>>();
    auto pi = jt["initial_probs"].get<std::vector<double>>();
    t.initial_probs = Eigen::Map<Vec>(pi.data(), pi.size());
    const auto& rows = jt["transitions"];
    t.transitions.resize(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
      auto row = rows[i].get<std::vector<double>>();
      for (size_t k = 0; k < row.size(); ++k) t.transitions(i, k) = row[k];
    }
    for (int e : jt["terminal_epochs"].get<std::vector<int>>()) t.terminal_epochs.insert(e);
    suite.tasks.push_back(std::move(t));
  }
  return suite;
}

std::string trial_to_text(const Trial& trial) {
  std::string out = "# cgr-trial v1\n# t c x z s1 s2 s3 s4 s5 y1 y2 y3\n";
  char buf[64];
  for (int t = 0; t < trial.length(); ++t) {
    out += std::to_string(t) + " " + std::to_string(trial.c) + " " + std::to_string(trial.x_true) +
           " " + std::to_string(trial.z_true[t]);
    for (int i = 0; i < kInputDim; ++i) {
      std::snprintf(buf, sizeof(buf), " %.17g", trial.s(t, i));
      out += buf;
    }
    for (int i = 0; i < kOutputDim; ++i) {
      std::snprintf(buf, sizeof(buf), " %.17g", trial.y(t, i));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace cgr
