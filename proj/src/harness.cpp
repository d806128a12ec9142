#include "cgr/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <thread>

#include <nlohmann/json.hpp>

#include "cgr/numerics.hpp"

namespace cgr {

using json = nlohmann::ordered_json;

std::string learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::Context: return "context";
    case LearnerKind::Adam: return "adam";
    case LearnerKind::EWC: return "ewc";
    case LearnerKind::OWP: return "owp";
  }
  return "?";
}

LearnerKind learner_from_name(const std::string& name) {
  if (name == "context") return LearnerKind::Context;
  if (name == "adam") return LearnerKind::Adam;
  if (name == "ewc") return LearnerKind::EWC;
  if (name == "owp") return LearnerKind::OWP;
  throw ConfigError("unknown learner: " + name);
}

void ExperimentConfig::validate() const {
  if (task_order.empty()) throw ConfigError("task_order must be nonempty");
  if (tm_trials_per_task < 0 || batches_per_task < 0) throw ConfigError("negative training budget");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (n_eval < 1) throw ConfigError("n_eval must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  gen.validate();
  rnn.validate();
  tm.validate();
  for (int c : task_order)
    if (c < 0 || c > task::MPrimeAnti) throw ConfigError("unknown task id in task_order");
}

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  cfg.preset = name;
  if (name == "paper") {
    cfg.rnn.n_hidden = 256;
    cfg.batches_per_task = 1000;
    cfg.batch_size = 256;
    cfg.eval_every = 25;
    cfg.n_eval = 200;
    cfg.tm_trials_per_task = 500;
  } else if (name == "desk") {
    cfg.rnn.n_hidden = 128;
    cfg.batches_per_task = 300;
    cfg.batch_size = 64;
    cfg.eval_every = 50;
    cfg.n_eval = 200;
    cfg.tm_trials_per_task = 500;
    cfg.fisher_trials = 128;
    cfg.owp_trials = 128;
  } else if (name == "smoke") {
    cfg.rnn.n_hidden = 48;
    cfg.batches_per_task = 30;
    cfg.batch_size = 16;
    cfg.eval_every = 15;
    cfg.n_eval = 40;
    cfg.n_ll_eval = 40;
    cfg.tm_trials_per_task = 120;
    cfg.fisher_trials = 32;
    cfg.owp_trials = 32;
    cfg.compgen_adapt_trials = 64;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
}

namespace {

// substream tags
enum Stream : uint64_t {
  kTmTrial = 1,
  kRnnTrial,
  kRnnSide,
  kEvalTrial,
  kEvalSide,
  kAlloc,
  kNetInit,
  kFisher,
  kOwp,
  kLlEval,
  kCompgenTrial,
};

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nw = std::min(threads, n);
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < nw; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

struct EvalResult {
  double loss = 0.0;
  double perf = 0.0;
};

struct ContextLearner {
  TaskModelState tm;
  ContextBank bank;
  TrainState ts;
};

EvalResult eval_context(const ContextLearner& L, const TaskSuite& suite,
                        const ExperimentConfig& cfg, int c, uint64_t phase, uint64_t point) {
  std::vector<double> losses(cfg.n_eval), perfs(cfg.n_eval);
  parallel_for(cfg.n_eval, cfg.threads, [&](int i) {
    Rng rng(cfg.seed, mix_stream(kEvalTrial, phase * 1000 + point, c, i));
    Trial trial = sample_trial(suite, c, cfg.gen, rng);
    Mat gating = test_time_infer(trial.s, c, L.tm.params, L.tm.tables);
    Rng side(cfg.seed, mix_stream(kEvalSide, phase * 1000 + point, c, i));
    const Mat s = noisy_inputs(trial, cfg.gen, side);
    ForwardCache fc = forward_trial(L.bank, gating, s, side, true, cfg.activity_thresh);
    losses[i] = weighted_mse(fc.Yhat, trial.y, loss_mask(trial, suite));
    perfs[i] = evaluate_perf(fc.Yhat, trial, suite) ? 1.0 : 0.0;
  });
  EvalResult r;
  for (int i = 0; i < cfg.n_eval; ++i) {
    r.loss += losses[i];
    r.perf += perfs[i];
  }
  r.loss /= cfg.n_eval;
  r.perf /= cfg.n_eval;
  return r;
}

EvalResult eval_general(const GeneralRNN& net, const TaskSuite& suite, const ExperimentConfig& cfg,
                        int c, uint64_t phase, uint64_t point) {
  std::vector<double> losses(cfg.n_eval), perfs(cfg.n_eval);
  parallel_for(cfg.n_eval, cfg.threads, [&](int i) {
    Rng rng(cfg.seed, mix_stream(kEvalTrial, phase * 1000 + point, c, i));
    Trial trial = sample_trial(suite, c, cfg.gen, rng);
    Rng side(cfg.seed, mix_stream(kEvalSide, phase * 1000 + point, c, i));
    const Mat s = noisy_inputs(trial, cfg.gen, side);
    GeneralCache fc = general_forward(net, s, c, side, true);
    losses[i] = weighted_mse(fc.Yhat, trial.y, loss_mask(trial, suite));
    perfs[i] = evaluate_perf(fc.Yhat, trial, suite) ? 1.0 : 0.0;
  });
  EvalResult r;
  for (int i = 0; i < cfg.n_eval; ++i) {
    r.loss += losses[i];
    r.perf += perfs[i];
  }
  r.loss /= cfg.n_eval;
  r.perf /= cfg.n_eval;
  return r;
}

TaskSuite suite_for(const ExperimentConfig& cfg, bool with_mprime_tasks) {
  TaskSuite suite = build_default_suite(cfg.gen);
  if (with_mprime_tasks) suite = with_mprime(suite);
  return suite;
}

bool needs_mprime(const std::vector<int>& order) {
  for (int c : order)
    if (c >= task::MPrimePro) return true;
  return false;
}

// One sequential pass shared by every experiment driver. `phase_base` keeps
// substreams distinct when a driver chains several passes.
struct Driver {
  const ExperimentConfig& cfg;
  LearnerKind kind;
  std::string run_id;
  MetricsLog& log;
  TaskSuite suite;
  long global_step = 0;
  uint64_t phase_base = 0;

  std::optional<ContextLearner> ctx;
  std::optional<GeneralRNN> net;
  std::optional<FlatAdam> adam;
  std::optional<EwcState> ewc;
  std::optional<OwpState> owp;

  std::vector<IsolationRecord> isolation;

  Driver(const ExperimentConfig& cfg_, LearnerKind kind_, std::string run_id_, MetricsLog& log_,
         bool mprime)
      : cfg(cfg_), kind(kind_), run_id(std::move(run_id_)), log(log_) {
    suite = suite_for(cfg, mprime);
    if (kind == LearnerKind::Context) {
      ctx.emplace();
      ctx->tm = TaskModelState(cfg.tm, cfg.gen.n_x);
      ctx->bank = ContextBank(cfg.rnn, cfg.tm.z_slots);
      ctx->ts = TrainState(ctx->bank, cfg.context_lr);
      ctx->ts.l2_coef = cfg.l2_coef;
      ctx->ts.activity_thresh = cfg.activity_thresh;
    } else {
      Rng rng(cfg.seed, mix_stream(kNetInit));
      net.emplace(cfg.rnn, task::MPrimeAnti + 1, rng);
      adam.emplace(*net, cfg.baseline_lr);
      adam->l2 = cfg.l2_coef;
      if (kind == LearnerKind::EWC) ewc.emplace(*net, cfg.ewc_lambda);
      if (kind == LearnerKind::OWP) owp.emplace(*net, cfg.owp_ridge);
    }
  }

  MetricsRow base_row(const std::string& phase, int trained, int eval_task) const {
    MetricsRow r;
    r.run_id = run_id;
    r.seed = cfg.seed;
    r.phase = phase;
    r.global_step = global_step;
    r.trained_task = trained;
    r.eval_task = eval_task;
    return r;
  }

  void eval_all(int trained_task, uint64_t phase, uint64_t point,
                const std::vector<int>& eval_tasks) {
    for (int k : eval_tasks) {
      MetricsRow row = base_row("eval", trained_task, k);
      if (kind == LearnerKind::Context && !ctx->tm.params.task_seen[k]) {
        // no gating exists for a task the model has never encountered
        row.performance = 0.0;
      } else {
        EvalResult r = (kind == LearnerKind::Context)
                           ? eval_context(*ctx, suite, cfg, k, phase, point)
                           : eval_general(*net, suite, cfg, k, phase, point);
        row.test_loss = r.loss;
        row.performance = r.perf;
      }
      log.append(row);
    }
  }

  // Task-model training phase (context learner only).
  void tm_phase(int c, uint64_t phase) {
    for (int i = 0; i < cfg.tm_trials_per_task; ++i) {
      Rng rng(cfg.seed, mix_stream(kTmTrial, phase_base + phase, i));
      Trial trial = sample_trial(suite, c, cfg.gen, rng);
      const double ll = learn_trial(ctx->tm, trial.q(), c);
      ++global_step;
      MetricsRow row = base_row("tm_train", c, c);
      row.task_model_ll = ll;
      row.performance = static_cast<double>(ctx->tm.tables.n_encountered_slots());
      log.append(row);
    }
  }

  void tm_eval(int trained_task, const std::vector<int>& eval_tasks) {
    for (int k : eval_tasks) {
      MetricsRow row = base_row("tm_eval", trained_task, k);
      row.task_model_ll =
          mean_trial_ll(ctx->tm, suite, cfg.gen, k, cfg.n_ll_eval, cfg.seed);
      log.append(row);
      MetricsRow gt = base_row("tm_eval_gt", trained_task, k);
      gt.task_model_ll = mean_ground_truth_ll(suite, cfg.gen, k, cfg.n_ll_eval, cfg.seed);
      log.append(gt);
    }
  }

  // RNN training phase for one task; evaluates every cfg.eval_every batches.
  void rnn_phase(int c, uint64_t phase, int batches, const std::vector<int>& eval_tasks) {
    if (batches == 0) return;
    if (kind == LearnerKind::Context)
      rnn_phase_context(c, phase, batches, eval_tasks);
    else
      rnn_phase_general(c, phase, batches, eval_tasks);
  }

  void rnn_phase_context(int c, uint64_t phase, int batches, const std::vector<int>& eval_tasks) {
    const int B = cfg.batch_size;
    std::vector<Trial> trials(B);
    std::vector<Mat> gatings(B);
    std::vector<BankGrads> grads(B);
    std::vector<Vec> applied_mass(B);
    Vec phase_gate_mass = Vec::Zero(ctx->bank.n_slots());
    long phase_gate_steps = 0;

    // snapshot for the isolation record
    std::vector<int> pre_alloc;
    std::vector<ContextWeights> snapshot(ctx->bank.n_slots());
    std::vector<bool> gated_in_phase(ctx->bank.n_slots(), false);
    for (int z = 0; z < ctx->bank.n_slots(); ++z)
      if (ctx->bank.allocated[z]) {
        pre_alloc.push_back(z);
        snapshot[z] = ctx->bank.ctx[z];
      }

    std::vector<bool> l2_set(ctx->bank.n_slots(), false);
    bool l2_chosen = false;

    for (int b = 0; b < batches; ++b) {
      parallel_for(B, cfg.threads, [&](int i) {
        Rng rng(cfg.seed, mix_stream(kRnnTrial, phase_base + phase, b, i));
        trials[i] = sample_trial(suite, c, cfg.gen, rng);
        gatings[i] = train_time_infer(trials[i].q(), c, ctx->tm.params, ctx->tm.tables);
      });

      // allocate any context the gating now touches; streams are keyed by the
      // slot id so allocation timing cannot change the draw
      for (int i = 0; i < B; ++i)
        for (int z = 0; z < ctx->bank.n_slots(); ++z)
          if (!ctx->bank.allocated[z] &&
              (gatings[i].col(z).array() > cfg.activity_thresh).any()) {
            Rng arng(cfg.seed, mix_stream(kAlloc, z));
            allocate_context(ctx->bank, z, arng);
          }

      if (!l2_chosen) {
        // p(z | task) estimated from the first batch
        Vec mass = Vec::Zero(ctx->bank.n_slots());
        long steps = 0;
        for (int i = 0; i < B; ++i) {
          mass += gatings[i].colwise().sum().transpose();
          steps += gatings[i].rows();
        }
        mass /= static_cast<double>(steps);
        for (int z = 0; z < ctx->bank.n_slots(); ++z) {
          ctx->ts.slot[z].l2_on = mass(z) > cfg.activity_thresh;
          l2_set[z] = ctx->ts.slot[z].l2_on;
        }
        l2_chosen = true;
      }

      parallel_for(B, cfg.threads, [&](int i) {
        Rng side(cfg.seed, mix_stream(kRnnSide, phase_base + phase, b, i));
        const Mat s = noisy_inputs(trials[i], cfg.gen, side);
        ForwardCache fc =
            forward_trial(ctx->bank, gatings[i], s, side, true, cfg.activity_thresh);
        grads[i] = backward_trial(ctx->bank, fc, trials[i].y, loss_mask(trials[i], suite));
        applied_mass[i] = fc.P.colwise().sum().transpose();
      });
      BankGrads total(ctx->bank);
      for (int i = 0; i < B; ++i) {
        total.accumulate(grads[i]);
        for (int z = 0; z < ctx->bank.n_slots(); ++z)
          if (grads[i].touched[z]) gated_in_phase[z] = true;
        phase_gate_mass += applied_mass[i];
        phase_gate_steps += trials[i].length();
      }
      total.scale(1.0 / B);
      adam_step(ctx->bank, ctx->ts, total);

      global_step += B;
      if ((b + 1) % cfg.eval_every == 0 || b + 1 == batches)
        eval_all(c, phase, static_cast<uint64_t>(b + 1), eval_tasks);
    }

    // per-context lr decay for contexts active on this task
    std::vector<bool> active(ctx->bank.n_slots(), false);
    for (int z = 0; z < ctx->bank.n_slots(); ++z)
      active[z] = phase_gate_mass(z) / static_cast<double>(phase_gate_steps) >
                  cfg.activity_thresh;
    decay_lr(ctx->ts, active);

    IsolationRecord rec;
    rec.task = c;
    for (int z : pre_alloc) {
      if (gated_in_phase[z] || l2_set[z]) continue;
      rec.untouched_contexts.push_back(z);
      const auto& a = snapshot[z];
      const auto& w = ctx->bank.ctx[z];
      const bool same = a.U == w.U && a.V == w.V && a.W_in == w.W_in && a.b_in == w.b_in &&
                        a.W_out == w.W_out && a.b_out == w.b_out;
      if (!same) rec.all_identical = false;
    }
    isolation.push_back(std::move(rec));
  }

  void train_batch_general(int c, uint64_t phase, int b) {
    const int B = cfg.batch_size;
    std::vector<Trial> trials(B);
    std::vector<GeneralGrads> grads(B);
    parallel_for(B, cfg.threads, [&](int i) {
      Rng rng(cfg.seed, mix_stream(kRnnTrial, phase_base + phase, b, i));
      trials[i] = sample_trial(suite, c, cfg.gen, rng);
      Rng side(cfg.seed, mix_stream(kRnnSide, phase_base + phase, b, i));
      const Mat s = noisy_inputs(trials[i], cfg.gen, side);
      GeneralCache fc = general_forward(*net, s, c, side, true);
      grads[i] = general_backward(*net, fc, trials[i].y, loss_mask(trials[i], suite));
    });
    GeneralGrads total(*net);
    for (int i = 0; i < B; ++i) total.accumulate(grads[i]);
    total.scale(1.0 / B);
    if (kind == LearnerKind::EWC) ewc_adjust_grads(*net, *ewc, total);
    if (kind == LearnerKind::OWP) owp_project(*owp, total);
    general_adam_step(*net, *adam, total);
    global_step += cfg.batch_size;
  }

  void finish_task_general(int c, uint64_t phase) {
    if (kind == LearnerKind::EWC) {
      Rng rng(cfg.seed, mix_stream(kFisher, phase_base + phase));
      ewc_finish_task(*ewc, *net, suite, cfg.gen, c, cfg.fisher_trials, rng);
    }
    if (kind == LearnerKind::OWP) {
      Rng rng(cfg.seed, mix_stream(kOwp, phase_base + phase));
      owp_update_stats(*owp, *net, suite, cfg.gen, c, cfg.owp_trials, rng);
    }
  }

  void rnn_phase_general(int c, uint64_t phase, int batches, const std::vector<int>& eval_tasks) {
    for (int b = 0; b < batches; ++b) {
      train_batch_general(c, phase, b);
      if ((b + 1) % cfg.eval_every == 0 || b + 1 == batches)
        eval_all(c, phase, static_cast<uint64_t>(b + 1), eval_tasks);
    }
    finish_task_general(c, phase);
  }

  void train_task(int c, uint64_t phase, int batches, const std::vector<int>& eval_tasks,
                  const std::vector<int>& tm_eval_tasks) {
    if (kind == LearnerKind::Context) {
      tm_phase(c, phase);
      tm_eval(c, tm_eval_tasks);
    }
    rnn_phase(c, phase, batches, eval_tasks);
  }
};

}  // namespace

ContinualResult run_continual(const ExperimentConfig& cfg, LearnerKind kind,
                              const std::string& run_id, MetricsLog* shared_log) {
  cfg.validate();
  MetricsLog local;
  MetricsLog& log = shared_log ? *shared_log : local;
  Driver d(cfg, kind, run_id, log, needs_mprime(cfg.task_order));

  std::vector<int> seen;
  for (size_t p = 0; p < cfg.task_order.size(); ++p) {
    const int c = cfg.task_order[p];
    seen.push_back(c);
    d.train_task(c, static_cast<uint64_t>(p), cfg.batches_per_task, cfg.task_order, seen);
  }

  ContinualResult res;
  res.log = std::move(local);
  res.suite = d.suite;
  res.isolation = std::move(d.isolation);
  if (kind == LearnerKind::Context) {
    res.tm = std::move(d.ctx->tm);
    res.bank = std::move(d.ctx->bank);
    res.ts = std::move(d.ctx->ts);
  } else {
    res.net = std::move(*d.net);
  }
  return res;
}

MetricsLog run_transfer_forward(const ExperimentConfig& cfg,
                                const std::vector<std::pair<int, int>>& pairs, LearnerKind kind) {
  cfg.validate();
  MetricsLog log;
  std::vector<int> scratch_done;
  for (const auto& [a, b] : pairs) {
    {
      ExperimentConfig two = cfg;
      two.task_order = {a, b};
      std::string id = "fwd-" + std::to_string(a) + "-" + std::to_string(b);
      Driver d(two, kind, id, log, needs_mprime(two.task_order));
      d.train_task(a, 0, two.batches_per_task, {a}, {a});
      d.train_task(b, 1, two.batches_per_task, {a, b}, {a, b});
    }
    if (std::find(scratch_done.begin(), scratch_done.end(), b) == scratch_done.end()) {
      scratch_done.push_back(b);
      ExperimentConfig one = cfg;
      one.task_order = {b};
      Driver d(one, kind, "scratch-" + std::to_string(b), log, needs_mprime(one.task_order));
      d.train_task(b, 0, one.batches_per_task, {b}, {b});
    }
  }
  return log;
}

MetricsLog run_transfer_backward(const ExperimentConfig& cfg,
                                 const std::vector<std::pair<int, int>>& pairs, int short_budget,
                                 LearnerKind kind) {
  cfg.validate();
  MetricsLog log;
  for (const auto& [a, b] : pairs) {
    ExperimentConfig two = cfg;
    two.task_order = {a, b};
    std::string id = "bwd-" + learner_name(kind) + "-" + std::to_string(a) + "-" +
                     std::to_string(b);
    Driver d(two, kind, id, log, needs_mprime(two.task_order));
    d.train_task(a, 0, short_budget, {a}, {a});
    d.train_task(b, 1, short_budget, {a, b}, {a, b});
  }
  return log;
}

namespace {

uint64_t bank_checksum_words(const ContextBank& bank) {
  uint64_t h = 0x9E3779B97F4A7C15ULL;
  auto mix = [&h](const double* p, long n) {
    for (long i = 0; i < n; ++i) {
      uint64_t w;
      std::memcpy(&w, p + i, sizeof(w));
      uint64_t x = h ^ w;
      h = splitmix64(x);
    }
  };
  for (int z = 0; z < bank.n_slots(); ++z) {
    if (!bank.allocated[z]) continue;
    const auto& c = bank.ctx[z];
    mix(c.U.data(), c.U.size());
    mix(c.V.data(), c.V.size());
    mix(c.W_in.data(), c.W_in.size());
    mix(c.b_in.data(), c.b_in.size());
    mix(c.W_out.data(), c.W_out.size());
    mix(c.b_out.data(), c.b_out.size());
  }
  return h;
}

}  // namespace

CompgenResult run_compgen(const ExperimentConfig& cfg, LearnerKind kind) {
  cfg.validate();
  ExperimentConfig pre = cfg;
  pre.task_order = {task::MPrimePro, task::MPrimeAnti, task::MemoryPro};
  const int target = task::MemoryAnti;

  CompgenResult out;
  const std::string id = "compgen-" + learner_name(kind);
  Driver d(pre, kind, id, out.log, true);
  for (size_t p = 0; p < pre.task_order.size(); ++p) {
    std::vector<int> seen(pre.task_order.begin(), pre.task_order.begin() + p + 1);
    d.train_task(pre.task_order[p], static_cast<uint64_t>(p), pre.batches_per_task,
                 pre.task_order, seen);
  }

  // adaptation eval points, denser early
  std::vector<int> points;
  for (int r : {1, 2, 4, 8, 16, 24, 32, 40, 48, 64, 80, 96, 112, 128, 192, 256, 384, 512})
    if (r <= cfg.compgen_adapt_trials) points.push_back(r);
  if (points.empty() || points.back() != cfg.compgen_adapt_trials)
    points.push_back(cfg.compgen_adapt_trials);

  const uint64_t adapt_phase = 100;
  if (kind == LearnerKind::Context) {
    const uint64_t before = bank_checksum_words(d.ctx->bank);
    int r = 0;
    for (int point : points) {
      for (; r < point; ++r) {
        Rng rng(cfg.seed, mix_stream(kCompgenTrial, r));
        Trial trial = sample_trial(d.suite, target, cfg.gen, rng);
        learn_trial(d.ctx->tm, trial.q(), target);
        ++d.global_step;
      }
      EvalResult e = eval_context(*d.ctx, d.suite, cfg, target, adapt_phase,
                                  static_cast<uint64_t>(point));
      MetricsRow row = d.base_row("compgen_eval", target, target);
      row.run_id += "-adapt";  // global_step restarts at the adaptation trial count
      row.global_step = point;
      row.test_loss = e.loss;
      row.performance = e.perf;
      out.log.append(row);
      if (out.trials_to_80pct < 0 && e.perf >= 0.8) out.trials_to_80pct = point;
    }
    out.bank_frozen_ok = bank_checksum_words(d.ctx->bank) == before;
  } else {
    // full-model training in batches; evaluate at the nearest batch boundary
    EvalResult e0 = eval_general(*d.net, d.suite, cfg, target, adapt_phase, 0);
    MetricsRow row0 = d.base_row("compgen_eval", target, target);
    row0.run_id += "-adapt";
    row0.global_step = 0;
    row0.test_loss = e0.loss;
    row0.performance = e0.perf;
    out.log.append(row0);
    const int n_batches = (cfg.compgen_adapt_trials + cfg.batch_size - 1) / cfg.batch_size;
    int consumed = 0;
    for (int b = 0; b < n_batches; ++b) {
      d.train_batch_general(target, adapt_phase, b);
      consumed += cfg.batch_size;
      EvalResult e = eval_general(*d.net, d.suite, cfg, target, adapt_phase,
                                  static_cast<uint64_t>(consumed));
      MetricsRow row = d.base_row("compgen_eval", target, target);
      row.run_id += "-adapt";
      row.global_step = consumed;
      row.test_loss = e.loss;
      row.performance = e.perf;
      out.log.append(row);
      if (out.trials_to_80pct < 0 && e.perf >= 0.8) out.trials_to_80pct = consumed;
    }
  }
  return out;
}

double mean_trial_ll(const TaskModelState& tm, const TaskSuite& suite, const GenConfig& gen,
                     int c, int n_trials, uint64_t seed) {
  double acc = 0.0;
  for (int i = 0; i < n_trials; ++i) {
    Rng rng(seed, mix_stream(kLlEval, c, i));
    Trial trial = sample_trial(suite, c, gen, rng);
    acc += forward_messages(trial.q(), c, tm.params, tm.tables).ll;
  }
  return acc / n_trials;
}

double mean_ground_truth_ll(const TaskSuite& suite, const GenConfig& gen, int c, int n_trials,
                            uint64_t seed) {
  double acc = 0.0;
  for (int i = 0; i < n_trials; ++i) {
    Rng rng(seed, mix_stream(kLlEval, c, i));
    Trial trial = sample_trial(suite, c, gen, rng);
    acc += ground_truth_ll(suite, trial, gen);
  }
  return acc / n_trials;
}

double test_time_path_accuracy(const TaskModelState& tm, const TaskSuite& suite,
                               const GenConfig& gen, int c, int n_trials, uint64_t seed) {
  const std::vector<int> slot_epoch = map_slots_to_epochs(tm.params, tm.tables, suite);
  long correct = 0, total = 0;
  for (int i = 0; i < n_trials; ++i) {
    Rng rng(seed, mix_stream(kLlEval, 1000 + c, i));
    Trial trial = sample_trial(suite, c, gen, rng);
    Mat post = test_time_infer(trial.s, c, tm.params, tm.tables);
    for (int t = 0; t < trial.length(); ++t) {
      int zmax = 0;
      post.row(t).maxCoeff(&zmax);
      int true_e = trial.z_true[t];
      if (true_e == epoch::M) true_e = epoch::F;
      correct += (slot_epoch[zmax] == true_e) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string tm_ll_log_to_text(const std::vector<std::array<double, 4>>& rows) {
  std::string out = "# cgr-tm-ll v1\n# trial_index task_id ll n_encountered_epochs\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d %d %.17g %d\n", static_cast<int>(r[0]),
                  static_cast<int>(r[1]), r[2], static_cast<int>(r[3]));
    out += buf;
  }
  return out;
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const std::vector<std::string> kKnownKeys = {
    "task_order", "tm_trials_per_task", "batches_per_task", "batch_size", "eval_every", "n_eval",
    "n_ll_eval", "fisher_trials", "owp_trials", "compgen_adapt_trials", "seed", "threads",
    "preset", "gen", "rnn", "tm", "context_lr", "baseline_lr", "l2_coef", "activity_thresh",
    "ewc_lambda", "owp_ridge"};
const std::vector<std::string> kKnownGen = {"sigma",      "n_x",      "min_epoch_dur",
                                            "self_prob",  "trial_len", "input_noise_std",
                                            "seed"};
const std::vector<std::string> kKnownRnn = {"n_hidden", "rank",      "alpha",     "sigma_r",
                                            "relu",     "input_dim", "output_dim"};
const std::vector<std::string> kKnownTm = {"z_slots",    "c_slots",     "eta_params",
                                           "eta_stats",  "em_iters",    "match_tol",
                                           "gate_thresh", "seg_thresh_mult", "sigma_init",
                                           "lambda_self_init"};

void reject_unknown(const json& j, const std::vector<std::string>& known, const char* scope) {
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(std::string("unknown config key in ") + scope + ": " + key);
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  reject_unknown(j, kKnownKeys, "config");
  ExperimentConfig cfg;
  if (j.contains("preset")) apply_preset(cfg, j.at("preset").get<std::string>());
  read_key(j, "task_order", cfg.task_order);
  read_key(j, "tm_trials_per_task", cfg.tm_trials_per_task);
  read_key(j, "batches_per_task", cfg.batches_per_task);
  read_key(j, "batch_size", cfg.batch_size);
  read_key(j, "eval_every", cfg.eval_every);
  read_key(j, "n_eval", cfg.n_eval);
  read_key(j, "n_ll_eval", cfg.n_ll_eval);
  read_key(j, "fisher_trials", cfg.fisher_trials);
  read_key(j, "owp_trials", cfg.owp_trials);
  read_key(j, "compgen_adapt_trials", cfg.compgen_adapt_trials);
  read_key(j, "seed", cfg.seed);
  read_key(j, "threads", cfg.threads);
  read_key(j, "context_lr", cfg.context_lr);
  read_key(j, "baseline_lr", cfg.baseline_lr);
  read_key(j, "l2_coef", cfg.l2_coef);
  read_key(j, "activity_thresh", cfg.activity_thresh);
  read_key(j, "ewc_lambda", cfg.ewc_lambda);
  read_key(j, "owp_ridge", cfg.owp_ridge);
  if (j.contains("gen")) {
    reject_unknown(j.at("gen"), kKnownGen, "gen");
    auto& g = j.at("gen");
    read_key(g, "sigma", cfg.gen.sigma);
    read_key(g, "n_x", cfg.gen.n_x);
    read_key(g, "min_epoch_dur", cfg.gen.min_epoch_dur);
    read_key(g, "self_prob", cfg.gen.self_prob);
    read_key(g, "trial_len", cfg.gen.trial_len);
    read_key(g, "input_noise_std", cfg.gen.input_noise_std);
    read_key(g, "seed", cfg.gen.seed);
  }
  if (j.contains("rnn")) {
    reject_unknown(j.at("rnn"), kKnownRnn, "rnn");
    auto& r = j.at("rnn");
    read_key(r, "n_hidden", cfg.rnn.n_hidden);
    read_key(r, "rank", cfg.rnn.rank);
    read_key(r, "alpha", cfg.rnn.alpha);
    read_key(r, "sigma_r", cfg.rnn.sigma_r);
    read_key(r, "relu", cfg.rnn.relu);
    read_key(r, "input_dim", cfg.rnn.input_dim);
    read_key(r, "output_dim", cfg.rnn.output_dim);
  }
  if (j.contains("tm")) {
    reject_unknown(j.at("tm"), kKnownTm, "tm");
    auto& t = j.at("tm");
    read_key(t, "z_slots", cfg.tm.z_slots);
    read_key(t, "c_slots", cfg.tm.c_slots);
    read_key(t, "eta_params", cfg.tm.eta_params);
    read_key(t, "eta_stats", cfg.tm.eta_stats);
    read_key(t, "em_iters", cfg.tm.em_iters);
    read_key(t, "match_tol", cfg.tm.match_tol);
    read_key(t, "gate_thresh", cfg.tm.gate_thresh);
    read_key(t, "seg_thresh_mult", cfg.tm.seg_thresh_mult);
    read_key(t, "sigma_init", cfg.tm.sigma_init);
    read_key(t, "lambda_self_init", cfg.tm.lambda_self_init);
  }
  cfg.validate();
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["task_order"] = cfg.task_order;
  j["tm_trials_per_task"] = cfg.tm_trials_per_task;
  j["batches_per_task"] = cfg.batches_per_task;
  j["batch_size"] = cfg.batch_size;
  j["eval_every"] = cfg.eval_every;
  j["n_eval"] = cfg.n_eval;
  j["n_ll_eval"] = cfg.n_ll_eval;
  j["fisher_trials"] = cfg.fisher_trials;
  j["owp_trials"] = cfg.owp_trials;
  j["compgen_adapt_trials"] = cfg.compgen_adapt_trials;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["context_lr"] = cfg.context_lr;
  j["baseline_lr"] = cfg.baseline_lr;
  j["l2_coef"] = cfg.l2_coef;
  j["activity_thresh"] = cfg.activity_thresh;
  j["ewc_lambda"] = cfg.ewc_lambda;
  j["owp_ridge"] = cfg.owp_ridge;
  j["gen"] = {{"sigma", cfg.gen.sigma},
              {"n_x", cfg.gen.n_x},
              {"min_epoch_dur", cfg.gen.min_epoch_dur},
              {"self_prob", cfg.gen.self_prob},
              {"trial_len", cfg.gen.trial_len},
              {"input_noise_std", cfg.gen.input_noise_std},
              {"seed", cfg.gen.seed}};
  j["rnn"] = {{"n_hidden", cfg.rnn.n_hidden}, {"rank", cfg.rnn.rank},
              {"alpha", cfg.rnn.alpha},       {"sigma_r", cfg.rnn.sigma_r},
              {"relu", cfg.rnn.relu},         {"input_dim", cfg.rnn.input_dim},
              {"output_dim", cfg.rnn.output_dim}};
  j["tm"] = {{"z_slots", cfg.tm.z_slots},
             {"c_slots", cfg.tm.c_slots},
             {"eta_params", cfg.tm.eta_params},
             {"eta_stats", cfg.tm.eta_stats},
             {"em_iters", cfg.tm.em_iters},
             {"match_tol", cfg.tm.match_tol},
             {"gate_thresh", cfg.tm.gate_thresh},
             {"seg_thresh_mult", cfg.tm.seg_thresh_mult},
             {"sigma_init", cfg.tm.sigma_init},
             {"lambda_self_init", cfg.tm.lambda_self_init}};
  return j.dump(2);
}

}  // namespace cgr
