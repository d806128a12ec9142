// cgr: continual learning of compositional cognitive tasks with a
// context-inferring task model gating a low-rank RNN.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "cgr/harness.hpp"
#include "cgr/plots.hpp"
#include "cgr/serialize.hpp"

namespace fs = std::filesystem;
using namespace cgr;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string preset;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file; flags override it");
  cmd->add_option("--out", o.out_dir, "output directory (default $CGR_OUT or ./out)");
  cmd->add_option("--seed", o.seed, "run seed")->each([&](const std::string&) { o.seed_set = true; });
  cmd->add_option("--preset", o.preset, "scale preset: paper | desk | smoke");
  cmd->add_option("--threads", o.threads, "worker thread cap");
}

ExperimentConfig resolve_config(const CommonOpts& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = config_from_json(read_file(o.config_path));
  if (!o.preset.empty()) apply_preset(cfg, o.preset);
  if (o.seed_set) cfg.seed = o.seed;
  if (o.threads > 0) cfg.threads = o.threads;
  cfg.validate();
  return cfg;
}

fs::path resolve_out(const CommonOpts& o) {
  std::string dir = o.out_dir;
  if (dir.empty()) {
    const char* env = std::getenv("CGR_OUT");
    dir = env ? env : "out";
  }
  fs::create_directories(dir);
  return dir;
}

void echo_config(const ExperimentConfig& cfg, const fs::path& out) {
  write_file((out / "resolved_config.json").string(), config_to_json(cfg));
}

int task_id_from_name(const std::string& name) {
  static const std::vector<std::string> names = {"DelayPro", "DelayAnti", "MemoryPro",
                                                 "MemoryAnti", "DMPro", "DMAnti", "MPrimePro",
                                                 "MPrimeAnti"};
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw ConfigError("unknown task name: " + name);
}

std::vector<std::pair<int, int>> default_pairs() {
  return {{task::DelayPro, task::DelayAnti}, {task::MemoryPro, task::MemoryAnti}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual compositional-task learning experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "print help for every subcommand");

  CommonOpts o;

  auto* gen_cmd = app.add_subcommand("gen", "sample trials and write columnar dumps");
  std::string gen_task = "DelayPro";
  int gen_n = 10;
  gen_cmd->add_option("--task", gen_task, "task name (DelayPro .. MPrimeAnti)");
  gen_cmd->add_option("--n", gen_n, "number of trials");
  add_common(gen_cmd, o);

  auto* what_cmd = app.add_subcommand("train-what", "train the task model only");
  add_common(what_cmd, o);

  auto* full_cmd = app.add_subcommand("train-full", "train task model + context RNN on one order");
  std::string learner = "context";
  full_cmd->add_option("--learner", learner, "context | adam | ewc | owp");
  add_common(full_cmd, o);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on the task suite");
  std::string eval_tm, eval_bank;
  eval_cmd->add_option("--task-model", eval_tm, "task model checkpoint")->required();
  eval_cmd->add_option("--bank", eval_bank, "context bank checkpoint")->required();
  add_common(eval_cmd, o);

  auto* exp_cmd = app.add_subcommand("experiment", "run a paper experiment battery");
  exp_cmd->require_subcommand(1);
  auto* exp_cont = exp_cmd->add_subcommand("continual", "sequential learning across task orders");
  int n_orders = 4, n_seeds = 2;
  bool with_baselines = false;
  exp_cont->add_option("--orders", n_orders, "number of task orders");
  exp_cont->add_option("--seeds", n_seeds, "seeds per order");
  exp_cont->add_flag("--baselines", with_baselines, "also run adam/ewc/owp baselines");
  add_common(exp_cont, o);
  auto* exp_fwd = exp_cmd->add_subcommand("transfer-fwd", "forward transfer pairs");
  add_common(exp_fwd, o);
  auto* exp_bwd = exp_cmd->add_subcommand("transfer-bwd", "backward transfer pairs");
  int short_budget = 0;
  exp_bwd->add_option("--short-budget", short_budget, "batches per task (reduced)");
  add_common(exp_bwd, o);
  auto* exp_cg = exp_cmd->add_subcommand("compgen", "compositional generalization");
  bool cg_baselines = false;
  exp_cg->add_flag("--baselines", cg_baselines, "also run unfrozen baselines");
  add_common(exp_cg, o);

  auto* plot_cmd = app.add_subcommand("plot", "render figures from a metrics log");
  std::string plot_log, plot_which = "auto";
  plot_cmd->add_option("--log", plot_log, "metrics log file")->required();
  plot_cmd->add_option("--which", plot_which, "figure selection (default auto)");
  add_common(plot_cmd, o);

  auto* inspect_cmd = app.add_subcommand("inspect-checkpoint", "describe a checkpoint file");
  std::string inspect_path;
  inspect_cmd->add_option("path", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*inspect_cmd) {
      std::cout << describe_checkpoint(read_file(inspect_path));
      return 0;
    }

    ExperimentConfig cfg = resolve_config(o);
    fs::path out = resolve_out(o);
    echo_config(cfg, out);

    if (*gen_cmd) {
      TaskSuite suite = with_mprime(build_default_suite(cfg.gen));
      const int c = task_id_from_name(gen_task);
      for (int i = 0; i < gen_n; ++i) {
        Rng rng(cfg.seed, mix_stream(900, c, i));
        Trial trial = sample_trial(suite, c, cfg.gen, rng);
        char name[64];
        std::snprintf(name, sizeof(name), "trial_%s_%04d.txt", gen_task.c_str(), i);
        write_file((out / name).string(), trial_to_text(trial));
      }
      write_file((out / "suite.json").string(), suite_to_json(suite));
      std::cout << "wrote " << gen_n << " trial dumps to " << out << "\n";
      return 0;
    }

    if (*what_cmd) {
      ExperimentConfig wcfg = cfg;
      wcfg.batches_per_task = 0;  // task model only
      ContinualResult res = run_continual(wcfg, LearnerKind::Context, "what");
      write_file((out / "metrics.tsv").string(), res.log.to_text());
      std::vector<std::array<double, 4>> ll_rows;
      long idx = 0;
      for (const auto& r : res.log.rows)
        if (r.phase == "tm_train")
          ll_rows.push_back({static_cast<double>(idx++), static_cast<double>(r.trained_task),
                             r.task_model_ll, r.performance});
      write_file((out / "taskmodel_ll.tsv").string(), tm_ll_log_to_text(ll_rows));
      write_file((out / "task_model.json").string(), taskmodel_to_json(res.tm));
      std::cout << "task model trained; " << res.log.rows.size() << " metric rows\n";
      return 0;
    }

    if (*full_cmd) {
      LearnerKind kind = learner_from_name(learner);
      ContinualResult res = run_continual(cfg, kind, "full-" + learner);
      write_file((out / "metrics.tsv").string(), res.log.to_text());
      if (kind == LearnerKind::Context) {
        write_file((out / "task_model.json").string(), taskmodel_to_json(res.tm));
        write_file((out / "bank.json").string(), bank_to_json(res.bank, res.ts));
      } else {
        write_file((out / "net.json").string(), general_rnn_to_json(res.net));
      }
      emit_plots(res.log, out.string(), "auto");
      std::cout << "run complete; " << res.log.rows.size() << " metric rows\n";
      return 0;
    }

    if (*eval_cmd) {
      TaskModelState tm = taskmodel_from_json(read_file(eval_tm));
      ContextBank bank;
      TrainState ts;
      bank_from_json(read_file(eval_bank), bank, ts);
      TaskSuite suite = with_mprime(build_default_suite(cfg.gen));
      MetricsLog log;
      for (int c : cfg.task_order) {
        double acc = test_time_path_accuracy(tm, suite, cfg.gen, c, cfg.n_eval, cfg.seed);
        MetricsRow row;
        row.run_id = "eval";
        row.seed = cfg.seed;
        row.phase = "eval";
        row.eval_task = c;
        row.task_model_ll = mean_trial_ll(tm, suite, cfg.gen, c, cfg.n_ll_eval, cfg.seed);
        row.performance = acc;
        log.append(row);
        std::cout << "task " << c << ": path accuracy " << acc << "\n";
      }
      write_file((out / "metrics.tsv").string(), log.to_text());
      return 0;
    }

    if (*exp_cont) {
      static const std::vector<std::vector<int>> orders = {
          {0, 1, 2, 3, 4, 5}, {3, 4, 0, 5, 2, 1}, {5, 2, 4, 1, 3, 0}, {2, 0, 3, 5, 1, 4}};
      MetricsLog log;
      for (int oi = 0; oi < n_orders && oi < static_cast<int>(orders.size()); ++oi)
        for (int si = 0; si < n_seeds; ++si) {
          ExperimentConfig rc = cfg;
          rc.task_order = orders[oi];
          rc.seed = cfg.seed + 1000 * oi + si;
          std::string id = "continual-o" + std::to_string(oi) + "-s" + std::to_string(si);
          std::cout << "running " << id << "\n";
          run_continual(rc, LearnerKind::Context, id, &log);
          if (with_baselines)
            for (auto kind : {LearnerKind::Adam, LearnerKind::EWC, LearnerKind::OWP}) {
              std::cout << "running " << id << "-" << learner_name(kind) << "\n";
              run_continual(rc, kind, id + "-" + learner_name(kind), &log);
            }
        }
      write_file((out / "metrics.tsv").string(), log.to_text());
      emit_plots(log, out.string(), "auto");
      std::cout << "continual experiment complete\n";
      return 0;
    }

    if (*exp_fwd) {
      MetricsLog log = run_transfer_forward(cfg, default_pairs());
      write_file((out / "metrics.tsv").string(), log.to_text());
      emit_plots(log, out.string(), "transfer-fwd");
      return 0;
    }

    if (*exp_bwd) {
      const int budget = short_budget > 0 ? short_budget : std::max(1, cfg.batches_per_task / 10);
      MetricsLog log = run_transfer_backward(cfg, default_pairs(), budget);
      MetricsLog owp_log = run_transfer_backward(cfg, default_pairs(), budget, LearnerKind::OWP);
      log.merge(owp_log);
      write_file((out / "metrics.tsv").string(), log.to_text());
      emit_plots(log, out.string(), "transfer-bwd");
      return 0;
    }

    if (*exp_cg) {
      MetricsLog log;
      CompgenResult res = run_compgen(cfg, LearnerKind::Context);
      log.merge(res.log);
      std::cout << "context learner: 80% within " << res.trials_to_80pct
                << " trials; bank frozen: " << (res.bank_frozen_ok ? "yes" : "NO") << "\n";
      if (cg_baselines)
        for (auto kind : {LearnerKind::Adam, LearnerKind::EWC, LearnerKind::OWP}) {
          std::cout << "running baseline " << learner_name(kind) << "\n";
          log.merge(run_compgen(cfg, kind).log);
        }
      write_file((out / "metrics.tsv").string(), log.to_text());
      emit_plots(log, out.string(), "compgen");
      return 0;
    }

    if (*plot_cmd) {
      MetricsLog log = MetricsLog::from_text(read_file(plot_log));
      emit_plots(log, out.string(), plot_which);
      std::cout << "figures written to " << out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
