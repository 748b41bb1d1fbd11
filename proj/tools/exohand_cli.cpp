// exohand: staged experiment runner.
//
//   exohand <command> [--config FILE] [--seed N] [--out DIR]
//
// Exit codes: 0 success, 2 config/usage error, 3 validation failure,
// 4 numerical abort.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exohand/pipeline.hpp"

using namespace exohand;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string run_id;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON); desk preset when omitted");
  cmd->add_option("--seed", c.seed, "Global seed (overrides the config)");
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
  cmd->add_option("--run-id", c.run_id, "Run directory name (overrides the config)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::desk()
                                          : load_experiment_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.run_id.empty()) cfg.run_id = c.run_id;
  cfg.validate();
  return cfg;
}

void print_train(const StageResult& r) {
  const auto& it = r.state.report.iterations;
  std::printf("%s: %d iterations, %lld env steps", r.state.stage.c_str(), r.state.iteration,
              static_cast<long long>(r.state.env_steps));
  if (!it.empty()) {
    std::printf(", last demo error %.4f m, success %.3f", it.back().rollout.mean_demo_err,
                it.back().rollout.success_rate);
  }
  std::printf("\ncheckpoint: %s\n", r.checkpoint.c_str());
}

void print_report(const MetricReport& report) {
  for (const auto& c : report.conditions) {
    std::printf("%-11s success %.3f +- %.3f  tasks > %.0f%%: %.3f\n", c.condition.c_str(),
                c.success_rate, c.success_rate_std, 80.0, c.task_success_fraction);
  }
  if (report.restoration_ratio) std::printf("restoration ratio %.3f\n", *report.restoration_ratio);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Musculoskeletal hand simulation with a staged RL pipeline"};
  app.require_subcommand(1);
  Common common;
  bool from_scratch = false;
  std::vector<std::string> conditions;

  auto* demo_gen = app.add_subcommand("demo-gen", "Write the configured demonstrations");
  auto* prior = app.add_subcommand("prior-train", "Train the behaviour prior (R_demo only)");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune on the task (R_demo + R_obj)");
  finetune->add_flag("--from-scratch", from_scratch, "Start from a fresh policy (baseline)");
  auto* glove = app.add_subcommand("glove-train", "Train the glove against the frozen hand");
  auto* evaluate = app.add_subcommand("evaluate", "30-trial evaluation per condition");
  evaluate->add_option("--conditions", conditions, "healthy, weak, weak+glove (default all)")
      ->delimiter(',');
  auto* report = app.add_subcommand("report", "Rebuild metrics and plots from saved traces");
  auto* run = app.add_subcommand("run", "Run the stages listed in the config");
  auto* show = app.add_subcommand("print-config", "Print the resolved config as JSON");
  for (auto* cmd : {demo_gen, prior, finetune, glove, evaluate, report, run, show}) {
    add_common(cmd, common);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = resolve(common);
    if (*show) {
      std::cout << experiment_config_to_json(cfg).dump(2) << "\n";
    } else if (*demo_gen) {
      for (const auto& p : cmd_demo_gen(cfg)) std::printf("%s\n", p.c_str());
    } else if (*prior) {
      print_train(cmd_prior_train(cfg));
    } else if (*finetune) {
      print_train(cmd_finetune(cfg, {from_scratch}));
    } else if (*glove) {
      print_train(cmd_glove_train(cfg));
    } else if (*evaluate) {
      const EvaluateResult r = cmd_evaluate(cfg, conditions);
      print_report(r.report);
      if (!r.missing.empty()) {
        for (const auto& m : r.missing) {
          std::fprintf(stderr, "skipped %s: checkpoint missing\n", m.c_str());
        }
        return 3;
      }
    } else if (*report) {
      print_report(cmd_report(cfg));
    } else if (*run) {
      run_pipeline(cfg);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 0;
}
