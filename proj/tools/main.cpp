#include <iostream>
#include <memory>

#include "commands.hpp"

using namespace nsdpo::cli;

int main(int argc, char** argv) {
  CLI::App app{"Non-stationary preference optimization laboratory"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "JSON config file or a previous run's manifest.json");
  app.config_formatter(std::make_shared<JsonConfig>(&app));

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Sample a synthetic drifting-preference dataset");
  add_common(gen_cmd, gen.common);
  add_env(gen_cmd, gen.env);

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train one objective and record its trace");
  add_common(train_cmd, tr.common);
  add_env(train_cmd, tr.env);
  add_objective(train_cmd, tr.objective, ObjectiveFlags::kFull);
  train_cmd->add_option("--data", tr.data, "train.jsonl (generated from --seed when omitted)");
  train_cmd->add_option("--test", tr.test, "test.jsonl for reward accuracy");
  train_cmd->add_flag("--snapshots", tr.snapshots, "Keep theta at every checkpoint");

  SweepOptions sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over objectives, gamma, window and seeds");
  add_common(sweep_cmd, sw.common);
  add_env(sweep_cmd, sw.env);
  add_objective(sweep_cmd, sw.objective, ObjectiveFlags::kNoAxes);
  sweep_cmd->add_option("--objectives", sw.objectives, "Objectives to run")
      ->capture_default_str()
      ->check(CLI::IsMember({"dpo", "nsdpo", "swdpo"}));
  sweep_cmd->add_option("--gammas", sw.gammas, "Discount factors for nsdpo")->capture_default_str();
  sweep_cmd->add_option("--windows", sw.windows, "Window sizes for swdpo")->capture_default_str();
  sweep_cmd->add_option("--seeds", sw.seeds, "Explicit seed list (overrides --num-seeds)");
  sweep_cmd->add_option("--num-seeds", sw.num_seeds, "Seeds --seed .. --seed + k - 1")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  BoundStudyOptions bs;
  auto* bound_cmd = app.add_subcommand("bound-study", "Empirical error against the bound terms over n");
  add_common(bound_cmd, bs.common);
  add_env(bound_cmd, bs.env);
  add_objective(bound_cmd, bs.objective, ObjectiveFlags::kOptimizerOnly);
  bound_cmd->add_option("--grid", bs.grid, "Points per step for each n")->capture_default_str();
  bound_cmd->add_option("--num-seeds", bs.num_seeds, "Seeds per grid point")->capture_default_str();
  bound_cmd->add_option("--gamma", bs.gamma, "Discount (negative: from the variation budget)")->capture_default_str();
  bound_cmd->add_option("--lambda", bs.lambda, "l2 coefficient (negative: d/n)")->capture_default_str();
  bound_cmd->add_option("--radius", bs.radius, "Parameter radius W (negative: max ||theta*_t||)")->capture_default_str();
  bound_cmd->add_option("--delta", bs.delta, "Confidence level delta")->capture_default_str();
  bound_cmd->add_option("--c1", bs.c1, "Constant C1")->capture_default_str();
  bound_cmd->add_option("--c2", bs.c2, "Constant C2")->capture_default_str();

  BuildDatasetOptions bd;
  auto* build_cmd = app.add_subcommand("build-dataset", "Apply a drift recipe to a preference table");
  add_common(build_cmd, bd.common);
  build_cmd->add_option("--preset", bd.preset, "Recipe preset")
      ->required()
      ->check(CLI::IsMember({"nsgo-gradual", "ufb-changepoint", "tvhh-gradual", "tvhh-changepoint"}));
  build_cmd->add_option("--table", bd.table, "PreferenceTable CSV")->required()->check(CLI::ExistingFile);
  build_cmd->add_option("--horizon", bd.horizon, "Horizon T")->capture_default_str();
  build_cmd->add_option("--t-start", bd.t_start, "Start of the blend (gradual)")->capture_default_str();
  build_cmd->add_option("--t-end", bd.t_end, "End of the blend (gradual)")->capture_default_str();
  build_cmd->add_option("--tcp", bd.t_cp, "Change point (changepoint)")->capture_default_str();
  build_cmd->add_option("--rho", bd.rho, "Disagreeing fraction rho_diff (changepoint)")->capture_default_str();
  build_cmd->add_option("--threshold", bd.threshold, "Minimum source divergence (negative: preset default)")
      ->capture_default_str();
  build_cmd->add_option("--target-rows", bd.target_rows, "Train rows to keep (0: all)")->capture_default_str();
  build_cmd->add_option("--test-fraction", bd.test_fraction, "Share of prompts held out")->capture_default_str();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Metrics of a trained parameter");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("--theta", ev.theta, "theta.json from train")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test", ev.test, "test.jsonl")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "train.jsonl for the estimation error");
  eval_cmd->add_option("--gamma", ev.gamma, "Discount for Sigma_hat")->capture_default_str();
  eval_cmd->add_option("--lambda", ev.lambda, "lambda for the estimation error")->capture_default_str();
  eval_cmd->add_option("--regret-contexts", ev.regret_contexts, "Monte-Carlo contexts for regret")
      ->capture_default_str();
  eval_cmd->add_option("--kappa-samples", ev.kappa_samples, "Monte-Carlo contexts for kappa (0: skip)")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return run_gen(gen, resolved_config(*gen_cmd));
    if (train_cmd->parsed()) return run_train(tr, resolved_config(*train_cmd));
    if (sweep_cmd->parsed()) return run_sweep(sw, resolved_config(*sweep_cmd));
    if (bound_cmd->parsed()) return run_bound_study(bs, resolved_config(*bound_cmd));
    if (build_cmd->parsed()) return run_build_dataset(bd, resolved_config(*build_cmd));
    if (eval_cmd->parsed()) return run_eval(ev, resolved_config(*eval_cmd));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
