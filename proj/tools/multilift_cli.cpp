#include "multilift/errors.hpp"
#include "multilift/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace multilift;

enum ExitCode { kOk = 0, kConfig = 2, kRuntime = 3, kIo = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void add_common(CLI::App* app, Common& c, const std::string& default_out) {
  c.out = default_out;
  app->add_option("--config", c.config, "JSON config file (defaults apply to missing keys)");
  app->add_option("--override", c.overrides, "dotted key=value, repeatable; wins over the file")->take_all();
  app->add_option("--seed", c.seed, "root seed");
  app->add_option("--threads", c.threads, "environment worker threads");
  app->add_option("--out", c.out, "output directory")->capture_default_str();
}

config::RunConfig resolve(const Common& c) {
  std::vector<std::string> ov = c.overrides;
  if (c.seed) ov.push_back("seed=" + std::to_string(*c.seed));
  if (c.threads) ov.push_back("marl.threads=" + std::to_string(*c.threads));
  return config::load_run_config(c.config, ov);
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-MAV cable-suspended load control: training, evaluation and ablations"};
  app.set_version_flag("--version", runner::version_string());
  app.require_subcommand(1);

  Common train_opts;
  auto* train = app.add_subcommand("train", "train a policy");
  add_common(train, train_opts, "runs/train");

  Common eval_opts;
  std::string checkpoint;
  std::string scenario;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a scenario");
  add_common(eval, eval_opts, "runs/eval");
  eval->add_option("checkpoint", checkpoint, "checkpoint file (.mlck)")->required();
  eval->add_option("--scenario", scenario, "setpoint_step, hover, figure_eight, mav_failure, heterogeneous, load_mismatch");

  Common ablate_opts;
  std::string kind = "action_space";
  auto* ablate = app.add_subcommand("ablate", "train and compare matched variants");
  add_common(ablate, ablate_opts, "runs/ablate");
  ablate->add_option("--kind", kind, "action_space, observation_space, history_length or critic")
      ->capture_default_str();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "summarize a checkpoint");
  inspect->add_option("checkpoint", inspect_path, "checkpoint file (.mlck)")->required();

  std::string export_dir;
  auto* exp = app.add_subcommand("export", "merge run directories into comparison tables");
  exp->add_option("dir", export_dir, "directory containing runs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  if (*train) {
    const auto cfg = resolve(train_opts);
    const auto result = runner::train(cfg, train_opts.out, std::cout);
    std::cout << "final smoothed return " << runner::smoothed_final_return(result.metrics) << '\n';
  } else if (*eval) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint);
    std::vector<std::string> ov;
    if (!scenario.empty()) ov.push_back("eval.scenario.kind=" + scenario);
    ov.insert(ov.end(), eval_opts.overrides.begin(), eval_opts.overrides.end());
    if (eval_opts.seed) ov.push_back("eval.scenario.seed=" + std::to_string(*eval_opts.seed));
    const auto cfg = runner::eval_config(ckpt, eval_opts.config, ov);
    runner::evaluate(ckpt, cfg, eval_opts.out, std::cout);
  } else if (*ablate) {
    const auto cfg = resolve(ablate_opts);
    runner::ablate(cfg, eval::ablation_kind_from_string(kind), ablate_opts.out, std::cout);
  } else if (*inspect) {
    runner::inspect(inspect_path, std::cout);
  } else if (*exp) {
    runner::export_runs(export_dir, std::cout);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const multilift::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const multilift::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
