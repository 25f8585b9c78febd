// alignlab: train, evaluate, sweep, gradient-check and plot desk-scale
// alignment runs. Outputs go under $ALIGNLAB_OUT (default ./alignlab_out).

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "alignlab/config.hpp"
#include "alignlab/error.hpp"
#include "alignlab/harness.hpp"

namespace fs = std::filesystem;

namespace {

// Base configuration for sweeps when no --config is given.
constexpr const char* kDefaultSweepBase =
    "seed = 1\n"
    "algo = dpo\n"
    "max_steps = 300\n"
    "schedule.s = 1\n"
    "task.kind = verifiable\n";

int run_sweep(const std::string& config, const std::string& axis_text, int repeats, int jobs) {
  const auto axis = alignlab::parse_axis(axis_text);
  if (!axis) {
    std::cerr << "unknown axis '" << axis_text << "' (expected s, n or algo)\n";
    return 2;
  }
  alignlab::RunConfig base;
  try {
    base = config.empty() ? alignlab::parse_config_text(kDefaultSweepBase)
                          : alignlab::load_config(config);
  } catch (const alignlab::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  }
  const alignlab::SweepTable table = alignlab::cmd_sweep(base, *axis, repeats, jobs);
  const fs::path dir = alignlab::output_root() / ("sweep-" + axis_text + "-" + base.hash());
  fs::create_directories(dir);
  std::ofstream(dir / "table.csv", std::ios::binary) << table.to_csv();
  std::ofstream(dir / "table.md", std::ios::binary) << table.to_markdown();
  std::cout << table.to_markdown();
  std::cout << "written to " << dir.string() << '\n';
  return table.complete() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale alignment laboratory"};
  app.require_subcommand(1);

  std::string train_config;
  auto* train = app.add_subcommand("train", "run one training configuration");
  train->add_option("--config", train_config, "flat key = value config file")->required();

  alignlab::EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", eval_args.dataset, "dataset (JSON Lines)")->required();
  eval->add_option("--n", eval_args.n, "samples per problem")->capture_default_str();
  eval->add_option("--temp", eval_args.temperature, "sampling temperature")->capture_default_str();
  eval->add_option("--top-p", eval_args.top_p, "nucleus mass")->capture_default_str();
  eval->add_option("--max-len", eval_args.max_len, "response length cap")->capture_default_str();
  eval->add_option("--seed", eval_args.seed, "sampling seed")->capture_default_str();

  std::string sweep_axis;
  std::string sweep_config;
  int repeats = 1;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "compare settings along one axis");
  sweep->add_option("--axis", sweep_axis, "s, n or algo")->required();
  sweep->add_option("--repeats", repeats, "seeds per setting")->capture_default_str();
  sweep->add_option("--config", sweep_config, "base config (defaults to a built-in one)");
  sweep->add_option("--jobs", jobs, "runs executed concurrently")->capture_default_str();

  alignlab::GradcheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every objective");
  gradcheck->add_option("--instances", gc.instances, "instances per objective")
      ->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "instance seed")->capture_default_str();

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "plot curves of finished runs");
  report->add_option("dirs", report_dirs, "run directories");
  report->add_option("--out", report_out, "output directory (default $ALIGNLAB_OUT/report)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return alignlab::cmd_train(train_config, alignlab::output_root(), std::cout, std::cerr);
    }
    if (*eval) {
      const alignlab::EvalReport r = alignlab::cmd_eval(eval_args);
      std::cout << alignlab::eval_report_json(r) << '\n';
      return 0;
    }
    if (*sweep) return run_sweep(sweep_config, sweep_axis, repeats, jobs);
    if (*gradcheck) {
      const alignlab::GradcheckReport r = alignlab::cmd_gradcheck(gc);
      std::cout << r.to_text();
      return r.pass ? 0 : 1;
    }
    if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const fs::path out = report_out.empty() ? alignlab::output_root() / "report" : fs::path(report_out);
      const alignlab::ReportSummary s = alignlab::cmd_report(dirs, out);
      for (const std::string& w : s.warnings) std::cerr << "warning: " << w << '\n';
      for (const fs::path& p : s.written) std::cout << p.string() << '\n';
      return 0;
    }
  } catch (const alignlab::IncompatibleCheckpointError& e) {
    std::cerr << "incompatible checkpoint: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
