#include <CLI11.hpp>
#include <iostream>

#include "taigan/errors.hpp"
#include "taigan_pipeline/experiment.hpp"

using namespace taigan;
using namespace taigan::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Frame conversion and motion correction experiments on synthetic dynamic cardiac PET"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run pipeline stages from a config file");
  std::string config_path;
  std::vector<std::string> stages;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool print_config = false;
  bool audit = false;
  run->add_option("--config", config_path, "Experiment config (key = value with [sections])");
  run->add_option("--stage", stages, "Run only these stages (repeatable): phantom preprocess train convert "
                                      "simulate-motion register quantify report");
  run->add_option("--seed", seed, "Override the experiment seed");
  run->add_option("--out", out, "Override the output directory");
  run->add_flag("--print-config", print_config, "Print every effective setting and exit");
  run->add_flag("--audit", audit, "Check that tables match records/ and that no held-out study was trained on");

  auto* report = app.add_subcommand("report", "Rebuild tables/ and plots/ from records/");
  std::string results_dir;
  report->add_option("results_dir", results_dir, "Output directory of a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*report) {
      write_report(results_dir, &std::cout);
      return 0;
    }
    ExperimentConfig config = config_path.empty() ? default_experiment_config() : load_experiment_config(config_path);
    if (seed) config.seed = *seed;
    if (!out.empty()) config.out = out;
    config.validate();
    if (print_config) {
      std::cout << render_experiment_config(config);
      return 0;
    }
    if (audit) {
      const auto problems = audit_run(config.out);
      for (const auto& p : problems) std::cout << "AUDIT " << p << "\n";
      std::cout << (problems.empty() ? "audit clean: " : "audit failed: ") << config.out.string() << "\n";
      return problems.empty() ? 0 : 1;
    }
    if (config_path.empty()) {
      std::cerr << "run: --config is required (or use --print-config to see the defaults)\n";
      return 2;
    }
    RunOptions options;
    options.log = &std::cout;
    for (const auto& s : stages) options.only_stages.push_back(parse_stage(s));
    std::sort(options.only_stages.begin(), options.only_stages.end());
    options.only_stages.erase(std::unique(options.only_stages.begin(), options.only_stages.end()),
                              options.only_stages.end());
    run_experiment(config, options);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
