#include "cli/app.hpp"

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "bbsmc/errors.hpp"
#include "cli/config.hpp"
#include "cli/experiment.hpp"

namespace bbsmc::cli {

namespace {

// Command-line overrides patch the parsed key=value config, so they pass
// through exactly the same validation as file entries.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> pairs;

  void bind(CLI::App* cmd, const std::string& flag, const std::string& key,
            const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { pairs.emplace_back(key, v); }, help);
  }
};

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Particle smoothing experiments: blocked conditional filters with bridge "
               "backward sampling"};
  app.require_subcommand(1);

  std::string config_path, output_override;
  Overrides overrides;

  CLI::App* run = app.add_subcommand("run", "Run an MCMC experiment from a config file");
  run->add_option("--config", config_path, "key=value experiment config")->required();
  overrides.bind(run, "--seed", "experiment.seed", "override experiment.seed");
  overrides.bind(run, "--iterations", "experiment.iterations", "override experiment.iterations");
  overrides.bind(run, "--burn-in", "experiment.burn_in", "override experiment.burn_in");
  overrides.bind(run, "--particles", "experiment.particles", "override experiment.particles");
  overrides.bind(run, "--resampling", "experiment.resampling", "override experiment.resampling");
  overrides.bind(run, "--algorithm", "experiment.algorithm", "override experiment.algorithm");
  overrides.bind(run, "--blocking", "experiment.blocking", "override experiment.blocking");
  overrides.bind(run, "--blocktime", "experiment.blocktime", "override experiment.blocktime");
  overrides.bind(run, "--output", "experiment.output_dir", "override experiment.output_dir");

  CLI::App* tune = app.add_subcommand("tune", "Score candidate blockings and pick one");
  tune->add_option("--config", config_path, "key=value experiment config")->required();
  overrides.bind(tune, "--seed", "experiment.seed", "override experiment.seed");
  overrides.bind(tune, "--tuner-particles", "experiment.tuner_particles",
                 "override experiment.tuner_particles");
  overrides.bind(tune, "--tuner-runs", "experiment.tuner_runs", "override experiment.tuner_runs");
  overrides.bind(tune, "--output", "experiment.output_dir", "override experiment.output_dir");

  std::string summary_path, bands_path, meta_path, plot_out = ".";
  CLI::App* plot = app.add_subcommand("plot", "Render SVG charts from run outputs");
  plot->add_option("--summary", summary_path, "grid_summary.csv from a run");
  plot->add_option("--bands", bands_path, "bands.csv from a run");
  plot->add_option("--meta", meta_path, "meta.csv used for chart titles");
  plot->add_option("--output", plot_out, "directory for the SVG files");

  std::string selftest_dir = "selftest_out";
  CLI::App* selftest = app.add_subcommand("selftest", "Fast internal consistency battery");
  selftest->add_option("--output", selftest_dir, "scratch directory for selftest outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      return run_experiment(load_experiment_config(config_path, overrides.pairs));
    }
    if (tune->parsed()) {
      return tune_experiment(load_experiment_config(config_path, overrides.pairs));
    }
    if (plot->parsed()) {
      if (summary_path.empty() && bands_path.empty())
        throw ConfigError("plot: give --summary and/or --bands");
      if (!summary_path.empty()) plot_summary_charts(summary_path, meta_path, plot_out);
      if (!bands_path.empty()) plot_band_chart(bands_path, meta_path, plot_out);
      return 0;
    }
    return run_selftest(selftest_dir, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ModelError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    // degenerate weights, failed tuning runs, non-finite quantities
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace bbsmc::cli
