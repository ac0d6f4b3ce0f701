#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "bbsmc/models.hpp"
#include "bbsmc/random.hpp"
#include "cli/config.hpp"

namespace bbsmc::cli {

// Inputs shared by every grid cell: loaded from the configured files, or
// simulated from substream 0 of the master seed and written next to the
// other outputs.
struct ExperimentData {
  std::vector<double> events;  // cprbm event times
  models::TerrainRaster raster;
  std::vector<double> obs_times;
  Eigen::Matrix2Xd obs;
};

ExperimentData prepare_data(const ExperimentConfig& cfg, Rng& data_rng,
                            const std::string& out_dir);

struct BuiltModel {
  models::FkBundle fk;
  double sigma = 0.0;  // ctcrwp grid value; meaningless otherwise
  std::string label;
};

// Wraps model construction; parameter errors surface as ConfigError.
BuiltModel build_model(const ExperimentConfig& cfg, const ExperimentData& data, double sigma);

// A starting trajectory with finite potentials everywhere (model-specific
// construction; throws NumericalError after 1000 rejected draws).
Eigen::MatrixXd initial_path(const ExperimentConfig& cfg, const BuiltModel& built, Rng& rng);

// Full experiment: one chain per (sigma, blocktime) grid cell, outputs under
// cfg.output_dir (per-cell subdirectories when the grid has several cells,
// plus grid_summary.csv). Returns the process exit code.
int run_experiment(const ExperimentConfig& cfg);

// Scores candidate blockings and writes plu_table.csv + chosen_blocking.csv.
int tune_experiment(const ExperimentConfig& cfg);

// Charts from run outputs. Titles fall back to metadata when present.
int plot_summary_charts(const std::string& summary_csv, const std::string& meta_csv,
                        const std::string& out_dir);
int plot_band_chart(const std::string& bands_csv, const std::string& meta_csv,
                    const std::string& out_dir);

// Fast end-to-end battery; prints one PASS/FAIL line per check to `out` and
// returns 0 when everything passed, 3 otherwise. Scratch files go under
// work_dir.
int run_selftest(const std::string& work_dir, std::ostream& out);

}  // namespace bbsmc::cli
