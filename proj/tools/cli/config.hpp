#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bbsmc/models.hpp"
#include "bbsmc/resampling.hpp"
#include "cli/csv.hpp"

namespace bbsmc::cli {

// Flat key=value configuration with INI-style [section] headers. A key in
// section [s] is addressed as "s.key"; keys before any header keep their bare
// name. '#' starts a comment. Duplicate keys are an error, and so are keys
// the loader never consumed (typo protection via check_all_used).
class KeyValueConfig {
 public:
  static KeyValueConfig parse_stream(std::istream& in, const std::string& name);
  static KeyValueConfig parse_file(const std::string& path);

  // Inserts or replaces (command-line overrides).
  void override_value(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key) const;
  long get_long(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  // Throws ConfigError listing keys that were never read.
  void check_all_used() const;

 private:
  std::string name_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

enum class Algorithm { cpf_at, cpf_bs, cpf_bbs };
enum class BlockingMode { dense, blocktime, autotune };

std::string to_string(Algorithm a);
std::string to_string(BlockingMode b);

struct ExperimentConfig {
  std::string model;  // "ctcrwp" | "cprbm" | "ctcrwt"
  int particles = 8;
  long iterations = 0;
  long burn_in = 0;
  resampling::Scheme scheme = resampling::Scheme::killing;
  Algorithm algorithm = Algorithm::cpf_bbs;
  BlockingMode blocking = BlockingMode::dense;
  std::vector<double> blocktimes;  // grid for blocking=blocktime; candidate
                                   // blocktimes for blocking=auto (optional)
  int tuner_particles = 0;
  int tuner_runs = 25;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int trace_component = 0;  // 0-based; the config key is 1-based
  int trace_stride = 1;

  // ctcrwp
  models::CtcrwpParams ctcrwp;
  std::vector<double> sigma_grid;  // >= 1 entry when model == ctcrwp
  bool ctcrwp_explicit_rates = false;

  // cprbm
  models::CpRbmParams cprbm;
  double cprbm_tau = 4.0;
  double cprbm_dt = 0.0625;
  std::string events_file;

  // ctcrwt
  models::CtcrwtParams ctcrwt;
  double ctcrwt_tau = 16.0;
  double ctcrwt_dt = 0.0078125;
  int ctcrwt_n_obs = 16;
  std::string raster_file;
  std::string obs_file;

  double base_dt() const;
  double horizon_time() const;
  int state_dim() const;
};

// Builds and validates an ExperimentConfig; unknown keys are an error.
ExperimentConfig experiment_config_from(const KeyValueConfig& kv);
ExperimentConfig load_experiment_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace bbsmc::cli
