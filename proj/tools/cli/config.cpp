#include "cli/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

namespace bbsmc::cli {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& what) {
  throw ConfigError(key + ": " + what);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    bad_value(key, "not a number: '" + s + "'");
  return v;
}

long parse_long(const std::string& key, const std::string& s) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    bad_value(key, "not an integer: '" + s + "'");
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_stream(std::istream& in, const std::string& name) {
  KeyValueConfig kv;
  kv.name_ = name;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (kv.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_stream(in, path);
}

void KeyValueConfig::override_value(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) != 0; }

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key) const {
  return parse_double(key, get_string(key));
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  return get_double(key);
}

long KeyValueConfig::get_long(const std::string& key) const {
  return parse_long(key, get_string(key));
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  return get_long(key);
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  const std::string s = get_string(key);
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    bad_value(key, "not an unsigned integer: '" + s + "'");
  return v;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
  if (!has(key)) {
    used_.insert(key);
    return fallback;
  }
  const std::string s = get_string(key);
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    const std::string item = trim(s.substr(start, comma - start));
    if (item.empty()) bad_value(key, "empty list entry");
    out.push_back(parse_double(key, item));
    start = comma + 1;
  }
  return out;
}

void KeyValueConfig::check_all_used() const {
  std::string unknown;
  for (const auto& [key, value] : values_)
    if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty()) throw ConfigError(name_ + ": unknown config keys: " + unknown);
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::cpf_at: return "cpf_at";
    case Algorithm::cpf_bs: return "cpf_bs";
    case Algorithm::cpf_bbs: return "cpf_bbs";
  }
  return "?";
}

std::string to_string(BlockingMode b) {
  switch (b) {
    case BlockingMode::dense: return "dense";
    case BlockingMode::blocktime: return "blocktime";
    case BlockingMode::autotune: return "auto";
  }
  return "?";
}

double ExperimentConfig::base_dt() const {
  if (model == "ctcrwp") return ctcrwp.dt;
  if (model == "cprbm") return cprbm_dt;
  return ctcrwt_dt;
}

double ExperimentConfig::horizon_time() const {
  if (model == "ctcrwp") return ctcrwp.tau;
  if (model == "cprbm") return cprbm_tau;
  return ctcrwt_tau;
}

int ExperimentConfig::state_dim() const {
  if (model == "ctcrwp") return 2;
  if (model == "cprbm") return 1;
  return 4;
}

namespace {

void require_grid(const std::string& tau_key, double tau, const std::string& dt_key, double dt) {
  if (!(tau > 0)) bad_value(tau_key, "must be positive");
  if (!(dt > 0)) bad_value(dt_key, "must be positive");
  const double ratio = tau / dt;
  if (std::abs(ratio - std::llround(ratio)) > 1e-9 * std::max(1.0, ratio))
    bad_value(tau_key, "must be an integer multiple of " + dt_key);
}

bool is_multiple(double value, double step) {
  const double ratio = value / step;
  return std::abs(ratio - std::llround(ratio)) <= 1e-9 * std::max(1.0, ratio) &&
         std::llround(ratio) >= 1;
}

}  // namespace

ExperimentConfig experiment_config_from(const KeyValueConfig& kv) {
  ExperimentConfig cfg;

  cfg.model = kv.get_string("experiment.model");
  if (cfg.model != "ctcrwp" && cfg.model != "cprbm" && cfg.model != "ctcrwt")
    bad_value("experiment.model", "must be ctcrwp, cprbm, or ctcrwt (got '" + cfg.model + "')");

  cfg.particles = static_cast<int>(kv.get_long("experiment.particles", 8));
  if (cfg.particles < 2) bad_value("experiment.particles", "must be at least 2");

  cfg.iterations = kv.get_long("experiment.iterations");
  if (cfg.iterations <= 0) bad_value("experiment.iterations", "must be positive");
  cfg.burn_in = kv.get_long("experiment.burn_in", 0);
  if (cfg.burn_in < 0) bad_value("experiment.burn_in", "must be non-negative");
  if (cfg.burn_in >= cfg.iterations)
    bad_value("experiment.burn_in", "must be smaller than experiment.iterations");

  const std::string scheme = kv.get_string("experiment.resampling", "killing");
  if (scheme == "multinomial")
    cfg.scheme = resampling::Scheme::multinomial;
  else if (scheme == "killing")
    cfg.scheme = resampling::Scheme::killing;
  else if (scheme == "systematic_mp")
    cfg.scheme = resampling::Scheme::systematic_mean_partition;
  else
    bad_value("experiment.resampling",
              "must be multinomial, killing, or systematic_mp (got '" + scheme + "')");

  const std::string algorithm = kv.get_string("experiment.algorithm", "cpf_bbs");
  if (algorithm == "cpf_at")
    cfg.algorithm = Algorithm::cpf_at;
  else if (algorithm == "cpf_bs")
    cfg.algorithm = Algorithm::cpf_bs;
  else if (algorithm == "cpf_bbs")
    cfg.algorithm = Algorithm::cpf_bbs;
  else
    bad_value("experiment.algorithm",
              "must be cpf_at, cpf_bs, or cpf_bbs (got '" + algorithm + "')");

  const std::string blocking = kv.get_string("experiment.blocking", "dense");
  if (blocking == "dense")
    cfg.blocking = BlockingMode::dense;
  else if (blocking == "blocktime")
    cfg.blocking = BlockingMode::blocktime;
  else if (blocking == "auto")
    cfg.blocking = BlockingMode::autotune;
  else
    bad_value("experiment.blocking",
              "must be dense, blocktime, or auto (got '" + blocking + "')");
  if (cfg.algorithm != Algorithm::cpf_bbs && cfg.blocking != BlockingMode::dense)
    bad_value("experiment.blocking",
              "only algorithm cpf_bbs supports non-dense blocking");

  cfg.blocktimes = kv.get_double_list("experiment.blocktime", {});
  if (cfg.blocking == BlockingMode::blocktime && cfg.blocktimes.empty())
    bad_value("experiment.blocktime", "required when experiment.blocking = blocktime");

  cfg.tuner_particles = static_cast<int>(kv.get_long("experiment.tuner_particles",
                                                     cfg.particles));
  if (cfg.tuner_particles < 2) bad_value("experiment.tuner_particles", "must be at least 2");
  cfg.tuner_runs = static_cast<int>(kv.get_long("experiment.tuner_runs", 25));
  if (cfg.tuner_runs < 1) bad_value("experiment.tuner_runs", "must be positive");

  cfg.seed = kv.get_u64("experiment.seed", 1);
  cfg.output_dir = kv.get_string("experiment.output_dir", "out");
  if (cfg.output_dir.empty()) bad_value("experiment.output_dir", "must not be empty");

  cfg.trace_stride = static_cast<int>(kv.get_long("experiment.trace_stride", 1));
  if (cfg.trace_stride < 1) bad_value("experiment.trace_stride", "must be positive");

  if (cfg.model == "ctcrwp") {
    cfg.ctcrwp.tau = kv.get_double("ctcrwp.tau", 8.0);
    cfg.ctcrwp.dt = kv.get_double("ctcrwp.dt", 0.25);
    require_grid("ctcrwp.tau", cfg.ctcrwp.tau, "ctcrwp.dt", cfg.ctcrwp.dt);
    cfg.ctcrwp.sigma = kv.get_double("ctcrwp.sigma", 0.5);
    if (!(cfg.ctcrwp.sigma > 0)) bad_value("ctcrwp.sigma", "must be positive");
    cfg.ctcrwp.eta = kv.get_double("ctcrwp.eta", 1.0);
    if (!(cfg.ctcrwp.eta > 0)) bad_value("ctcrwp.eta", "must be positive");
    cfg.sigma_grid = kv.get_double_list("ctcrwp.sigma_grid", {cfg.ctcrwp.sigma});
    for (double s : cfg.sigma_grid)
      if (!(s > 0)) bad_value("ctcrwp.sigma_grid", "entries must be positive");
    const bool has_bv = kv.has("ctcrwp.beta_v"), has_bx = kv.has("ctcrwp.beta_x");
    if (has_bv != has_bx)
      bad_value("ctcrwp.beta_v", "beta_v and beta_x must be given together");
    if (has_bv) {
      if (kv.has("ctcrwp.sigma_grid"))
        bad_value("ctcrwp.beta_v", "explicit rates cannot be combined with sigma_grid");
      cfg.ctcrwp.beta_v = kv.get_double("ctcrwp.beta_v");
      cfg.ctcrwp.beta_x = kv.get_double("ctcrwp.beta_x");
      if (!(cfg.ctcrwp.beta_v > 0)) bad_value("ctcrwp.beta_v", "must be positive");
      if (!(cfg.ctcrwp.beta_x > 0)) bad_value("ctcrwp.beta_x", "must be positive");
      cfg.ctcrwp_explicit_rates = true;
    }
  } else if (cfg.model == "cprbm") {
    cfg.cprbm_tau = kv.get_double("cprbm.tau", 4.0);
    cfg.cprbm_dt = kv.get_double("cprbm.dt", 0.0625);
    require_grid("cprbm.tau", cfg.cprbm_tau, "cprbm.dt", cfg.cprbm_dt);
    cfg.cprbm.sigma = kv.get_double("cprbm.sigma", 0.3);
    if (!(cfg.cprbm.sigma > 0)) bad_value("cprbm.sigma", "must be positive");
    cfg.cprbm.a = kv.get_double("cprbm.a", 0.0);
    cfg.cprbm.b = kv.get_double("cprbm.b", 3.0);
    if (!std::isfinite(cfg.cprbm.a) || !std::isfinite(cfg.cprbm.b) ||
        !(cfg.cprbm.a < cfg.cprbm.b))
      bad_value("cprbm.a", "bounds must be finite with a < b");
    cfg.cprbm.alpha = kv.get_double("cprbm.alpha", 1.0);
    cfg.cprbm.beta = kv.get_double("cprbm.beta", 0.5);
    if (!(cfg.cprbm.beta > 0)) bad_value("cprbm.beta", "must be positive");
    cfg.cprbm.k_trunc = static_cast<int>(kv.get_long("cprbm.k_trunc", 10));
    if (cfg.cprbm.k_trunc < 1) bad_value("cprbm.k_trunc", "must be positive");
    cfg.events_file = kv.get_string("cprbm.events_file", "");
  } else {
    cfg.ctcrwt_tau = kv.get_double("ctcrwt.tau", 16.0);
    cfg.ctcrwt_dt = kv.get_double("ctcrwt.dt", 0.0078125);
    require_grid("ctcrwt.tau", cfg.ctcrwt_tau, "ctcrwt.dt", cfg.ctcrwt_dt);
    cfg.ctcrwt.beta = kv.get_double("ctcrwt.beta", 1.0);
    if (!(cfg.ctcrwt.beta > 0)) bad_value("ctcrwt.beta", "must be positive");
    cfg.ctcrwt.sigma = kv.get_double("ctcrwt.sigma", 600.0);
    if (!(cfg.ctcrwt.sigma > 0)) bad_value("ctcrwt.sigma", "must be positive");
    cfg.ctcrwt.eta = kv.get_double("ctcrwt.eta", 50.0);
    if (!(cfg.ctcrwt.eta > 0)) bad_value("ctcrwt.eta", "must be positive");
    cfg.ctcrwt.sigma_l = kv.get_double("ctcrwt.sigma_l", 50.0);
    if (!(cfg.ctcrwt.sigma_l > 0)) bad_value("ctcrwt.sigma_l", "must be positive");
    cfg.ctcrwt_n_obs = static_cast<int>(kv.get_long("ctcrwt.n_obs", 16));
    if (cfg.ctcrwt_n_obs < 1) bad_value("ctcrwt.n_obs", "must be positive");
    cfg.raster_file = kv.get_string("ctcrwt.raster_file", "");
    cfg.obs_file = kv.get_string("ctcrwt.obs_file", "");
    if (cfg.obs_file.empty() &&
        !is_multiple(cfg.ctcrwt_tau / cfg.ctcrwt_n_obs, cfg.ctcrwt_dt))
      bad_value("ctcrwt.n_obs", "tau / n_obs must be a multiple of ctcrwt.dt");
  }

  for (double bt : cfg.blocktimes) {
    if (!(bt > 0)) bad_value("experiment.blocktime", "entries must be positive");
    if (bt > cfg.horizon_time() + 1e-9)
      bad_value("experiment.blocktime",
                format_number(bt) + " exceeds the time horizon");
    if (!is_multiple(bt, cfg.base_dt()))
      bad_value("experiment.blocktime",
                format_number(bt) + " is not a multiple of the grid step " +
                    format_number(cfg.base_dt()));
  }

  const long component = kv.get_long("experiment.trace_component",
                                     cfg.model == "cprbm" ? 1 : 2);
  if (component < 1 || component > cfg.state_dim())
    bad_value("experiment.trace_component",
              "must be in 1.." + std::to_string(cfg.state_dim()));
  cfg.trace_component = static_cast<int>(component - 1);

  return cfg;
}

ExperimentConfig load_experiment_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  for (const auto& [key, value] : overrides) kv.override_value(key, value);
  ExperimentConfig cfg = experiment_config_from(kv);
  kv.check_all_used();
  return cfg;
}

}  // namespace bbsmc::cli
