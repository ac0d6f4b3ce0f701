#include "bbsmc/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "bbsmc/errors.hpp"
#include "bbsmc/gaussian.hpp"

namespace bbsmc::models {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kMergeTol = 1e-12;

double normal_logpdf(double x, double mu, double var) {
  const double d = x - mu;
  return -0.5 * (d * d / var + std::log(var) + kLog2Pi);
}

void check_grid(const std::vector<double>& times, const char* what) {
  if (times.size() < 2)
    throw ModelError(std::string(what) + ": need at least two grid points");
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    if (!(times[k] < times[k + 1]))
      throw ModelError(std::string(what) + ": time grid must be strictly increasing");
    if (!std::isfinite(times[k + 1]))
      throw ModelError(std::string(what) + ": time grid must be finite");
  }
}

// Relative threshold below which the two mean-reversion rates are treated
// as equal and the limiting expressions are used.
bool rates_coincide(double beta_v, double beta_x) {
  return std::abs(beta_v - beta_x) < 1e-9 * std::max(std::abs(beta_v), std::abs(beta_x));
}

std::shared_ptr<const lingauss::SmootherBridgeOracle> chain_oracle(lingauss::GaussChain chain) {
  const lingauss::ObservationSeq none(chain.length());
  auto sm = std::make_shared<lingauss::SmootherOutput>(
      lingauss::kalman_smoother(lingauss::kalman_filter(std::move(chain), none)));
  return std::make_shared<lingauss::SmootherBridgeOracle>(std::move(sm));
}

// ---------------------------------------------------------------------------

class CtcrwpModel final : public FkModel {
 public:
  CtcrwpModel(const CtcrwpParams& p, std::vector<double> times)
      : params_(p),
        times_(std::move(times)),
        trans_(ctcrwp_transition(p.beta_v, p.beta_x, p.dt)),
        step_chol_(chol_psd(ctcrwp_step_cov(p.beta_v, p.beta_x, p.sigma, p.dt))),
        init_chol_(chol_psd(ctcrwp_stationary_cov(p.beta_v, p.beta_x, p.sigma))) {}

  int horizon() const override { return static_cast<int>(times_.size()); }
  int state_dim() const override { return 2; }

  void sample_initial(Rng& rng, Eigen::Ref<Eigen::VectorXd> x) const override {
    mvn_sample(Eigen::Vector2d::Zero(), init_chol_, rng, x);
  }

  void sample_step(int, const Eigen::Ref<const Eigen::VectorXd>& x_prev, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> x) const override {
    mvn_sample(trans_ * x_prev, step_chol_, rng, x);
  }

  double log_potential(int t, const Eigen::Ref<const Eigen::VectorXd>&,
                       const Eigen::Ref<const Eigen::VectorXd>& x) const override {
    if (t + 1 >= horizon()) return 0.0;
    const double dt = times_[t + 1] - times_[t];
    return -dt * x[1] * x[1] / (2.0 * params_.eta * params_.eta);
  }

 private:
  CtcrwpParams params_;
  std::vector<double> times_;
  Eigen::Matrix2d trans_;
  Eigen::MatrixXd step_chol_, init_chol_;
};

// ---------------------------------------------------------------------------

class CpRbmModel final : public FkModel {
 public:
  CpRbmModel(const CpRbmParams& p, std::vector<double> times, std::vector<char> event_in_cell)
      : params_(p), times_(std::move(times)), event_(std::move(event_in_cell)) {
    const int t_len = static_cast<int>(times_.size());
    step_var_.resize(t_len, 0.0);
    for (int k = 1; k < t_len; ++k)
      step_var_[k] = (times_[k] - times_[k - 1]) * p.sigma * p.sigma;
  }

  int horizon() const override { return static_cast<int>(times_.size()); }
  int state_dim() const override { return 1; }

  void sample_initial(Rng& rng, Eigen::Ref<Eigen::VectorXd> x) const override {
    x[0] = rng.normal();
  }

  void sample_step(int t, const Eigen::Ref<const Eigen::VectorXd>& x_prev, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> x) const override {
    x[0] = x_prev[0] + std::sqrt(step_var_[t]) * rng.normal();
  }

  double log_potential(int t, const Eigen::Ref<const Eigen::VectorXd>& x_prev,
                       const Eigen::Ref<const Eigen::VectorXd>& x) const override {
    const double y = x[0];
    double ratio;
    if (t == 0)
      ratio = reflected_normal_logpdf(y, 0.0, 1.0, params_.a, params_.b, params_.k_trunc) -
              normal_logpdf(y, 0.0, 1.0);
    else
      ratio = reflected_normal_logpdf(y, x_prev[0], step_var_[t], params_.a, params_.b,
                                      params_.k_trunc) -
              normal_logpdf(y, x_prev[0], step_var_[t]);
    if (ratio == -kInf) return -kInf;
    const double rate = params_.beta * std::exp(-params_.alpha * y);
    double out = ratio;
    if (t + 1 < horizon()) out -= (times_[t + 1] - times_[t]) * rate;
    if (event_[t]) out += std::log(params_.beta) - params_.alpha * y;
    return out;
  }

 private:
  CpRbmParams params_;
  std::vector<double> times_;
  std::vector<char> event_;
  std::vector<double> step_var_;
};

// ---------------------------------------------------------------------------

class CtcrwtModel final : public FkModel {
 public:
  CtcrwtModel(std::shared_ptr<const lingauss::SmootherOutput> sm,
              std::shared_ptr<const TerrainRaster> raster, std::vector<double> times)
      : sm_(std::move(sm)),
        raster_(std::move(raster)),
        times_(std::move(times)),
        init_chol_(chol_psd(sm_->cov[0])) {
    steps_.reserve(times_.size() - 1);
    for (std::size_t k = 1; k < times_.size(); ++k)
      steps_.push_back(lingauss::make_end_conditional(*sm_, static_cast<int>(k) - 1,
                                                      static_cast<int>(k)));
  }

  int horizon() const override { return static_cast<int>(times_.size()); }
  int state_dim() const override { return 4; }

  void sample_initial(Rng& rng, Eigen::Ref<Eigen::VectorXd> x) const override {
    mvn_sample(sm_->mean[0], init_chol_, rng, x);
  }

  void sample_step(int t, const Eigen::Ref<const Eigen::VectorXd>& x_prev, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> x) const override {
    steps_[static_cast<std::size_t>(t) - 1].sample(x_prev, rng, x);
  }

  double log_potential(int t, const Eigen::Ref<const Eigen::VectorXd>&,
                       const Eigen::Ref<const Eigen::VectorXd>& x) const override {
    // Zero-coefficient cells are forbidden at every time point; the finite
    // part weights by the dwell time, which is zero at the horizon end.
    const double v = raster_->potential(x[1], x[3]);
    if (v == kInf) return -kInf;
    if (t + 1 >= horizon()) return 0.0;
    return -(times_[t + 1] - times_[t]) * v;
  }

 private:
  std::shared_ptr<const lingauss::SmootherOutput> sm_;
  std::shared_ptr<const TerrainRaster> raster_;
  std::vector<double> times_;
  Eigen::MatrixXd init_chol_;
  std::vector<lingauss::EndConditional> steps_;
};

}  // namespace

// ---------------------------------------------------------------------------

Eigen::Matrix2d ctcrwp_transition(double beta_v, double beta_x, double dt) {
  if (!(dt > 0.0)) throw ModelError("ctcrwp_transition: dt must be positive");
  const double ev = std::exp(-beta_v * dt);
  const double ex = std::exp(-beta_x * dt);
  const double lower = rates_coincide(beta_v, beta_x) ? dt * ev : (ex - ev) / (beta_v - beta_x);
  Eigen::Matrix2d out;
  out << ev, 0.0, lower, ex;
  return out;
}

Eigen::Matrix2d ctcrwp_step_cov(double beta_v, double beta_x, double sigma, double dt) {
  if (!(sigma > 0.0) || !(dt > 0.0))
    throw ModelError("ctcrwp_step_cov: sigma and dt must be positive");
  if (!(beta_v > 0.0) || !(beta_x > 0.0))
    throw ModelError("ctcrwp_step_cov: mean-reversion rates must be positive");
  const double s2 = sigma * sigma;
  const double q11 = s2 / (2.0 * beta_v) * (1.0 - std::exp(-2.0 * beta_v * dt));
  double q12, q22;
  if (rates_coincide(beta_v, beta_x)) {
    const double e2 = std::exp(-2.0 * beta_v * dt);
    const double bt = beta_v * dt;
    q12 = s2 / (4.0 * beta_v * beta_v) * (1.0 + e2 * (-2.0 * bt - 1.0));
    q22 = s2 / (4.0 * beta_v * beta_v * beta_v) * (1.0 - e2 * (1.0 + 2.0 * bt * (bt + 1.0)));
  } else {
    const double d = beta_v - beta_x;
    const double p = beta_v + beta_x;
    const double f_p = (1.0 - std::exp(-p * dt)) / p;
    const double f_v = (1.0 - std::exp(-2.0 * beta_v * dt)) / (2.0 * beta_v);
    const double f_x = (1.0 - std::exp(-2.0 * beta_x * dt)) / (2.0 * beta_x);
    q12 = s2 / d * (f_p - f_v);
    q22 = s2 / (d * d) * (f_x + f_v - 2.0 * f_p);
  }
  Eigen::Matrix2d out;
  out << q11, q12, q12, q22;
  return out;
}

Eigen::Matrix2d ctcrwp_stationary_cov(double beta_v, double beta_x, double sigma) {
  if (!(sigma > 0.0)) throw ModelError("ctcrwp_stationary_cov: sigma must be positive");
  if (!(beta_v > 0.0) || !(beta_x > 0.0))
    throw ModelError("ctcrwp_stationary_cov: mean-reversion rates must be positive");
  // Cancellation-free arrangement of the dt -> inf limits of the step
  // covariance; algebraically identical for all beta_v, beta_x > 0.
  const double s2 = sigma * sigma;
  const double p = beta_v + beta_x;
  Eigen::Matrix2d out;
  out(0, 0) = s2 / (2.0 * beta_v);
  out(0, 1) = out(1, 0) = s2 / (2.0 * beta_v * p);
  out(1, 1) = s2 / (2.0 * beta_v * beta_x * p);
  return out;
}

std::pair<double, double> ctcrwp_unit_stationary(double sigma) {
  if (!(sigma > 0.0)) throw ModelError("ctcrwp_unit_stationary: sigma must be positive");
  // s11 = sigma^2/(2 beta_v) = 1 pins beta_v; s22 = 1 then reduces to
  // beta_x (beta_v + beta_x) = 1, the positive root of a quadratic.
  const double beta_v = sigma * sigma / 2.0;
  const double beta_x = (-beta_v + std::sqrt(beta_v * beta_v + 4.0)) / 2.0;
  const Eigen::Matrix2d s = ctcrwp_stationary_cov(beta_v, beta_x, sigma);
  if (std::abs(s(0, 0) - 1.0) >= 1e-10 || std::abs(s(1, 1) - 1.0) >= 1e-10)
    throw NumericalError("ctcrwp_unit_stationary: residual exceeds tolerance");
  return {beta_v, beta_x};
}

FkBundle ctcrwp_fk(const CtcrwpParams& params) {
  if (!(params.sigma > 0.0)) throw ModelError("ctcrwp_fk: sigma must be positive");
  if (!(params.eta > 0.0)) throw ModelError("ctcrwp_fk: eta must be positive");
  if (!(params.dt > 0.0)) throw ModelError("ctcrwp_fk: dt must be positive");
  if (!(params.beta_v > 0.0) || !(params.beta_x > 0.0))
    throw ModelError("ctcrwp_fk: mean-reversion rates must be positive");
  const double steps_real = params.tau / params.dt;
  const long n_steps = std::lround(steps_real);
  if (n_steps < 1 || std::abs(steps_real - static_cast<double>(n_steps)) > 1e-9 * std::max(1.0, steps_real))
    throw ModelError("ctcrwp_fk: tau must be a positive integer multiple of dt");

  std::vector<double> times(static_cast<std::size_t>(n_steps) + 1);
  for (long k = 0; k <= n_steps; ++k) times[static_cast<std::size_t>(k)] = static_cast<double>(k) * params.dt;

  lingauss::GaussChain chain;
  chain.init_mean = Eigen::Vector2d::Zero();
  chain.init_cov = ctcrwp_stationary_cov(params.beta_v, params.beta_x, params.sigma);
  const lingauss::GaussianTransition step{
      ctcrwp_transition(params.beta_v, params.beta_x, params.dt),
      ctcrwp_step_cov(params.beta_v, params.beta_x, params.sigma, params.dt)};
  chain.steps.assign(static_cast<std::size_t>(n_steps), step);

  FkBundle out;
  out.model = std::make_shared<CtcrwpModel>(params, times);
  out.oracle = chain_oracle(std::move(chain));
  out.times = std::move(times);
  return out;
}

// ---------------------------------------------------------------------------

double reflect(double z, double a, double b) {
  if (!(a < b)) throw ModelError("reflect: bounds must satisfy a < b");
  while (z <= a || z >= b) {
    if (z == a || z == b) {
      // Exact boundary hit: one ulp inward keeps the output in (a, b).
      return std::nextafter(z, z + (z == a ? 1.0 : -1.0));
    }
    z = (z < a) ? 2.0 * a - z : 2.0 * b - z;
  }
  return z;
}

double reflected_normal_logpdf(double x, double mu, double var, double a, double b,
                               int k_trunc) {
  if (!(a < b)) throw ModelError("reflected_normal_logpdf: bounds must satisfy a < b");
  if (!(var > 0.0)) throw ModelError("reflected_normal_logpdf: variance must be positive");
  if (k_trunc < 1) throw ModelError("reflected_normal_logpdf: k_trunc must be at least 1");
  if (x <= a || x >= b) return -kInf;
  const bool lo_open = std::isinf(a);
  const bool hi_open = std::isinf(b);
  if (lo_open && hi_open) return normal_logpdf(x, mu, var);
  if (lo_open || hi_open) {
    // A single reflecting barrier keeps exactly one mirror image.
    const double image = lo_open ? 2.0 * b - x : 2.0 * a - x;
    Eigen::ArrayXd pair(2);
    pair << normal_logpdf(x, mu, var), normal_logpdf(image, mu, var);
    return log_sum_exp(pair);
  }
  Eigen::ArrayXd terms(2 * k_trunc + 1);
  terms[0] = normal_logpdf(x, mu, var);
  for (int k = 1; k <= k_trunc; ++k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    const double odd = (k % 2 == 1) ? a + b : 0.0;
    terms[2 * k - 1] = normal_logpdf(sign * x + k * a - k * b + odd, mu, var);
    terms[2 * k] = normal_logpdf(sign * x + k * b - k * a + odd, mu, var);
  }
  return log_sum_exp(terms);
}

std::vector<double> merge_grid(const std::vector<double>& grid,
                               const std::vector<double>& extra) {
  std::vector<double> all = grid;
  all.insert(all.end(), extra.begin(), extra.end());
  std::sort(all.begin(), all.end());
  std::vector<double> out;
  out.reserve(all.size());
  for (double t : all) {
    if (out.empty() || t > out.back() + kMergeTol) out.push_back(t);
  }
  return out;
}

std::vector<double> poisson_process_simulate(const std::vector<double>& times,
                                             const Eigen::Ref<const Eigen::VectorXd>& rates,
                                             Rng& rng) {
  if (times.size() >= 2) check_grid(times, "poisson_process_simulate");
  const std::size_t cells = times.empty() ? 0 : times.size() - 1;
  if (static_cast<std::size_t>(rates.size()) != cells)
    throw ModelError("poisson_process_simulate: need one rate per grid cell");
  std::vector<double> events;
  for (std::size_t k = 0; k < cells; ++k) {
    const double rate = rates[static_cast<Eigen::Index>(k)];
    if (!(rate >= 0.0) || !std::isfinite(rate))
      throw ModelError("poisson_process_simulate: rates must be finite and non-negative");
    const double width = times[k + 1] - times[k];
    const double mean = rate * width;
    if (mean <= 0.0) continue;
    std::poisson_distribution<long> count(mean);
    const long n = count(rng.engine());
    for (long i = 0; i < n; ++i) events.push_back(times[k] + width * rng.uniform());
  }
  std::sort(events.begin(), events.end());
  return events;
}

Eigen::VectorXd rbm_simulate_path(const CpRbmParams& params, const std::vector<double>& times,
                                  Rng& rng) {
  if (!(params.sigma > 0.0)) throw ModelError("rbm_simulate_path: sigma must be positive");
  if (!(params.a < params.b)) throw ModelError("rbm_simulate_path: bounds must satisfy a < b");
  check_grid(times, "rbm_simulate_path");
  Eigen::VectorXd path(static_cast<Eigen::Index>(times.size()));
  path[0] = reflect(rng.normal(), params.a, params.b);
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double sd = params.sigma * std::sqrt(times[k] - times[k - 1]);
    path[static_cast<Eigen::Index>(k)] =
        reflect(path[static_cast<Eigen::Index>(k) - 1] + sd * rng.normal(), params.a, params.b);
  }
  return path;
}

Eigen::VectorXd cp_rbm_rates(const CpRbmParams& params,
                             const Eigen::Ref<const Eigen::VectorXd>& path) {
  if (path.size() < 2) throw ModelError("cp_rbm_rates: need at least two path values");
  // Rate over cell k is set by the state at the cell's left endpoint.
  return params.beta * (-params.alpha * path.head(path.size() - 1).array()).exp();
}

FkBundle cp_rbm_fk(const CpRbmParams& params, const std::vector<double>& events,
                   const std::vector<double>& grid) {
  if (!(params.sigma > 0.0)) throw ModelError("cp_rbm_fk: sigma must be positive");
  if (!(params.a < params.b)) throw ModelError("cp_rbm_fk: bounds must satisfy a < b");
  if (params.k_trunc < 1) throw ModelError("cp_rbm_fk: k_trunc must be at least 1");
  if (!(params.beta >= 0.0)) throw ModelError("cp_rbm_fk: beta must be non-negative");
  if (!std::isfinite(params.alpha)) throw ModelError("cp_rbm_fk: alpha must be finite");
  check_grid(grid, "cp_rbm_fk");
  for (double e : events) {
    if (!(e >= grid.front() - kMergeTol) || !(e <= grid.back() + kMergeTol))
      throw ModelError("cp_rbm_fk: event time outside the time grid");
  }
  if (!events.empty() && params.beta <= 0.0)
    throw ModelError("cp_rbm_fk: events require a positive baseline intensity");

  const std::vector<double> times = merge_grid(grid, events);
  std::vector<char> event_in_cell(times.size(), 0);
  for (double e : events) {
    // The merged grid holds a point within the merge tolerance; the event
    // belongs to the cell starting at the nearest grid point.
    auto it = std::lower_bound(times.begin(), times.end(), e);
    std::size_t idx = static_cast<std::size_t>(it - times.begin());
    if (idx == times.size() || (idx > 0 && e - times[idx - 1] < times[idx] - e)) --idx;
    if (event_in_cell[idx])
      throw ModelError(
          "cp_rbm_fk: two events fall inside one grid cell; refine the time grid so each "
          "cell holds at most one event");
    event_in_cell[idx] = 1;
  }

  lingauss::GaussChain chain;
  chain.init_mean = Eigen::VectorXd::Zero(1);
  chain.init_cov = Eigen::MatrixXd::Identity(1, 1);
  chain.steps.resize(times.size() - 1);
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    chain.steps[k].coef = Eigen::MatrixXd::Identity(1, 1);
    chain.steps[k].cov =
        Eigen::MatrixXd::Constant(1, 1, (times[k + 1] - times[k]) * params.sigma * params.sigma);
  }

  FkBundle out;
  out.model = std::make_shared<CpRbmModel>(params, times, std::move(event_in_cell));
  out.oracle = chain_oracle(std::move(chain));
  out.times = times;
  return out;
}

// ---------------------------------------------------------------------------

Eigen::Matrix2d ctcrw_transition(double beta, double dt) {
  if (!(beta > 0.0) || !(dt > 0.0))
    throw ModelError("ctcrw_transition: beta and dt must be positive");
  const double e1 = std::exp(-beta * dt);
  Eigen::Matrix2d out;
  out << e1, 0.0, (1.0 - e1) / beta, 1.0;
  return out;
}

Eigen::Matrix2d ctcrw_step_cov(double beta, double sigma, double dt) {
  if (!(beta > 0.0) || !(dt > 0.0) || !(sigma > 0.0))
    throw ModelError("ctcrw_step_cov: beta, sigma and dt must be positive");
  const double s2 = sigma * sigma;
  const double e1 = std::exp(-beta * dt);
  const double e2 = std::exp(-2.0 * beta * dt);
  Eigen::Matrix2d out;
  out(0, 0) = s2 / (2.0 * beta) * (1.0 - e2);
  out(0, 1) = out(1, 0) = s2 / (2.0 * beta * beta) * (1.0 - 2.0 * e1 + e2);
  out(1, 1) = s2 / (beta * beta) *
              (dt - 2.0 / beta * (1.0 - e1) + 1.0 / (2.0 * beta) * (1.0 - e2));
  return out;
}

double TerrainRaster::coefficient(double x, double y) const {
  const double cx = std::floor((x - origin_x) / cellsize);
  const double cy = std::floor((y - origin_y) / cellsize);
  if (cx < 0.0 || cy < 0.0 || cx >= static_cast<double>(ncols) || cy >= static_cast<double>(nrows))
    return off_coef;
  return coef(static_cast<Eigen::Index>(cy), static_cast<Eigen::Index>(cx));
}

double TerrainRaster::potential(double x, double y) const {
  const double c = coefficient(x, y);
  if (c <= 0.0) return kInf;
  return -std::log(c);
}

namespace {

void validate_raster(const TerrainRaster& r, const char* what) {
  if (r.ncols < 1 || r.nrows < 1)
    throw ModelError(std::string(what) + ": raster must have at least one cell");
  if (!(r.cellsize > 0.0)) throw ModelError(std::string(what) + ": cell size must be positive");
  if (!std::isfinite(r.origin_x) || !std::isfinite(r.origin_y))
    throw ModelError(std::string(what) + ": raster origin must be finite");
  if (r.coef.rows() != r.nrows || r.coef.cols() != r.ncols)
    throw ModelError(std::string(what) + ": raster value matrix does not match its header");
  if (!((r.coef.array() >= 0.0).all() && (r.coef.array() <= 1.0).all()))
    throw ModelError(std::string(what) + ": raster coefficients must lie in [0, 1]");
  if (!(r.off_coef >= 0.0 && r.off_coef <= 1.0))
    throw ModelError(std::string(what) + ": off-raster coefficient must lie in [0, 1]");
}

std::vector<double> parse_csv_row(const std::string& line, const char* what) {
  std::vector<double> out;
  std::stringstream row(line);
  std::string cell;
  while (std::getline(row, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ModelError(std::string(what) + ": malformed numeric field '" + cell + "'");
    }
  }
  return out;
}

}  // namespace

TerrainRaster load_terrain_raster(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw ModelError("load_terrain_raster: missing header line");
  const std::vector<double> header = parse_csv_row(line, "load_terrain_raster");
  if (header.size() != 5)
    throw ModelError(
        "load_terrain_raster: header must be ncols,nrows,cellsize,origin_x,origin_y");
  TerrainRaster r;
  r.ncols = static_cast<int>(std::lround(header[0]));
  r.nrows = static_cast<int>(std::lround(header[1]));
  r.cellsize = header[2];
  r.origin_x = header[3];
  r.origin_y = header[4];
  if (r.ncols < 1 || r.nrows < 1)
    throw ModelError("load_terrain_raster: raster must have at least one cell");
  r.coef.resize(r.nrows, r.ncols);
  for (int row = 0; row < r.nrows; ++row) {
    if (!std::getline(in, line))
      throw ModelError("load_terrain_raster: fewer data rows than the header declares");
    const std::vector<double> vals = parse_csv_row(line, "load_terrain_raster");
    if (static_cast<int>(vals.size()) != r.ncols)
      throw ModelError("load_terrain_raster: row width does not match ncols");
    for (int col = 0; col < r.ncols; ++col) r.coef(row, col) = vals[static_cast<std::size_t>(col)];
  }
  validate_raster(r, "load_terrain_raster");
  return r;
}

TerrainRaster load_terrain_raster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("load_terrain_raster: cannot open '" + path + "'");
  return load_terrain_raster(in);
}

void save_terrain_raster(const TerrainRaster& raster, std::ostream& out) {
  validate_raster(raster, "save_terrain_raster");
  out << raster.ncols << ',' << raster.nrows << ',' << raster.cellsize << ','
      << raster.origin_x << ',' << raster.origin_y << '\n';
  for (int row = 0; row < raster.nrows; ++row) {
    for (int col = 0; col < raster.ncols; ++col) {
      if (col) out << ',';
      out << raster.coef(row, col);
    }
    out << '\n';
  }
}

FkBundle ctcrwt_fk(const CtcrwtParams& params, const std::vector<double>& obs_times,
                   const Eigen::Matrix2Xd& obs, const TerrainRaster& raster,
                   const std::vector<double>& grid) {
  if (!(params.beta > 0.0) || !(params.sigma > 0.0))
    throw ModelError("ctcrwt_fk: beta and sigma must be positive");
  if (!(params.eta > 0.0) || !(params.sigma_l > 0.0))
    throw ModelError("ctcrwt_fk: eta and sigma_l must be positive");
  check_grid(grid, "ctcrwt_fk");
  validate_raster(raster, "ctcrwt_fk");
  if (obs.cols() < 1) throw ModelError("ctcrwt_fk: need at least one observation");
  if (static_cast<std::size_t>(obs.cols()) != obs_times.size())
    throw ModelError("ctcrwt_fk: observation times and values must align");

  const int t_len = static_cast<int>(grid.size());
  lingauss::ObservationSeq seq(static_cast<std::size_t>(t_len));
  Eigen::MatrixXd design(2, 4);
  design << 0, 1, 0, 0, 0, 0, 0, 1;
  for (std::size_t i = 0; i < obs_times.size(); ++i) {
    const double t = obs_times[i];
    const double tol = 1e-9 * std::max(1.0, std::abs(t));
    auto it = std::lower_bound(grid.begin(), grid.end(), t - tol);
    const std::size_t idx = static_cast<std::size_t>(it - grid.begin());
    if (idx >= grid.size() || std::abs(grid[idx] - t) > tol)
      throw ModelError("ctcrwt_fk: observation time not on the time grid");
    if (seq[idx].has_value()) throw ModelError("ctcrwt_fk: duplicate observation time");
    seq[idx] = lingauss::Observation{design, params.eta * params.eta * Eigen::Matrix2d::Identity(),
                                     obs.col(static_cast<Eigen::Index>(i))};
  }

  const double sigma_v2 = params.sigma * params.sigma / (2.0 * params.beta);
  lingauss::GaussChain chain;
  chain.init_mean = Eigen::Vector4d(0.0, obs(0, 0), 0.0, obs(1, 0));
  chain.init_cov = Eigen::Vector4d(sigma_v2, params.sigma_l * params.sigma_l, sigma_v2,
                                   params.sigma_l * params.sigma_l)
                       .asDiagonal();
  chain.steps.resize(static_cast<std::size_t>(t_len) - 1);
  for (int k = 0; k + 1 < t_len; ++k) {
    const double dt = grid[static_cast<std::size_t>(k) + 1] - grid[static_cast<std::size_t>(k)];
    const Eigen::Matrix2d t2 = ctcrw_transition(params.beta, dt);
    const Eigen::Matrix2d q2 = ctcrw_step_cov(params.beta, params.sigma, dt);
    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(4, 4);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
    coef.topLeftCorner<2, 2>() = t2;
    coef.bottomRightCorner<2, 2>() = t2;
    cov.topLeftCorner<2, 2>() = q2;
    cov.bottomRightCorner<2, 2>() = q2;
    chain.steps[static_cast<std::size_t>(k)] = lingauss::GaussianTransition{coef, cov};
  }

  auto sm = std::make_shared<lingauss::SmootherOutput>(
      lingauss::kalman_smoother(lingauss::kalman_filter(std::move(chain), seq)));
  FkBundle out;
  out.model = std::make_shared<CtcrwtModel>(sm, std::make_shared<TerrainRaster>(raster), grid);
  out.oracle = std::make_shared<lingauss::SmootherBridgeOracle>(std::move(sm));
  out.times = grid;
  return out;
}

}  // namespace bbsmc::models
