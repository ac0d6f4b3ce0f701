#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bbsmc/fk.hpp"
#include "bbsmc/lingauss.hpp"
#include "bbsmc/random.hpp"

namespace bbsmc::models {

// A model together with the block conditionals of its proposal chain, and
// the time stamp of every state index.
struct FkBundle {
  std::shared_ptr<const FkModel> model;
  std::shared_ptr<const BridgeOracle> oracle;
  std::vector<double> times;
};

// ---------------------------------------------------------------------------
// Velocity/location Ornstein-Uhlenbeck pair with a quadratic location cost
// accumulated along the path. State x = (V, L);
// dV = -beta_v V dt + sigma dB, dL = (V - beta_x L) dt.

struct CtcrwpParams {
  double beta_v = 1.0;  // velocity mean-reversion rate
  double beta_x = 1.0;  // location mean-reversion rate
  double sigma = 1.0;   // velocity diffusion scale
  double eta = 1.0;     // location cost scale: running cost L^2 / (2 eta^2)
  double tau = 1.0;     // time horizon
  double dt = 0.125;    // grid step; tau must be an integer multiple
};

// exp(F dt) for the drift F = [[-beta_v, 0], [1, -beta_x]].
Eigen::Matrix2d ctcrwp_transition(double beta_v, double beta_x, double dt);
// Cov(X_{t+dt} | X_t) for the diffusion K = diag(sigma, 0).
Eigen::Matrix2d ctcrwp_step_cov(double beta_v, double beta_x, double sigma, double dt);
// Stationary covariance; requires beta_v, beta_x > 0.
Eigen::Matrix2d ctcrwp_stationary_cov(double beta_v, double beta_x, double sigma);
// Rates (beta_v, beta_x) making both stationary variances equal one.
std::pair<double, double> ctcrwp_unit_stationary(double sigma);

// Proposals: stationary start, exact discretised dynamics. Potentials:
// log G_t(x) = -(times[t+1] - times[t]) L_t^2 / (2 eta^2), and G ≡ 1 at the
// final index. Oracle: conditionals of the unconditioned proposal chain.
FkBundle ctcrwp_fk(const CtcrwpParams& params);

// ---------------------------------------------------------------------------
// Reflected Brownian location on (a, b) driving an inhomogeneous Poisson
// event stream with rate beta exp(-alpha X) held constant over each cell.

struct CpRbmParams {
  double sigma = 0.3;  // location scale per unit time
  double a = 0.0;      // lower reflection bound
  double b = 3.0;      // upper reflection bound
  double alpha = 1.0;  // intensity decay per unit location
  double beta = 0.5;   // baseline intensity
  int k_trunc = 10;    // reflection series truncation
};

// Iterated mirroring of z over a and b until the value lies inside (a, b).
// An exact boundary hit (measure zero) is nudged one ulp inward.
double reflect(double z, double a, double b);

// log density at x of reflect(N(mu, var)) restricted to (a, b): the normal
// density plus k_trunc mirror-image pairs. Returns -inf outside (a, b).
// Infinite bounds drop the corresponding image terms.
double reflected_normal_logpdf(double x, double mu, double var, double a, double b,
                               int k_trunc = 10);

// Sorted union of two time grids, de-duplicated at 1e-12 tolerance.
std::vector<double> merge_grid(const std::vector<double>& grid,
                               const std::vector<double>& extra);

// Events of a piecewise-constant-rate Poisson process; rates[k] applies on
// [times[k], times[k+1]). Returns sorted event times.
std::vector<double> poisson_process_simulate(const std::vector<double>& times,
                                             const Eigen::Ref<const Eigen::VectorXd>& rates,
                                             Rng& rng);

// Reflected random-walk path over the grid: X_0 = reflect(N(0,1)),
// X_k = reflect(N(X_{k-1}, (times[k]-times[k-1]) sigma^2)).
Eigen::VectorXd rbm_simulate_path(const CpRbmParams& params, const std::vector<double>& times,
                                  Rng& rng);

// Per-cell event rates beta exp(-alpha path[k]) for a simulated path.
Eigen::VectorXd cp_rbm_rates(const CpRbmParams& params, const Eigen::Ref<const Eigen::VectorXd>& path);

// Proposals: plain Gaussian random walk started at N(0, 1). Potentials fold
// in the reflected/Gaussian transition density ratio, the survival factor
// exp(-|cell| beta exp(-alpha x)), and a factor beta exp(-alpha x) per
// observed event in the cell. The grid is augmented with the event times;
// the returned bundle carries the augmented grid. Two events inside one
// cell (closer than the merge tolerance) are an error.
FkBundle cp_rbm_fk(const CpRbmParams& params, const std::vector<double>& events,
                   const std::vector<double>& grid);

// ---------------------------------------------------------------------------
// Planar movement with terrain preference: independent velocity/location
// pairs per axis (beta_x = 0 branch of the OU pair above), conditioned on
// noisy location observations, with terrain potentials from a raster.

// exp(F dt) for F = [[-beta, 0], [1, 0]].
Eigen::Matrix2d ctcrw_transition(double beta, double dt);
Eigen::Matrix2d ctcrw_step_cov(double beta, double sigma, double dt);

// Passability coefficients in [0, 1] on a regular grid. Row r, column c
// covers [origin_x + c s, origin_x + (c+1) s) x [origin_y + r s, ...) for
// cell size s; row 0 is the first data row in the file. Queries outside the
// raster return off_coef (default 0: off-map cells are forbidden).
struct TerrainRaster {
  int ncols = 0;
  int nrows = 0;
  double cellsize = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  Eigen::MatrixXd coef;  // nrows x ncols
  double off_coef = 0.0;

  double coefficient(double x, double y) const;
  // -log coefficient; +inf where the coefficient is zero.
  double potential(double x, double y) const;
};

// Header line "ncols,nrows,cellsize,origin_x,origin_y" followed by nrows
// comma-separated rows of ncols coefficients.
TerrainRaster load_terrain_raster(std::istream& in);
TerrainRaster load_terrain_raster(const std::string& path);
void save_terrain_raster(const TerrainRaster& raster, std::ostream& out);

struct CtcrwtParams {
  double beta = 1.0;      // velocity mean-reversion rate
  double sigma = 1.0;     // velocity diffusion scale
  double eta = 50.0;      // observation noise standard deviation
  double sigma_l = 50.0;  // location standard deviation of the initial law
};

// State (V_x, L_x, V_y, L_y). Observations are noisy locations
// z_k = (L_x, L_y) + N(0, eta^2 I_2) at times that must lie on the grid.
// Initial law N((0, z_11, 0, z_12), diag(sigma_v^2, sigma_l^2, ...)) with
// sigma_v^2 = sigma^2/(2 beta) and (z_11, z_12) the first observation.
// Proposals and oracle are the conditionals of this chain given all
// observations; potentials are Riemann-weighted raster potentials at the
// location coordinates.
FkBundle ctcrwt_fk(const CtcrwtParams& params, const std::vector<double>& obs_times,
                   const Eigen::Matrix2Xd& obs, const TerrainRaster& raster,
                   const std::vector<double>& grid);

}  // namespace bbsmc::models
