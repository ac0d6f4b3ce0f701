#include "bbsmc/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "bbsmc/errors.hpp"
#include "bbsmc/filters.hpp"
#include "bbsmc/gaussian.hpp"
#include "bbsmc/lingauss.hpp"
#include "doctest.h"
#include "support/lingauss_oracle.hpp"
#include "support/stats.hpp"

using namespace bbsmc;
using namespace bbsmc::models;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double normal_lp(double x, double mu, double var) {
  const double d = x - mu;
  return -0.5 * (d * d / var + std::log(var) + std::log(2.0 * M_PI));
}

template <typename F>
double simpson(F f, double a, double b, int panels) {
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) s += f(a + i * h) * ((i % 2) ? 4.0 : 2.0);
  return s * h / 3.0;
}

lingauss::LinearSde ou_pair_sde(double beta_v, double beta_x, double sigma) {
  lingauss::LinearSde sde;
  sde.drift.resize(2, 2);
  sde.drift << -beta_v, 0.0, 1.0, -beta_x;
  sde.diffusion = Eigen::Vector2d(sigma, 0.0).asDiagonal();
  sde.init_mean = Eigen::Vector2d::Zero();
  sde.init_cov = Eigen::Matrix2d::Identity();
  return sde;
}

// Forward path draw from a model (proposal chain only, ignoring potentials).
Eigen::MatrixXd forward_path(const FkModel& m, Rng& rng) {
  Eigen::MatrixXd x(m.state_dim(), m.horizon());
  m.sample_initial(rng, x.col(0));
  for (int t = 1; t < m.horizon(); ++t) m.sample_step(t, x.col(t - 1), rng, x.col(t));
  return x;
}

double quantile_of(std::vector<double> v, double q) {
  const auto k = static_cast<std::size_t>(q * (static_cast<double>(v.size()) - 1.0));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace

// ---------------------------------------------------------------------------
// Velocity/location pair: closed forms

TEST_CASE("ou pair closed-form transition and step covariance match the sde solution") {
  Rng rng(9101);
  for (int rep = 0; rep < 60; ++rep) {
    double bv = rng.uniform(0.05, 3.0), bx = rng.uniform(0.05, 3.0);
    if (std::abs(bv - bx) < 0.05) bx += 0.1;
    const double sigma = rng.uniform(0.1, 2.0), dt = rng.uniform(0.01, 2.0);
    const auto ref = lingauss::transition(ou_pair_sde(bv, bx, sigma), 0.0, dt);
    CHECK((ctcrwp_transition(bv, bx, dt) - ref.coef).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ctcrwp_step_cov(bv, bx, sigma, dt) - ref.cov).cwiseAbs().maxCoeff() < 1e-9);
  }
  for (int rep = 0; rep < 20; ++rep) {  // equal-rate limiting branch
    const double b = rng.uniform(0.05, 3.0), sigma = rng.uniform(0.1, 2.0);
    const double dt = rng.uniform(0.01, 2.0);
    const auto ref = lingauss::transition(ou_pair_sde(b, b, sigma), 0.0, dt);
    CHECK((ctcrwp_transition(b, b, dt) - ref.coef).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ctcrwp_step_cov(b, b, sigma, dt) - ref.cov).cwiseAbs().maxCoeff() < 1e-9);
  }
  // Rates inside the coincidence threshold take the limiting branch and
  // still agree with the full solution.
  const auto ref = lingauss::transition(ou_pair_sde(1.0, 1.0 + 5e-10, 0.7), 0.0, 0.8);
  CHECK((ctcrwp_transition(1.0, 1.0 + 5e-10, 0.8) - ref.coef).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((ctcrwp_step_cov(1.0, 1.0 + 5e-10, 0.7, 0.8) - ref.cov).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ou pair transition with equal unit rates and unit step") {
  const Eigen::Matrix2d t = ctcrwp_transition(1.0, 1.0, 1.0);
  const double e1 = std::exp(-1.0);
  CHECK(t(0, 0) == doctest::Approx(e1).epsilon(1e-14));
  CHECK(t(0, 1) == 0.0);
  CHECK(t(1, 0) == doctest::Approx(e1).epsilon(1e-14));  // dt * exp(-beta dt) at dt = 1
  CHECK(t(1, 1) == doctest::Approx(e1).epsilon(1e-14));
  CHECK_THROWS_AS(ctcrwp_transition(1.0, 1.0, 0.0), ModelError);
  CHECK_THROWS_AS(ctcrwp_step_cov(1.0, 1.0, 0.0, 1.0), ModelError);
  CHECK_THROWS_AS(ctcrwp_step_cov(0.0, 1.0, 1.0, 1.0), ModelError);
}

TEST_CASE("ou pair stationary covariance solves the lyapunov equation") {
  Rng rng(9102);
  for (int rep = 0; rep < 40; ++rep) {
    double bv = rng.uniform(0.05, 3.0), bx = rng.uniform(0.05, 3.0);
    const double sigma = rng.uniform(0.1, 2.0);
    const Eigen::Matrix2d s = ctcrwp_stationary_cov(bv, bx, sigma);
    const double s2 = sigma * sigma;
    CHECK(s(0, 0) == s2 / (2.0 * bv));
    Eigen::Matrix2d drift;
    drift << -bv, 0.0, 1.0, -bx;
    const Eigen::Matrix2d kk = Eigen::Vector2d(s2, 0.0).asDiagonal();
    const Eigen::Matrix2d resid = drift * s + s * drift.transpose() + kk;
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff()));
    if (std::abs(bv - bx) > 0.05) {
      // The expanded per-entry expressions agree with the product form.
      const double d = bv - bx, p = bv + bx;
      CHECK(s(0, 1) == doctest::Approx(s2 / d * (1.0 / p - 1.0 / (2.0 * bv))).epsilon(1e-12));
      CHECK(s(1, 1) ==
            doctest::Approx(s2 / (d * d) * (1.0 / (2.0 * bx) + 1.0 / (2.0 * bv) - 2.0 / p))
                .epsilon(1e-12));
    }
  }
  // Equal-rate limiting expressions.
  const double sigma = 1.3, b = 0.7, s2 = sigma * sigma;
  const Eigen::Matrix2d s = ctcrwp_stationary_cov(b, b, sigma);
  CHECK(s(0, 1) == doctest::Approx(s2 / (4.0 * b * b)).epsilon(1e-14));
  CHECK(s(1, 1) == doctest::Approx(s2 / (4.0 * b * b * b)).epsilon(1e-14));
  CHECK_THROWS_AS(ctcrwp_stationary_cov(0.0, 1.0, 1.0), ModelError);
  CHECK_THROWS_AS(ctcrwp_stationary_cov(1.0, -1.0, 1.0), ModelError);
  CHECK_THROWS_AS(ctcrwp_stationary_cov(1.0, 1.0, 0.0), ModelError);
}

TEST_CASE("unit-stationary rate solve hits unit variances") {
  const auto [bv, bx] = ctcrwp_unit_stationary(std::sqrt(2.0));
  CHECK(bv == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bx == doctest::Approx((std::sqrt(5.0) - 1.0) / 2.0).epsilon(1e-12));
  for (double sigma : {0.03125, 0.125, 0.5, std::pow(2.0, 0.25), 2.0, 4.0, 1e-3}) {
    const auto [v, x] = ctcrwp_unit_stationary(sigma);
    CHECK(v > 0.0);
    CHECK(x > 0.0);
    const Eigen::Matrix2d s = ctcrwp_stationary_cov(v, x, sigma);
    CHECK(std::abs(s(0, 0) - 1.0) < 1e-10);
    CHECK(std::abs(s(1, 1) - 1.0) < 1e-10);
  }
  CHECK_THROWS_AS(ctcrwp_unit_stationary(0.0), ModelError);
  CHECK_THROWS_AS(ctcrwp_unit_stationary(-1.0), ModelError);
}

// ---------------------------------------------------------------------------
// Velocity/location pair: FK bundle

namespace {

CtcrwpParams small_ctcrwp() {
  CtcrwpParams p;
  const auto [bv, bx] = ctcrwp_unit_stationary(0.5);
  p.beta_v = bv;
  p.beta_x = bx;
  p.sigma = 0.5;
  p.eta = 1.0;
  p.tau = 2.0;
  p.dt = 0.25;
  return p;
}

}  // namespace

TEST_CASE("ou pair bundle grid and validation") {
  const CtcrwpParams p = small_ctcrwp();
  const FkBundle fk = ctcrwp_fk(p);
  REQUIRE(fk.times.size() == 9);
  CHECK(fk.times.front() == 0.0);
  CHECK(fk.times.back() == 2.0);
  CHECK(fk.model->horizon() == 9);
  CHECK(fk.model->state_dim() == 2);

  CtcrwpParams bad = p;
  bad.dt = 0.3;
  CHECK_THROWS_AS(ctcrwp_fk(bad), ModelError);
  bad = p;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(ctcrwp_fk(bad), ModelError);
  bad = p;
  bad.eta = -1.0;
  CHECK_THROWS_AS(ctcrwp_fk(bad), ModelError);
  bad = p;
  bad.beta_x = 0.0;
  CHECK_THROWS_AS(ctcrwp_fk(bad), ModelError);
  bad = p;
  bad.tau = 0.0;
  CHECK_THROWS_AS(ctcrwp_fk(bad), ModelError);
}

TEST_CASE("ou pair potentials are the riemann-weighted location cost") {
  const CtcrwpParams p = small_ctcrwp();
  const FkBundle fk = ctcrwp_fk(p);
  const int t_len = fk.model->horizon();
  Rng rng(9103);
  Eigen::VectorXd xp(2), x(2);
  for (int t = 0; t < t_len; ++t) {
    xp << rng.normal(), rng.normal();
    x << rng.normal(), rng.normal();
    const double lp = fk.model->log_potential(t, xp, x);
    if (t + 1 < t_len) {
      const double dt = fk.times[static_cast<std::size_t>(t) + 1] - fk.times[static_cast<std::size_t>(t)];
      CHECK(lp == -dt * x[1] * x[1] / (2.0 * p.eta * p.eta));
    } else {
      CHECK(lp == 0.0);
    }
  }

  // Sum over the path telescopes to the Riemann sum of the running cost.
  const Eigen::MatrixXd path = forward_path(*fk.model, rng);
  double total = 0.0, riemann = 0.0;
  for (int t = 0; t < t_len; ++t) total += fk.model->log_potential(t, x, path.col(t));
  for (int t = 0; t + 1 < t_len; ++t) {
    const double dt = fk.times[static_cast<std::size_t>(t) + 1] - fk.times[static_cast<std::size_t>(t)];
    riemann -= dt * path(1, t) * path(1, t) / (2.0 * p.eta * p.eta);
  }
  CHECK(total == doctest::Approx(riemann).epsilon(1e-13));
}

TEST_CASE("ou pair proposal sampling matches the closed-form moments") {
  const CtcrwpParams p = small_ctcrwp();
  const FkBundle fk = ctcrwp_fk(p);
  const Eigen::Matrix2d s = ctcrwp_stationary_cov(p.beta_v, p.beta_x, p.sigma);
  const Eigen::Matrix2d tr = ctcrwp_transition(p.beta_v, p.beta_x, p.dt);
  const Eigen::Matrix2d q = ctcrwp_step_cov(p.beta_v, p.beta_x, p.sigma, p.dt);

  const int n = 20000;
  Rng rng(9104);
  Eigen::MatrixXd init(2, n), step(2, n);
  Eigen::VectorXd x0(2);
  x0 << 0.3, -0.2;
  for (int i = 0; i < n; ++i) {
    fk.model->sample_initial(rng, init.col(i));
    fk.model->sample_step(1, x0, rng, step.col(i));
  }
  const Eigen::Vector2d init_mean = init.rowwise().mean();
  const Eigen::Matrix2d init_cov =
      (init.colwise() - init_mean) * (init.colwise() - init_mean).transpose() / (n - 1.0);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(init_mean[i]) < 4.5 * std::sqrt(s(i, i) / n));
    CHECK(std::abs(init_cov(i, i) - s(i, i)) < 5.0 * s(i, i) * std::sqrt(2.0 / n));
  }
  CHECK(std::abs(init_cov(0, 1) - s(0, 1)) < 5.0 * std::sqrt((s(0, 0) * s(1, 1) + s(0, 1) * s(0, 1)) / n));

  const Eigen::Vector2d step_mean = step.rowwise().mean();
  const Eigen::Vector2d target = tr * x0;
  const Eigen::Matrix2d step_cov =
      (step.colwise() - step_mean) * (step.colwise() - step_mean).transpose() / (n - 1.0);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(step_mean[i] - target[i]) < 4.5 * std::sqrt(q(i, i) / n));
    CHECK(std::abs(step_cov(i, i) - q(i, i)) < 5.0 * q(i, i) * std::sqrt(2.0 / n));
  }
}

TEST_CASE("ou pair oracle agrees with one-step and dense-joint conditionals") {
  const CtcrwpParams p = small_ctcrwp();
  const FkBundle fk = ctcrwp_fk(p);
  const Eigen::Matrix2d tr = ctcrwp_transition(p.beta_v, p.beta_x, p.dt);
  const Eigen::MatrixXd q_chol = chol_psd(ctcrwp_step_cov(p.beta_v, p.beta_x, p.sigma, p.dt));

  Rng rng(9105);
  Eigen::VectorXd x(2), y(2);
  for (int l : {0, 3, 7}) {
    for (int rep = 0; rep < 10; ++rep) {
      x << rng.normal(), rng.normal();
      // Typical transitions: y near the conditional mean, so the log
      // density is O(1) and an absolute tolerance is meaningful.
      mvn_sample(tr * x, q_chol, rng, y);
      const double got = fk.oracle->log_block_density(l, l + 1, x, y);
      const double want = mvn_logpdf(y, tr * x, q_chol);
      CHECK(std::abs(got - want) < 1e-10);
      // Deep-tail point: the step covariance is nearly singular, so the
      // bridge arithmetic only holds to a relative accuracy there.
      y << rng.normal(), rng.normal();
      const double tail = mvn_logpdf(y, tr * x, q_chol);
      CHECK(std::abs(fk.oracle->log_block_density(l, l + 1, x, y) - tail) <
            1e-8 * std::max(1.0, std::abs(tail)));
    }
  }

  // Longer blocks against a dense joint of the same chain.
  lingauss::GaussChain chain;
  chain.init_mean = Eigen::Vector2d::Zero();
  chain.init_cov = ctcrwp_stationary_cov(p.beta_v, p.beta_x, p.sigma);
  chain.steps.assign(8, lingauss::GaussianTransition{
                            ctcrwp_transition(p.beta_v, p.beta_x, p.dt),
                            ctcrwp_step_cov(p.beta_v, p.beta_x, p.sigma, p.dt)});
  const test::DenseGaussian joint = test::dense_joint(chain);
  for (auto [l, u] : std::vector<std::pair<int, int>>{{0, 2}, {1, 6}, {3, 8}}) {
    for (int rep = 0; rep < 5; ++rep) {
      x << rng.normal(), rng.normal();
      y << rng.normal(), rng.normal();
      const auto cond = test::condition_entries(joint, test::state_indices(chain, l), x);
      // Conditioning drops state l's two entries; later states shift down one slot.
      const auto marg = test::marginal_entries(cond, {2 * (u - 1), 2 * (u - 1) + 1});
      const double want = test::dense_logpdf(marg, y);
      CHECK(std::abs(fk.oracle->log_block_density(l, u, x, y) - want) < 1e-8);
    }
  }
}

// ---------------------------------------------------------------------------
// Reflection and the reflected normal density

TEST_CASE("reflect folds values into the interval") {
  CHECK(reflect(1.7, 0.0, 3.0) == 1.7);
  CHECK(reflect(3.5, 0.0, 3.0) == 2.5);
  CHECK(reflect(-1.0, 0.0, 3.0) == 1.0);
  CHECK(reflect(7.2, 0.0, 3.0) == doctest::Approx(1.2).epsilon(1e-13));
  CHECK(reflect(-17.3, 0.0, 3.0) == doctest::Approx(0.7).epsilon(1e-12));

  // Exact boundary hits land one ulp inside.
  for (double z : {3.0, 0.0, -3.0, 6.0}) {
    const double r = reflect(z, 0.0, 3.0);
    CHECK(r > 0.0);
    CHECK(r < 3.0);
    CHECK((std::abs(r - 3.0) < 1e-12 || std::abs(r) < 1e-12));
  }

  const double inf = kInf;
  CHECK(reflect(5.7, -inf, inf) == 5.7);
  CHECK(reflect(5.0, -inf, 3.0) == 1.0);
  CHECK(reflect(-4.0, -2.0, inf) == 0.0);
  CHECK_THROWS_AS(reflect(1.0, 3.0, 0.0), ModelError);
  CHECK_THROWS_AS(reflect(1.0, 2.0, 2.0), ModelError);
}

TEST_CASE("reflected normal density: support, wide bounds, degenerate inputs") {
  // Bounds far from the mass: the reflection images are negligible.
  const double v = reflected_normal_logpdf(0.0, 0.0, 1.0, -10.0, 10.0);
  CHECK(v == doctest::Approx(std::log(1.0 / std::sqrt(2.0 * M_PI))).epsilon(1e-15));

  CHECK(reflected_normal_logpdf(-0.1, 1.0, 1.0, 0.0, 3.0) == -kInf);
  CHECK(reflected_normal_logpdf(3.1, 1.0, 1.0, 0.0, 3.0) == -kInf);
  CHECK(reflected_normal_logpdf(0.0, 1.0, 1.0, 0.0, 3.0) == -kInf);
  CHECK(reflected_normal_logpdf(3.0, 1.0, 1.0, 0.0, 3.0) == -kInf);

  CHECK_THROWS_AS(reflected_normal_logpdf(0.5, 0.0, 0.0, 0.0, 3.0), ModelError);
  CHECK_THROWS_AS(reflected_normal_logpdf(0.5, 0.0, 1.0, 3.0, 0.0), ModelError);
  CHECK_THROWS_AS(reflected_normal_logpdf(0.5, 0.0, 1.0, 0.0, 3.0, 0), ModelError);

  // Unbounded on both sides: plain normal density.
  for (double x : {-1.4, 0.2, 2.9}) {
    CHECK(reflected_normal_logpdf(x, 0.3, 0.7, -kInf, kInf) ==
          doctest::Approx(normal_lp(x, 0.3, 0.7)).epsilon(1e-15));
  }
  // Unbounded below: the density keeps exactly one image, mirrored at b.
  for (double x : {-1.4, 0.2, 2.9}) {
    const double manual =
        std::log(std::exp(normal_lp(x, 0.3, 2.0)) + std::exp(normal_lp(6.0 - x, 0.3, 2.0)));
    CHECK(reflected_normal_logpdf(x, 0.3, 2.0, -kInf, 3.0) ==
          doctest::Approx(manual).epsilon(1e-13));
  }

  // The construction is symmetric under mirroring about the midpoint.
  Rng rng(9106);
  for (int rep = 0; rep < 30; ++rep) {
    const double a = rng.uniform(-2.0, 0.0), b = rng.uniform(1.0, 3.0);
    const double mu = rng.uniform(a, b), x = rng.uniform(a, b), var = rng.uniform(0.05, 3.0);
    CHECK(reflected_normal_logpdf(x, mu, var, a, b) ==
          doctest::Approx(reflected_normal_logpdf(a + b - x, a + b - mu, var, a, b))
              .epsilon(1e-12));
  }
}

TEST_CASE("reflected normal density integrates to one") {
  // The density is continuous up to the boundary; reflect() nudges exact
  // boundary quadrature nodes one ulp inside so the limit value is used.
  const auto density = [](double x, double mu, double var) {
    return std::exp(reflected_normal_logpdf(reflect(x, 0.0, 3.0), mu, var, 0.0, 3.0));
  };
  for (double mu : {0.15, 1.3, 2.9}) {
    const double total = simpson([&](double x) { return density(x, mu, 0.09); }, 0.0, 3.0, 4000);
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  // Fine-step variance of the same scale the event model uses.
  const double total =
      simpson([&](double x) { return density(x, 0.02, 0.09 / 64.0); }, 0.0, 3.0, 8000);
  CHECK(std::abs(total - 1.0) < 1e-6);
  // Variance much wider than the interval: mass folds many times over.
  const double wide = simpson([&](double x) { return density(x, 1.5, 9.0); }, 0.0, 3.0, 4000);
  CHECK(std::abs(wide - 1.0) < 1e-6);
}

TEST_CASE("reflected normal density matches reflected draws") {
  const double mu = 0.8, var = 1.0, a = 0.0, b = 3.0;
  const int n = 100000, bins = 24;
  Rng rng(9107);
  std::vector<int> observed(bins, 0);
  for (int i = 0; i < n; ++i) {
    const double x = reflect(mu + std::sqrt(var) * rng.normal(), a, b);
    int bin = static_cast<int>((x - a) / (b - a) * bins);
    bin = std::clamp(bin, 0, bins - 1);
    ++observed[static_cast<std::size_t>(bin)];
  }
  double stat = 0.0;
  for (int k = 0; k < bins; ++k) {
    const double lo = a + (b - a) * k / bins, hi = a + (b - a) * (k + 1) / bins;
    const double expected =
        n * simpson(
                [&](double x) {
                  return std::exp(reflected_normal_logpdf(reflect(x, a, b), mu, var, a, b));
                },
                lo, hi, 64);
    REQUIRE(expected > 10.0);
    const double d = observed[static_cast<std::size_t>(k)] - expected;
    stat += d * d / expected;
  }
  CHECK(test::chi2_survival(stat, bins - 1) > 0.01);

  // Sanity of the chi-squared tail helper itself: two degrees of freedom
  // have survival exp(-x/2).
  for (double x : {0.5, 2.0, 10.0}) {
    CHECK(test::chi2_survival(x, 2) == doctest::Approx(std::exp(-x / 2.0)).epsilon(1e-10));
  }
  CHECK(test::chi2_survival(0.0, 5) == doctest::Approx(1.0));
}

// ---------------------------------------------------------------------------
// Event-stream machinery

TEST_CASE("merge_grid unions and de-duplicates time points") {
  const std::vector<double> grid{0.0, 1.0, 2.0};
  CHECK(merge_grid(grid, {}) == grid);
  CHECK(merge_grid(grid, {0.5}) == std::vector<double>{0.0, 0.5, 1.0, 2.0});
  CHECK(merge_grid(grid, {1.0 + 1e-15, 1.7, 0.25}) ==
        std::vector<double>{0.0, 0.25, 1.0, 1.7, 2.0});
  CHECK(merge_grid({}, {2.0, 1.0}) == std::vector<double>{1.0, 2.0});
  // Points closer than the tolerance collapse onto the first survivor.
  const auto merged = merge_grid(grid, {0.5, 0.5 + 5e-13});
  CHECK(merged == std::vector<double>{0.0, 0.5, 1.0, 2.0});
}

TEST_CASE("piecewise-constant poisson simulation has the right intensity") {
  std::vector<double> times(11);
  for (int k = 0; k <= 10; ++k) times[static_cast<std::size_t>(k)] = k;
  Rng rng(9108);

  CHECK(poisson_process_simulate(times, Eigen::VectorXd::Zero(10), rng).empty());
  CHECK_THROWS_AS(poisson_process_simulate(times, Eigen::VectorXd::Zero(9), rng), ModelError);
  CHECK_THROWS_AS(poisson_process_simulate(times, Eigen::VectorXd::Constant(10, -1.0), rng),
                  ModelError);

  const int reps = 3000;
  const double base = 2.0;
  for (double factor : {1.0, 2.0}) {
    const Eigen::VectorXd rates = Eigen::VectorXd::Constant(10, base * factor);
    double total = 0.0;
    std::vector<double> pooled;
    for (int r = 0; r < reps; ++r) {
      const auto ev = poisson_process_simulate(times, rates, rng);
      total += static_cast<double>(ev.size());
      CHECK(std::is_sorted(ev.begin(), ev.end()));
      for (double e : ev) {
        CHECK(e >= 0.0);
        CHECK(e < 10.0);
      }
      if (pooled.size() < 5000) pooled.insert(pooled.end(), ev.begin(), ev.end());
    }
    const double mean_count = base * factor * 10.0;
    CHECK(std::abs(total / reps - mean_count) < 4.0 * std::sqrt(mean_count / reps));
    // Conditioned on the counts, constant-rate events are uniform on [0, tau).
    CHECK(test::ks_one_sample_pvalue(pooled, [](double x) { return x / 10.0; }) > 1e-3);
  }
}

TEST_CASE("reflected walk simulation stays inside the bounds") {
  CpRbmParams p;
  p.sigma = 0.3;
  std::vector<double> times(257);
  for (int k = 0; k < 257; ++k) times[static_cast<std::size_t>(k)] = k * 0.0625;
  Rng rng(9109);
  const Eigen::VectorXd path = rbm_simulate_path(p, times, rng);
  REQUIRE(path.size() == 257);
  CHECK((path.array() > p.a).all());
  CHECK((path.array() < p.b).all());

  Rng rng_a(42), rng_b(42);
  CHECK(rbm_simulate_path(p, times, rng_a) == rbm_simulate_path(p, times, rng_b));

  // With far-away bounds the increments are plain Gaussian steps.
  CpRbmParams wide = p;
  wide.a = -1e9;
  wide.b = 1e9;
  wide.sigma = 0.7;
  std::vector<double> grid(4001);
  for (int k = 0; k < 4001; ++k) grid[static_cast<std::size_t>(k)] = k * 0.5;
  const Eigen::VectorXd walk = rbm_simulate_path(wide, grid, rng);
  std::vector<double> incs;
  for (int k = 1; k < walk.size(); ++k) incs.push_back(walk[k] - walk[k - 1]);
  const double want_var = 0.5 * 0.7 * 0.7;
  CHECK(std::abs(test::mean_of(incs)) < 4.0 * std::sqrt(want_var / 4000.0));
  CHECK(std::abs(test::var_of(incs) - want_var) < 5.0 * want_var * std::sqrt(2.0 / 4000.0));

  const Eigen::VectorXd rates = cp_rbm_rates(p, path);
  REQUIRE(rates.size() == 256);
  for (int k = 0; k < 256; ++k) {
    CHECK(rates[k] == doctest::Approx(p.beta * std::exp(-p.alpha * path[k])).epsilon(1e-14));
  }
}

// ---------------------------------------------------------------------------
// Event-stream FK bundle

namespace {

std::vector<double> uniform_grid(double tau, double dt) {
  const int n = static_cast<int>(std::lround(tau / dt));
  std::vector<double> out(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) out[static_cast<std::size_t>(k)] = k * dt;
  return out;
}

}  // namespace

TEST_CASE("event-stream bundle augments the grid and validates inputs") {
  CpRbmParams p;
  const std::vector<double> grid = uniform_grid(2.0, 0.25);
  const std::vector<double> events{0.3, 1.1};
  const FkBundle fk = cp_rbm_fk(p, events, grid);
  CHECK(fk.times == merge_grid(grid, events));
  CHECK(fk.model->horizon() == static_cast<int>(fk.times.size()));
  CHECK(fk.model->state_dim() == 1);

  CHECK_THROWS_WITH_AS(cp_rbm_fk(p, {0.3, 0.3 + 1e-14}, grid), doctest::Contains("refine"),
                       ModelError);
  CHECK_THROWS_AS(cp_rbm_fk(p, {2.5}, grid), ModelError);
  CHECK_THROWS_AS(cp_rbm_fk(p, {-0.1}, grid), ModelError);
  CpRbmParams bad = p;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(cp_rbm_fk(bad, {}, grid), ModelError);
  bad = p;
  bad.a = 3.0;
  bad.b = 0.0;
  CHECK_THROWS_AS(cp_rbm_fk(bad, {}, grid), ModelError);
  bad = p;
  bad.k_trunc = 0;
  CHECK_THROWS_AS(cp_rbm_fk(bad, {}, grid), ModelError);
  bad = p;
  bad.beta = 0.0;
  CHECK_NOTHROW(cp_rbm_fk(bad, {}, grid));
  CHECK_THROWS_AS(cp_rbm_fk(bad, {0.3}, grid), ModelError);
}

TEST_CASE("event-stream potentials decompose into ratio, survival, event parts") {
  CpRbmParams p;
  p.alpha = 1.3;
  p.beta = 0.6;
  const std::vector<double> grid = uniform_grid(2.0, 0.25);
  const std::vector<double> events{0.3, 2.0};  // one mid-cell, one at the horizon end
  const FkBundle fk = cp_rbm_fk(p, events, grid);
  const auto& times = fk.times;
  const int t_len = fk.model->horizon();

  const auto ratio_part = [&](int t, double xp, double y) {
    if (t == 0)
      return reflected_normal_logpdf(y, 0.0, 1.0, p.a, p.b, p.k_trunc) - normal_lp(y, 0.0, 1.0);
    const double var = (times[static_cast<std::size_t>(t)] - times[static_cast<std::size_t>(t) - 1]) * p.sigma * p.sigma;
    return reflected_normal_logpdf(y, xp, var, p.a, p.b, p.k_trunc) - normal_lp(y, xp, var);
  };
  const auto survival_part = [&](int t, double y) {
    if (t + 1 >= t_len) return 0.0;
    return -(times[static_cast<std::size_t>(t) + 1] - times[static_cast<std::size_t>(t)]) * p.beta *
           std::exp(-p.alpha * y);
  };

  Rng rng(9110);
  Eigen::VectorXd xp(1), y(1);
  const std::size_t ev0 = static_cast<std::size_t>(
      std::find(times.begin(), times.end(), 0.3) - times.begin());
  REQUIRE(ev0 < times.size());
  for (int t = 0; t < t_len; ++t) {
    xp[0] = rng.uniform(0.2, 2.8);
    y[0] = rng.uniform(0.2, 2.8);
    const double lp = fk.model->log_potential(t, xp, y);
    double want = ratio_part(t, xp[0], y[0]) + survival_part(t, y[0]);
    if (t == static_cast<int>(ev0) || t == t_len - 1) want += std::log(p.beta) - p.alpha * y[0];
    CHECK(lp == doctest::Approx(want).epsilon(1e-12));
  }

  // Outside the reflection interval the potential vanishes.
  xp[0] = 1.0;
  y[0] = -0.5;
  CHECK(fk.model->log_potential(1, xp, y) == -kInf);

  // With unbounded reflection and no events only the survival factor remains.
  CpRbmParams open = p;
  open.a = -kInf;
  open.b = kInf;
  const FkBundle fk2 = cp_rbm_fk(open, {}, grid);
  const int open_len = fk2.model->horizon();
  for (int t : {0, 3, open_len - 2}) {
    xp[0] = rng.normal();
    y[0] = rng.normal();
    const double dt = grid[static_cast<std::size_t>(t) + 1] - grid[static_cast<std::size_t>(t)];
    CHECK(fk2.model->log_potential(t, xp, y) ==
          doctest::Approx(-dt * open.beta * std::exp(-open.alpha * y[0])).epsilon(1e-14));
  }
  CHECK(fk2.model->log_potential(open_len - 1, xp, y) == 0.0);
}

TEST_CASE("event-stream proposal times ratio recovers the reflected transition") {
  CpRbmParams p;
  p.alpha = 0.0;
  p.beta = 0.0;  // potentials reduce to the pure density ratio
  const std::vector<double> grid = uniform_grid(1.0, 0.125);
  const FkBundle fk = cp_rbm_fk(p, {}, grid);
  Rng rng(9111);
  Eigen::VectorXd x(1), y(1);
  for (int k : {1, 4, 8}) {
    const double var = (fk.times[static_cast<std::size_t>(k)] - fk.times[static_cast<std::size_t>(k) - 1]) * p.sigma * p.sigma;
    for (int rep = 0; rep < 20; ++rep) {
      x[0] = rng.uniform(0.05, 2.95);
      y[0] = rng.uniform(0.05, 2.95);
      const double proposal = fk.oracle->log_block_density(k - 1, k, x, y);
      const double ratio = fk.model->log_potential(k, x, y);
      const double want = reflected_normal_logpdf(y[0], x[0], var, p.a, p.b, p.k_trunc);
      // Far-tail values reach ~1e3 in magnitude; compare relatively.
      CHECK(std::abs(proposal + ratio - want) < 1e-10 * std::max(1.0, std::abs(want)));
      const double gauss = normal_lp(y[0], x[0], var);
      CHECK(std::abs(proposal - gauss) < 1e-10 * std::max(1.0, std::abs(gauss)));
    }
  }

  // Random-walk block densities collapse to a single Gaussian step.
  for (auto [l, u] : std::vector<std::pair<int, int>>{{0, 3}, {2, 8}}) {
    const double var = (fk.times[static_cast<std::size_t>(u)] - fk.times[static_cast<std::size_t>(l)]) * p.sigma * p.sigma;
    for (int rep = 0; rep < 10; ++rep) {
      x[0] = rng.normal();
      y[0] = rng.normal();
      const double want = normal_lp(y[0], x[0], var);
      CHECK(std::abs(fk.oracle->log_block_density(l, u, x, y) - want) <
            1e-9 * std::max(1.0, std::abs(want)));
    }
  }

  // Initial proposal is standard normal whatever the walk scale is.
  Eigen::VectorXd draws(20000);
  Eigen::VectorXd xi(1);
  for (int i = 0; i < draws.size(); ++i) {
    fk.model->sample_initial(rng, xi);
    draws[i] = xi[0];
  }
  CHECK(std::abs(draws.mean()) < 4.0 / std::sqrt(20000.0));
  CHECK(std::abs((draws.array() - draws.mean()).square().sum() / 19999.0 - 1.0) <
        5.0 * std::sqrt(2.0 / 20000.0));
}

TEST_CASE("event-stream posterior bands cover the simulated truth") {
  CpRbmParams p;
  p.sigma = 0.3;
  p.alpha = 1.0;
  p.beta = 0.5;
  const std::vector<double> grid = uniform_grid(16.0, 0.25);
  const int n_particles = 64, sweeps = 600, burn = 100, reps = 10;
  Rng master(9112);

  double covered = 0.0, checked = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng = master.substream(static_cast<std::uint64_t>(rep));
    const Eigen::VectorXd truth = rbm_simulate_path(p, grid, rng);
    const auto events = poisson_process_simulate(grid, cp_rbm_rates(p, truth), rng);
    const FkBundle fk = cp_rbm_fk(p, events, grid);
    const int t_len = fk.model->horizon();

    // Map base grid points into the augmented grid.
    std::vector<int> base_idx;
    for (double t : grid) {
      const auto it = std::lower_bound(fk.times.begin(), fk.times.end(), t - 1e-9);
      base_idx.push_back(static_cast<int>(it - fk.times.begin()));
    }

    // The simulated truth is a valid starting reference: it lies inside the
    // bounds, so every potential is finite.
    Eigen::MatrixXd init(1, t_len);
    for (int k = 0; k < t_len; ++k) {
      const auto it = std::lower_bound(grid.begin(), grid.end(), fk.times[static_cast<std::size_t>(k)] - 1e-9);
      std::size_t g = static_cast<std::size_t>(it - grid.begin());
      if (g >= grid.size()) g = grid.size() - 1;
      init(0, k) = truth[static_cast<Eigen::Index>(g)];
    }
    filters::ReferencePath ref = filters::make_reference(init, n_particles, rng);
    const std::vector<int> bounds = filters::dense_boundaries(t_len);

    std::vector<std::vector<double>> samples(grid.size());
    for (int it = 0; it < sweeps; ++it) {
      ref = filters::cpf_bbs(*fk.model, *fk.oracle, resampling::Scheme::killing, ref, bounds,
                             n_particles, rng);
      if (it < burn) continue;
      for (std::size_t g = 0; g < grid.size(); ++g)
        samples[g].push_back(ref.states(0, base_idx[g]));
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double lo = quantile_of(samples[g], 0.025);
      const double hi = quantile_of(samples[g], 0.975);
      checked += 1.0;
      if (truth[static_cast<Eigen::Index>(g)] >= lo && truth[static_cast<Eigen::Index>(g)] <= hi)
        covered += 1.0;
    }
  }
  const double rate = covered / checked;
  CHECK(rate > 0.80);
  CHECK(rate <= 1.0);
}

// ---------------------------------------------------------------------------
// Terrain raster

TEST_CASE("integrated-velocity closed forms match the sde solution") {
  Rng rng(9113);
  for (int rep = 0; rep < 40; ++rep) {
    const double beta = rng.uniform(0.05, 3.0), sigma = rng.uniform(0.1, 2.0);
    const double dt = rng.uniform(0.01, 2.0);
    lingauss::LinearSde sde;
    sde.drift.resize(2, 2);
    sde.drift << -beta, 0.0, 1.0, 0.0;
    sde.diffusion = Eigen::Vector2d(sigma, 0.0).asDiagonal();
    sde.init_mean = Eigen::Vector2d::Zero();
    sde.init_cov = Eigen::Matrix2d::Identity();
    const auto ref = lingauss::transition(sde, 0.0, dt);
    CHECK((ctcrw_transition(beta, dt) - ref.coef).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ctcrw_step_cov(beta, sigma, dt) - ref.cov).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK_THROWS_AS(ctcrw_transition(0.0, 1.0), ModelError);
  CHECK_THROWS_AS(ctcrw_step_cov(1.0, 1.0, 0.0), ModelError);
}

TEST_CASE("terrain raster lookup, potentials, and file round trip") {
  TerrainRaster r;
  r.ncols = 3;
  r.nrows = 2;
  r.cellsize = 0.5;
  r.origin_x = 1.0;
  r.origin_y = -1.0;
  r.coef.resize(2, 3);
  r.coef << 1.0, 0.5, 0.0, 0.25, 1.0, 0.75;

  CHECK(r.coefficient(1.2, -0.9) == 1.0);           // row 0, col 0
  CHECK(r.coefficient(1.0, -1.0) == 1.0);           // exact lower corner
  CHECK(r.coefficient(1.7, -0.8) == 0.5);           // row 0, col 1
  CHECK(r.coefficient(2.4, -0.6) == 0.0);           // row 0, col 2
  CHECK(r.coefficient(1.2, -0.3) == 0.25);          // row 1, col 0
  CHECK(r.coefficient(2.2, -0.1) == 0.75);          // row 1, col 2
  CHECK(r.coefficient(0.9, -0.5) == 0.0);           // off the left edge
  CHECK(r.coefficient(1.2, 0.1) == 0.0);            // above the top row
  CHECK(r.potential(1.2, -0.9) == 0.0);
  CHECK(r.potential(1.7, -0.8) == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
  CHECK(r.potential(2.4, -0.6) == kInf);
  CHECK(r.potential(0.0, 0.0) == kInf);

  std::stringstream io;
  save_terrain_raster(r, io);
  const TerrainRaster back = load_terrain_raster(io);
  CHECK(back.ncols == r.ncols);
  CHECK(back.nrows == r.nrows);
  CHECK(back.cellsize == r.cellsize);
  CHECK(back.origin_x == r.origin_x);
  CHECK(back.origin_y == r.origin_y);
  CHECK(back.coef == r.coef);

  std::stringstream bad1("3,2,0.5,1\n");
  CHECK_THROWS_AS(load_terrain_raster(bad1), ModelError);
  std::stringstream bad2("2,1,0.5,0,0\n0.2,0.4,0.6\n");
  CHECK_THROWS_AS(load_terrain_raster(bad2), ModelError);
  std::stringstream bad3("2,2,0.5,0,0\n0.2,0.4\n");
  CHECK_THROWS_AS(load_terrain_raster(bad3), ModelError);
  std::stringstream bad4("2,1,0.5,0,0\n0.2,1.4\n");
  CHECK_THROWS_AS(load_terrain_raster(bad4), ModelError);
  std::stringstream bad5("2,1,0.5,0,0\n0.2,oops\n");
  CHECK_THROWS_AS(load_terrain_raster(bad5), ModelError);
  CHECK_THROWS_AS(load_terrain_raster("/nonexistent/raster.csv"), ModelError);
}

// ---------------------------------------------------------------------------
// Terrain movement FK bundle

namespace {

TerrainRaster open_raster(double value = 1.0) {
  TerrainRaster r;
  r.ncols = 40;
  r.nrows = 40;
  r.cellsize = 1.0;
  r.origin_x = -20.0;
  r.origin_y = -20.0;
  r.coef = Eigen::MatrixXd::Constant(40, 40, value);
  r.off_coef = value;  // boundary-free fixture
  return r;
}

struct TerrainFixture {
  CtcrwtParams params;
  std::vector<double> obs_times;
  Eigen::Matrix2Xd obs;
  std::vector<double> grid;
};

TerrainFixture small_terrain_fixture() {
  TerrainFixture f;
  f.params.beta = 0.8;
  f.params.sigma = 1.2;
  f.params.eta = 0.7;
  f.params.sigma_l = 2.0;
  f.grid = uniform_grid(2.0, 0.25);
  f.obs_times = {0.5, 1.5};
  f.obs.resize(2, 2);
  f.obs << 1.0, 3.0, 2.0, -1.0;
  return f;
}

// The conditioned chain rebuilt with public pieces, for dense references.
std::pair<lingauss::GaussChain, lingauss::ObservationSeq> terrain_chain(const TerrainFixture& f) {
  lingauss::GaussChain chain;
  const double sv2 = f.params.sigma * f.params.sigma / (2.0 * f.params.beta);
  chain.init_mean = Eigen::Vector4d(0.0, f.obs(0, 0), 0.0, f.obs(1, 0));
  chain.init_cov =
      Eigen::Vector4d(sv2, f.params.sigma_l * f.params.sigma_l, sv2, f.params.sigma_l * f.params.sigma_l)
          .asDiagonal();
  for (std::size_t k = 0; k + 1 < f.grid.size(); ++k) {
    const double dt = f.grid[k + 1] - f.grid[k];
    Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(4, 4);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
    coef.topLeftCorner<2, 2>() = ctcrw_transition(f.params.beta, dt);
    coef.bottomRightCorner<2, 2>() = ctcrw_transition(f.params.beta, dt);
    cov.topLeftCorner<2, 2>() = ctcrw_step_cov(f.params.beta, f.params.sigma, dt);
    cov.bottomRightCorner<2, 2>() = ctcrw_step_cov(f.params.beta, f.params.sigma, dt);
    chain.steps.push_back(lingauss::GaussianTransition{coef, cov});
  }
  lingauss::ObservationSeq seq(f.grid.size());
  Eigen::MatrixXd design(2, 4);
  design << 0, 1, 0, 0, 0, 0, 0, 1;
  for (std::size_t i = 0; i < f.obs_times.size(); ++i) {
    const auto it = std::lower_bound(f.grid.begin(), f.grid.end(), f.obs_times[i] - 1e-9);
    seq[static_cast<std::size_t>(it - f.grid.begin())] = lingauss::Observation{
        design, f.params.eta * f.params.eta * Eigen::Matrix2d::Identity(), f.obs.col(static_cast<Eigen::Index>(i))};
  }
  return {chain, seq};
}

}  // namespace

TEST_CASE("terrain bundle validates inputs") {
  const TerrainFixture f = small_terrain_fixture();
  const TerrainRaster raster = open_raster();
  CHECK_NOTHROW(ctcrwt_fk(f.params, f.obs_times, f.obs, raster, f.grid));

  CHECK_THROWS_AS(ctcrwt_fk(f.params, {0.5, 1.37}, f.obs, raster, f.grid), ModelError);
  CHECK_THROWS_AS(ctcrwt_fk(f.params, {0.5, 0.5}, f.obs, raster, f.grid), ModelError);
  CHECK_THROWS_AS(ctcrwt_fk(f.params, {0.5}, f.obs, raster, f.grid), ModelError);
  const Eigen::Matrix2Xd none(2, 0);
  CHECK_THROWS_AS(ctcrwt_fk(f.params, {}, none, raster, f.grid), ModelError);
  CtcrwtParams bad = f.params;
  bad.beta = 0.0;
  CHECK_THROWS_AS(ctcrwt_fk(bad, f.obs_times, f.obs, raster, f.grid), ModelError);
  bad = f.params;
  bad.eta = 0.0;
  CHECK_THROWS_AS(ctcrwt_fk(bad, f.obs_times, f.obs, raster, f.grid), ModelError);
  TerrainRaster broken = raster;
  broken.coef(3, 3) = 1.5;
  CHECK_THROWS_AS(ctcrwt_fk(f.params, f.obs_times, f.obs, broken, f.grid), ModelError);

  const FkBundle fk = ctcrwt_fk(f.params, f.obs_times, f.obs, raster, f.grid);
  CHECK(fk.times == f.grid);
  CHECK(fk.model->horizon() == static_cast<int>(f.grid.size()));
  CHECK(fk.model->state_dim() == 4);
}

TEST_CASE("terrain proposals are the observation-conditioned chain") {
  const TerrainFixture f = small_terrain_fixture();
  const FkBundle fk = ctcrwt_fk(f.params, f.obs_times, f.obs, open_raster(), f.grid);
  const auto [chain, seq] = terrain_chain(f);
  const test::DenseGaussian post = test::dense_posterior(chain, seq);
  const int t_len = static_cast<int>(f.grid.size());

  // Initial proposal: the smoothing marginal at index 0.
  const test::DenseGaussian m0 = test::marginal_entries(post, test::state_indices(chain, 0));
  const int n = 20000;
  Rng rng(9114);
  Eigen::MatrixXd init(4, n);
  for (int i = 0; i < n; ++i) fk.model->sample_initial(rng, init.col(i));
  const Eigen::Vector4d mean = init.rowwise().mean();
  for (int i = 0; i < 4; ++i) {
    const double sd = std::sqrt(m0.cov(i, i));
    CHECK(std::abs(mean[i] - m0.mean[i]) < 4.5 * sd / std::sqrt(static_cast<double>(n)));
    const double var = (init.row(i).array() - mean[i]).square().sum() / (n - 1.0);
    CHECK(std::abs(var - m0.cov(i, i)) < 5.0 * m0.cov(i, i) * std::sqrt(2.0 / n));
  }

  // One-step and block conditionals against dense conditioning.
  Eigen::VectorXd x(4), y(4);
  for (auto [l, u] : std::vector<std::pair<int, int>>{{0, 1}, {3, 4}, {7, 8}, {2, 7}, {0, 8}}) {
    for (int rep = 0; rep < 5; ++rep) {
      for (int i = 0; i < 4; ++i) {
        x[i] = post.mean[4 * l + i] + rng.normal();
        y[i] = post.mean[4 * u + i] + rng.normal();
      }
      const auto cond = test::condition_entries(post, test::state_indices(chain, l), x);
      std::vector<int> idx;  // state l's four entries are gone, so u shifts down one state
      for (int i = 0; i < 4; ++i) idx.push_back(4 * (u - 1) + i);
      const auto marg = test::marginal_entries(cond, idx);
      CHECK(std::abs(fk.oracle->log_block_density(l, u, x, y) - test::dense_logpdf(marg, y)) <
            1e-8);
    }
  }

  // Forward step sampling follows the same conditionals.
  Eigen::VectorXd x3(4);
  x3 << 0.4, 1.2, -0.3, 1.1;
  const auto cond = test::condition_entries(post, test::state_indices(chain, 3), x3);
  const auto m4 = test::marginal_entries(cond, {12, 13, 14, 15});
  Eigen::MatrixXd step(4, n);
  for (int i = 0; i < n; ++i) fk.model->sample_step(4, x3, rng, step.col(i));
  const Eigen::Vector4d smean = step.rowwise().mean();
  for (int i = 0; i < 4; ++i) {
    const double sd = std::sqrt(m4.cov(i, i));
    CHECK(std::abs(smean[i] - m4.mean[i]) < 4.5 * sd / std::sqrt(static_cast<double>(n)));
  }

  // Every potential is flat on an all-ones raster.
  for (int t : {0, 4, t_len - 1}) {
    CHECK(fk.model->log_potential(t, x3, x3) == 0.0);
  }
}

TEST_CASE("terrain potentials weight the raster by the cell dwell time") {
  const TerrainFixture f = small_terrain_fixture();
  TerrainRaster raster = open_raster(0.5);
  raster.coef(21, 22) = 0.0;  // a forbidden cell at x in [2,3), y in [1,2)
  const FkBundle fk = ctcrwt_fk(f.params, f.obs_times, f.obs, raster, f.grid);

  Eigen::VectorXd x(4);
  x << 0.1, 0.4, -0.2, 0.6;  // location (0.4, 0.6): passable
  const double dt = f.grid[1] - f.grid[0];
  CHECK(fk.model->log_potential(0, x, x) == doctest::Approx(-dt * -std::log(0.5)).epsilon(1e-14));
  CHECK(fk.model->log_potential(static_cast<int>(f.grid.size()) - 1, x, x) == 0.0);
  x << 0.0, 2.5, 0.0, 1.5;  // location (2.5, 1.5): the forbidden cell
  CHECK(fk.model->log_potential(0, x, x) == -kInf);
}

TEST_CASE("terrain trajectories never enter zero-coefficient cells") {
  // Two "lakes" between the observation track and the centre.
  TerrainRaster raster = open_raster(1.0);
  raster.coef.block(14, 24, 6, 6).setZero();  // x in [4,10), y in [-6,0)
  raster.coef.block(22, 8, 5, 7).setZero();   // x in [-12,-5), y in [2,7)

  TerrainFixture f;
  f.params.beta = 0.6;
  f.params.sigma = 3.0;
  f.params.eta = 1.0;
  f.params.sigma_l = 2.0;
  f.grid = uniform_grid(8.0, 0.25);
  f.obs_times = {0.0, 2.0, 4.0, 6.0, 8.0};
  f.obs.resize(2, 5);
  f.obs << 12.0, 0.0, -12.0, 0.0, 12.0, 0.0, 12.0, 0.0, -12.0, 0.0;
  const FkBundle fk = ctcrwt_fk(f.params, f.obs_times, f.obs, raster, f.grid);
  const int t_len = fk.model->horizon();

  const auto hits_lake = [&](const Eigen::MatrixXd& path) {
    for (int t = 0; t < path.cols(); ++t) {
      if (raster.coefficient(path(1, t), path(3, t)) == 0.0) return true;
    }
    return false;
  };

  // The unconstrained proposal does cross the lakes, so the potential is
  // doing real work below.
  Rng rng(9115);
  int forward_hits = 0;
  for (int rep = 0; rep < 400; ++rep) {
    if (hits_lake(forward_path(*fk.model, rng))) ++forward_hits;
  }
  CHECK(forward_hits > 0);

  // Start the chain on a circular detour outside both lakes; every potential
  // along it is finite, which make_reference requires of a starting path.
  Eigen::MatrixXd start(4, t_len);
  for (int t = 0; t < t_len; ++t) {
    const double th = M_PI * fk.times[static_cast<std::size_t>(t)] / 4.0;
    const double w = 14.0 * M_PI / 4.0;
    start.col(t) << -w * std::sin(th), 14.0 * std::cos(th), w * std::cos(th),
        14.0 * std::sin(th);
  }
  for (int t = 0; t < t_len; ++t) {
    REQUIRE(std::isfinite(fk.model->log_potential(t, start.col(t), start.col(t))));
  }

  filters::ReferencePath ref = filters::make_reference(start, 8, rng);
  const std::vector<int> bounds = filters::dense_boundaries(t_len);
  int lake_entries = 0;
  for (int sweep = 0; sweep < 10000; ++sweep) {
    ref = filters::cpf_bbs(*fk.model, *fk.oracle, resampling::Scheme::killing, ref, bounds, 8,
                           rng);
    if (hits_lake(ref.states)) ++lake_entries;
  }
  CHECK(lake_entries == 0);
}
