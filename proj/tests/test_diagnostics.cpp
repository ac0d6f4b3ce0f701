#include "bbsmc/diagnostics.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "bbsmc/errors.hpp"
#include "bbsmc/filters.hpp"
#include "bbsmc/random.hpp"
#include "doctest.h"
#include "support/gauss_fk.hpp"

using namespace bbsmc;
using namespace bbsmc::diagnostics;

namespace {

// Stationary AR(1) series with unit marginal variance.
Eigen::VectorXd ar1_series(int n, double rho, Rng& rng) {
  Eigen::VectorXd x(n);
  x[0] = rng.normal();
  const double sd = std::sqrt(1.0 - rho * rho);
  for (int i = 1; i < n; ++i) x[i] = rho * x[i - 1] + sd * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("batch-means iact is consistent on ar(1) chains") {
  const int n = 100000;
  Rng rng(7301);
  for (double rho : {0.0, 0.5, 0.9}) {
    const double truth = (1.0 + rho) / (1.0 - rho);
    const double got = iact_batch_means(ar1_series(n, rho, rng));
    CAPTURE(rho);
    CHECK(std::abs(got / truth - 1.0) < 0.15);
  }
  // The module's own headline examples, at their stated tolerances.
  CHECK(std::abs(iact_batch_means(ar1_series(n, 0.0, rng)) - 1.0) < 0.1);
  CHECK(std::abs(iact_batch_means(ar1_series(n, 0.5, rng)) / 3.0 - 1.0) < 0.1);
}

TEST_CASE("batch-means iact rejects short and constant input") {
  Rng rng(7302);
  CHECK_THROWS_AS(iact_batch_means(Eigen::VectorXd::Random(99)), Error);
  CHECK_NOTHROW(iact_batch_means(ar1_series(100, 0.0, rng)));
  CHECK_THROWS_AS(iact_batch_means(Eigen::VectorXd::Constant(500, 3.7)), NumericalError);
  Eigen::VectorXd bad = ar1_series(200, 0.0, rng);
  bad[17] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(iact_batch_means(bad), Error);
}

TEST_CASE("ire scales iact by the particle count") {
  CHECK(ire(1.0, 1) == 1.0);
  CHECK(ire(3.0, 4) == 12.0);
  CHECK(ire(2.5, 8) < ire(3.5, 8));  // ordering preserved under a common N
  CHECK_THROWS_AS(ire(0.0, 4), Error);
  CHECK_THROWS_AS(ire(-1.0, 4), Error);
  CHECK_THROWS_AS(ire(1.0, 0), Error);
}

TEST_CASE("empirical plu divides tallies by the iteration count") {
  Eigen::VectorXi tally(3);
  tally << 0, 250, 1000;
  const Eigen::VectorXd plu = empirical_plu(tally, 1000);
  CHECK(plu[0] == 0.0);   // never-changing block
  CHECK(plu[1] == 0.25);
  CHECK(plu[2] == 1.0);   // always-changing block
  CHECK((plu.array() >= 0.0).all());
  CHECK((plu.array() <= 1.0).all());

  CHECK_THROWS_AS(empirical_plu(tally, 0), Error);
  tally[1] = -1;
  CHECK_THROWS_AS(empirical_plu(tally, 1000), Error);
  tally[1] = 1001;
  CHECK_THROWS_AS(empirical_plu(tally, 1000), Error);
}

TEST_CASE("boundary-change tallies use exact state equality") {
  Eigen::MatrixXd prev(2, 5);
  prev << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  Eigen::MatrixXd next = prev;
  const std::vector<int> boundaries{0, 2, 4};
  Eigen::VectorXi tally = Eigen::VectorXi::Zero(2);

  tally_boundary_changes(prev, next, boundaries, tally);
  CHECK(tally[0] == 0);
  CHECK(tally[1] == 0);

  next(1, 2) = std::nextafter(next(1, 2), 1e308);  // one ulp counts as a change
  tally_boundary_changes(prev, next, boundaries, tally);
  CHECK(tally[0] == 0);
  CHECK(tally[1] == 1);

  next(0, 1) = -99.0;  // index 1 is not a lower boundary: no effect
  tally_boundary_changes(prev, next, boundaries, tally);
  CHECK(tally[0] == 0);
  CHECK(tally[1] == 2);

  Eigen::VectorXi wrong = Eigen::VectorXi::Zero(3);
  CHECK_THROWS_AS(tally_boundary_changes(prev, next, boundaries, wrong), Error);
  CHECK_THROWS_AS(tally_boundary_changes(prev, next.leftCols(4), boundaries, tally), Error);
  CHECK_THROWS_AS(tally_boundary_changes(prev, next, {0, 9}, tally.head(1)), Error);
  CHECK_THROWS_AS(tally_boundary_changes(prev, next, {0}, tally.head(0)), Error);
}

TEST_CASE("single-particle block updates never move the reference") {
  // A pool holding only the planted path must return it bit-identically,
  // so the change tallies (and hence the empirical PLU) are exactly zero.
  const int t_len = 12;
  const auto chain = test::ar1_chain(t_len, 0.8, 0.5, 0.0, 1.0);
  std::vector<double> y(t_len);
  Rng rng(7303);
  for (auto& v : y) v = rng.normal();
  const test::GaussChainFk model(chain, test::scalar_obs(y, 1.0));
  const auto oracle = test::proposal_bridge(model);
  oracle->prepare({0, 2, 7, t_len - 1});

  Eigen::MatrixXd path(1, t_len);
  for (int t = 0; t < t_len; ++t) path(0, t) = rng.normal();

  filters::ParticleSystem sys;
  sys.states.assign(static_cast<std::size_t>(t_len), Eigen::MatrixXd(1, 1));
  for (int t = 0; t < t_len; ++t) sys.states[static_cast<std::size_t>(t)](0, 0) = path(0, t);
  sys.ancestors = Eigen::MatrixXi::Zero(1, t_len - 1);
  sys.log_weights.resize(1, t_len);
  for (int t = 0; t < t_len; ++t)
    sys.log_weights(0, t) = model.log_potential(t, path.col(std::max(t - 1, 0)), path.col(t));

  const std::vector<int> boundaries{0, 2, 7, t_len - 1};
  Eigen::VectorXi tally = Eigen::VectorXi::Zero(3);
  Eigen::MatrixXd updated = path;
  for (int it = 0; it < 50; ++it) {
    for (std::size_t j = boundaries.size() - 1; j >= 1; --j) {
      const int l = boundaries[j - 1], u = boundaries[j];
      const std::vector<int> slots(static_cast<std::size_t>(u - l), 0);
      const auto block = filters::bridge_cpf(model, *oracle, resampling::Scheme::killing, sys,
                                             slots, path.middleCols(l + 1, u - l), l, u, rng);
      CHECK(block.states == path.middleCols(l, u - l));
      CHECK(block.slots == slots);
      updated.middleCols(l, u - l) = block.states;
    }
    tally_boundary_changes(path, updated, boundaries, tally);
  }
  CHECK(tally == Eigen::VectorXi::Zero(3));
  CHECK(empirical_plu(tally, 50) == Eigen::VectorXd::Zero(3));
}

TEST_CASE("quantile interpolates order statistics") {
  const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  CHECK(quantile(v, 0.5) == 2.5);
  CHECK(quantile(v, 0.25) == 1.75);
  CHECK(quantile({5.5}, 0.7) == 5.5);
  CHECK_THROWS_AS(quantile({}, 0.5), Error);
  CHECK_THROWS_AS(quantile(v, 1.5), Error);
}

TEST_CASE("credible intervals are central empirical quantile bands") {
  ChainTrace trace;
  trace.burn_in = 50;
  const int iters = 20050, t_len = 4;
  trace.samples.resize(iters, t_len);
  Rng rng(7304);
  for (int t = 0; t < t_len; ++t) {
    const double mu = 0.5 * t, sd = 1.0 + 0.25 * t;
    for (int i = 0; i < iters; ++i)
      trace.samples(i, t) = (i < trace.burn_in) ? 1e6 : mu + sd * rng.normal();
  }

  const auto bands = credible_intervals(trace, {0.5, 0.95});
  REQUIRE(bands.size() == 2);
  CHECK(bands[0].prob == 0.5);
  CHECK(bands[1].prob == 0.95);
  const double n_kept = iters - trace.burn_in;
  for (int t = 0; t < t_len; ++t) {
    const double mu = 0.5 * t, sd = 1.0 + 0.25 * t;
    // Quantile MC error ~ sd * sqrt(p(1-p)/n) / density; generous 6x slack.
    const double tol = 6.0 * sd / std::sqrt(n_kept / 10.0);
    CHECK(std::abs(bands[1].lower[t] - (mu - 1.96 * sd)) < tol);
    CHECK(std::abs(bands[1].upper[t] - (mu + 1.96 * sd)) < tol);
    CHECK(std::abs(bands[0].lower[t] - (mu - 0.674 * sd)) < tol);
    CHECK(std::abs(bands[0].upper[t] - (mu + 0.674 * sd)) < tol);
    // Burn-in samples (planted at 1e6) must not leak into the bands.
    CHECK(bands[1].upper[t] < 100.0);
  }

  // A symmetric sample set gives an exactly symmetric band.
  ChainTrace sym;
  sym.burn_in = 0;
  sym.samples.resize(5, 1);
  sym.samples << -2.0, -1.0, 0.0, 1.0, 2.0;
  const auto sband = credible_intervals(sym, {0.5});
  CHECK(sband[0].lower[0] == -sband[0].upper[0]);

  ChainTrace flat;
  flat.burn_in = 2;
  flat.samples = Eigen::MatrixXd::Constant(40, 3, 1.25);
  for (const auto& band : credible_intervals(flat, {0.5, 0.95})) {
    CHECK(band.lower == Eigen::VectorXd::Constant(3, 1.25));
    CHECK(band.upper == Eigen::VectorXd::Constant(3, 1.25));
  }

  ChainTrace bad = flat;
  bad.burn_in = 40;
  CHECK_THROWS_AS(credible_intervals(bad, {0.5}), Error);
  bad.burn_in = -1;
  CHECK_THROWS_AS(credible_intervals(bad, {0.5}), Error);
  CHECK_THROWS_AS(credible_intervals(flat, {0.0}), Error);
  CHECK_THROWS_AS(credible_intervals(flat, {1.0}), Error);
}
