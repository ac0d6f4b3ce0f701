#pragma once

#include <Eigen/Dense>
#include <vector>

namespace bbsmc::diagnostics {

// MCMC output of one scalar functional per time point: samples(i, t) is the
// value at time index t on iteration i. The first burn_in iterations are
// discarded by the summaries below.
struct ChainTrace {
  Eigen::MatrixXd samples;
  int burn_in = 0;
};

// Central credible band at one coverage level: per-time empirical quantiles
// at (1 - prob) / 2 and (1 + prob) / 2.
struct CredibleBand {
  double prob = 0.0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Integrated autocorrelation time by non-overlapping batch means with batch
// size floor(sqrt(n)): batch_size * Var(batch means) / Var(series). Requires
// at least 100 points; a constant series raises NumericalError.
double iact_batch_means(const Eigen::Ref<const Eigen::VectorXd>& series);

// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double prob);

// Inefficiency relative to independent sampling at equal cost: IACT scaled
// by the particle count spent per iteration.
double ire(double iact, int num_particles);

// Fraction of iterations on which each block's lower-boundary state changed.
// tally[j] counts changes for block j; all entries must lie in
// [0, iterations].
Eigen::VectorXd empirical_plu(const Eigen::Ref<const Eigen::VectorXi>& tally, long iterations);

// Add 1 to tally[j] for every block whose lower-boundary state differs
// between two consecutive reference paths. Comparison is exact equality:
// a retained reference state is bit-copied, so no tolerance is involved.
// boundaries is the blocking sequence (first element 0, last T-1); block j
// has lower boundary boundaries[j], so tally has boundaries.size() - 1
// entries.
void tally_boundary_changes(const Eigen::Ref<const Eigen::MatrixXd>& prev,
                            const Eigen::Ref<const Eigen::MatrixXd>& next,
                            const std::vector<int>& boundaries, Eigen::Ref<Eigen::VectorXi> tally);

// Central credible bands of the post-burn-in trace, one per coverage
// probability in (0, 1).
std::vector<CredibleBand> credible_intervals(const ChainTrace& trace,
                                             const std::vector<double>& probs);

}  // namespace bbsmc::diagnostics
