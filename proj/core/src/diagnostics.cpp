#include "bbsmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "bbsmc/errors.hpp"

namespace bbsmc::diagnostics {

double iact_batch_means(const Eigen::Ref<const Eigen::VectorXd>& series) {
  const Eigen::Index n = series.size();
  if (n < 100) throw Error("iact_batch_means: need at least 100 samples");
  if (!series.allFinite()) throw Error("iact_batch_means: series has non-finite values");

  if (series.minCoeff() == series.maxCoeff())
    throw NumericalError("iact_batch_means: constant chain");
  const double mean = series.mean();
  const double var = (series.array() - mean).square().sum() / static_cast<double>(n - 1);

  const Eigen::Index batch = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(n))));
  const Eigen::Index m = n / batch;  // trailing remainder is dropped
  Eigen::VectorXd means(m);
  for (Eigen::Index j = 0; j < m; ++j) means[j] = series.segment(j * batch, batch).mean();
  const double grand = means.mean();
  const double batch_var =
      (means.array() - grand).square().sum() / static_cast<double>(m - 1);
  return static_cast<double>(batch) * batch_var / var;
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw Error("quantile: empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw Error("quantile: probability outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = prob * (static_cast<double>(values.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - std::floor(h)) * (values[lo + 1] - values[lo]);
}

double ire(double iact, int num_particles) {
  if (!(iact > 0.0)) throw Error("ire: iact must be positive");
  if (num_particles < 1) throw Error("ire: particle count must be positive");
  return iact * static_cast<double>(num_particles);
}

Eigen::VectorXd empirical_plu(const Eigen::Ref<const Eigen::VectorXi>& tally, long iterations) {
  if (iterations <= 0) throw Error("empirical_plu: iteration count must be positive");
  for (Eigen::Index j = 0; j < tally.size(); ++j) {
    if (tally[j] < 0 || tally[j] > iterations)
      throw Error("empirical_plu: tally " + std::to_string(j) + " outside [0, iterations]");
  }
  return tally.cast<double>() / static_cast<double>(iterations);
}

void tally_boundary_changes(const Eigen::Ref<const Eigen::MatrixXd>& prev,
                            const Eigen::Ref<const Eigen::MatrixXd>& next,
                            const std::vector<int>& boundaries,
                            Eigen::Ref<Eigen::VectorXi> tally) {
  if (prev.rows() != next.rows() || prev.cols() != next.cols())
    throw Error("tally_boundary_changes: path shapes differ");
  if (boundaries.size() < 2) throw Error("tally_boundary_changes: need at least two boundaries");
  if (tally.size() != static_cast<Eigen::Index>(boundaries.size()) - 1)
    throw Error("tally_boundary_changes: tally size must be one less than boundary count");
  for (std::size_t j = 0; j < boundaries.size(); ++j) {
    if (boundaries[j] < 0 || boundaries[j] >= prev.cols() ||
        (j > 0 && boundaries[j] <= boundaries[j - 1]))
      throw Error("tally_boundary_changes: boundaries must be increasing indices into the path");
  }
  for (std::size_t j = 0; j + 1 < boundaries.size(); ++j) {
    if (prev.col(boundaries[j]) != next.col(boundaries[j]))
      tally[static_cast<Eigen::Index>(j)] += 1;
  }
}

std::vector<CredibleBand> credible_intervals(const ChainTrace& trace,
                                             const std::vector<double>& probs) {
  const Eigen::Index iters = trace.samples.rows();
  const Eigen::Index t_len = trace.samples.cols();
  if (trace.burn_in < 0) throw Error("credible_intervals: negative burn-in");
  if (iters <= trace.burn_in) throw Error("credible_intervals: no iterations after burn-in");
  if (t_len == 0) throw Error("credible_intervals: empty trace");
  for (double p : probs) {
    if (!(p > 0.0 && p < 1.0)) throw Error("credible_intervals: probability outside (0, 1)");
  }

  const Eigen::Index kept = iters - trace.burn_in;
  std::vector<CredibleBand> bands;
  bands.reserve(probs.size());
  for (double p : probs) {
    CredibleBand band;
    band.prob = p;
    band.lower.resize(t_len);
    band.upper.resize(t_len);
    std::vector<double> column(static_cast<std::size_t>(kept));
    for (Eigen::Index t = 0; t < t_len; ++t) {
      for (Eigen::Index i = 0; i < kept; ++i)
        column[static_cast<std::size_t>(i)] = trace.samples(trace.burn_in + i, t);
      band.lower[t] = quantile(column, (1.0 - p) / 2.0);
      band.upper[t] = quantile(column, (1.0 + p) / 2.0);
    }
    bands.push_back(std::move(band));
  }
  return bands;
}

}  // namespace bbsmc::diagnostics
