#pragma once

#include <Eigen/Dense>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "bbsmc/fk.hpp"
#include "bbsmc/random.hpp"

namespace bbsmc::lingauss {

struct GaussianDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// One Markov step: x_t | x_s ~ N(coef x_s, cov).
struct GaussianTransition {
  Eigen::MatrixXd coef;
  Eigen::MatrixXd cov;
};

// dX_t = F X_t dt + K dB_t with Gaussian initial condition.
struct LinearSde {
  Eigen::MatrixXd drift;
  Eigen::MatrixXd diffusion;
  Eigen::VectorXd init_mean;
  Eigen::MatrixXd init_cov;
  int dim() const { return static_cast<int>(drift.rows()); }
};

// Conditional law of X_t given X_s for t > s, via the augmented matrix
// exponential expm([[F, KK^T], [0, -F^T]] (t-s)).
GaussianTransition transition(const LinearSde& sde, double s, double t);

// Discrete linear-Gaussian Markov chain on T grid points.
struct GaussChain {
  Eigen::VectorXd init_mean;
  Eigen::MatrixXd init_cov;
  std::vector<GaussianTransition> steps;  // steps[t]: t -> t+1
  int length() const { return static_cast<int>(steps.size()) + 1; }
  int dim() const { return static_cast<int>(init_mean.size()); }
};

GaussChain discretise(const LinearSde& sde, const std::vector<double>& grid);

// Linear-Gaussian observation y = Z x + e, e ~ N(0, H), at one grid point.
struct Observation {
  Eigen::MatrixXd Z;
  Eigen::MatrixXd H;
  Eigen::VectorXd y;
};

// Aligned with the grid; disengaged entries are missing observations.
using ObservationSeq = std::vector<std::optional<Observation>>;

struct KalmanFilterResult {
  GaussChain chain;
  std::vector<Eigen::VectorXd> pred_mean, filt_mean;  // pred[0] = initial law
  std::vector<Eigen::MatrixXd> pred_cov, filt_cov;
  double log_lik = 0.0;
  int length() const { return chain.length(); }
  int dim() const { return chain.dim(); }
};

// Missing entries skip the update step; log_lik accumulates the predictive
// densities of the present observations.
KalmanFilterResult kalman_filter(GaussChain chain, const ObservationSeq& obs);
KalmanFilterResult kalman_filter(const LinearSde& sde, const ObservationSeq& obs,
                                 const std::vector<double>& grid);

struct SmootherOutput {
  KalmanFilterResult filter;
  std::vector<Eigen::VectorXd> mean;  // marginal smoothed means
  std::vector<Eigen::MatrixXd> cov;
  std::vector<Eigen::MatrixXd> gain;  // backward gains J_t, t = 0..T-2
  int length() const { return filter.length(); }
  int dim() const { return filter.dim(); }
};

SmootherOutput kalman_smoother(KalmanFilterResult filter);
SmootherOutput kalman_smoother(const LinearSde& sde, const ObservationSeq& obs,
                               const std::vector<double>& grid);

// Cov(X_s, X_t | data), s <= t, by the backward gain recursion
// Cov(X_s, X_t) = J_s Cov(X_{s+1}, X_t) anchored at the smoothed marginal.
Eigen::MatrixXd smoothed_cross_cov(const SmootherOutput& sm, int s, int t);

// log density of X_u = x_u given X_l = x_l (and the conditioning data).
double block_density(const SmootherOutput& sm, int l, int u,
                     const Eigen::Ref<const Eigen::VectorXd>& x_l,
                     const Eigen::Ref<const Eigen::VectorXd>& x_u);

// Law of X_k given X_{k-1} = x_km1 and X_u = x_u (and the data), k < u.
GaussianDist bridge_sample_dist(const SmootherOutput& sm, int k, int u,
                                const Eigen::Ref<const Eigen::VectorXd>& x_km1,
                                const Eigen::Ref<const Eigen::VectorXd>& x_u);

// Exact joint draw from the smoothing law, backward from the final filtered
// marginal. Returns a d x T matrix of states.
Eigen::MatrixXd sample_smoothing_path(const SmootherOutput& sm, Rng& rng);

// Precomputed conditional of X_u given X_l: mean map, covariance Cholesky.
struct EndConditional {
  int l, u;
  Eigen::VectorXd mu_l, mu_u;
  Eigen::MatrixXd gain;  // d x d
  Eigen::MatrixXd chol;
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x_l,
                     const Eigen::Ref<const Eigen::VectorXd>& x_u) const;
  void sample(const Eigen::Ref<const Eigen::VectorXd>& x_l, Rng& rng,
              Eigen::Ref<Eigen::VectorXd> out) const;
};

// Precomputed conditional of X_k given (X_{k-1}, X_u).
struct MidConditional {
  int k, u;
  Eigen::VectorXd mu_km1, mu_u, mu_k;
  Eigen::MatrixXd gain;  // d x 2d
  Eigen::MatrixXd chol;
  void sample(const Eigen::Ref<const Eigen::VectorXd>& x_prev,
              const Eigen::Ref<const Eigen::VectorXd>& x_u, Rng& rng,
              Eigen::Ref<Eigen::VectorXd> out) const;
};

EndConditional make_end_conditional(const SmootherOutput& sm, int l, int u);
MidConditional make_mid_conditional(const SmootherOutput& sm, int k, int u);

// BridgeOracle over a smoother output, with per-block conditional caches.
// Caches fill lazily under a lock; prepare() additionally builds lock-free
// lookup tables for the blocks of a fixed blocking sequence.
class SmootherBridgeOracle : public BridgeOracle {
 public:
  explicit SmootherBridgeOracle(std::shared_ptr<const SmootherOutput> sm);

  double log_block_density(int l, int u, const Eigen::Ref<const Eigen::VectorXd>& x_l,
                           const Eigen::Ref<const Eigen::VectorXd>& x_u) const override;
  void sample_bridge(int k, const Eigen::Ref<const Eigen::VectorXd>& x_prev, int u,
                     const Eigen::Ref<const Eigen::VectorXd>& x_u, Rng& rng,
                     Eigen::Ref<Eigen::VectorXd> x) const override;
  void prepare(const std::vector<int>& boundaries) const override;

  const SmootherOutput& smoother() const { return *sm_; }

 private:
  const EndConditional& end_conditional(int l, int u) const;
  const MidConditional& mid_conditional(int k, int u) const;

  std::shared_ptr<const SmootherOutput> sm_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<std::int64_t, std::unique_ptr<EndConditional>> end_cache_;
  mutable std::unordered_map<std::int64_t, std::unique_ptr<MidConditional>> mid_cache_;
  // Fast path after prepare(): per time index, the conditional of its block.
  mutable std::vector<const EndConditional*> end_by_lower_;
  mutable std::vector<const MidConditional*> mid_by_time_;
};

}  // namespace bbsmc::lingauss
