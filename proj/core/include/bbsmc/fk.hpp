#pragma once

#include <Eigen/Dense>
#include <vector>

#include "bbsmc/random.hpp"

namespace bbsmc {

// A Feynman-Kac model: proposal kernels M_t and potentials G_t on a horizon
// of T time indices 0..T-1. Potentials may depend on the previous state
// (pair potentials); x_prev is ignored at t = 0. log_potential returning
// -inf marks a forbidden state.
class FkModel {
 public:
  virtual ~FkModel() = default;
  virtual int horizon() const = 0;    // T >= 2
  virtual int state_dim() const = 0;
  virtual void sample_initial(Rng& rng, Eigen::Ref<Eigen::VectorXd> x) const = 0;
  // Draw X_t | X_{t-1} = x_prev for t in 1..T-1.
  virtual void sample_step(int t, const Eigen::Ref<const Eigen::VectorXd>& x_prev, Rng& rng,
                           Eigen::Ref<Eigen::VectorXd> x) const = 0;
  virtual double log_potential(int t, const Eigen::Ref<const Eigen::VectorXd>& x_prev,
                               const Eigen::Ref<const Eigen::VectorXd>& x) const = 0;
};

// Block-conditional access to the proposal chain: the density of X_u given
// X_l, and sampling of X_k given (X_{k-1}, X_u) inside a block. For models
// conditioned on data these are conditionals of the smoothing law.
class BridgeOracle {
 public:
  virtual ~BridgeOracle() = default;
  virtual double log_block_density(int l, int u, const Eigen::Ref<const Eigen::VectorXd>& x_l,
                                   const Eigen::Ref<const Eigen::VectorXd>& x_u) const = 0;
  virtual void sample_bridge(int k, const Eigen::Ref<const Eigen::VectorXd>& x_prev, int u,
                             const Eigen::Ref<const Eigen::VectorXd>& x_u, Rng& rng,
                             Eigen::Ref<Eigen::VectorXd> x) const = 0;
  // Optional warm-up of per-block caches for the blocks delimited by
  // `boundaries` (sorted time indices).
  virtual void prepare(const std::vector<int>& boundaries) const { (void)boundaries; }
};

}  // namespace bbsmc
