#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "bbsmc/fk.hpp"
#include "bbsmc/random.hpp"
#include "bbsmc/resampling.hpp"

namespace bbsmc::filters {

// Output of one forward sweep. states[t] is d x N; ancestors(i, k) is the
// time-k parent of particle i at time k+1; log_weights(i, t) holds
// log G_t(parent, state) for particle i (the parent argument is the
// particle's own ancestor; ignored by G_0).
struct ParticleSystem {
  std::vector<Eigen::MatrixXd> states;
  Eigen::MatrixXi ancestors;
  Eigen::MatrixXd log_weights;
  int horizon() const { return static_cast<int>(states.size()); }
  int count() const { return states.empty() ? 0 : static_cast<int>(states[0].cols()); }
  int dim() const { return states.empty() ? 0 : static_cast<int>(states[0].rows()); }
};

// A trajectory together with the slots it occupies in the particle system.
struct ReferencePath {
  Eigen::MatrixXd states;  // d x T
  std::vector<int> slots;  // size T, entries in [0, N)
  int horizon() const { return static_cast<int>(states.cols()); }
};

// Wrap a path with uniformly random slots (the stationary slot law).
ReferencePath make_reference(Eigen::MatrixXd states, int n_particles, Rng& rng);

// Plain particle filter: sample initial states, then resample/propagate/
// weight. Throws DegenerateWeightsError naming the time index if a whole
// weight row vanishes.
ParticleSystem particle_filter(const FkModel& model, resampling::Scheme scheme, int n_particles,
                               Rng& rng);

// log of prod_t (N^{-1} sum_i W_t^{(i)}): the sweep's unbiased estimate of
// the model's normalising constant.
double log_normalising_estimate(const ParticleSystem& ps);

// Follow ancestors backwards from slot b_u at time u down to time l.
// Returns b_{l..u-1} (empty when l == u).
std::vector<int> ancestor_trace(const Eigen::MatrixXi& ancestors, int l, int u, int b_u);

struct CpfResult {
  ParticleSystem system;
  int final_slot = 0;  // categorical draw from the final weight row
};

// Conditional sweep: plants ref.states at ref.slots, conditionally
// resamples so the reference lineage is preserved, and draws the final
// slot. The reference path occupies its slots in system.states on exit.
// Throws if the reference's potential vanishes at any time.
CpfResult cpf(const FkModel& model, resampling::Scheme scheme, const ReferencePath& ref,
              int n_particles, Rng& rng);

// cpf followed by ancestor tracing from the final slot: the classic
// conditional particle filter update with arbitrary reference slots.
ReferencePath cpf_at(const FkModel& model, resampling::Scheme scheme, const ReferencePath& ref,
                     int n_particles, Rng& rng);

struct BridgeResult {
  Eigen::MatrixXd states;  // d x (u - l): new path values for times l..u-1
  std::vector<int> slots;  // new slots for times l..u-1
};

// One block update over times l..u: re-propagates the pool at time l toward
// the pinned endpoint x_u, guided by the block lookahead weights
// (u - l)-th roots of the block density, then backward-samples the new
// sub-path. ref_slots holds the conditioning slots b*_{l..u-1} and
// ref_states the reference values x*_{l+1..u} (d x (u - l) columns). The
// pool, its parents, and its weights at time l come from sys.
BridgeResult bridge_cpf(const FkModel& model, const BridgeOracle& oracle,
                        resampling::Scheme scheme, const ParticleSystem& sys,
                        const std::vector<int>& ref_slots,
                        const Eigen::Ref<const Eigen::MatrixXd>& ref_states, int l, int u,
                        Rng& rng);

// Full update: forward conditional sweep, then block-wise backward pass in
// reverse block order. boundaries must satisfy 0 = b_0 < ... < b_{L-1} = T-1.
ReferencePath cpf_bbs(const FkModel& model, const BridgeOracle& oracle, resampling::Scheme scheme,
                      const ReferencePath& ref, const std::vector<int>& boundaries,
                      int n_particles, Rng& rng);

// log M_t(x | x_prev) of the model's step kernel, t in 1..T-1.
using StepLogDensity =
    std::function<double(int t, const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x)>;

// Bridge access for size-1 blocks only, built from one-step densities.
class OneStepBridge : public BridgeOracle {
 public:
  explicit OneStepBridge(StepLogDensity step) : step_(std::move(step)) {}
  double log_block_density(int l, int u, const Eigen::Ref<const Eigen::VectorXd>& x_l,
                           const Eigen::Ref<const Eigen::VectorXd>& x_u) const override;
  void sample_bridge(int k, const Eigen::Ref<const Eigen::VectorXd>& x_prev, int u,
                     const Eigen::Ref<const Eigen::VectorXd>& x_u, Rng& rng,
                     Eigen::Ref<Eigen::VectorXd> x) const override;

 private:
  StepLogDensity step_;
};

// Backward-sampling update: cpf_bbs with the dense blocking 0,1,...,T-1,
// which needs only the one-step densities.
ReferencePath cpf_bs(const FkModel& model, const StepLogDensity& step_logdensity,
                     resampling::Scheme scheme, const ReferencePath& ref, int n_particles,
                     Rng& rng);

// 0, 1, ..., horizon-1.
std::vector<int> dense_boundaries(int horizon);

}  // namespace bbsmc::filters
