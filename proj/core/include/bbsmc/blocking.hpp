#pragma once

// Automatic blocking-sequence selection for the bridge-backward smoother.
//
// The tuner scores a candidate block (l, u) by the probability that one bridge
// pass replaces the state at the block's lower boundary ("PLU", probability of
// a lower-boundary update).  That probability is approximated from a single
// particle-filter state by combining two regimes:
//   - plu_m: short blocks, driven by the block transition densities,
//   - plu_g: long blocks, driven by the per-step resampling rates,
// interpolated by plu_hat.  choose_blocking evaluates dyadic candidate
// sequences this way and assembles the best-scoring block sizes into one
// blocking sequence.

#include <bbsmc/filters.hpp>
#include <bbsmc/fk.hpp>
#include <bbsmc/random.hpp>

#include <Eigen/Dense>

#include <vector>

namespace bbsmc::blocking {

// Boundaries of a blocking sequence, 0-based: 0 = b_0 < b_1 < ... < b_last = T-1.
using Boundaries = std::vector<int>;

// Per-candidate, per-block PLU estimates averaged over tuning replicates.
struct PluTable {
    std::vector<Boundaries> candidates;
    std::vector<std::vector<double>> values;  // values[s][i]: block i of candidate s
    int requested_runs = 0;
    int failed_runs = 0;     // replicates skipped because the filter degenerated
    long clamp_events = 0;   // negative survival factors clamped to zero in plu_g
};

// Probability that a conditional systematic resampling with mean-partitioned
// weights moves at least one particle, divided by N: 0.5 * sum_i |w_i - 1/N|.
// Requires w normalised to within 1e-9.
double resampling_rate(const Eigen::VectorXd& w);

// Per-step rates for the resampling events of a filter sweep, computed from
// the normalised weight columns 0..T-2.
std::vector<double> resampling_rates(const filters::ParticleSystem& sys);

// Short-block PLU: 1 - d[ref] / sum_j d[j], where d[j] is the block transition
// density from pool particle j to the traced reference endpoint.
double plu_m(const Eigen::VectorXd& block_densities, int ref_index);

// Short-block PLU when the pool size differs from the target particle count:
// with c = ref_density / typical_density, returns 1 - c / (c + n_target - 1).
double plu_m_alt(double ref_density, double typical_density, int n_target);

// Long-block PLU: (1 - 1/n) * prod_k (1 - p[k] * n / (n-1)^2).  A factor that
// would go negative (possible when the rates come from a larger pool than n)
// is clamped to zero; *clamped reports whether that happened.
double plu_g(const std::vector<double>& p, int n, bool* clamped = nullptr);

// Interpolation of the two regimes: g * m / (1 - 1/n), clamped to [0, 1].
// Exactly reproduces m when g == 1 - 1/n and g when m == 1 - 1/n.
double plu_hat(double plu_g_val, double plu_m_val, int n);

// Per-block PLU estimates for every candidate, from one filter state and a
// traced reference path.  When n_target equals the pool size the densities
// enter directly (plu_m); otherwise the typical-density form (plu_m_alt) is
// used with the mean over non-reference particles.  clamp_events, if given,
// accumulates the number of clamped plu_g factors.
std::vector<std::vector<double>> estimate_plu(const std::vector<Boundaries>& candidates,
                                              const filters::ParticleSystem& sys,
                                              const std::vector<int>& ref_slots,
                                              const BridgeOracle& oracle,
                                              int n_target,
                                              long* clamp_events = nullptr);

// Runs n_runs particle filters (systematic resampling with mean partition,
// n_pool particles) with a final ancestor trace, scores every candidate block
// with estimate_plu, and averages over the replicates.  Replicate j draws from
// rng.substream(j), so results do not depend on evaluation order.  Replicates
// whose filter degenerates are skipped and counted; if fewer than half
// succeed, throws.
PluTable evaluate_blocking_candidates(const std::vector<Boundaries>& candidates,
                                      const FkModel& model,
                                      const BridgeOracle& oracle,
                                      int n_pool,
                                      int n_target,
                                      int n_runs,
                                      Rng& rng);

// Candidate sequences with constant block size 2^(i-1) for i = 1..p*+1, where
// p* is the largest p with 2^p <= horizon-1; the final block of a sequence may
// be shorter.  Ordered from dense (size 1) to coarsest.
std::vector<Boundaries> dyadic_candidate_blockings(int horizon);

// Continuous-time variant: for each blocktime, boundaries advance from the
// current grid point to the largest grid point within the blocktime (at least
// one step).  Duplicate sequences are dropped; order follows the given
// blocktimes, which should be increasing.
std::vector<Boundaries> blocktime_candidate_blockings(const std::vector<double>& times,
                                                      const std::vector<double>& blocktimes);

// Picks one blocking sequence from scored candidates: larger block sizes are
// considered first, and a block (l, b) is accepted iff b attains the maximal
// score among all candidate blocks with lower boundary l (ties favour the
// larger size).  Accepted blocks normally tile [0, T-1]; a boundary left
// uncovered by removals falls back to the smallest candidate block there.
Boundaries select_blocking(const PluTable& table);

// Full tuner: dyadic candidates, scored with evaluate_blocking_candidates,
// reduced with select_blocking.
Boundaries choose_blocking(const FkModel& model,
                           const BridgeOracle& oracle,
                           int n_pool,
                           int n_target,
                           int n_runs,
                           Rng& rng);

// As above with explicit candidate sequences (e.g. blocktime-derived).
Boundaries choose_blocking(const FkModel& model,
                           const BridgeOracle& oracle,
                           const std::vector<Boundaries>& candidates,
                           int n_pool,
                           int n_target,
                           int n_runs,
                           Rng& rng);

// Reference system behind plu_g: n particles, one immortal reference; at step
// k a single resampling event occurs with probability p_r[k], killing a
// uniformly chosen non-reference particle and copying a uniformly chosen
// survivor.  Expected number of particles not descended from the reference
// after the p_r.size() steps: (n-1) * prod_k (1 - p_r[k] / (n-1)^2).
double artificial_system_expected_healthy(const std::vector<double>& p_r, int n);

// One draw of the same system; returns the final count of particles that are
// not the reference or one of its descendants.
int artificial_system_simulate(const std::vector<double>& p_r, int n, Rng& rng);

}  // namespace bbsmc::blocking
