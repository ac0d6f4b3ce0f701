#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "bbsmc/random.hpp"

namespace bbsmc::resampling {

enum class Scheme { multinomial, killing, systematic, systematic_mean_partition };

Scheme scheme_from_string(const std::string& name);
std::string to_string(Scheme s);

// Throws DegenerateWeightsError unless all entries are finite, nonnegative
// and at least one is positive.
void validate_weights(const Eigen::Ref<const Eigen::ArrayXd>& g);

// Generalised inverse CDF: smallest index whose cumulative normalised weight
// reaches u, for u in (0, 1]. Never selects a zero-weight index.
int inverse_cdf(const Eigen::Ref<const Eigen::ArrayXd>& g, double u);

// One draw from Categorical(g / sum g); consumes one positive uniform fed
// straight into inverse_cdf.
int categorical(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng);

// Slot shift by s positions: i -> (i + s) mod n.
inline int cyclic_shift(int i, int s, int n) {
  int r = (i + s) % n;
  return r < 0 ? r + n : r;
}

// Permutation of {0..N-1} stored with its inverse: inv[fwd[j]] == j.
struct Permutation {
  std::vector<int> fwd;
  std::vector<int> inv;
};

// Reorders indices so that every weight <= mean(w) comes before every weight
// > mean(w); ties stay on the small side. Single Hoare-style partition pass.
Permutation mean_partition_order(const Eigen::Ref<const Eigen::ArrayXd>& w);

// Unconditional resamplings. Each fills `a` with N = g.size() ancestor
// indices. All satisfy E[#{i : a[i] = j}] = N w_j.
//
// Uniform draw budgets, in order of consumption:
//   multinomial:  N inverse-CDF uniforms, slots 0..N-1.
//   killing:      per slot i, one survival uniform, then one categorical
//                 uniform only if slot i was killed.
//   systematic:   one positive uniform.
//   systematic_mean_partition: one positive uniform (the partition itself is
//                 deterministic).
void multinomial(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a);
void killing(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a);
void systematic(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a);
void systematic_mean_partition(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a);
void resample(Scheme s, const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a);

// Conditional resamplings: the output always satisfies a[k] = i, and the law
// is the conditional law of a valid resampling given that event. Requires
// g[i] > 0. Scheme::systematic has no conditional version.
//
// Draw order:
//   cond_multinomial: one categorical uniform per slot j != k, j ascending.
//   cond_killing:     full unconditional killing pass, then one uniform to
//                     pick the anchor slot J.
//   cond_systematic_mean_partition: acceptance uniform for the copy-count
//                     branch, the grid offset uniform, then one uniform
//                     integer for the slot rotation.
void cond_multinomial(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng, std::vector<int>& a);
void cond_killing(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng, std::vector<int>& a);
void cond_systematic_mean_partition(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng,
                                    std::vector<int>& a);
void cond_resample(Scheme s, const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng,
                   std::vector<int>& a);

}  // namespace bbsmc::resampling
