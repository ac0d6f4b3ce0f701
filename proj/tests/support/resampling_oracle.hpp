#pragma once

// Exact finite enumeration of resampling laws for small N. Used to check
// the conditional resamplings against their defining property: the law must
// equal the conditional law of the slot-shifted unconditional scheme given
// that slot k receives index i. Everything here is computed analytically
// (products over atoms, exact subinterval integration over the systematic
// grid offset), independently of the library's samplers.

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <vector>

#include "bbsmc/random.hpp"

namespace oracle {

// Probability mass on ancestor vectors.
using Law = std::map<std::vector<int>, double>;

double total_mass(const Law& law);
double tv_distance(const Law& p, const Law& q);

// Exact law of multinomial resampling (product of categoricals).
Law multinomial_law(const Eigen::ArrayXd& g);

// Exact law of killing resampling (independent per-slot survive-or-redraw).
Law killing_law(const Eigen::ArrayXd& g);

// Exact law of plain systematic resampling, by exact integration over the
// single uniform offset.
Law systematic_plain_law(const Eigen::ArrayXd& g);

// Exact law of systematic resampling with mean partition order, by exact
// integration over the single uniform offset.
Law systematic_mp_law(const Eigen::ArrayXd& g);

// Mixture over a uniform cyclic slot shift: A^(j) = Abar^(sigma_S(j)).
Law shifted(const Law& base);

// Conditional law given slot k receives index i; *marginal (if non-null)
// receives P(A^(k) = i) before normalisation.
Law conditional(const Law& base, int k, int i, double* marginal = nullptr);

// Exact laws of the implemented conditional algorithms, mirrored
// analytically (enumeration over anchor draws / exact offset integration).
Law cond_killing_impl_law(const Eigen::ArrayXd& g, int i, int k);
Law cond_systematic_mp_impl_law(const Eigen::ArrayXd& g, int i, int k);

// Empirical law from repeated draws of a sampler.
Law empirical_law(const std::function<std::vector<int>(bbsmc::Rng&)>& sampler, bbsmc::Rng& rng,
                  int draws);

}  // namespace oracle
