#pragma once

#include <Eigen/Dense>

#include "bbsmc/random.hpp"

namespace bbsmc {

// Lower Cholesky factor of a symmetric positive semidefinite matrix.
// Symmetrises the input first; on failure retries once with jitter
// 1e-10 * trace/d added to the diagonal, then throws NumericalError.
Eigen::MatrixXd chol_psd(const Eigen::MatrixXd& m);

// log N(x; mean, L L^T) given the lower Cholesky factor L.
double mvn_logpdf(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& mean,
                  const Eigen::MatrixXd& chol_lower);

// Draw x = mean + L z, z ~ N(0, I).
void mvn_sample(const Eigen::Ref<const Eigen::VectorXd>& mean,
                const Eigen::MatrixXd& chol_lower, Rng& rng,
                Eigen::Ref<Eigen::VectorXd> out);

// Solve a x = b for symmetric PSD a through its (jitter-repaired) Cholesky
// factorisation; never forms an explicit inverse.
Eigen::MatrixXd psd_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// log sum_i exp(x_i); -inf input entries are handled, all -inf gives -inf.
double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd>& x);

}  // namespace bbsmc
