#include "bbsmc/gaussian.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "bbsmc/errors.hpp"

namespace bbsmc {

Eigen::MatrixXd chol_psd(const Eigen::MatrixXd& m) {
  const Eigen::Index d = m.rows();
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const double jitter = 1e-10 * sym.trace() / static_cast<double>(d);
  sym.diagonal().array() += jitter;
  llt.compute(sym);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  throw NumericalError("covariance not positive definite after jitter");
}

double mvn_logpdf(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& mean,
                  const Eigen::MatrixXd& chol_lower) {
  const Eigen::Index d = x.size();
  Eigen::VectorXd z = chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  const double log_det = chol_lower.diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - log_det -
         0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
}

void mvn_sample(const Eigen::Ref<const Eigen::VectorXd>& mean,
                const Eigen::MatrixXd& chol_lower, Rng& rng,
                Eigen::Ref<Eigen::VectorXd> out) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  out = mean + chol_lower.triangularView<Eigen::Lower>() * z;
}

Eigen::MatrixXd psd_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd l = chol_psd(a);
  Eigen::MatrixXd x = l.triangularView<Eigen::Lower>().solve(b);
  l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd>& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x - m).exp().sum());
}

}  // namespace bbsmc
