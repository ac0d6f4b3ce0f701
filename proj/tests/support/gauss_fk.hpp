#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "bbsmc/fk.hpp"
#include "bbsmc/gaussian.hpp"
#include "bbsmc/lingauss.hpp"

namespace bbsmc::test {

// FK model with linear-Gaussian chain proposals and Gaussian observation
// potentials (missing observation => potential 1). Its target is the
// chain's posterior, so the exact smoother doubles as ground truth.
class GaussChainFk : public FkModel {
 public:
  GaussChainFk(lingauss::GaussChain chain, lingauss::ObservationSeq obs)
      : chain_(std::move(chain)), obs_(std::move(obs)) {
    init_chol_ = chol_psd(chain_.init_cov);
    step_chol_.reserve(chain_.steps.size());
    for (const auto& st : chain_.steps) step_chol_.push_back(chol_psd(st.cov));
    obs_chol_.resize(obs_.size());
    for (std::size_t t = 0; t < obs_.size(); ++t)
      if (obs_[t].has_value()) obs_chol_[t] = chol_psd(obs_[t]->H);
  }

  int horizon() const override { return chain_.length(); }
  int state_dim() const override { return chain_.dim(); }

  void sample_initial(Rng& rng, Eigen::Ref<Eigen::VectorXd> x) const override {
    mvn_sample(chain_.init_mean, init_chol_, rng, x);
  }

  void sample_step(int t, const Eigen::Ref<const Eigen::VectorXd>& x_prev, Rng& rng,
                   Eigen::Ref<Eigen::VectorXd> x) const override {
    mvn_sample(chain_.steps[t - 1].coef * x_prev, step_chol_[t - 1], rng, x);
  }

  double log_potential(int t, const Eigen::Ref<const Eigen::VectorXd>&,
                       const Eigen::Ref<const Eigen::VectorXd>& x) const override {
    if (!obs_[t].has_value()) return 0.0;
    return mvn_logpdf(obs_[t]->y, obs_[t]->Z * x, obs_chol_[t]);
  }

  double step_log_density(int t, const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x) const {
    return mvn_logpdf(x, chain_.steps[t - 1].coef * x_prev, step_chol_[t - 1]);
  }

  const lingauss::GaussChain& chain() const { return chain_; }
  const lingauss::ObservationSeq& observations() const { return obs_; }

 private:
  lingauss::GaussChain chain_;
  lingauss::ObservationSeq obs_;
  Eigen::MatrixXd init_chol_;
  std::vector<Eigen::MatrixXd> step_chol_;
  std::vector<Eigen::MatrixXd> obs_chol_;
};

// Exact smoothing law of the model's target.
inline lingauss::SmootherOutput exact_smoother(const GaussChainFk& m) {
  return lingauss::kalman_smoother(lingauss::kalman_filter(m.chain(), m.observations()));
}

// Bridge oracle over the proposal chain alone (no observations): block
// densities are multi-step transition densities of the proposals.
inline std::shared_ptr<lingauss::SmootherBridgeOracle> proposal_bridge(const GaussChainFk& m) {
  auto sm = std::make_shared<lingauss::SmootherOutput>(lingauss::kalman_smoother(
      lingauss::kalman_filter(m.chain(), lingauss::ObservationSeq(m.horizon()))));
  return std::make_shared<lingauss::SmootherBridgeOracle>(std::move(sm));
}

// Stationary AR(1) chain: x_t = phi x_{t-1} + N(0, q), started at N(m0, p0).
inline lingauss::GaussChain ar1_chain(int t_len, double phi, double q, double m0, double p0) {
  lingauss::GaussChain chain;
  chain.init_mean = Eigen::VectorXd::Constant(1, m0);
  chain.init_cov = Eigen::MatrixXd::Constant(1, 1, p0);
  lingauss::GaussianTransition st;
  st.coef = Eigen::MatrixXd::Constant(1, 1, phi);
  st.cov = Eigen::MatrixXd::Constant(1, 1, q);
  chain.steps.assign(t_len - 1, st);
  return chain;
}

// Scalar unit-map observations y_t with noise variance h at every time.
inline lingauss::ObservationSeq scalar_obs(const std::vector<double>& y, double h) {
  lingauss::ObservationSeq obs(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    lingauss::Observation o;
    o.Z = Eigen::MatrixXd::Constant(1, 1, 1.0);
    o.H = Eigen::MatrixXd::Constant(1, 1, h);
    o.y = Eigen::VectorXd::Constant(1, y[t]);
    obs[t] = std::move(o);
  }
  return obs;
}

}  // namespace bbsmc::test
