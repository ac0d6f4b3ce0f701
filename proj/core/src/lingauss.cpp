#include "bbsmc/lingauss.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include "bbsmc/errors.hpp"
#include "bbsmc/gaussian.hpp"

namespace bbsmc::lingauss {

namespace {

Eigen::MatrixXd symmetrised(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

std::int64_t pack_key(int a, int b) {
  return (static_cast<std::int64_t>(a) << 32) | static_cast<std::int64_t>(b);
}

}  // namespace

GaussianTransition transition(const LinearSde& sde, double s, double t) {
  if (!(t > s)) throw Error("transition requires t > s");
  const int d = sde.dim();
  const double dt = t - s;
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  aug.topLeftCorner(d, d) = sde.drift * dt;
  aug.topRightCorner(d, d) = sde.diffusion * sde.diffusion.transpose() * dt;
  aug.bottomRightCorner(d, d) = -sde.drift.transpose() * dt;
  const Eigen::MatrixXd e = aug.exp();
  GaussianTransition out;
  out.coef = e.topLeftCorner(d, d);
  out.cov = symmetrised(e.topRightCorner(d, d) * out.coef.transpose());
  return out;
}

GaussChain discretise(const LinearSde& sde, const std::vector<double>& grid) {
  if (grid.size() < 2) throw Error("grid needs at least two points");
  GaussChain chain;
  chain.init_mean = sde.init_mean;
  chain.init_cov = sde.init_cov;
  chain.steps.reserve(grid.size() - 1);
  for (std::size_t t = 0; t + 1 < grid.size(); ++t) {
    if (!(grid[t + 1] > grid[t])) throw Error("grid not strictly increasing");
    chain.steps.push_back(transition(sde, grid[t], grid[t + 1]));
  }
  return chain;
}

KalmanFilterResult kalman_filter(GaussChain chain, const ObservationSeq& obs) {
  const int t_len = chain.length();
  const int d = chain.dim();
  if (static_cast<int>(obs.size()) != t_len)
    throw Error("observation sequence length does not match the grid");

  KalmanFilterResult out;
  out.pred_mean.resize(t_len);
  out.pred_cov.resize(t_len);
  out.filt_mean.resize(t_len);
  out.filt_cov.resize(t_len);
  out.pred_mean[0] = chain.init_mean;
  out.pred_cov[0] = chain.init_cov;

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  for (int t = 0; t < t_len; ++t) {
    if (obs[t].has_value()) {
      const Observation& o = *obs[t];
      const Eigen::VectorXd resid = o.y - o.Z * out.pred_mean[t];
      const Eigen::MatrixXd s = symmetrised(o.Z * out.pred_cov[t] * o.Z.transpose() + o.H);
      const Eigen::MatrixXd s_chol = chol_psd(s);
      out.log_lik += mvn_logpdf(o.y, o.Z * out.pred_mean[t], s_chol);
      // Gain K = P Z^T S^{-1}; Joseph-form covariance update.
      const Eigen::MatrixXd gain = psd_solve(s, o.Z * out.pred_cov[t]).transpose();
      out.filt_mean[t] = out.pred_mean[t] + gain * resid;
      const Eigen::MatrixXd a = eye - gain * o.Z;
      out.filt_cov[t] =
          symmetrised(a * out.pred_cov[t] * a.transpose() + gain * o.H * gain.transpose());
    } else {
      out.filt_mean[t] = out.pred_mean[t];
      out.filt_cov[t] = out.pred_cov[t];
    }
    if (t + 1 < t_len) {
      const GaussianTransition& st = chain.steps[t];
      out.pred_mean[t + 1] = st.coef * out.filt_mean[t];
      out.pred_cov[t + 1] = symmetrised(st.coef * out.filt_cov[t] * st.coef.transpose() + st.cov);
    }
  }
  out.chain = std::move(chain);
  return out;
}

KalmanFilterResult kalman_filter(const LinearSde& sde, const ObservationSeq& obs,
                                 const std::vector<double>& grid) {
  return kalman_filter(discretise(sde, grid), obs);
}

SmootherOutput kalman_smoother(KalmanFilterResult filter) {
  const int t_len = filter.length();
  SmootherOutput sm;
  sm.mean.resize(t_len);
  sm.cov.resize(t_len);
  sm.gain.resize(t_len > 0 ? t_len - 1 : 0);
  sm.mean[t_len - 1] = filter.filt_mean[t_len - 1];
  sm.cov[t_len - 1] = filter.filt_cov[t_len - 1];
  for (int t = t_len - 2; t >= 0; --t) {
    const Eigen::MatrixXd& coef = filter.chain.steps[t].coef;
    // J_t = Sigma_{t|t} A_t^T Sigma_{t+1|t}^{-1}
    sm.gain[t] = psd_solve(filter.pred_cov[t + 1], coef * filter.filt_cov[t]).transpose();
    sm.mean[t] = filter.filt_mean[t] + sm.gain[t] * (sm.mean[t + 1] - filter.pred_mean[t + 1]);
    sm.cov[t] = symmetrised(filter.filt_cov[t] +
                            sm.gain[t] * (sm.cov[t + 1] - filter.pred_cov[t + 1]) *
                                sm.gain[t].transpose());
  }
  sm.filter = std::move(filter);
  return sm;
}

SmootherOutput kalman_smoother(const LinearSde& sde, const ObservationSeq& obs,
                               const std::vector<double>& grid) {
  return kalman_smoother(kalman_filter(sde, obs, grid));
}

Eigen::MatrixXd smoothed_cross_cov(const SmootherOutput& sm, int s, int t) {
  if (s > t) throw Error("smoothed_cross_cov requires s <= t");
  Eigen::MatrixXd c = sm.cov[t];
  for (int v = t - 1; v >= s; --v) c = sm.gain[v] * c;
  return c;
}

double EndConditional::log_density(const Eigen::Ref<const Eigen::VectorXd>& x_l,
                                   const Eigen::Ref<const Eigen::VectorXd>& x_u) const {
  return mvn_logpdf(x_u, mu_u + gain * (x_l - mu_l), chol);
}

void EndConditional::sample(const Eigen::Ref<const Eigen::VectorXd>& x_l, Rng& rng,
                            Eigen::Ref<Eigen::VectorXd> out) const {
  mvn_sample(mu_u + gain * (x_l - mu_l), chol, rng, out);
}

void MidConditional::sample(const Eigen::Ref<const Eigen::VectorXd>& x_prev,
                            const Eigen::Ref<const Eigen::VectorXd>& x_u, Rng& rng,
                            Eigen::Ref<Eigen::VectorXd> out) const {
  const Eigen::Index d = mu_k.size();
  Eigen::VectorXd dev(2 * d);
  dev.head(d) = x_prev - mu_km1;
  dev.tail(d) = x_u - mu_u;
  mvn_sample(mu_k + gain * dev, chol, rng, out);
}

EndConditional make_end_conditional(const SmootherOutput& sm, int l, int u) {
  if (!(l < u)) throw Error("block requires l < u");
  EndConditional c;
  c.l = l;
  c.u = u;
  c.mu_l = sm.mean[l];
  c.mu_u = sm.mean[u];
  const Eigen::MatrixXd cross = smoothed_cross_cov(sm, l, u);  // Cov(X_l, X_u)
  c.gain = psd_solve(sm.cov[l], cross).transpose();
  c.chol = chol_psd(sm.cov[u] - c.gain * cross);
  return c;
}

MidConditional make_mid_conditional(const SmootherOutput& sm, int k, int u) {
  if (!(k >= 1 && k < u)) throw Error("mid conditional requires 1 <= k < u");
  const int d = sm.dim();
  MidConditional c;
  c.k = k;
  c.u = u;
  c.mu_km1 = sm.mean[k - 1];
  c.mu_u = sm.mean[u];
  c.mu_k = sm.mean[k];
  const Eigen::MatrixXd c_km1_k = smoothed_cross_cov(sm, k - 1, k);
  const Eigen::MatrixXd c_k_u = smoothed_cross_cov(sm, k, u);
  const Eigen::MatrixXd c_km1_u = smoothed_cross_cov(sm, k - 1, u);
  Eigen::MatrixXd joint(2 * d, 2 * d);  // Cov of (X_{k-1}, X_u)
  joint.topLeftCorner(d, d) = sm.cov[k - 1];
  joint.topRightCorner(d, d) = c_km1_u;
  joint.bottomLeftCorner(d, d) = c_km1_u.transpose();
  joint.bottomRightCorner(d, d) = sm.cov[u];
  Eigen::MatrixXd cross(2 * d, d);  // Cov((X_{k-1}, X_u), X_k)
  cross.topRows(d) = c_km1_k;
  cross.bottomRows(d) = c_k_u.transpose();
  c.gain = psd_solve(joint, cross).transpose();
  c.chol = chol_psd(sm.cov[k] - c.gain * cross);
  return c;
}

double block_density(const SmootherOutput& sm, int l, int u,
                     const Eigen::Ref<const Eigen::VectorXd>& x_l,
                     const Eigen::Ref<const Eigen::VectorXd>& x_u) {
  return make_end_conditional(sm, l, u).log_density(x_l, x_u);
}

GaussianDist bridge_sample_dist(const SmootherOutput& sm, int k, int u,
                                const Eigen::Ref<const Eigen::VectorXd>& x_km1,
                                const Eigen::Ref<const Eigen::VectorXd>& x_u) {
  const MidConditional c = make_mid_conditional(sm, k, u);
  const Eigen::Index d = c.mu_k.size();
  Eigen::VectorXd dev(2 * d);
  dev.head(d) = x_km1 - c.mu_km1;
  dev.tail(d) = x_u - c.mu_u;
  GaussianDist out;
  out.mean = c.mu_k + c.gain * dev;
  out.cov = c.chol * c.chol.transpose();
  return out;
}

Eigen::MatrixXd sample_smoothing_path(const SmootherOutput& sm, Rng& rng) {
  const int t_len = sm.length();
  const int d = sm.dim();
  const KalmanFilterResult& f = sm.filter;
  Eigen::MatrixXd path(d, t_len);
  mvn_sample(f.filt_mean[t_len - 1], chol_psd(f.filt_cov[t_len - 1]), rng, path.col(t_len - 1));
  for (int t = t_len - 2; t >= 0; --t) {
    const Eigen::VectorXd mean =
        f.filt_mean[t] + sm.gain[t] * (path.col(t + 1) - f.pred_mean[t + 1]);
    const Eigen::MatrixXd cov =
        f.filt_cov[t] - sm.gain[t] * f.pred_cov[t + 1] * sm.gain[t].transpose();
    mvn_sample(mean, chol_psd(cov), rng, path.col(t));
  }
  return path;
}

SmootherBridgeOracle::SmootherBridgeOracle(std::shared_ptr<const SmootherOutput> sm)
    : sm_(std::move(sm)) {
  end_by_lower_.assign(sm_->length(), nullptr);
  mid_by_time_.assign(sm_->length(), nullptr);
}

const EndConditional& SmootherBridgeOracle::end_conditional(int l, int u) const {
  {
    const EndConditional* fast = end_by_lower_[l];
    if (fast && fast->u == u) return *fast;
  }
  const std::int64_t key = pack_key(l, u);
  {
    std::shared_lock lock(mutex_);
    auto it = end_cache_.find(key);
    if (it != end_cache_.end()) return *it->second;
  }
  auto cond = std::make_unique<EndConditional>(make_end_conditional(*sm_, l, u));
  std::unique_lock lock(mutex_);
  return *end_cache_.try_emplace(key, std::move(cond)).first->second;
}

const MidConditional& SmootherBridgeOracle::mid_conditional(int k, int u) const {
  {
    const MidConditional* fast = mid_by_time_[k];
    if (fast && fast->u == u) return *fast;
  }
  const std::int64_t key = pack_key(k, u);
  {
    std::shared_lock lock(mutex_);
    auto it = mid_cache_.find(key);
    if (it != mid_cache_.end()) return *it->second;
  }
  auto cond = std::make_unique<MidConditional>(make_mid_conditional(*sm_, k, u));
  std::unique_lock lock(mutex_);
  return *mid_cache_.try_emplace(key, std::move(cond)).first->second;
}

double SmootherBridgeOracle::log_block_density(int l, int u,
                                               const Eigen::Ref<const Eigen::VectorXd>& x_l,
                                               const Eigen::Ref<const Eigen::VectorXd>& x_u) const {
  return end_conditional(l, u).log_density(x_l, x_u);
}

void SmootherBridgeOracle::sample_bridge(int k, const Eigen::Ref<const Eigen::VectorXd>& x_prev,
                                         int u, const Eigen::Ref<const Eigen::VectorXd>& x_u,
                                         Rng& rng, Eigen::Ref<Eigen::VectorXd> x) const {
  mid_conditional(k, u).sample(x_prev, x_u, rng, x);
}

void SmootherBridgeOracle::prepare(const std::vector<int>& boundaries) const {
  // Build every block conditional up front, then publish lock-free lookup
  // tables. Call before any concurrent use.
  for (std::size_t b = 0; b + 1 < boundaries.size(); ++b) {
    const int l = boundaries[b];
    const int u = boundaries[b + 1];
    const EndConditional& end = end_conditional(l, u);
    std::vector<const MidConditional*> mids;
    for (int k = l + 1; k < u; ++k) mids.push_back(&mid_conditional(k, u));
    std::unique_lock lock(mutex_);
    end_by_lower_[l] = &end;
    for (const MidConditional* m : mids) mid_by_time_[m->k] = m;
  }
}

}  // namespace bbsmc::lingauss
