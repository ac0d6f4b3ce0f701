#include "bbsmc/filters.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "bbsmc/errors.hpp"
#include "bbsmc/gaussian.hpp"

namespace bbsmc::filters {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Normalised weights exp(lw - max lw); throws if the whole row vanishes.
Eigen::ArrayXd weights_from_log(const Eigen::Ref<const Eigen::ArrayXd>& lw, int t) {
  const double m = lw.maxCoeff();
  if (!std::isfinite(m))
    throw DegenerateWeightsError("all particle weights vanish at time " + std::to_string(t));
  return (lw - m).exp();
}

void require_reference_alive(double log_w, int t) {
  if (!(log_w > kNegInf))
    throw Error("reference path has zero potential at time " + std::to_string(t));
}

void check_ref(const FkModel& model, const ReferencePath& ref, int n) {
  if (n < 2) throw Error("conditional sweep needs at least two particles");
  if (ref.horizon() != model.horizon() || static_cast<int>(ref.slots.size()) != model.horizon())
    throw Error("reference path length does not match the model horizon");
  if (ref.states.rows() != model.state_dim()) throw Error("reference state dimension mismatch");
  for (int s : ref.slots)
    if (s < 0 || s >= n) throw Error("reference slot out of range");
}

}  // namespace

ReferencePath make_reference(Eigen::MatrixXd states, int n_particles, Rng& rng) {
  ReferencePath ref;
  ref.slots.resize(states.cols());
  for (int& s : ref.slots) s = rng.uniform_int(n_particles);
  ref.states = std::move(states);
  return ref;
}

ParticleSystem particle_filter(const FkModel& model, resampling::Scheme scheme, int n_particles,
                               Rng& rng) {
  if (n_particles < 1) throw Error("particle_filter needs at least one particle");
  const int t_len = model.horizon();
  const int d = model.state_dim();
  const int n = n_particles;

  ParticleSystem ps;
  ps.states.assign(t_len, Eigen::MatrixXd(d, n));
  ps.ancestors.resize(n, t_len - 1);
  ps.log_weights.resize(n, t_len);

  for (int i = 0; i < n; ++i) model.sample_initial(rng, ps.states[0].col(i));
  for (int i = 0; i < n; ++i)
    ps.log_weights(i, 0) = model.log_potential(0, ps.states[0].col(i), ps.states[0].col(i));

  std::vector<int> a(n);
  for (int k = 0; k + 1 < t_len; ++k) {
    const Eigen::ArrayXd g = weights_from_log(ps.log_weights.col(k).array(), k);
    resampling::resample(scheme, g, rng, a);
    for (int i = 0; i < n; ++i) {
      ps.ancestors(i, k) = a[i];
      model.sample_step(k + 1, ps.states[k].col(a[i]), rng, ps.states[k + 1].col(i));
    }
    for (int i = 0; i < n; ++i)
      ps.log_weights(i, k + 1) =
          model.log_potential(k + 1, ps.states[k].col(a[i]), ps.states[k + 1].col(i));
  }
  // Surface a fully degenerate final row here rather than as a -inf estimate.
  weights_from_log(ps.log_weights.col(t_len - 1).array(), t_len - 1);
  return ps;
}

double log_normalising_estimate(const ParticleSystem& ps) {
  double acc = 0.0;
  const double log_n = std::log(static_cast<double>(ps.count()));
  for (int t = 0; t < ps.horizon(); ++t)
    acc += log_sum_exp(ps.log_weights.col(t).array()) - log_n;
  return acc;
}

std::vector<int> ancestor_trace(const Eigen::MatrixXi& ancestors, int l, int u, int b_u) {
  if (l < 0 || u < l) throw Error("ancestor_trace needs 0 <= l <= u");
  if (u > l && u - 1 >= ancestors.cols()) throw Error("ancestor_trace range exceeds stored steps");
  if (b_u < 0 || (ancestors.rows() > 0 && b_u >= ancestors.rows()))
    throw Error("ancestor_trace slot out of range");
  std::vector<int> out(u - l);
  int b = b_u;
  for (int v = u - 1; v >= l; --v) {
    b = ancestors(b, v);
    out[v - l] = b;
  }
  return out;
}

CpfResult cpf(const FkModel& model, resampling::Scheme scheme, const ReferencePath& ref,
              int n_particles, Rng& rng) {
  check_ref(model, ref, n_particles);
  const int t_len = model.horizon();
  const int d = model.state_dim();
  const int n = n_particles;

  CpfResult out;
  ParticleSystem& ps = out.system;
  ps.states.assign(t_len, Eigen::MatrixXd(d, n));
  ps.ancestors.resize(n, t_len - 1);
  ps.log_weights.resize(n, t_len);

  for (int i = 0; i < n; ++i)
    if (i != ref.slots[0]) model.sample_initial(rng, ps.states[0].col(i));
  ps.states[0].col(ref.slots[0]) = ref.states.col(0);
  for (int i = 0; i < n; ++i)
    ps.log_weights(i, 0) = model.log_potential(0, ps.states[0].col(i), ps.states[0].col(i));

  std::vector<int> a(n);
  for (int k = 0; k + 1 < t_len; ++k) {
    require_reference_alive(ps.log_weights(ref.slots[k], k), k);
    const Eigen::ArrayXd g = weights_from_log(ps.log_weights.col(k).array(), k);
    resampling::cond_resample(scheme, g, ref.slots[k], ref.slots[k + 1], rng, a);
    for (int i = 0; i < n; ++i) {
      ps.ancestors(i, k) = a[i];
      if (i != ref.slots[k + 1])
        model.sample_step(k + 1, ps.states[k].col(a[i]), rng, ps.states[k + 1].col(i));
    }
    ps.states[k + 1].col(ref.slots[k + 1]) = ref.states.col(k + 1);
    for (int i = 0; i < n; ++i)
      ps.log_weights(i, k + 1) =
          model.log_potential(k + 1, ps.states[k].col(a[i]), ps.states[k + 1].col(i));
  }
  require_reference_alive(ps.log_weights(ref.slots[t_len - 1], t_len - 1), t_len - 1);
  const Eigen::ArrayXd g_final = weights_from_log(ps.log_weights.col(t_len - 1).array(), t_len - 1);
  out.final_slot = resampling::categorical(g_final, rng);
  return out;
}

ReferencePath cpf_at(const FkModel& model, resampling::Scheme scheme, const ReferencePath& ref,
                     int n_particles, Rng& rng) {
  const CpfResult res = cpf(model, scheme, ref, n_particles, rng);
  const int t_len = model.horizon();
  ReferencePath out;
  out.states.resize(model.state_dim(), t_len);
  out.slots = ancestor_trace(res.system.ancestors, 0, t_len - 1, res.final_slot);
  out.slots.push_back(res.final_slot);
  for (int t = 0; t < t_len; ++t) out.states.col(t) = res.system.states[t].col(out.slots[t]);
  return out;
}

BridgeResult bridge_cpf(const FkModel& model, const BridgeOracle& oracle,
                        resampling::Scheme scheme, const ParticleSystem& sys,
                        const std::vector<int>& ref_slots,
                        const Eigen::Ref<const Eigen::MatrixXd>& ref_states, int l, int u,
                        Rng& rng) {
  const int n = sys.count();
  const int d = sys.dim();
  const int len = u - l;
  if (l < 0 || u <= l || u >= sys.horizon()) throw Error("bridge block out of range");
  if (static_cast<int>(ref_slots.size()) != len || ref_states.cols() != len)
    throw Error("bridge reference length mismatch");

  const Eigen::VectorXd x_u = ref_states.col(len - 1);

  // Block lookahead: (u - l)-th root of the block density from each pool
  // member; zero-density members keep weight zero.
  Eigen::ArrayXd log_look(n);
  for (int i = 0; i < n; ++i)
    log_look[i] = oracle.log_block_density(l, u, sys.states[l].col(i), x_u) / len;

  // Potentials of the current generation's (parent, state) pairs. At time l
  // these are the forward sweep's weights, reused as stored.
  Eigen::ArrayXd log_pot = sys.log_weights.col(l).array();

  Eigen::MatrixXd cur = sys.states[l];
  std::vector<Eigen::MatrixXd> gens;  // interior generations, times l+1..u-1
  gens.reserve(len - 1);
  Eigen::MatrixXi anc(n, len - 1);  // columns: steps l..u-2

  std::vector<int> a(n);
  Eigen::MatrixXd next(d, n);
  for (int v = l + 1; v < u; ++v) {
    const Eigen::ArrayXd lw = log_pot + log_look;
    require_reference_alive(lw[ref_slots[v - 1 - l]], v - 1);
    const Eigen::ArrayXd g = weights_from_log(lw, v - 1);
    resampling::cond_resample(scheme, g, ref_slots[v - 1 - l], ref_slots[v - l], rng, a);

    for (int i = 0; i < n; ++i)
      if (i != ref_slots[v - l]) oracle.sample_bridge(v, cur.col(a[i]), u, x_u, rng, next.col(i));
    next.col(ref_slots[v - l]) = ref_states.col(v - 1 - l);

    Eigen::ArrayXd new_pot(n), new_look(n);
    for (int i = 0; i < n; ++i) {
      new_pot[i] = model.log_potential(v, cur.col(a[i]), next.col(i));
      new_look[i] = log_look[a[i]];
    }
    anc.col(v - 1 - l) = Eigen::Map<const Eigen::VectorXi>(a.data(), n);
    log_pot = std::move(new_pot);
    log_look = std::move(new_look);
    cur = next;
    gens.push_back(cur);
  }

  // Final slot from G_{u-1} x G_u(., x_u) x carried lookahead.
  Eigen::ArrayXd lw_final(n);
  for (int i = 0; i < n; ++i)
    lw_final[i] = log_pot[i] + model.log_potential(u, cur.col(i), x_u) + log_look[i];
  const Eigen::ArrayXd g_final = weights_from_log(lw_final, u - 1);
  const int b_last = resampling::categorical(g_final, rng);

  BridgeResult out;
  out.slots.assign(len, 0);
  out.slots[len - 1] = b_last;
  int b = b_last;
  for (int v = u - 2; v >= l; --v) {
    b = anc(b, v - l);
    out.slots[v - l] = b;
  }
  out.states.resize(d, len);
  out.states.col(0) = sys.states[l].col(out.slots[0]);
  for (int v = l + 1; v < u; ++v) out.states.col(v - l) = gens[v - 1 - l].col(out.slots[v - l]);
  return out;
}

ReferencePath cpf_bbs(const FkModel& model, const BridgeOracle& oracle, resampling::Scheme scheme,
                      const ReferencePath& ref, const std::vector<int>& boundaries,
                      int n_particles, Rng& rng) {
  const int t_len = model.horizon();
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != t_len - 1)
    throw Error("blocking boundaries must run from 0 to horizon-1");
  for (std::size_t j = 0; j + 1 < boundaries.size(); ++j)
    if (boundaries[j] >= boundaries[j + 1]) throw Error("blocking boundaries must increase");

  oracle.prepare(boundaries);
  const CpfResult fwd = cpf(model, scheme, ref, n_particles, rng);
  const ParticleSystem& sys = fwd.system;

  ReferencePath out;
  out.states.resize(model.state_dim(), t_len);
  out.slots.assign(t_len, 0);
  out.slots[t_len - 1] = fwd.final_slot;
  out.states.col(t_len - 1) = sys.states[t_len - 1].col(fwd.final_slot);

  for (int j = static_cast<int>(boundaries.size()) - 1; j >= 1; --j) {
    const int l = boundaries[j - 1];
    const int u = boundaries[j];
    const std::vector<int> traced = ancestor_trace(sys.ancestors, l, u, out.slots[u]);
    Eigen::MatrixXd block_ref(model.state_dim(), u - l);
    for (int v = l + 1; v < u; ++v) block_ref.col(v - 1 - l) = sys.states[v].col(traced[v - l]);
    block_ref.col(u - 1 - l) = out.states.col(u);
    const BridgeResult res =
        bridge_cpf(model, oracle, scheme, sys, traced, block_ref, l, u, rng);
    for (int v = l; v < u; ++v) {
      out.slots[v] = res.slots[v - l];
      out.states.col(v) = res.states.col(v - l);
    }
  }
  return out;
}

double OneStepBridge::log_block_density(int l, int u,
                                        const Eigen::Ref<const Eigen::VectorXd>& x_l,
                                        const Eigen::Ref<const Eigen::VectorXd>& x_u) const {
  if (u != l + 1) throw Error("one-step bridge supports only adjacent blocks");
  return step_(u, x_l, x_u);
}

void OneStepBridge::sample_bridge(int, const Eigen::Ref<const Eigen::VectorXd>&, int,
                                  const Eigen::Ref<const Eigen::VectorXd>&, Rng&,
                                  Eigen::Ref<Eigen::VectorXd>) const {
  throw Error("one-step bridge cannot sample block interiors");
}

ReferencePath cpf_bs(const FkModel& model, const StepLogDensity& step_logdensity,
                     resampling::Scheme scheme, const ReferencePath& ref, int n_particles,
                     Rng& rng) {
  const OneStepBridge oracle(step_logdensity);
  return cpf_bbs(model, oracle, scheme, ref, dense_boundaries(model.horizon()), n_particles, rng);
}

std::vector<int> dense_boundaries(int horizon) {
  std::vector<int> b(horizon);
  for (int t = 0; t < horizon; ++t) b[t] = t;
  return b;
}

}  // namespace bbsmc::filters
