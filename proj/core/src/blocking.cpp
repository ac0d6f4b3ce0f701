#include <bbsmc/blocking.hpp>

#include <bbsmc/errors.hpp>
#include <bbsmc/resampling.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>

namespace bbsmc::blocking {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd normalised_column(const Eigen::MatrixXd& log_weights, int t) {
    const Eigen::VectorXd lw = log_weights.col(t);
    const double m = lw.maxCoeff();
    if (!std::isfinite(m)) {
        throw DegenerateWeightsError("all particle weights vanish at time " + std::to_string(t));
    }
    Eigen::VectorXd g = (lw.array() - m).exp();
    g /= g.sum();
    return g;
}

void check_target_count(int n_target) {
    if (n_target < 2) throw Error("target particle count must be at least 2");
}

}  // namespace

double resampling_rate(const Eigen::VectorXd& w) {
    const int n = static_cast<int>(w.size());
    if (n < 1) throw Error("resampling_rate: empty weight vector");
    if (std::abs(w.sum() - 1.0) > 1e-9) throw Error("resampling_rate: weights are not normalised");
    return 0.5 * (w.array() - 1.0 / n).abs().sum();
}

std::vector<double> resampling_rates(const filters::ParticleSystem& sys) {
    const int t_len = sys.horizon();
    std::vector<double> p(static_cast<std::size_t>(t_len - 1));
    for (int k = 0; k + 1 < t_len; ++k) {
        p[static_cast<std::size_t>(k)] = resampling_rate(normalised_column(sys.log_weights, k));
    }
    return p;
}

double plu_m(const Eigen::VectorXd& block_densities, int ref_index) {
    const int n = static_cast<int>(block_densities.size());
    if (ref_index < 0 || ref_index >= n) throw Error("plu_m: reference index out of range");
    if ((block_densities.array() < 0.0).any()) throw Error("plu_m: negative block density");
    const double total = block_densities.sum();
    if (!(total > 0.0)) throw Error("plu_m: all block transition densities vanish");
    return 1.0 - block_densities[ref_index] / total;
}

double plu_m_alt(double ref_density, double typical_density, int n_target) {
    check_target_count(n_target);
    if (ref_density < 0.0 || typical_density < 0.0) throw Error("plu_m_alt: negative density");
    if (!(typical_density > 0.0)) throw Error("plu_m_alt: typical block density vanishes");
    const double c = ref_density / typical_density;
    if (std::isinf(c)) return 0.0;
    return 1.0 - c / (c + (n_target - 1));
}

double plu_g(const std::vector<double>& p, int n, bool* clamped) {
    check_target_count(n);
    if (clamped != nullptr) *clamped = false;
    const double scale = static_cast<double>(n) / ((n - 1.0) * (n - 1.0));
    double out = 1.0 - 1.0 / n;
    for (const double pk : p) {
        if (pk < 0.0) throw Error("plu_g: negative resampling rate");
        double factor = 1.0 - pk * scale;
        if (factor < 0.0) {
            factor = 0.0;
            if (clamped != nullptr) *clamped = true;
        }
        out *= factor;
    }
    return out;
}

double plu_hat(double plu_g_val, double plu_m_val, int n) {
    check_target_count(n);
    if (!(plu_g_val >= 0.0 && plu_g_val <= 1.0 && plu_m_val >= 0.0 && plu_m_val <= 1.0)) {
        throw Error("plu_hat: inputs must lie in [0, 1]");
    }
    const double scale = 1.0 - 1.0 / n;
    // Short-circuits keep the advertised reductions exact in floating point.
    double out;
    if (plu_m_val == scale) {
        out = plu_g_val;
    } else if (plu_g_val == scale) {
        out = plu_m_val;
    } else {
        out = plu_g_val * plu_m_val / scale;
    }
    return std::clamp(out, 0.0, 1.0);
}

namespace {

void check_candidate(const Boundaries& b, int t_len, const char* what) {
    if (b.size() < 2 || b.front() != 0 || b.back() != t_len - 1) {
        throw Error(std::string(what) + ": boundaries must run from 0 to the last time index");
    }
    for (std::size_t i = 1; i < b.size(); ++i) {
        if (b[i] <= b[i - 1]) throw Error(std::string(what) + ": boundaries must be strictly increasing");
    }
}

}  // namespace

std::vector<std::vector<double>> estimate_plu(const std::vector<Boundaries>& candidates,
                                              const filters::ParticleSystem& sys,
                                              const std::vector<int>& ref_slots,
                                              const BridgeOracle& oracle,
                                              int n_target,
                                              long* clamp_events) {
    check_target_count(n_target);
    const int t_len = sys.horizon();
    const int n_pool = sys.count();
    if (n_pool < 2) throw Error("estimate_plu: need at least 2 particles in the pool");
    if (static_cast<int>(ref_slots.size()) != t_len) {
        throw Error("estimate_plu: reference slot count does not match the horizon");
    }
    for (int t = 0; t < t_len; ++t) {
        if (ref_slots[static_cast<std::size_t>(t)] < 0 || ref_slots[static_cast<std::size_t>(t)] >= n_pool) {
            throw Error("estimate_plu: reference slot out of range at time " + std::to_string(t));
        }
    }
    for (const Boundaries& cand : candidates) check_candidate(cand, t_len, "estimate_plu");

    const std::vector<double> p = resampling_rates(sys);

    std::vector<std::vector<double>> out(candidates.size());
    Eigen::VectorXd log_dens(n_pool);
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        const Boundaries& cand = candidates[s];
        out[s].resize(cand.size() - 1);
        for (std::size_t i = 0; i + 1 < cand.size(); ++i) {
            const int l = cand[i];
            const int u = cand[i + 1];
            const int ref_l = ref_slots[static_cast<std::size_t>(l)];
            const Eigen::VectorXd x_u = sys.states[static_cast<std::size_t>(u)].col(ref_slots[static_cast<std::size_t>(u)]);
            for (int j = 0; j < n_pool; ++j) {
                log_dens[j] = oracle.log_block_density(l, u, sys.states[static_cast<std::size_t>(l)].col(j), x_u);
            }
            const double shift = log_dens.maxCoeff();
            double m_val;
            if (n_target == n_pool) {
                if (!std::isfinite(shift)) throw Error("plu_m: all block transition densities vanish");
                m_val = plu_m((log_dens.array() - shift).exp().matrix(), ref_l);
            } else {
                double shift_others = -kInf;
                for (int j = 0; j < n_pool; ++j) {
                    if (j != ref_l) shift_others = std::max(shift_others, log_dens[j]);
                }
                if (!std::isfinite(shift_others)) {
                    throw Error("plu_m_alt: typical block density vanishes");
                }
                double typical = 0.0;
                for (int j = 0; j < n_pool; ++j) {
                    if (j != ref_l) typical += std::exp(log_dens[j] - shift_others);
                }
                typical /= n_pool - 1;
                m_val = plu_m_alt(std::exp(log_dens[ref_l] - shift_others), typical, n_target);
            }
            const std::vector<double> p_block(p.begin() + l, p.begin() + u);
            bool clamped = false;
            const double g_val = plu_g(p_block, n_target, &clamped);
            if (clamped && clamp_events != nullptr) ++*clamp_events;
            out[s][i] = plu_hat(g_val, m_val, n_target);
        }
    }
    return out;
}

PluTable evaluate_blocking_candidates(const std::vector<Boundaries>& candidates,
                                      const FkModel& model,
                                      const BridgeOracle& oracle,
                                      int n_pool,
                                      int n_target,
                                      int n_runs,
                                      Rng& rng) {
    if (n_runs < 1) throw Error("evaluate_blocking_candidates: need at least one replicate");
    if (candidates.empty()) throw Error("evaluate_blocking_candidates: no candidate sequences");
    const int t_len = model.horizon();
    for (const Boundaries& cand : candidates) check_candidate(cand, t_len, "evaluate_blocking_candidates");

    PluTable table;
    table.candidates = candidates;
    table.requested_runs = n_runs;
    table.values.resize(candidates.size());
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        table.values[s].assign(candidates[s].size() - 1, 0.0);
    }

    int succeeded = 0;
    for (int j = 0; j < n_runs; ++j) {
        Rng sub = rng.substream(static_cast<std::uint64_t>(j));
        try {
            filters::ParticleSystem sys = filters::particle_filter(model, resampling::Scheme::systematic_mean_partition, n_pool, sub);
            const Eigen::VectorXd g = normalised_column(sys.log_weights, t_len - 1);
            const int b_last = resampling::categorical(g, sub);
            std::vector<int> slots = filters::ancestor_trace(sys.ancestors, 0, t_len - 1, b_last);
            slots.push_back(b_last);
            const auto est = estimate_plu(candidates, sys, slots, oracle, n_target, &table.clamp_events);
            for (std::size_t s = 0; s < est.size(); ++s) {
                for (std::size_t i = 0; i < est[s].size(); ++i) table.values[s][i] += est[s][i];
            }
            ++succeeded;
        } catch (const Error&) {
            ++table.failed_runs;
        }
    }
    if (succeeded == 0 || 2 * succeeded < n_runs) {
        throw Error("evaluate_blocking_candidates: " + std::to_string(table.failed_runs) + " of " +
                    std::to_string(n_runs) + " replicates degenerated");
    }
    for (auto& vals : table.values) {
        for (double& v : vals) v /= succeeded;
    }
    return table;
}

std::vector<Boundaries> dyadic_candidate_blockings(int horizon) {
    if (horizon < 2) throw Error("dyadic_candidate_blockings: need at least two time points");
    std::vector<Boundaries> out;
    for (int size = 1; size <= horizon - 1; size *= 2) {
        Boundaries b{0};
        int l = 0;
        while (l < horizon - 1) {
            const int u = l + size;
            b.push_back(std::min(u, horizon - 1));
            l = u;
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<Boundaries> blocktime_candidate_blockings(const std::vector<double>& times,
                                                      const std::vector<double>& blocktimes) {
    const int t_len = static_cast<int>(times.size());
    if (t_len < 2) throw Error("blocktime_candidate_blockings: need at least two time points");
    for (int i = 1; i < t_len; ++i) {
        if (!(times[static_cast<std::size_t>(i)] > times[static_cast<std::size_t>(i - 1)])) {
            throw Error("blocktime_candidate_blockings: times must be strictly increasing");
        }
    }
    if (blocktimes.empty()) throw Error("blocktime_candidate_blockings: no blocktimes given");

    std::vector<Boundaries> out;
    std::set<Boundaries> seen;
    for (const double bt : blocktimes) {
        if (!(bt > 0.0)) throw Error("blocktime_candidate_blockings: blocktimes must be positive");
        Boundaries b{0};
        int l = 0;
        while (l < t_len - 1) {
            const double target = times[static_cast<std::size_t>(l)] + bt;
            // Largest grid point within the blocktime, with a tolerance for
            // accumulated rounding in the grid; always advance at least once.
            auto it = std::upper_bound(times.begin(), times.end(), target + 1e-9 * bt);
            int u = static_cast<int>(it - times.begin()) - 1;
            u = std::min(std::max(u, l + 1), t_len - 1);
            b.push_back(u);
            l = u;
        }
        if (seen.insert(b).second) out.push_back(std::move(b));
    }
    return out;
}

Boundaries select_blocking(const PluTable& table) {
    if (table.candidates.empty()) throw Error("select_blocking: empty table");
    if (table.values.size() != table.candidates.size()) {
        throw Error("select_blocking: table values do not match the candidates");
    }
    const int last = table.candidates.front().back();
    for (std::size_t s = 0; s < table.candidates.size(); ++s) {
        check_candidate(table.candidates[s], last + 1, "select_blocking");
        if (table.values[s].size() != table.candidates[s].size() - 1) {
            throw Error("select_blocking: table values do not match the candidates");
        }
    }

    // Scored records grouped by lower boundary; duplicate (lower, size) blocks
    // across candidates carry identical scores, keep the first.
    std::map<int, std::map<int, double>> records;
    for (std::size_t s = 0; s < table.candidates.size(); ++s) {
        const Boundaries& cand = table.candidates[s];
        for (std::size_t i = 0; i + 1 < cand.size(); ++i) {
            records[cand[i]].try_emplace(cand[i + 1] - cand[i], table.values[s][i]);
        }
    }
    const std::map<int, std::map<int, double>> all_records = records;

    std::map<int, int> accepted;  // lower boundary -> block size
    for (std::size_t si = table.candidates.size(); si-- > 0;) {
        const Boundaries& cand = table.candidates[si];
        for (std::size_t i = 0; i + 1 < cand.size(); ++i) {
            const int l = cand[i];
            const int b = cand[i + 1] - cand[i];
            const auto group_it = records.find(l);
            if (group_it == records.end()) continue;
            // Maximal score in the group; ties go to the larger size, which the
            // descending sweep reaches first.
            int best_size = 0;
            double best = -kInf;
            for (const auto& [size, val] : group_it->second) {
                if (val > best || (val == best && size > best_size)) {
                    best = val;
                    best_size = size;
                }
            }
            if (best_size != b) continue;
            accepted.emplace(l, b);
            records.erase(records.lower_bound(l), records.lower_bound(l + b));
        }
    }

    Boundaries out{0};
    int cur = 0;
    while (cur < last) {
        int step = 0;
        if (const auto it = accepted.find(cur); it != accepted.end()) {
            step = it->second;
        } else if (const auto it2 = all_records.find(cur); it2 != all_records.end()) {
            step = it2->second.begin()->first;  // smallest candidate block here
        } else {
            throw Error("select_blocking: no candidate block covers index " + std::to_string(cur));
        }
        cur += step;
        out.push_back(cur);
    }
    return out;
}

Boundaries choose_blocking(const FkModel& model,
                           const BridgeOracle& oracle,
                           int n_pool,
                           int n_target,
                           int n_runs,
                           Rng& rng) {
    return choose_blocking(model, oracle, dyadic_candidate_blockings(model.horizon()), n_pool, n_target,
                           n_runs, rng);
}

Boundaries choose_blocking(const FkModel& model,
                           const BridgeOracle& oracle,
                           const std::vector<Boundaries>& candidates,
                           int n_pool,
                           int n_target,
                           int n_runs,
                           Rng& rng) {
    const PluTable table = evaluate_blocking_candidates(candidates, model, oracle, n_pool, n_target, n_runs, rng);
    return select_blocking(table);
}

double artificial_system_expected_healthy(const std::vector<double>& p_r, int n) {
    check_target_count(n);
    double out = n - 1.0;
    for (const double p : p_r) {
        if (p < 0.0 || p > 1.0) throw Error("artificial_system_expected_healthy: probabilities must lie in [0, 1]");
        out *= 1.0 - p / ((n - 1.0) * (n - 1.0));
    }
    return out;
}

int artificial_system_simulate(const std::vector<double>& p_r, int n, Rng& rng) {
    check_target_count(n);
    // Particle 0 is the immortal reference; healthy means not descended from it.
    std::vector<char> healthy(static_cast<std::size_t>(n), 1);
    healthy[0] = 0;
    for (const double p : p_r) {
        if (p < 0.0 || p > 1.0) throw Error("artificial_system_simulate: probabilities must lie in [0, 1]");
        if (rng.uniform() >= p) continue;
        const int dying = 1 + rng.uniform_int(n - 1);
        int parent = rng.uniform_int(n - 1);
        if (parent >= dying) ++parent;
        healthy[static_cast<std::size_t>(dying)] = healthy[static_cast<std::size_t>(parent)];
    }
    int count = 0;
    for (const char h : healthy) count += h;
    return count;
}

}  // namespace bbsmc::blocking
