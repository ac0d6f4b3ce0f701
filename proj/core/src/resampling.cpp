#include "bbsmc/resampling.hpp"

#include <cmath>
#include <utility>

#include "bbsmc/errors.hpp"

namespace bbsmc::resampling {

Scheme scheme_from_string(const std::string& name) {
  if (name == "multinomial") return Scheme::multinomial;
  if (name == "killing") return Scheme::killing;
  if (name == "systematic") return Scheme::systematic;
  if (name == "systematic_mp") return Scheme::systematic_mean_partition;
  throw Error("unknown resampling scheme: " + name);
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::multinomial: return "multinomial";
    case Scheme::killing: return "killing";
    case Scheme::systematic: return "systematic";
    case Scheme::systematic_mean_partition: return "systematic_mp";
  }
  return "?";
}

void validate_weights(const Eigen::Ref<const Eigen::ArrayXd>& g) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    const double v = g[j];
    if (!std::isfinite(v) || v < 0.0)
      throw DegenerateWeightsError("weight " + std::to_string(j) + " is " + std::to_string(v));
  }
  sum = g.sum();
  if (!(sum > 0.0)) throw DegenerateWeightsError("all weights are zero");
}

int inverse_cdf(const Eigen::Ref<const Eigen::ArrayXd>& g, double u) {
  const Eigen::Index n = g.size();
  const double target = u * g.sum();
  double cum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cum += g[j];
    if (cum >= target) return static_cast<int>(j);
  }
  // Round-off fallback: last positive-weight index.
  for (Eigen::Index j = n - 1; j >= 0; --j)
    if (g[j] > 0.0) return static_cast<int>(j);
  throw DegenerateWeightsError("all weights are zero");
}

namespace {

// Systematic grid pass over weights visited in the order ord(0), ord(1), ...
// Slot j receives the index whose cumulative normalised weight first reaches
// (j + u0) / N.
template <typename Order>
void systematic_grid(const Eigen::Ref<const Eigen::ArrayXd>& g, double sum, double u0, Order ord,
                     std::vector<int>& a) {
  const int n = static_cast<int>(g.size());
  a.resize(n);
  int m = 0;
  double cum = g[ord(0)] / sum;
  for (int j = 0; j < n; ++j) {
    const double u = (j + u0) / n;
    while (m < n - 1 && cum < u) {
      ++m;
      cum += g[ord(m)] / sum;
    }
    a[j] = ord(m);
  }
}

}  // namespace

int categorical(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng) {
  return inverse_cdf(g, rng.uniform_pos());
}

Permutation mean_partition_order(const Eigen::Ref<const Eigen::ArrayXd>& w) {
  const int n = static_cast<int>(w.size());
  Permutation perm;
  perm.fwd.resize(n);
  for (int j = 0; j < n; ++j) perm.fwd[j] = j;
  const double pivot = w.mean();
  int lo = 0, hi = n - 1;
  while (true) {
    while (lo <= hi && w[perm.fwd[lo]] <= pivot) ++lo;
    while (lo <= hi && w[perm.fwd[hi]] > pivot) --hi;
    if (lo >= hi) break;
    std::swap(perm.fwd[lo], perm.fwd[hi]);
    ++lo;
    --hi;
  }
  perm.inv.resize(n);
  for (int j = 0; j < n; ++j) perm.inv[perm.fwd[j]] = j;
  return perm;
}

void multinomial(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a) {
  validate_weights(g);
  const int n = static_cast<int>(g.size());
  a.resize(n);
  for (int j = 0; j < n; ++j) a[j] = inverse_cdf(g, rng.uniform_pos());
}

void killing(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a) {
  validate_weights(g);
  const int n = static_cast<int>(g.size());
  const double gmax = g.maxCoeff();
  a.resize(n);
  for (int j = 0; j < n; ++j) {
    if (rng.uniform() * gmax < g[j])
      a[j] = j;
    else
      a[j] = inverse_cdf(g, rng.uniform_pos());
  }
}

void systematic(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a) {
  validate_weights(g);
  systematic_grid(g, g.sum(), rng.uniform_pos(), [](int m) { return m; }, a);
}

void systematic_mean_partition(const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a) {
  validate_weights(g);
  const Permutation perm = mean_partition_order(g);
  systematic_grid(g, g.sum(), rng.uniform_pos(), [&perm](int m) { return perm.fwd[m]; }, a);
}

void resample(Scheme s, const Eigen::Ref<const Eigen::ArrayXd>& g, Rng& rng, std::vector<int>& a) {
  switch (s) {
    case Scheme::multinomial: return multinomial(g, rng, a);
    case Scheme::killing: return killing(g, rng, a);
    case Scheme::systematic: return systematic(g, rng, a);
    case Scheme::systematic_mean_partition: return systematic_mean_partition(g, rng, a);
  }
}

namespace {

void check_reference(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k) {
  validate_weights(g);
  const int n = static_cast<int>(g.size());
  if (i < 0 || i >= n || k < 0 || k >= n) throw Error("conditional resampling: slot out of range");
  if (!(g[i] > 0.0)) throw DegenerateWeightsError("reference weight is zero");
}

}  // namespace

void cond_multinomial(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng,
                      std::vector<int>& a) {
  check_reference(g, i, k);
  const int n = static_cast<int>(g.size());
  a.resize(n);
  for (int j = 0; j < n; ++j)
    a[j] = (j == k) ? i : inverse_cdf(g, rng.uniform_pos());
}

void cond_killing(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng, std::vector<int>& a) {
  check_reference(g, i, k);
  const int n = static_cast<int>(g.size());
  std::vector<int> abar;
  killing(g, rng, abar);
  // Anchor slot distribution: h(i|i) ∝ 1 + sum_{l != i} g_l / g*, and
  // h(j|i) ∝ 1 - g_j / g* otherwise.
  const double gmax = g.maxCoeff();
  Eigen::ArrayXd h(n);
  for (int j = 0; j < n; ++j) h[j] = 1.0 - g[j] / gmax;
  h[i] = 1.0 + (g.sum() - g[i]) / gmax;
  const int anchor = inverse_cdf(h, rng.uniform_pos());
  abar[anchor] = i;
  const int shift = cyclic_shift(anchor, -k, n);  // aligns slot k with the anchor
  a.resize(n);
  for (int j = 0; j < n; ++j) a[j] = abar[cyclic_shift(j, shift, n)];
}

void cond_systematic_mean_partition(const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng,
                                    std::vector<int>& a) {
  check_reference(g, i, k);
  const int n = static_cast<int>(g.size());
  const double sum = g.sum();
  const double nwi = static_cast<double>(n) * g[i] / sum;
  const double fl = std::floor(nwi);
  const double r = nwi - fl;

  // Number of copies of i in the unshifted grid pass: floor(N w_i) or one
  // more, chosen so the overall copy count is unbiased.
  const double p_up = (r > 0.0) ? r * (fl + 1.0) / nwi : 0.0;
  double u0;
  int n_i;
  if (rng.uniform() < p_up) {
    u0 = rng.uniform(0.0, r);
    n_i = static_cast<int>(fl) + 1;
  } else {
    u0 = rng.uniform(r, 1.0);
    n_i = static_cast<int>(fl);
  }
  if (n_i < 1) throw DegenerateWeightsError("reference weight rounds to zero copies");

  // Rotated mean partition order starting at i, so the grid pass puts the
  // n_i copies of i in slots 0..n_i-1.
  const Permutation perm = mean_partition_order(g);
  const int s0 = perm.inv[i];
  std::vector<int> abar;
  systematic_grid(g, sum, u0, [&perm, s0, n](int m) { return perm.fwd[(m + s0) % n]; }, abar);

  const int cbar = rng.uniform_int(n_i);
  const int shift = cyclic_shift(cbar, -k, n);
  a.resize(n);
  for (int j = 0; j < n; ++j) a[j] = abar[cyclic_shift(j, shift, n)];
}

void cond_resample(Scheme s, const Eigen::Ref<const Eigen::ArrayXd>& g, int i, int k, Rng& rng,
                   std::vector<int>& a) {
  switch (s) {
    case Scheme::multinomial: return cond_multinomial(g, i, k, rng, a);
    case Scheme::killing: return cond_killing(g, i, k, rng, a);
    case Scheme::systematic_mean_partition: return cond_systematic_mean_partition(g, i, k, rng, a);
    case Scheme::systematic: break;
  }
  throw Error("no conditional version of scheme " + to_string(s));
}

}  // namespace bbsmc::resampling
