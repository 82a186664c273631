#include "pfkit/stats.hpp"

#include <algorithm>
#include <cmath>

namespace pfkit {

double exact_tv(const LevelDistribution& p, const LevelDistribution& q) {
  if (p.level != q.level || p.probs.size() != q.probs.size())
    throw DimensionMismatch("distributions live on different spaces");
  KahanSum acc;
  for (size_t i = 0; i < p.probs.size(); ++i) acc.add(std::abs(p.probs[i] - q.probs[i]));
  return std::min(1.0, 0.5 * acc.get());
}

double tv_standard_error(std::span<const double> empirical, std::span<const double> reference,
                         long long n) {
  if (empirical.size() != reference.size())
    throw DimensionMismatch("tv_standard_error size mismatch");
  // TV = ½ Σ s_k (p̂_k − q_k) with s_k = sign(p̂_k − q_k); delta method on the
  // multinomial covariance gives var ≈ (1 − (Σ s_k p_k)²)/(4n).
  double signed_mass = 0.0;
  for (size_t k = 0; k < empirical.size(); ++k) {
    const double s = empirical[k] >= reference[k] ? 1.0 : -1.0;
    signed_mass += s * empirical[k];
  }
  const double var = std::max(0.0, 1.0 - signed_mass * signed_mass) / (4.0 * n);
  return std::sqrt(var);
}

double p_n_oracle(int n_particles, double lambda) {
  if (n_particles < 1) throw InvalidSpec("p_N needs N >= 1");
  const int n = n_particles;
  // Binomial(N, 1/2) pmf built iteratively; exact in double for the N used.
  double pmf = std::ldexp(1.0, -n);  // Pr[A=0]
  KahanSum acc;
  for (int a = 0; a <= n; ++a) {
    if (a > 0) pmf *= static_cast<double>(n - a + 1) / a;
    acc.add(pmf * a / (n + lambda * a));
  }
  const double p_n = (1.0 + lambda) * acc.get();

  const double p = (1.0 + lambda) / (2.0 + lambda);
  const double c_lambda = 2.0 * lambda * (1.0 + lambda) / std::pow(2.0 + lambda, 3);
  if (!(p_n <= p - c_lambda / n + 1e-12))
    throw SelfCheckFailed("p_N gap inequality violated");
  return p_n;
}

void EmpiricalFinal::merge(const EmpiricalFinal& o) {
  if (counts.size() != o.counts.size()) throw MixedConfig("merging mismatched count vectors");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  trials += o.trials;
  dead_runs += o.dead_runs;
  restart_outs += o.restart_outs;
  restart_total += o.restart_total;
}

LevelDistribution EmpiricalFinal::distribution(int level) const {
  const long long done = completed();
  if (done <= 0) throw DegenerateLevel("no completed runs to form a distribution");
  LevelDistribution d;
  d.level = level;
  d.probs.resize(counts.size());
  for (size_t i = 0; i < counts.size(); ++i)
    d.probs[i] = static_cast<double>(counts[i]) / done;
  return d;
}

std::vector<double> EmpiricalFinal::standard_errors() const {
  const long long done = completed();
  std::vector<double> se(counts.size(), 0.0);
  if (done <= 0) return se;
  for (size_t i = 0; i < counts.size(); ++i) {
    const double p = static_cast<double>(counts[i]) / done;
    se[i] = std::sqrt(p * (1.0 - p) / done);
  }
  return se;
}

// ---------------------------------------------------------------------------
// Chi-square machinery
// ---------------------------------------------------------------------------

namespace {

// Regularized incomplete gamma functions by series / continued fraction.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 10000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double chi_square_sf(double x, int dof) {
  if (x <= 0.0) return 1.0;
  const double a = 0.5 * dof;
  const double half_x = 0.5 * x;
  if (half_x < a + 1.0) return std::clamp(1.0 - gamma_p_series(a, half_x), 0.0, 1.0);
  return std::clamp(gamma_q_contfrac(a, half_x), 0.0, 1.0);
}

namespace {

// Pools categories whose pooled expected count is below 5 into a tail bucket,
// then runs the chi-square on the surviving table.
GofResult chi_square_table(const std::vector<double>& observed,
                           const std::vector<double>& expected, int extra_dof_loss) {
  double pooled_obs = 0.0, pooled_exp = 0.0;
  double stat = 0.0;
  int cats = 0;
  for (size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] < 5.0) {
      pooled_obs += observed[i];
      pooled_exp += expected[i];
      continue;
    }
    const double d = observed[i] - expected[i];
    stat += d * d / expected[i];
    ++cats;
  }
  if (pooled_exp > 0.0) {
    const double d = pooled_obs - pooled_exp;
    stat += d * d / pooled_exp;
    ++cats;
  }
  if (cats < 2) throw InsufficientData("fewer than two usable categories after pooling");
  GofResult r;
  r.statistic = stat;
  r.dof = cats - 1 - extra_dof_loss;
  if (r.dof < 1) throw InsufficientData("no degrees of freedom left");
  r.p_value = chi_square_sf(stat, r.dof);
  return r;
}

}  // namespace

GofResult gof_two_sample(std::span<const long long> a, std::span<const long long> b) {
  if (a.size() != b.size()) throw DimensionMismatch("two-sample tables differ in size");
  long long na = 0, nb = 0;
  for (long long v : a) na += v;
  for (long long v : b) nb += v;
  if (na < 50 || nb < 50) throw InsufficientData("need at least 50 counts per table");

  // Homogeneity test: expected cell counts from the pooled margins. Pool by
  // the row-expected minimum so both rows stay valid.
  const double total = static_cast<double>(na + nb);
  std::vector<double> obs_a(a.size()), obs_b(a.size()), exp_a(a.size()), exp_b(a.size());
  std::vector<double> pool_key(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double col = static_cast<double>(a[i] + b[i]);
    obs_a[i] = static_cast<double>(a[i]);
    obs_b[i] = static_cast<double>(b[i]);
    exp_a[i] = col * na / total;
    exp_b[i] = col * nb / total;
    pool_key[i] = std::min(exp_a[i], exp_b[i]);
  }

  double stat = 0.0;
  double pa_obs = 0, pa_exp = 0, pb_obs = 0, pb_exp = 0;
  int cats = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (pool_key[i] < 5.0) {
      pa_obs += obs_a[i];
      pa_exp += exp_a[i];
      pb_obs += obs_b[i];
      pb_exp += exp_b[i];
      continue;
    }
    stat += (obs_a[i] - exp_a[i]) * (obs_a[i] - exp_a[i]) / exp_a[i];
    stat += (obs_b[i] - exp_b[i]) * (obs_b[i] - exp_b[i]) / exp_b[i];
    ++cats;
  }
  if (pa_exp > 0.0 || pb_exp > 0.0) {
    if (pa_exp > 0.0) stat += (pa_obs - pa_exp) * (pa_obs - pa_exp) / pa_exp;
    if (pb_exp > 0.0) stat += (pb_obs - pb_exp) * (pb_obs - pb_exp) / pb_exp;
    ++cats;
  }
  if (cats < 2) throw InsufficientData("fewer than two usable categories after pooling");
  GofResult r;
  r.statistic = stat;
  r.dof = cats - 1;
  r.p_value = chi_square_sf(stat, r.dof);
  return r;
}

GofResult gof_one_sample(std::span<const long long> counts,
                         std::span<const double> expected_probs) {
  if (counts.size() != expected_probs.size())
    throw DimensionMismatch("one-sample table sizes differ");
  long long n = 0;
  for (long long v : counts) n += v;
  if (n < 50) throw InsufficientData("need at least 50 counts");
  std::vector<double> obs(counts.size()), expd(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    obs[i] = static_cast<double>(counts[i]);
    expd[i] = expected_probs[i] * n;
  }
  return chi_square_table(obs, expd, 0);
}

}  // namespace pfkit
