#pragma once

/**
 * Estimators and exact statistical utilities: total variation, the binomial
 * sum giving the per-coordinate bias reached by N-particle SMC on the
 * lower-bound instance, empirical final-state accumulators with standard
 * errors, and chi-square goodness-of-fit tests (with the incomplete-gamma
 * survival function implemented locally).
 */

#include <cstdint>
#include <span>
#include <vector>

#include "pfkit/oracle.hpp"

namespace pfkit {

// ½·Σ|p−q|; throws DimensionMismatch on level or size disagreement.
double exact_tv(const LevelDistribution& p, const LevelDistribution& q);

// Delta-method standard error of the plug-in TV between an empirical
// distribution (n samples) and a fixed reference.
double tv_standard_error(std::span<const double> empirical, std::span<const double> reference,
                         long long n);

// p_N = (1+λ)·E_{A∼Bin(N,1/2)}[A/(N+λA)], the per-coordinate 1-frequency of
// N-particle SMC on the lower-bound instance. Checks p_N ≤ p − c_λ/N with
// c_λ = 2λ(1+λ)/(2+λ)³ before returning.
double p_n_oracle(int n_particles, double lambda);

// Final-state counts over a stream of runs from one (instance, config).
struct EmpiricalFinal {
  std::vector<long long> counts;
  long long trials = 0;
  long long dead_runs = 0;
  long long restart_outs = 0;
  long long restart_total = 0;

  void resize(int n_states) { counts.assign(n_states, 0); }
  void merge(const EmpiricalFinal& o);
  long long completed() const { return trials - dead_runs - restart_outs; }

  // Distribution over completed runs; throws DegenerateLevel when none.
  LevelDistribution distribution(int level) const;
  // Binomial standard error per state.
  std::vector<double> standard_errors() const;
};

struct GofResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

// Two-sample chi-square over matched count vectors; categories with pooled
// expected count < 5 are merged into a tail bucket. Needs >= 50 counts per
// table and >= 2 surviving categories, else InsufficientData.
GofResult gof_two_sample(std::span<const long long> a, std::span<const long long> b);

// One-sample chi-square of counts against expected probabilities.
GofResult gof_one_sample(std::span<const long long> counts,
                         std::span<const double> expected_probs);

// Survival function of the chi-square distribution (regularized upper
// incomplete gamma Q(k/2, x/2)).
double chi_square_sf(double x, int dof);

}  // namespace pfkit
