#pragma once

/**
 * Exact analytic quantities by enumeration and backward induction: value
 * functions, level marginals and their tilted versions, divergences, coverage
 * constants, and the closed-form error-bound curves. Everything here is
 * deterministic double-precision enumeration with compensated summation — no
 * sampling — so these values serve as trusted references for the statistical
 * tests on the samplers.
 */

#include <limits>
#include <vector>

#include "pfkit/chain.hpp"

namespace pfkit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    double y = x - carry;
    double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  double get() const { return sum; }
};

struct LevelDistribution {
  int level = 0;
  std::vector<double> probs;
};

// V*(x) = E[r*(x_H) | x_h = x], level by level from r*; V*(⊥) = Z.
ValueTable backward_induction(const ProblemInstance& inst);

// PRM whose levels 1..H copy the given V* table and whose root entry is 1.
ValueTable exact_prm_from(const ValueTable& vstar);

// All-ones table (tilting by it recovers the plain marginals π_h).
ValueTable unit_table(const LayeredChain& chain);

struct TiltedMarginals {
  std::vector<LevelDistribution> dist;  // one per level 0..H
  std::vector<double> normalizer;      // Σ_x π_h(x)·table(x) per level
};

// π_h tilted by the table and normalized: π*_h for V*, π̂_h for the PRM.
TiltedMarginals tilted_marginals(const ProblemInstance& inst, const ValueTable& table);

struct OptimalKernel {
  // rows[h][src]; empty row when V*(src) = 0 (the kernel is undefined there).
  std::vector<std::vector<KernelRow>> rows;
  std::vector<std::vector<char>> defined;

  const KernelRow& row_checked(int h, int src) const {
    if (!defined[h][src]) throw ZeroValueState("optimal kernel conditioned on V*=0 state");
    return rows[h][src];
  }
};

// π*(x_{h+1}|x_h) = π_ref(x_{h+1}|x_h)·V*(x_{h+1})/V*(x_h).
OptimalKernel optimal_kernel(const ProblemInstance& inst);

struct DivergenceReport {
  std::vector<double> chi2;               // χ²(π*_h ‖ π̂_h), levels 0..H
  std::vector<double> kl;                 // KL(π*_h ‖ π̂_h)
  std::vector<double> m_list;
  std::vector<std::vector<double>> d_cov; // d_cov[m][h]
  double z = 0.0;                         // partition function
  std::vector<double> z_hat;              // Ẑ_h per level
};

// χ² is computed both directly and through the product identity
// E^{π*}[V̂/V*]·E^{π*}[V*/V̂] − 1; disagreement beyond 1e-9 relative is a bug
// and raises SelfCheckFailed. Support mismatches yield +inf, never a throw.
DivergenceReport divergence_report(const ProblemInstance& inst,
                                   const std::vector<double>& m_list);

struct CoverageConstants {
  double c_act = 1.0;        // max V*(x_{h+1})/V*(x_h) over supported transitions
  double c_act_hat = 1.0;    // same for V̂
  double c_inf_raw = 1.0;    // max over states of max(V*/V̂, V̂/V*)
  double c_inf_rescaled = 1.0;  // after the optimal constant rescaling of V̂
  std::vector<double> eta_list;
  // action_tail[e][h] = Pr_{π*}[V*(x_h)/V*(x_{h-1}) ≥ η_e], levels 1..H at [h]
  std::vector<std::vector<double>> action_tail;
};

CoverageConstants coverage_constants(const ProblemInstance& inst,
                                     const std::vector<double>& eta_list);

struct TheoryBounds {
  double thm_3_2 = 0.0;        // √(C_act/N)·(H + Σ_{h<H} √χ²_h)
  double prop_b1_sharp = 0.0;  // per-step deviation sum (see README)
  double thm_3_4 = 0.0;        // H√(M·C_act/N) + Σ_{h<H} D_cov^M_h
  double thm_b4 = 0.0;         // adds the per-η action-tail terms
  double thm_3_6 = 0.0;        // (1/√N)·Σ_h √χ²_h
};

TheoryBounds theory_bounds(const ProblemInstance& inst, int n_particles, double m_param,
                           double eta);

// E[table(x_at_value_level) | x_at_query_level = ·] by backward induction.
std::vector<double> conditional_expectation(const ProblemInstance& inst,
                                            const ValueTable& table, int value_level,
                                            int query_level);

}  // namespace pfkit
