#pragma once

/**
 * Synthetic constructions: the √H particle lower-bound instance, the
 * normalizer-variance blowup instance, the recursive delayed-signal
 * construction behind the myopic lower bound, and the kernel-switching PRM
 * interpolation task. Plus small fixtures (two-path, seeded random trees)
 * used across tests and demos.
 *
 * Instances whose natural tree exceeds the state budget are materialized on
 * an exactly equivalent collapsed state space (see README); the samplers'
 * laws are unchanged because kernels and PRM values depend only on the
 * collapsed statistic, and per-coordinate outputs are recovered from the
 * output path.
 */

#include <cstdint>
#include <span>
#include <vector>

#include "pfkit/chain.hpp"
#include "pfkit/oracle.hpp"
#include "pfkit/rng.hpp"

namespace pfkit {

// Two levels past ⊥: X_1 = {a, b} uniform, deterministic a→a', b→b';
// r* = (2, 1); PRM is flat at level 1. The workhorse hand-checkable fixture.
ProblemInstance two_path_instance();

// Same chain and reward, PRM replaced by the exact value function (root
// entry renormalized to 1).
ProblemInstance with_exact_prm(const ProblemInstance& inst);

// Seeded random tree: random kernel rows, random positive interior PRM,
// random positive terminal reward.
ProblemInstance random_tree_instance(int alphabet, int depth, uint64_t seed);

// Binary uniform tree with V̂(x·1) = (1+λ)V̂(x), V̂(x·0) = V̂(x), and
// r*(x_H) = (1+λ)^{#1s}: every tilted level marginal is exactly right yet SMC
// needs Ω(√H) particles. Falls back to the 1-count collapsed chain when the
// full tree would exceed the budget (set force_full to get BudgetExceeded
// instead).
struct SmcLowerInstance {
  ProblemInstance instance;
  bool collapsed = false;
  double lambda = 0.0;
  // Per-coordinate symbols of an output path (1 = the favored symbol).
  std::vector<int> coordinates(std::span<const int> path) const;
};

SmcLowerInstance build_smc_lower(int horizon, double lambda,
                                 long long budget = kDefaultStateBudget,
                                 bool force_full = false);

// Two deterministic branches, rare branch carrying an exponentially peaked
// PRM: χ²(π*_h‖π̂_h) ≤ 2 and coverage 2 at every level, yet var(Ŵ) blows up
// like 2^{H/2}.
ProblemInstance build_var_blowup(int horizon);

// ---------------------------------------------------------------------------
// Recursive myopic-lower-bound construction (delayed-signal distributions).
// ---------------------------------------------------------------------------

struct MyopicConstruction {
  int n_level = 1;
  std::vector<int> h_schedule;       // 𝔥(1..N)
  std::vector<double> gamma;         // γ_1..γ_N
  std::vector<uint8_t> ystar;        // length 𝔥(N)
  bool collapsed = false;
  ProblemInstance instance;

  int horizon() const { return h_schedule.back(); }

  // Exact log μ^(N) / log μ̂^(N) of a prefix (agreement-coded: bit h is 1 iff
  // the output agrees with y* at coordinate h+1). Formula-level; independent
  // of how the chain was materialized.
  double log_mu(std::span<const uint8_t> agree) const;
  double log_muhat(std::span<const uint8_t> agree) const;

  // Membership in the high-probability event F_N for a full-length output.
  bool in_failure_event(std::span<const uint8_t> agree) const;

  // Agreement bits of a full-length μ^(N) sample (coordinates independent).
  std::vector<uint8_t> sample_mu_agreement(RngStream& rng) const;

  // Agreement bits recovered from a sampler's output path on `instance`.
  std::vector<uint8_t> decode_agreement(std::span<const int> path) const;
};

MyopicConstruction build_myopic_lb(int n_level, std::vector<int> h_schedule,
                                   std::vector<double> gamma_schedule,
                                   std::vector<uint8_t> ystar,  // empty → seeded
                                   uint64_t ystar_seed = 0,
                                   long long budget = kDefaultStateBudget);

// ---------------------------------------------------------------------------
// Kernel-switching PRM interpolation.
// ---------------------------------------------------------------------------

// π_ref from the base spec; the target is the chain induced by the perturbed
// spec (r* is the exact final-level density ratio); the PRM interpolates with
// exponent (1-h/H)·α between the target's value function (α=0, or h=H) and
// the base-as-perturbation direction, so larger α delays the useful signal.
// All prefix probabilities are computed exactly on the tree.
ProblemInstance build_kernel_switch(const RowFn& base, const RowFn& perturbed, double alpha,
                                    int horizon, int alphabet,
                                    long long budget = kDefaultStateBudget);

// Binary helper: base = uniform, perturbed rows biased by up to ±epsilon.
ProblemInstance seeded_kernel_switch(uint64_t seed, double epsilon, double alpha, int horizon,
                                     long long budget = kDefaultStateBudget);

}  // namespace pfkit
