#pragma once

/**
 * The sampling algorithms: sequential Monte Carlo with multinomial or
 * systematic resampling (output via the weighted measure, or wrapped in an
 * accept/restart loop), SMC with per-particle rejection sampling, diffusion
 * Monte Carlo with exact one-step lookahead and restart, action-level
 * sampling, sequential importance sampling, and best-of-N.
 *
 * All weight products are accumulated in log space. A step whose weights all
 * vanish marks the run dead rather than retrying silently; dead-run rates are
 * first-class outputs.
 */

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pfkit/chain.hpp"
#include "pfkit/rng.hpp"

namespace pfkit {

enum class Resampling { kMultinomial, kSystematic };
enum class ZTildeMode { kCinfTimesZhat1, kPilotDouble, kExplicit };
enum class Strictness { kStrict, kClamp };

struct SamplerConfig {
  int particles = 1;
  Resampling resampling = Resampling::kMultinomial;
  double eta = 1.0;                 // SMC-RS acceptance denominator scale
  double cinf = 0.0;                // worst-case ratio bound (Option 2, Z̃ mode)
  ZTildeMode ztilde_mode = ZTildeMode::kCinfTimesZhat1;
  double ztilde_value = 0.0;        // used when ztilde_mode == kExplicit
  int max_restarts = 64;
  Strictness strictness = Strictness::kStrict;
  long long attempt_cap = 200'000'000;  // SMC-RS proposal guard
};

// Identifies one trial's randomness; all substreams derive from it.
struct RunKey {
  uint64_t master = 0;
  uint64_t trial = 0;
};

struct ParticleRun {
  int horizon = 0;
  int particles = 0;

  // Per step h = 1..H (index h-1): particle state indices, the index of each
  // particle's ancestor in the previous step's arrays, and log weights.
  std::vector<std::vector<int>> states;
  std::vector<std::vector<int>> ancestors;
  std::vector<std::vector<double>> log_weights;

  std::vector<double> log_step_total;  // log W_h
  std::vector<double> log_cumulative;  // log Ŵ_h = Σ_{i≤h} (log W_i − log N)
  std::vector<double> ess;

  int output_state = -1;            // level-H state index; -1 when absent
  std::vector<int> output_path;     // state index per level 0..H for the output
  bool restarted_out = false;       // RESTART marker (accept loop exhausted)
  bool dead = false;                // some step had zero total weight
  int dead_step = -1;
  int restart_count = 0;
  long long attempts = 0;           // SMC-RS proposal attempts
  int clamp_warnings = 0;

  double log_what_final() const {
    return log_cumulative.empty() ? 0.0 : log_cumulative.back();
  }
};

// Alg. 1 with Output Option 1: resample, propagate, weight by adjacent-level
// PRM ratios, then draw the output from the final weighted measure.
ParticleRun smc_run(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key);

// Alg. 1 with Output Option 2: accept with min{Ŵ_H/(2·C_inf·V̂(⊥)), 1} and
// otherwise restart on a fresh substream. cfg.cinf must be finite.
ParticleRun smc_option2(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key);

// Alg. 2: per-particle rejection against the locally twisted kernel; each
// accepted child's ancestor is uniform over the previous multiset.
ParticleRun smc_rs_run(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key);

// Alg. 3: exact one-step lookahead Ṽ, ancestor resampling by Ṽ/V̂, twisted
// proposal by exact row normalization, terminal accept against Z̃_1.
ParticleRun dmc_restart_run(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key);

// Autoregressive sampling from π̂(x_{h+1}|x_h) ∝ π_ref(x_{h+1}|x_h)V̂(x_{h+1});
// equal in distribution to SMC-RS with N = 1.
ParticleRun action_level_run(const ProblemInstance& inst, RunKey key);

// N independent π_ref rollouts carrying cumulative weight V̂(x_H)/V̂(⊥);
// output drawn proportionally to final weights.
ParticleRun sis_run(const ProblemInstance& inst, int n_particles, RunKey key);

// N independent π_ref rollouts; returns the one with the highest terminal
// value, ties broken by lowest rollout index.
ParticleRun best_of_n_run(const ProblemInstance& inst, int n_particles, RunKey key);

// One resampling pass: n_out ancestor indices drawn from the weights.
// Multinomial consumes stream_at(i) per draw; systematic consumes stream_at(0)
// once. Exposed so the schemes can be tested on fixed weight vectors.
std::vector<int> resample_ancestors(std::span<const double> log_weights, int n_out,
                                    Resampling scheme,
                                    const std::function<RngStream(int)>& stream_at);

}  // namespace pfkit
