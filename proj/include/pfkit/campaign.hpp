#pragma once

/**
 * Trial campaigns: fans trials out to a worker pool and merges results
 * through order-independent accumulators (integer counts and compensated
 * sums reduced in fixed chunk order), so outputs are bit-identical for a
 * given seed regardless of worker count. Also the CSV/JSON writers shared by
 * the CLI and the acceptance suite.
 */

#include <optional>
#include <string>
#include <vector>

#include "pfkit/oracle.hpp"
#include "pfkit/samplers.hpp"
#include "pfkit/stats.hpp"

namespace pfkit {

enum class Algo { kSmc, kSmcOpt2, kSmcRs, kDmcRestart, kSis, kBon, kActionRs };

std::string algo_name(Algo a);
Algo parse_algo(const std::string& name);

// How to read per-coordinate symbols off an output path.
enum class CoordMode { kNone, kTreeBits, kCountDelta, kLowBit };

struct CampaignConfig {
  Algo algo = Algo::kSmc;
  SamplerConfig sampler;
  long long trials = 1;
  uint64_t seed = 0;
  int workers = 1;
  CoordMode coords = CoordMode::kNone;
  int coord_alphabet = 2;
  bool track_what = true;            // per-level Ŵ_h moments (linear space)
  bool track_weighted_final = false; // Ŵ_H-weighted final measure moments
};

struct CampaignAccumulator {
  EmpiricalFinal final_counts;
  int horizon = 0;
  std::vector<KahanSum> what_sum;   // per level h=1..H (index h-1)
  std::vector<KahanSum> what_sq;
  long long what_n = 0;             // all runs (dead runs contribute zeros)
  KahanSum logwhat_sum;             // completed runs only
  long long logwhat_n = 0;
  KahanSum restart_sum;
  KahanSum attempts_sum;
  long long clamp_warnings = 0;
  std::vector<long long> coord_ones;
  long long coord_n = 0;
  std::vector<KahanSum> weighted_final;     // Σ over runs of Ŵ_H·ν̂_H(x)
  std::vector<KahanSum> weighted_final_sq;

  void init(const ProblemInstance& inst, const CampaignConfig& cfg);
  void absorb(const ParticleRun& run, const CampaignConfig& cfg);
  void merge(const CampaignAccumulator& o);
};

struct CampaignResult {
  CampaignAccumulator acc;
  double wall_ms = 0.0;

  double dead_rate() const;
  double restart_mean() const;
  double attempts_mean() const;
  double mean_logwhat() const;
  std::vector<double> mean_what() const;
  std::vector<double> se_what() const;  // standard error of the mean
  std::vector<double> coord_freq() const;
  std::vector<double> coord_se() const;
};

// Executes cfg.trials trials of the configured algorithm. Trial t uses
// RunKey{cfg.seed, t}; worker count never affects any output bit.
CampaignResult run_campaign(const ProblemInstance& inst, const CampaignConfig& cfg);

// One summary row of the tabular interchange format.
struct SummaryRow {
  std::string instance;
  std::string instance_hash;
  std::string algo;
  int particles = 0;
  long long trials = 0;
  uint64_t seed = 0;
  double tv_to_pistar = 0.0;
  double tv_halfwidth = 0.0;
  double mean_logwhat = 0.0;
  double dead_rate = 0.0;
  double restart_mean = 0.0;
  double attempts_mean = 0.0;
  std::optional<TheoryBounds> bounds;  // sweep rows carry the bound columns
};

// TV of the completed-run empirical distribution against π*_H, with the
// worst-case half-width Σ SE_x / 2 reported alongside.
SummaryRow summarize(const ProblemInstance& inst, const CampaignConfig& cfg,
                     const CampaignResult& result, const LevelDistribution& pistar_h,
                     std::optional<TheoryBounds> bounds = std::nullopt);

std::string csv_header(bool with_bounds);
std::string csv_row(const SummaryRow& row);
std::string format_g17(double x);

// Writes via a temp file and rename so interrupted commands leave no partial
// output.
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace pfkit
