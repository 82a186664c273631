#include "pfkit/campaign.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace pfkit {

namespace {

constexpr long long kChunk = 512;  // fixed: worker counts must not change results

ParticleRun run_one(const ProblemInstance& inst, const CampaignConfig& cfg, long long trial) {
  const RunKey key{cfg.seed, static_cast<uint64_t>(trial)};
  switch (cfg.algo) {
    case Algo::kSmc: return smc_run(inst, cfg.sampler, key);
    case Algo::kSmcOpt2: return smc_option2(inst, cfg.sampler, key);
    case Algo::kSmcRs: return smc_rs_run(inst, cfg.sampler, key);
    case Algo::kDmcRestart: return dmc_restart_run(inst, cfg.sampler, key);
    case Algo::kSis: return sis_run(inst, cfg.sampler.particles, key);
    case Algo::kBon: return best_of_n_run(inst, cfg.sampler.particles, key);
    case Algo::kActionRs: return action_level_run(inst, key);
  }
  throw InvalidSpec("unknown algorithm");
}

}  // namespace

std::string algo_name(Algo a) {
  switch (a) {
    case Algo::kSmc: return "smc";
    case Algo::kSmcOpt2: return "smc-opt2";
    case Algo::kSmcRs: return "smc-rs";
    case Algo::kDmcRestart: return "dmc-restart";
    case Algo::kSis: return "sis";
    case Algo::kBon: return "bon";
    case Algo::kActionRs: return "action-rs";
  }
  return "?";
}

Algo parse_algo(const std::string& name) {
  for (Algo a : {Algo::kSmc, Algo::kSmcOpt2, Algo::kSmcRs, Algo::kDmcRestart, Algo::kSis,
                 Algo::kBon, Algo::kActionRs}) {
    if (algo_name(a) == name) return a;
  }
  throw InvalidSpec("unrecognized algorithm '" + name + "'");
}

void CampaignAccumulator::init(const ProblemInstance& inst, const CampaignConfig& cfg) {
  horizon = inst.chain.horizon;
  final_counts.resize(inst.chain.level_size(horizon));
  if (cfg.track_what) {
    what_sum.assign(horizon, KahanSum{});
    what_sq.assign(horizon, KahanSum{});
  }
  if (cfg.coords != CoordMode::kNone) coord_ones.assign(horizon, 0);
  if (cfg.track_weighted_final) {
    weighted_final.assign(inst.chain.level_size(horizon), KahanSum{});
    weighted_final_sq.assign(inst.chain.level_size(horizon), KahanSum{});
  }
}

void CampaignAccumulator::absorb(const ParticleRun& run, const CampaignConfig& cfg) {
  ++final_counts.trials;
  final_counts.restart_total += run.restart_count;
  restart_sum.add(run.restart_count);
  attempts_sum.add(static_cast<double>(run.attempts));
  clamp_warnings += run.clamp_warnings;

  if (cfg.track_what && !run.restarted_out && !run.log_cumulative.empty()) {
    // Dead runs carry their partial product and zeros afterwards; both enter
    // the mean (the unbiasedness statement averages over every run).
    ++what_n;
    for (int h = 0; h < horizon; ++h) {
      double w = 0.0;
      if ((!run.dead || h < run.dead_step - 1) &&
          h < static_cast<int>(run.log_cumulative.size()))
        w = std::exp(run.log_cumulative[h]);
      what_sum[h].add(w);
      what_sq[h].add(w * w);
    }
  }

  if (run.dead) {
    ++final_counts.dead_runs;
    return;
  }
  if (run.restarted_out) {
    ++final_counts.restart_outs;
    return;
  }

  ++final_counts.counts[run.output_state];
  logwhat_sum.add(run.log_what_final());
  ++logwhat_n;

  if (cfg.coords != CoordMode::kNone) {
    ++coord_n;
    for (int h = 1; h <= horizon; ++h) {
      int sym = 0;
      switch (cfg.coords) {
        case CoordMode::kTreeBits:
          sym = tree_symbol(cfg.coord_alphabet, run.output_path[h], run.output_path[h - 1]);
          break;
        case CoordMode::kCountDelta:
          sym = run.output_path[h] - run.output_path[h - 1];
          break;
        case CoordMode::kLowBit:
          sym = run.output_path[h] & 1;
          break;
        case CoordMode::kNone: break;
      }
      if (sym == 1) ++coord_ones[h - 1];
    }
  }

  if (!weighted_final.empty() && !run.log_weights.empty()) {
    // Ŵ_H · ν̂_H(x): normalized final weights scaled by the cumulative
    // normalizer estimate.
    const auto& lw = run.log_weights[horizon - 1];
    const double log_total = run.log_step_total[horizon - 1];
    const double what = std::exp(run.log_what_final());
    std::vector<double> mass(weighted_final.size(), 0.0);
    for (int i = 0; i < static_cast<int>(lw.size()); ++i) {
      if (std::isinf(lw[i]) && lw[i] < 0) continue;
      mass[run.states[horizon - 1][i]] += std::exp(lw[i] - log_total);
    }
    for (size_t s = 0; s < mass.size(); ++s) {
      const double v = what * mass[s];
      weighted_final[s].add(v);
      weighted_final_sq[s].add(v * v);
    }
  }
}

void CampaignAccumulator::merge(const CampaignAccumulator& o) {
  final_counts.merge(o.final_counts);
  for (size_t h = 0; h < what_sum.size(); ++h) {
    what_sum[h].add(o.what_sum[h].get());
    what_sq[h].add(o.what_sq[h].get());
  }
  what_n += o.what_n;
  logwhat_sum.add(o.logwhat_sum.get());
  logwhat_n += o.logwhat_n;
  restart_sum.add(o.restart_sum.get());
  attempts_sum.add(o.attempts_sum.get());
  clamp_warnings += o.clamp_warnings;
  for (size_t i = 0; i < coord_ones.size(); ++i) coord_ones[i] += o.coord_ones[i];
  coord_n += o.coord_n;
  for (size_t s = 0; s < weighted_final.size(); ++s) {
    weighted_final[s].add(o.weighted_final[s].get());
    weighted_final_sq[s].add(o.weighted_final_sq[s].get());
  }
}

double CampaignResult::dead_rate() const {
  return acc.final_counts.trials == 0
             ? 0.0
             : static_cast<double>(acc.final_counts.dead_runs) / acc.final_counts.trials;
}

double CampaignResult::restart_mean() const {
  return acc.final_counts.trials == 0 ? 0.0
                                      : acc.restart_sum.get() / acc.final_counts.trials;
}

double CampaignResult::attempts_mean() const {
  return acc.final_counts.trials == 0 ? 0.0
                                      : acc.attempts_sum.get() / acc.final_counts.trials;
}

double CampaignResult::mean_logwhat() const {
  return acc.logwhat_n == 0 ? 0.0 : acc.logwhat_sum.get() / acc.logwhat_n;
}

std::vector<double> CampaignResult::mean_what() const {
  std::vector<double> out(acc.what_sum.size());
  for (size_t h = 0; h < out.size(); ++h)
    out[h] = acc.what_n == 0 ? 0.0 : acc.what_sum[h].get() / acc.what_n;
  return out;
}

std::vector<double> CampaignResult::se_what() const {
  std::vector<double> out(acc.what_sum.size());
  const double n = static_cast<double>(acc.what_n);
  for (size_t h = 0; h < out.size(); ++h) {
    if (acc.what_n < 2) {
      out[h] = 0.0;
      continue;
    }
    const double mean = acc.what_sum[h].get() / n;
    const double var = std::max(0.0, acc.what_sq[h].get() / n - mean * mean);
    out[h] = std::sqrt(var / n);
  }
  return out;
}

std::vector<double> CampaignResult::coord_freq() const {
  std::vector<double> out(acc.coord_ones.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = acc.coord_n == 0 ? 0.0 : static_cast<double>(acc.coord_ones[i]) / acc.coord_n;
  return out;
}

std::vector<double> CampaignResult::coord_se() const {
  std::vector<double> out(acc.coord_ones.size());
  const auto freq = coord_freq();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = acc.coord_n == 0 ? 0.0
                              : std::sqrt(freq[i] * (1.0 - freq[i]) / acc.coord_n);
  return out;
}

CampaignResult run_campaign(const ProblemInstance& inst, const CampaignConfig& cfg) {
  if (cfg.trials < 1) throw InvalidSpec("trials must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  const long long chunks = (cfg.trials + kChunk - 1) / kChunk;
  std::vector<CampaignAccumulator> partial(static_cast<size_t>(chunks));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(chunks));

  std::atomic<long long> next{0};
  auto work = [&]() {
    for (;;) {
      const long long c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        CampaignAccumulator acc;
        acc.init(inst, cfg);
        const long long lo = c * kChunk;
        const long long hi = std::min(cfg.trials, lo + kChunk);
        for (long long t = lo; t < hi; ++t) acc.absorb(run_one(inst, cfg, t), cfg);
        partial[static_cast<size_t>(c)] = std::move(acc);
      } catch (...) {
        errors[static_cast<size_t>(c)] = std::current_exception();
      }
    }
  };

  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  // Deterministic reduction: chunk order, never completion order.
  for (long long c = 0; c < chunks; ++c)
    if (errors[static_cast<size_t>(c)]) std::rethrow_exception(errors[static_cast<size_t>(c)]);
  CampaignResult result;
  result.acc = std::move(partial[0]);
  for (long long c = 1; c < chunks; ++c) result.acc.merge(partial[static_cast<size_t>(c)]);

  result.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return result;
}

SummaryRow summarize(const ProblemInstance& inst, const CampaignConfig& cfg,
                     const CampaignResult& result, const LevelDistribution& pistar_h,
                     std::optional<TheoryBounds> bounds) {
  SummaryRow row;
  row.instance = inst.name;
  row.instance_hash = content_hash(instance_to_json(inst));
  row.algo = algo_name(cfg.algo);
  row.particles = cfg.sampler.particles;
  row.trials = cfg.trials;
  row.seed = cfg.seed;
  row.mean_logwhat = result.mean_logwhat();
  row.dead_rate = result.dead_rate();
  row.restart_mean = result.restart_mean();
  row.attempts_mean = result.attempts_mean();
  row.bounds = bounds;

  const auto& fc = result.acc.final_counts;
  if (fc.completed() > 0) {
    LevelDistribution emp = fc.distribution(inst.chain.horizon);
    row.tv_to_pistar = exact_tv(emp, pistar_h);
    KahanSum half;
    for (double se : fc.standard_errors()) half.add(se);
    row.tv_halfwidth = 0.5 * half.get();
  } else {
    row.tv_to_pistar = 1.0;
    row.tv_halfwidth = 0.0;
  }
  return row;
}

std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string csv_header(bool with_bounds) {
  std::string h =
      "instance,instance_hash,algo,N,trials,seed,tv_to_pistar,tv_halfwidth,mean_logWhat,"
      "dead_rate,restart_mean,attempts_mean";
  if (with_bounds) h += ",thm_3_2,prop_B1_sharp,thm_3_4,thm_B4,thm_3_6";
  return h + "\n";
}

std::string csv_row(const SummaryRow& row) {
  std::ostringstream os;
  os << row.instance << ',' << row.instance_hash << ',' << row.algo << ',' << row.particles
     << ',' << row.trials << ',' << row.seed << ',' << format_g17(row.tv_to_pistar) << ','
     << format_g17(row.tv_halfwidth) << ',' << format_g17(row.mean_logwhat) << ','
     << format_g17(row.dead_rate) << ',' << format_g17(row.restart_mean) << ','
     << format_g17(row.attempts_mean);
  if (row.bounds) {
    os << ',' << format_g17(row.bounds->thm_3_2) << ',' << format_g17(row.bounds->prop_b1_sharp)
       << ',' << format_g17(row.bounds->thm_3_4) << ',' << format_g17(row.bounds->thm_b4) << ','
       << format_g17(row.bounds->thm_3_6);
  }
  os << '\n';
  return os.str();
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ParseError("cannot open " + tmp + " for writing");
    os << text;
    os.flush();
    if (!os) throw ParseError("write to " + tmp + " failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace pfkit
