#include "pfkit/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pfkit/oracle.hpp"

namespace pfkit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr uint64_t kPilotRestartTag = 0x50494c4f54ULL;  // disjoint from restart ids

double log_value(const ValueTable& t, int h, int s) {
  const double v = t.at(h, s);
  return v > 0.0 ? std::log(v) : kNegInf;
}

// log Σ exp(lw_i), −inf when all weights vanish.
double log_sum_exp(std::span<const double> lw) {
  double m = kNegInf;
  for (double v : lw) m = std::max(m, v);
  if (m == kNegInf) return kNegInf;
  KahanSum acc;
  for (double v : lw) acc.add(std::exp(v - m));
  return m + std::log(acc.get());
}

double ess_from_log_weights(std::span<const double> lw, double log_total) {
  KahanSum sq;
  for (double v : lw)
    if (v != kNegInf) sq.add(std::exp(2.0 * (v - log_total)));
  const double s = sq.get();
  return s > 0.0 ? 1.0 / s : 0.0;
}

int sample_row(RngStream& rng, const KernelRow& row) {
  double u = rng.next_unit();
  double acc = 0.0;
  int last = -1;
  for (const Transition& t : row) {
    acc += t.prob;
    last = t.target;
    if (u < acc) return last;
  }
  return last;
}

// Samples a π_ref rollout; returns state indices per level 0..H.
std::vector<int> rollout(const ProblemInstance& inst, RunKey key, uint64_t which) {
  const LayeredChain& chain = inst.chain;
  std::vector<int> path(chain.horizon + 1);
  path[0] = 0;
  for (int h = 0; h < chain.horizon; ++h) {
    RngStream rng = derive_stream(
        key.master, {key.trial, 0, static_cast<uint64_t>(h + 1), kRngPropagate, which});
    const KernelRow& row = chain.row(h, path[h]);
    if (row.empty()) throw DegenerateRow("state has no outgoing transitions");
    path[h + 1] = sample_row(rng, row);
  }
  return path;
}

void finalize_output_path(ParticleRun& run, int output_particle) {
  const int H = run.horizon;
  run.output_path.assign(H + 1, 0);
  int j = output_particle;
  for (int h = H; h >= 1; --h) {
    run.output_path[h] = run.states[h - 1][j];
    j = run.ancestors[h - 1][j];
  }
  run.output_path[0] = 0;
  run.output_state = run.output_path[H];
}

ParticleRun make_run(const ProblemInstance& inst, int n) {
  ParticleRun run;
  run.horizon = inst.chain.horizon;
  run.particles = n;
  run.states.resize(run.horizon);
  run.ancestors.resize(run.horizon);
  run.log_weights.resize(run.horizon);
  run.log_step_total.assign(run.horizon, kNegInf);
  run.log_cumulative.assign(run.horizon, kNegInf);
  run.ess.assign(run.horizon, 0.0);
  return run;
}

}  // namespace

std::vector<int> resample_ancestors(std::span<const double> log_weights, int n_out,
                                    Resampling scheme,
                                    const std::function<RngStream(int)>& stream_at) {
  const int n_in = static_cast<int>(log_weights.size());
  double m = kNegInf;
  for (double v : log_weights) m = std::max(m, v);
  std::vector<double> cum(n_in);
  double acc = 0.0;
  for (int i = 0; i < n_in; ++i) {
    acc += (log_weights[i] == kNegInf || m == kNegInf) ? 0.0 : std::exp(log_weights[i] - m);
    cum[i] = acc;
  }
  std::vector<int> anc(n_out);
  if (!(acc > 0.0)) throw DegenerateRow("resampling from all-zero weights");
  if (scheme == Resampling::kMultinomial) {
    for (int i = 0; i < n_out; ++i) {
      RngStream rng = stream_at(i);
      const double u = rng.next_unit() * acc;
      anc[i] = static_cast<int>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      anc[i] = std::min(anc[i], n_in - 1);
    }
  } else {
    RngStream rng = stream_at(0);
    const double u0 = rng.next_unit();
    int j = 0;
    for (int i = 0; i < n_out; ++i) {
      const double pos = (i + u0) / n_out * acc;
      while (j < n_in - 1 && cum[j] <= pos) ++j;
      anc[i] = j;
    }
  }
  return anc;
}

// ---------------------------------------------------------------------------
// SMC (Alg. 1)
// ---------------------------------------------------------------------------

namespace {

ParticleRun smc_core(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key,
                     uint64_t restart) {
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;
  const int n = cfg.particles;
  ParticleRun run = make_run(inst, n);

  std::vector<int> prev_states;       // step h-1 particle states
  std::vector<double> prev_lw;        // step h-1 log weights
  double log_cum = 0.0;
  const double log_n = std::log(static_cast<double>(n));

  for (int h = 1; h <= H; ++h) {
    const uint64_t hh = static_cast<uint64_t>(h);
    std::vector<int>& anc = run.ancestors[h - 1];
    if (h == 1) {
      anc.assign(n, 0);
    } else {
      anc = resample_ancestors(prev_lw, n, cfg.resampling, [&](int i) {
        return derive_stream(key.master,
                             {key.trial, restart, hh, kRngResample, static_cast<uint64_t>(i)});
      });
    }

    std::vector<int>& cur = run.states[h - 1];
    std::vector<double>& lw = run.log_weights[h - 1];
    cur.resize(n);
    lw.resize(n);
    for (int i = 0; i < n; ++i) {
      const int src = (h == 1) ? 0 : prev_states[anc[i]];
      RngStream rng = derive_stream(
          key.master, {key.trial, restart, hh, kRngPropagate, static_cast<uint64_t>(i)});
      const KernelRow& row = chain.row(h - 1, src);
      if (row.empty()) throw DegenerateRow("state has no outgoing transitions");
      cur[i] = sample_row(rng, row);
      lw[i] = log_value(inst.prm, h, cur[i]) - log_value(inst.prm, h - 1, src);
    }

    const double log_total = log_sum_exp(lw);
    run.log_step_total[h - 1] = log_total;
    if (log_total == kNegInf) {
      run.dead = true;
      run.dead_step = h;
      return run;
    }
    run.ess[h - 1] = ess_from_log_weights(lw, log_total);
    log_cum += log_total - log_n;
    run.log_cumulative[h - 1] = log_cum;

    prev_states = cur;
    prev_lw = lw;
  }

  // Output Option 1: draw from the final weighted measure.
  RngStream rng =
      derive_stream(key.master, {key.trial, restart, static_cast<uint64_t>(H + 1), kRngOutput, 0});
  double m = kNegInf;
  for (double v : prev_lw) m = std::max(m, v);
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = prev_lw[i] == kNegInf ? 0.0 : std::exp(prev_lw[i] - m);
  const int j = sample_index(rng, w);
  finalize_output_path(run, j);
  return run;
}

}  // namespace

ParticleRun smc_run(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key) {
  return smc_core(inst, cfg, key, 0);
}

ParticleRun smc_option2(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key) {
  if (!(cfg.cinf >= 1.0) || !std::isfinite(cfg.cinf))
    throw InvalidSpec("Output Option 2 requires a finite C_inf >= 1");
  const int H = inst.chain.horizon;
  for (int r = 0; r < cfg.max_restarts; ++r) {
    ParticleRun run = smc_core(inst, cfg, key, static_cast<uint64_t>(r));
    run.restart_count = r;
    if (!run.dead) {
      // V̂(⊥) = 1 by the PRM normalization, so the threshold is 2·C_inf.
      const double log_acc = run.log_cumulative[H - 1] - std::log(2.0 * cfg.cinf);
      const double p = std::min(1.0, std::exp(log_acc));
      RngStream rng = derive_stream(key.master, {key.trial, static_cast<uint64_t>(r),
                                                 static_cast<uint64_t>(H + 2), kRngAccept, 0});
      if (rng.next_unit() < p) return run;
    }
  }
  ParticleRun marker = make_run(inst, cfg.particles);
  marker.restarted_out = true;
  marker.restart_count = cfg.max_restarts;
  return marker;
}

// ---------------------------------------------------------------------------
// SMC-RS (Alg. 2)
// ---------------------------------------------------------------------------

ParticleRun smc_rs_run(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key) {
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;
  const int n = cfg.particles;
  if (!(cfg.eta >= 1.0)) throw InvalidSpec("SMC-RS requires eta >= 1");
  ParticleRun run = make_run(inst, n);

  std::vector<int> prev(n, 0);  // all ⊥
  long long attempt = 0;
  for (int h = 1; h <= H; ++h) {
    std::vector<int>& cur = run.states[h - 1];
    std::vector<int>& anc = run.ancestors[h - 1];
    cur.clear();
    while (static_cast<int>(cur.size()) < n) {
      if (attempt >= cfg.attempt_cap) {
        run.dead = true;
        run.dead_step = h;
        run.attempts = attempt;
        return run;
      }
      RngStream rng =
          derive_stream(key.master, {key.trial, 0, static_cast<uint64_t>(h), kRngAttempt,
                                     static_cast<uint64_t>(attempt)});
      ++attempt;
      const int pick = static_cast<int>(rng.next_below(static_cast<uint64_t>(n)));
      const int src = prev[pick];
      const KernelRow& row = chain.row(h - 1, src);
      if (row.empty()) throw DegenerateRow("state has no outgoing transitions");
      const int child = sample_row(rng, row);
      double p_acc = inst.prm.at(h, child) / (cfg.eta * inst.prm.at(h - 1, src));
      if (p_acc > 1.0) {
        if (cfg.strictness == Strictness::kStrict)
          throw AcceptanceAboveOne("acceptance probability " + std::to_string(p_acc) +
                                   " > 1; eta below the PRM action coverage");
        p_acc = 1.0;
        ++run.clamp_warnings;
      }
      if (rng.next_unit() < p_acc) {
        cur.push_back(child);
        anc.push_back(pick);
      }
    }
    run.log_weights[h - 1].assign(n, 0.0);
    run.log_step_total[h - 1] = std::log(static_cast<double>(n));
    run.log_cumulative[h - 1] = 0.0;
    run.ess[h - 1] = static_cast<double>(n);
    prev = cur;
  }
  run.attempts = attempt;

  RngStream rng = derive_stream(key.master,
                                {key.trial, 0, static_cast<uint64_t>(H + 1), kRngOutput, 0});
  finalize_output_path(run, static_cast<int>(rng.next_below(static_cast<uint64_t>(n))));
  return run;
}

// ---------------------------------------------------------------------------
// DMC with restart (Alg. 3)
// ---------------------------------------------------------------------------

namespace {

struct DmcPass {
  ParticleRun run;
  double log_what = kNegInf;  // log Ŵ_H = Σ_h log W_{h-1}
  double zhat1 = 0.0;         // Ṽ(⊥) = Ẑ_1
  bool dead = false;
};

DmcPass dmc_pass(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key,
                 uint64_t restart) {
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;
  const int n = cfg.particles;
  DmcPass pass;
  pass.run = make_run(inst, n);
  ParticleRun& run = pass.run;

  std::vector<int> prev(n, 0);
  double log_cum = 0.0;
  const double log_n = std::log(static_cast<double>(n));
  for (int h = 1; h <= H; ++h) {
    // Exact one-step lookahead per distinct source state at this level.
    std::vector<double> vtilde(chain.level_size(h - 1),
                               std::numeric_limits<double>::quiet_NaN());
    auto lookahead = [&](int s) {
      if (std::isnan(vtilde[s])) {
        KahanSum acc;
        for (const Transition& t : chain.row(h - 1, s)) acc.add(t.prob * inst.prm.at(h, t.target));
        vtilde[s] = acc.get();
      }
      return vtilde[s];
    };

    std::vector<double> ratio(n);
    KahanSum ratio_sum;
    for (int i = 0; i < n; ++i) {
      const double denom = inst.prm.at(h - 1, prev[i]);
      ratio[i] = denom > 0.0 ? lookahead(prev[i]) / denom : 0.0;
      ratio_sum.add(ratio[i]);
    }
    if (h == 1) pass.zhat1 = lookahead(0);
    const double step_sum = ratio_sum.get();
    if (!(step_sum > 0.0)) {
      run.dead = true;
      run.dead_step = h;
      pass.dead = true;
      return pass;
    }
    run.log_step_total[h - 1] = std::log(step_sum);
    log_cum += run.log_step_total[h - 1] - log_n;
    run.log_cumulative[h - 1] = log_cum;

    std::vector<double> log_ratio(n);
    for (int i = 0; i < n; ++i) log_ratio[i] = ratio[i] > 0.0 ? std::log(ratio[i]) : kNegInf;
    run.log_weights[h - 1] = log_ratio;
    run.ess[h - 1] = ess_from_log_weights(log_ratio, run.log_step_total[h - 1]);

    std::vector<int> anc = resample_ancestors(log_ratio, n, Resampling::kMultinomial, [&](int i) {
      return derive_stream(key.master, {key.trial, restart, static_cast<uint64_t>(h),
                                        kRngResample, static_cast<uint64_t>(i)});
    });
    run.ancestors[h - 1] = anc;

    std::vector<int>& cur = run.states[h - 1];
    cur.resize(n);
    for (int i = 0; i < n; ++i) {
      const int src = prev[anc[i]];
      const KernelRow& row = chain.row(h - 1, src);
      std::vector<double> tw(row.size());
      for (size_t t = 0; t < row.size(); ++t) tw[t] = row[t].prob * inst.prm.at(h, row[t].target);
      RngStream rng = derive_stream(key.master, {key.trial, restart, static_cast<uint64_t>(h),
                                                 kRngPropagate, static_cast<uint64_t>(i)});
      const int pick = sample_index(rng, tw);
      if (pick < 0) throw DegenerateRow("twisted proposal row has zero mass");
      cur[i] = row[pick].target;
    }
    prev = cur;
  }
  pass.log_what = log_cum;

  RngStream rng = derive_stream(key.master, {key.trial, restart, static_cast<uint64_t>(H + 1),
                                             kRngOutput, 0});
  finalize_output_path(run, static_cast<int>(rng.next_below(static_cast<uint64_t>(n))));
  return pass;
}

}  // namespace

ParticleRun dmc_restart_run(const ProblemInstance& inst, const SamplerConfig& cfg, RunKey key) {
  const int H = inst.chain.horizon;
  double log_ztilde = 0.0;
  bool ztilde_ready = false;

  switch (cfg.ztilde_mode) {
    case ZTildeMode::kExplicit:
      if (!(cfg.ztilde_value > 0.0)) throw InvalidSpec("explicit Z̃ must be positive");
      log_ztilde = std::log(cfg.ztilde_value);
      ztilde_ready = true;
      break;
    case ZTildeMode::kCinfTimesZhat1:
      if (!(cfg.cinf >= 1.0) || !std::isfinite(cfg.cinf))
        throw InvalidSpec("Z̃ = C_inf·Ẑ_1 requires a finite C_inf >= 1");
      break;  // Ẑ_1 comes from the first pass
    case ZTildeMode::kPilotDouble: {
      DmcPass pilot = dmc_pass(inst, cfg, key, kPilotRestartTag);
      if (pilot.dead) {
        ParticleRun marker = pilot.run;
        marker.restarted_out = true;
        return marker;
      }
      log_ztilde = std::log(2.0) + pilot.log_what;
      ztilde_ready = true;
      break;
    }
  }

  for (int r = 0; r < cfg.max_restarts; ++r) {
    DmcPass pass = dmc_pass(inst, cfg, key, static_cast<uint64_t>(r));
    pass.run.restart_count = r;
    if (pass.dead) continue;
    if (!ztilde_ready) {
      log_ztilde = std::log(cfg.cinf * pass.zhat1);
      ztilde_ready = true;
    }
    double p = std::exp(pass.log_what - log_ztilde);
    if (p > 1.0) {
      if (cfg.strictness == Strictness::kStrict)
        throw ZTildeTooSmall("Ŵ_H exceeded Z̃_1 (ratio " + std::to_string(p) + ")");
      p = 1.0;
      ++pass.run.clamp_warnings;
    }
    RngStream rng = derive_stream(key.master, {key.trial, static_cast<uint64_t>(r),
                                               static_cast<uint64_t>(H + 2), kRngAccept, 0});
    if (rng.next_unit() < p) return pass.run;
  }
  ParticleRun marker = make_run(inst, cfg.particles);
  marker.restarted_out = true;
  marker.restart_count = cfg.max_restarts;
  return marker;
}

// ---------------------------------------------------------------------------
// Comparison algorithms
// ---------------------------------------------------------------------------

ParticleRun action_level_run(const ProblemInstance& inst, RunKey key) {
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;
  ParticleRun run = make_run(inst, 1);
  run.output_path.assign(H + 1, 0);
  for (int h = 1; h <= H; ++h) {
    const int src = run.output_path[h - 1];
    const KernelRow& row = chain.row(h - 1, src);
    std::vector<double> tw(row.size());
    for (size_t t = 0; t < row.size(); ++t) tw[t] = row[t].prob * inst.prm.at(h, row[t].target);
    RngStream rng = derive_stream(
        key.master, {key.trial, 0, static_cast<uint64_t>(h), kRngPropagate, 0});
    const int pick = sample_index(rng, tw);
    if (pick < 0) throw DegenerateRow("twisted row has zero mass at level " + std::to_string(h));
    run.output_path[h] = row[pick].target;
    run.states[h - 1] = {run.output_path[h]};
    run.ancestors[h - 1] = {0};
    run.log_weights[h - 1] = {0.0};
    run.log_step_total[h - 1] = 0.0;
    run.log_cumulative[h - 1] = 0.0;
    run.ess[h - 1] = 1.0;
  }
  run.output_state = run.output_path[H];
  return run;
}

ParticleRun sis_run(const ProblemInstance& inst, int n_particles, RunKey key) {
  const int H = inst.chain.horizon;
  ParticleRun run = make_run(inst, n_particles);
  std::vector<std::vector<int>> paths(n_particles);
  std::vector<double> lw(n_particles);
  for (int i = 0; i < n_particles; ++i) {
    paths[i] = rollout(inst, key, static_cast<uint64_t>(i));
    // Per-step PRM ratios telescope to V̂(x_H)/V̂(⊥) = r*(x_H).
    lw[i] = log_value(inst.prm, H, paths[i][H]);
  }
  for (int h = 1; h <= H; ++h) {
    run.states[h - 1].resize(n_particles);
    run.ancestors[h - 1].resize(n_particles);
    for (int i = 0; i < n_particles; ++i) {
      run.states[h - 1][i] = paths[i][h];
      run.ancestors[h - 1][i] = i;
    }
  }
  run.log_weights[H - 1] = lw;
  const double log_total = log_sum_exp(lw);
  run.log_step_total[H - 1] = log_total;
  if (log_total == kNegInf) {
    run.dead = true;
    run.dead_step = H;
    return run;
  }
  run.ess[H - 1] = ess_from_log_weights(lw, log_total);
  run.log_cumulative[H - 1] = log_total - std::log(static_cast<double>(n_particles));

  RngStream rng = derive_stream(key.master,
                                {key.trial, 0, static_cast<uint64_t>(H + 1), kRngOutput, 0});
  double m = kNegInf;
  for (double v : lw) m = std::max(m, v);
  std::vector<double> w(n_particles);
  for (int i = 0; i < n_particles; ++i) w[i] = lw[i] == kNegInf ? 0.0 : std::exp(lw[i] - m);
  const int j = sample_index(rng, w);
  run.output_path = paths[j];
  run.output_state = paths[j][H];
  return run;
}

ParticleRun best_of_n_run(const ProblemInstance& inst, int n_particles, RunKey key) {
  const int H = inst.chain.horizon;
  ParticleRun run = make_run(inst, n_particles);
  double best_value = -1.0;
  std::vector<int> best_path;
  for (int i = 0; i < n_particles; ++i) {
    std::vector<int> path = rollout(inst, key, static_cast<uint64_t>(i));
    const double v = inst.prm.at(H, path[H]);
    if (v > best_value) {  // strict: ties keep the lowest rollout index
      best_value = v;
      best_path = std::move(path);
    }
  }
  run.output_path = best_path;
  run.output_state = best_path[H];
  return run;
}

}  // namespace pfkit
