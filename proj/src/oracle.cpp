#include "pfkit/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace pfkit {

namespace {

constexpr double kPushTol = 1e-10;

// Forward marginals π_h under π_ref.
std::vector<std::vector<double>> forward_marginals(const LayeredChain& chain) {
  std::vector<std::vector<double>> pi(chain.horizon + 1);
  pi[0] = {1.0};
  for (int h = 0; h < chain.horizon; ++h) {
    std::vector<KahanSum> next(chain.level_size(h + 1));
    for (int s = 0; s < chain.level_size(h); ++s) {
      if (pi[h][s] == 0.0) continue;
      for (const Transition& t : chain.row(h, s)) next[t.target].add(pi[h][s] * t.prob);
    }
    pi[h + 1].resize(next.size());
    for (size_t i = 0; i < next.size(); ++i) pi[h + 1][i] = next[i].get();
  }
  return pi;
}

}  // namespace

ValueTable backward_induction(const ProblemInstance& inst) {
  const LayeredChain& chain = inst.chain;
  ValueTable table;
  table.tag = ValueTag::kExactVstar;
  table.values.resize(chain.horizon + 1);
  table.values[chain.horizon] = inst.terminal_reward;
  for (int h = chain.horizon - 1; h >= 0; --h) {
    table.values[h].resize(chain.level_size(h));
    for (int s = 0; s < chain.level_size(h); ++s) {
      KahanSum acc;
      for (const Transition& t : chain.row(h, s))
        acc.add(t.prob * table.values[h + 1][t.target]);
      table.values[h][s] = acc.get();
    }
  }
  return table;
}

ValueTable exact_prm_from(const ValueTable& vstar) {
  ValueTable prm;
  prm.tag = ValueTag::kPrm;
  prm.values = vstar.values;
  prm.values[0] = {1.0};
  return prm;
}

ValueTable unit_table(const LayeredChain& chain) {
  ValueTable t;
  t.tag = ValueTag::kExactVstar;
  t.values.resize(chain.horizon + 1);
  for (int h = 0; h <= chain.horizon; ++h) t.values[h].assign(chain.level_size(h), 1.0);
  return t;
}

TiltedMarginals tilted_marginals(const ProblemInstance& inst, const ValueTable& table) {
  const LayeredChain& chain = inst.chain;
  auto pi = forward_marginals(chain);
  TiltedMarginals out;
  out.dist.resize(chain.horizon + 1);
  out.normalizer.resize(chain.horizon + 1);
  for (int h = 0; h <= chain.horizon; ++h) {
    KahanSum mass;
    std::vector<double> probs(chain.level_size(h));
    for (int s = 0; s < chain.level_size(h); ++s) {
      probs[s] = pi[h][s] * table.at(h, s);
      mass.add(probs[s]);
    }
    const double z = mass.get();
    if (!(z > 0.0)) throw DegenerateLevel("zero tilted mass at level " + std::to_string(h));
    for (double& p : probs) p /= z;
    out.dist[h] = {h, std::move(probs)};
    out.normalizer[h] = z;
  }
  return out;
}

OptimalKernel optimal_kernel(const ProblemInstance& inst) {
  const LayeredChain& chain = inst.chain;
  ValueTable vstar = backward_induction(inst);
  OptimalKernel out;
  out.rows.resize(chain.horizon);
  out.defined.resize(chain.horizon);
  for (int h = 0; h < chain.horizon; ++h) {
    out.rows[h].resize(chain.level_size(h));
    out.defined[h].assign(chain.level_size(h), 0);
    for (int s = 0; s < chain.level_size(h); ++s) {
      const double v = vstar.at(h, s);
      if (!(v > 0.0)) continue;
      KernelRow row;
      KahanSum sum;
      for (const Transition& t : chain.row(h, s)) {
        const double p = t.prob * vstar.at(h + 1, t.target) / v;
        if (p > 0.0) {
          row.push_back({t.target, p});
          sum.add(p);
        }
      }
      if (std::abs(sum.get() - 1.0) > kPushTol)
        throw SelfCheckFailed("optimal kernel row failed to normalize within 1e-10");
      out.rows[h][s] = std::move(row);
      out.defined[h][s] = 1;
    }
  }
  return out;
}

DivergenceReport divergence_report(const ProblemInstance& inst,
                                   const std::vector<double>& m_list) {
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;
  ValueTable vstar = backward_induction(inst);
  TiltedMarginals star = tilted_marginals(inst, vstar);
  TiltedMarginals hat = tilted_marginals(inst, inst.prm);

  DivergenceReport rep;
  rep.m_list = m_list;
  rep.chi2.assign(H + 1, 0.0);
  rep.kl.assign(H + 1, 0.0);
  rep.d_cov.assign(m_list.size(), std::vector<double>(H + 1, 0.0));
  rep.z = vstar.at(0, 0);
  rep.z_hat = hat.normalizer;

  for (int h = 0; h <= H; ++h) {
    const auto& p = star.dist[h].probs;
    const auto& q = hat.dist[h].probs;

    KahanSum chi_direct;  // Σ p²/q, then -1
    KahanSum kl;
    KahanSum e_hat_over_star;  // E^{π*}[V̂/V*]
    KahanSum e_star_over_hat;  // E^{π*}[V*/V̂]
    bool infinite = false;
    for (int s = 0; s < chain.level_size(h); ++s) {
      if (p[s] == 0.0) continue;
      if (q[s] == 0.0) {
        infinite = true;
        break;
      }
      chi_direct.add(p[s] * p[s] / q[s]);
      kl.add(p[s] * std::log(p[s] / q[s]));
      // π*_h(s) > 0 implies V*(s) > 0; the PRM may still vanish there, which
      // is the same support mismatch as q[s] == 0 handled above.
      e_hat_over_star.add(p[s] * inst.prm.at(h, s) / vstar.at(h, s));
      e_star_over_hat.add(p[s] * vstar.at(h, s) / inst.prm.at(h, s));
    }

    if (infinite) {
      rep.chi2[h] = kInf;
      rep.kl[h] = kInf;
    } else {
      const double direct = chi_direct.get() - 1.0;
      const double via_identity =
          e_hat_over_star.get() * e_star_over_hat.get() - 1.0;
      const double scale = std::max({std::abs(direct), std::abs(via_identity), 1.0});
      if (std::abs(direct - via_identity) > 1e-9 * scale)
        throw SelfCheckFailed("chi-square product identity mismatch at level " +
                              std::to_string(h));
      rep.chi2[h] = std::max(0.0, direct);
      rep.kl[h] = std::max(0.0, kl.get());
    }

    for (size_t m = 0; m < m_list.size(); ++m) {
      KahanSum tail;
      for (int s = 0; s < chain.level_size(h); ++s) {
        if (p[s] == 0.0) continue;
        const double ratio = q[s] > 0.0 ? p[s] / q[s] : kInf;
        if (ratio >= m_list[m]) tail.add(p[s]);
      }
      rep.d_cov[m][h] = std::min(1.0, tail.get());
    }
  }
  return rep;
}

CoverageConstants coverage_constants(const ProblemInstance& inst,
                                     const std::vector<double>& eta_list) {
  const LayeredChain& chain = inst.chain;
  const int H = chain.horizon;
  ValueTable vstar = backward_induction(inst);
  auto mask = reachable_mask(chain);

  CoverageConstants out;
  out.eta_list = eta_list;

  for (int h = 0; h < H; ++h) {
    for (int s = 0; s < chain.level_size(h); ++s) {
      if (!mask[h][s]) continue;
      for (const Transition& t : chain.row(h, s)) {
        if (t.prob <= 0.0) continue;
        const double vs = vstar.at(h, s), vt = vstar.at(h + 1, t.target);
        if (vt > 0.0) out.c_act = vs > 0.0 ? std::max(out.c_act, vt / vs) : kInf;
        const double ws = inst.prm.at(h, s), wt = inst.prm.at(h + 1, t.target);
        if (wt > 0.0) out.c_act_hat = ws > 0.0 ? std::max(out.c_act_hat, wt / ws) : kInf;
      }
    }
  }

  double ratio_min = kInf, ratio_max = 0.0;
  for (int h = 0; h <= H; ++h) {
    for (int s = 0; s < chain.level_size(h); ++s) {
      if (!mask[h][s]) continue;
      const double v = vstar.at(h, s), w = inst.prm.at(h, s);
      if (v == 0.0 && w == 0.0) continue;
      const double r = (w > 0.0 && v > 0.0) ? v / w : kInf;
      ratio_min = std::min(ratio_min, r);
      ratio_max = std::max(ratio_max, r);
      out.c_inf_raw = std::max(out.c_inf_raw, r == kInf ? kInf : std::max(r, 1.0 / r));
    }
  }
  out.c_inf_rescaled = (ratio_max == kInf || !(ratio_min > 0.0))
                           ? kInf
                           : std::max(1.0, std::sqrt(ratio_max / ratio_min));

  // Action-level tail masses under the optimal chain (Thm. B.4's extra term).
  TiltedMarginals star = tilted_marginals(inst, vstar);
  OptimalKernel opt = optimal_kernel(inst);
  out.action_tail.assign(eta_list.size(), std::vector<double>(H + 1, 0.0));
  for (size_t e = 0; e < eta_list.size(); ++e) {
    for (int h = 1; h <= H; ++h) {
      KahanSum tail;
      const auto& prev = star.dist[h - 1].probs;
      for (int s = 0; s < chain.level_size(h - 1); ++s) {
        if (prev[s] == 0.0 || !opt.defined[h - 1][s]) continue;
        const double vs = vstar.at(h - 1, s);
        for (const Transition& t : opt.rows[h - 1][s]) {
          const double ratio = vstar.at(h, t.target) / vs;
          if (ratio >= eta_list[e]) tail.add(prev[s] * t.prob);
        }
      }
      out.action_tail[e][h] = std::min(1.0, tail.get());
    }
  }
  return out;
}

TheoryBounds theory_bounds(const ProblemInstance& inst, int n_particles, double m_param,
                           double eta) {
  const int H = inst.chain.horizon;
  const double n = static_cast<double>(n_particles);
  DivergenceReport div = divergence_report(inst, {m_param});
  CoverageConstants cov = coverage_constants(inst, {eta});
  ValueTable vstar = backward_induction(inst);
  auto pi = tilted_marginals(inst, unit_table(inst.chain));  // plain marginals

  TheoryBounds b;

  KahanSum chi_sum_below_h;  // Σ_{h=1}^{H-1} √χ²_h
  for (int h = 1; h < H; ++h) chi_sum_below_h.add(std::sqrt(div.chi2[h]));
  b.thm_3_2 = std::sqrt(cov.c_act / n) * (H + chi_sum_below_h.get());

  KahanSum chi_sum_all;  // Σ_{h=1}^{H} √χ²_h
  for (int h = 1; h <= H; ++h) chi_sum_all.add(std::sqrt(div.chi2[h]));
  b.thm_3_6 = chi_sum_all.get() / std::sqrt(n);

  KahanSum cov_sum_below_h;
  for (int h = 1; h < H; ++h) cov_sum_below_h.add(div.d_cov[0][h]);
  b.thm_3_4 = H * std::sqrt(m_param * cov.c_act / n) + cov_sum_below_h.get();

  KahanSum full_tail_sum;
  for (int h = 1; h <= H; ++h) full_tail_sum.add(div.d_cov[0][h] + cov.action_tail[0][h]);
  b.thm_b4 = H * std::sqrt(m_param * eta / n) + full_tail_sum.get();

  // Per-step deviation bound on E|Ŵ_H − Z| from the martingale decomposition,
  // divided by 2Z to make it a TV bound comparable with the others.
  KahanSum dev;
  for (int h = 1; h <= H; ++h) {
    // E_{π_ref}[V̂(x_{h-1})] = Ẑ_{h-1}, with Ẑ_0 = V̂(⊥).
    const double zhat_prev = div.z_hat[h - 1];
    KahanSum second;  // E_{π_ref}[V*(x_h)² / V̂(x_{h-1})]
    const auto& prev = pi.dist[h - 1].probs;
    for (int s = 0; s < inst.chain.level_size(h - 1); ++s) {
      if (prev[s] == 0.0) continue;
      const double w = inst.prm.at(h - 1, s);
      if (!(w > 0.0)) {
        second.add(kInf);
        break;
      }
      for (const Transition& t : inst.chain.row(h - 1, s)) {
        const double v = vstar.at(h, t.target);
        second.add(prev[s] * t.prob * v * v / w);
      }
    }
    dev.add(std::sqrt(zhat_prev * second.get()));
  }
  b.prop_b1_sharp = dev.get() / (2.0 * div.z * std::sqrt(n));
  return b;
}

std::vector<double> conditional_expectation(const ProblemInstance& inst,
                                            const ValueTable& table, int value_level,
                                            int query_level) {
  if (query_level > value_level || value_level > inst.chain.horizon || query_level < 0)
    throw DimensionMismatch("conditional_expectation level order");
  std::vector<double> cur = table.values[value_level];
  for (int h = value_level - 1; h >= query_level; --h) {
    std::vector<double> next(inst.chain.level_size(h));
    for (int s = 0; s < inst.chain.level_size(h); ++s) {
      KahanSum acc;
      for (const Transition& t : inst.chain.row(h, s)) acc.add(t.prob * cur[t.target]);
      next[s] = acc.get();
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace pfkit
