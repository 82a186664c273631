/**
 * pfkit command-line driver: instance validation, oracle reports, trial
 * campaigns, particle-count sweeps with bound overlays, walk/branching
 * coupling checks, and the synthetic instance generators.
 *
 * Exit codes: 0 success, 2 validation failure, 3 runtime error, 4 budget/cap.
 */

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pfkit/campaign.hpp"
#include "pfkit/forest.hpp"
#include "pfkit/instances.hpp"
#include "pfkit/oracle.hpp"
#include "pfkit/samplers.hpp"
#include "pfkit/stats.hpp"

using nlohmann::json;
using namespace pfkit;

namespace {

struct CommonOpts {
  std::string instance_path;
  std::string algo = "smc";
  int particles = 16;
  long long trials = 1000;
  uint64_t seed = 0;
  int workers = 1;
  std::string out;
  std::string resampling = "multinomial";
  double eta = 0.0;  // 0 = derive from the oracle
  double cinf = 0.0;
  std::string ztilde = "cinf";
  int max_restarts = 64;
  bool clamp = false;
  std::string coords = "none";
};

void add_sampler_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--instance", o.instance_path, "instance file")->required();
  cmd->add_option("--particles", o.particles, "particle count N");
  cmd->add_option("--trials", o.trials, "independent trials");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--workers", o.workers, "worker threads");
  cmd->add_option("--out", o.out, "output CSV path")->required();
  cmd->add_option("--resampling", o.resampling, "multinomial|systematic")
      ->check(CLI::IsMember({"multinomial", "systematic"}));
  cmd->add_option("--eta", o.eta, "SMC-RS acceptance scale (default: oracle coverage)");
  cmd->add_option("--cinf", o.cinf, "C_inf override (default: oracle value)");
  cmd->add_option("--ztilde", o.ztilde, "cinf|pilot|<float>");
  cmd->add_option("--max-restarts", o.max_restarts, "accept/restart cap");
  cmd->add_flag("--clamp", o.clamp, "clamp out-of-range acceptance instead of failing");
  cmd->add_option("--coords", o.coords, "per-coordinate stats: none|tree|delta|lowbit")
      ->check(CLI::IsMember({"none", "tree", "delta", "lowbit"}));
}

CampaignConfig build_config(const ProblemInstance& inst, const CommonOpts& o) {
  CampaignConfig cfg;
  cfg.algo = parse_algo(o.algo);
  cfg.sampler.particles = o.particles;
  cfg.trials = o.trials;
  cfg.seed = o.seed;
  cfg.workers = o.workers;
  cfg.sampler.resampling =
      o.resampling == "systematic" ? Resampling::kSystematic : Resampling::kMultinomial;
  cfg.sampler.max_restarts = o.max_restarts;
  cfg.sampler.strictness = o.clamp ? Strictness::kClamp : Strictness::kStrict;
  if (o.coords == "tree")
    cfg.coords = CoordMode::kTreeBits;
  else if (o.coords == "delta")
    cfg.coords = CoordMode::kCountDelta;
  else if (o.coords == "lowbit")
    cfg.coords = CoordMode::kLowBit;

  const bool needs_eta = cfg.algo == Algo::kSmcRs;
  const bool needs_cinf = cfg.algo == Algo::kSmcOpt2 ||
                          (cfg.algo == Algo::kDmcRestart && o.ztilde == "cinf");
  if (needs_eta || needs_cinf) {
    CoverageConstants cov = coverage_constants(inst, {});
    cfg.sampler.eta = o.eta > 0.0 ? o.eta : std::max(cov.c_act, cov.c_act_hat);
    if (needs_cinf) {
      cfg.sampler.cinf = o.cinf > 0.0 ? o.cinf : cov.c_inf_raw;
      if (!std::isfinite(cfg.sampler.cinf))
        throw InvalidSpec("C_inf is infinite here; pass a finite --cinf override");
    }
  } else if (o.eta > 0.0) {
    cfg.sampler.eta = o.eta;
  }
  if (cfg.algo == Algo::kDmcRestart) {
    if (o.ztilde == "cinf")
      cfg.sampler.ztilde_mode = ZTildeMode::kCinfTimesZhat1;
    else if (o.ztilde == "pilot")
      cfg.sampler.ztilde_mode = ZTildeMode::kPilotDouble;
    else {
      cfg.sampler.ztilde_mode = ZTildeMode::kExplicit;
      cfg.sampler.ztilde_value = std::stod(o.ztilde);
    }
  }
  return cfg;
}

json summary_json(const ProblemInstance& inst, const CampaignConfig& cfg,
                  const CampaignResult& res, const SummaryRow& row) {
  (void)inst;
  json j;
  j["instance"] = row.instance;
  j["instance_hash"] = row.instance_hash;
  j["algo"] = row.algo;
  j["N"] = row.particles;
  j["trials"] = row.trials;
  j["seed"] = row.seed;
  j["tv_to_pistar"] = row.tv_to_pistar;
  j["tv_halfwidth"] = row.tv_halfwidth;
  j["mean_logWhat"] = row.mean_logwhat;
  j["dead_rate"] = row.dead_rate;
  j["restart_mean"] = row.restart_mean;
  j["attempts_mean"] = row.attempts_mean;
  j["dead_runs"] = res.acc.final_counts.dead_runs;
  j["restart_exhausted_runs"] = res.acc.final_counts.restart_outs;
  j["clamp_warnings"] = res.acc.clamp_warnings;
  j["counts"] = res.acc.final_counts.counts;
  j["wall_ms"] = res.wall_ms;
  if (cfg.coords != CoordMode::kNone) {
    j["coord_freq"] = res.coord_freq();
    j["coord_se"] = res.coord_se();
  }
  // Distribution treating dead runs as an extra outcome, per the additive-tail
  // reading of the coverage bound.
  if (res.acc.final_counts.trials > 0) {
    std::vector<double> with_dead(res.acc.final_counts.counts.size() + 1, 0.0);
    for (size_t s = 0; s < res.acc.final_counts.counts.size(); ++s)
      with_dead[s] = static_cast<double>(res.acc.final_counts.counts[s]) /
                     res.acc.final_counts.trials;
    with_dead.back() = static_cast<double>(res.acc.final_counts.dead_runs +
                                           res.acc.final_counts.restart_outs) /
                       res.acc.final_counts.trials;
    j["distribution_with_dead_outcome"] = with_dead;
  }
  return j;
}

std::string sidecar_path(const std::string& out) {
  const auto dot = out.find_last_of('.');
  const std::string stem = dot == std::string::npos ? out : out.substr(0, dot);
  return stem + ".summary.json";
}

int cmd_validate(const std::string& path) {
  ProblemInstance inst;
  try {
    inst = load_instance(path);
  } catch (const ValidationFailed& e) {
    std::cout << e.what() << "\n";
    return 2;
  }
  std::cout << "valid: " << inst.name << " (H=" << inst.chain.horizon << ", "
            << inst.chain.level_size(inst.chain.horizon) << " final states)\n";
  return 0;
}

int cmd_oracle(const std::string& path, std::vector<double> m_list,
               std::vector<double> eta_list, int particles, const std::string& out) {
  ProblemInstance inst = load_instance(path);
  if (m_list.empty()) m_list = {2.0, 4.0, 16.0};
  if (eta_list.empty()) eta_list = {2.0, 4.0};
  DivergenceReport div = divergence_report(inst, m_list);
  CoverageConstants cov = coverage_constants(inst, eta_list);
  TheoryBounds bounds = theory_bounds(inst, particles, m_list.front(), eta_list.front());

  json j;
  j["instance"] = inst.name;
  j["instance_hash"] = content_hash(instance_to_json(inst));
  j["Z"] = div.z;
  j["Z_hat"] = div.z_hat;
  j["chi2"] = div.chi2;
  j["kl"] = div.kl;
  j["M_list"] = div.m_list;
  j["D_cov"] = div.d_cov;
  j["C_act"] = cov.c_act;
  j["C_act_hat"] = cov.c_act_hat;
  j["C_inf_raw"] = cov.c_inf_raw;
  j["C_inf_rescaled"] = cov.c_inf_rescaled;
  j["eta_list"] = cov.eta_list;
  j["action_tail"] = cov.action_tail;
  j["bounds"] = {{"N", particles},
                 {"thm_3_2", bounds.thm_3_2},
                 {"prop_B1_sharp", bounds.prop_b1_sharp},
                 {"thm_3_4", bounds.thm_3_4},
                 {"thm_B4", bounds.thm_b4},
                 {"thm_3_6", bounds.thm_3_6}};
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text_atomic(out, text);
  return 0;
}

int cmd_run(const CommonOpts& o) {
  ProblemInstance inst = load_instance(o.instance_path);
  CampaignConfig cfg = build_config(inst, o);
  CampaignResult res = run_campaign(inst, cfg);
  LevelDistribution pistar =
      tilted_marginals(inst, backward_induction(inst)).dist[inst.chain.horizon];
  SummaryRow row = summarize(inst, cfg, res, pistar);
  write_text_atomic(o.out, csv_header(false) + csv_row(row));
  write_text_atomic(sidecar_path(o.out), summary_json(inst, cfg, res, row).dump(2) + "\n");
  std::cout << "tv_to_pistar=" << format_g17(row.tv_to_pistar)
            << " dead_rate=" << format_g17(row.dead_rate) << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& o, const std::vector<int>& n_list,
              const std::vector<std::string>& algos, double m_param, double eta_param) {
  ProblemInstance inst = load_instance(o.instance_path);
  LevelDistribution pistar =
      tilted_marginals(inst, backward_induction(inst)).dist[inst.chain.horizon];
  std::string text = csv_header(true);
  json sidecar = json::array();
  for (const std::string& algo : algos) {
    for (int n : n_list) {
      CommonOpts local = o;
      local.algo = algo;
      local.particles = n;
      CampaignConfig cfg = build_config(inst, local);
      CampaignResult res = run_campaign(inst, cfg);
      TheoryBounds bounds = theory_bounds(inst, n, m_param, eta_param);
      SummaryRow row = summarize(inst, cfg, res, pistar, bounds);
      text += csv_row(row);
      sidecar.push_back(summary_json(inst, cfg, res, row));
    }
  }
  write_text_atomic(o.out, text);
  write_text_atomic(sidecar_path(o.out), sidecar.dump(2) + "\n");
  std::cout << "wrote " << o.out << "\n";
  return 0;
}

int cmd_couple(const std::string& path, int n_particles, long long trials, uint64_t seed,
               long long pairs, const std::string& out, long long step_cap) {
  ProblemInstance inst = load_instance(path);

  long long equal = 0;
  for (long long t = 0; t < pairs; ++t) {
    CoupledForests cf = coupled_pair(inst, n_particles, {seed, static_cast<uint64_t>(t)});
    equal += forest_equal(cf.ind, cf.vgb);
  }

  const int max_count = 40;
  std::map<std::pair<int, int>, std::vector<long long>> hist_ind, hist_vgb;
  auto absorb = [&](auto& hist, const ParticleForest& f) {
    auto counts = forest_label_counts(f);
    for (int h = 0; h <= inst.chain.horizon; ++h) {
      for (int s = 0; s < inst.chain.level_size(h); ++s) {
        auto& bucket = hist[{h, s}];
        if (bucket.empty()) bucket.assign(max_count + 1, 0);
        const auto it = counts.find({h, s});
        ++bucket[std::min<long long>(it == counts.end() ? 0 : it->second, max_count)];
      }
    }
  };
  long long capped = 0;
  for (long long t = 0; t < trials; ++t) {
    try {
      absorb(hist_ind,
             smc_ind_run(inst, n_particles, {seed ^ 0x1111, static_cast<uint64_t>(t)}));
    } catch (const BudgetExceeded&) {
      ++capped;
    }
    ParticleForest w =
        vgb_walk_forest(inst, n_particles, {seed ^ 0x2222, static_cast<uint64_t>(t)}, step_cap);
    if (w.truncated)
      ++capped;
    else
      absorb(hist_vgb, w);
  }

  json labels = json::array();
  double min_p = 1.0;
  int tests = 0;
  for (auto& [label, bucket] : hist_ind) {
    json entry;
    entry["level"] = label.first;
    entry["label"] = inst.chain.levels[label.first][label.second];
    entry["count_histogram_smcind"] = bucket;
    entry["count_histogram_vgb"] = hist_vgb[label];
    try {
      GofResult g = gof_two_sample(bucket, hist_vgb[label]);
      entry["gof_pvalue"] = g.p_value;
      min_p = std::min(min_p, g.p_value);
      ++tests;
    } catch (const InsufficientData&) {
      entry["gof_pvalue"] = nullptr;
      entry["degenerate_equal"] = bucket == hist_vgb[label];
    }
    labels.push_back(std::move(entry));
  }

  json j;
  j["instance"] = inst.name;
  j["N"] = n_particles;
  j["coupled_pairs"] = pairs;
  j["coupled_equal"] = equal;
  j["gof_runs_each"] = trials;
  j["cap_hit_runs"] = capped;
  j["gof_tests"] = tests;
  j["gof_min_pvalue"] = min_p;
  j["gof_bonferroni_threshold"] = tests > 0 ? 0.01 / tests : 0.0;
  const bool pass = equal == pairs && (tests == 0 || min_p >= 0.01 / tests);
  j["pass"] = pass;
  j["labels"] = labels;
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text_atomic(out, text);
  std::cout << "coupling: " << equal << "/" << pairs << " exact, min GOF p=" << min_p
            << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? 0 : 3;
}

void write_instance_with_params(const ProblemInstance& inst, const std::string& out,
                                const json& params) {
  save_instance(inst, out);
  json side = params;
  side["instance_hash"] = content_hash(instance_to_json(inst));
  write_text_atomic(sidecar_path(out) == out ? out + ".params.json" : sidecar_path(out),
                    side.dump(2) + "\n");
  std::cout << "wrote " << out << " (" << inst.name << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle-filtering toolkit for layered Markov chains"};
  app.require_subcommand(1);

  std::string v_path;
  CLI::App* validate = app.add_subcommand("validate", "validate an instance file");
  validate->add_option("--instance", v_path)->required();

  std::string o_path, o_out;
  std::vector<double> o_m, o_eta;
  int o_particles = 16;
  CLI::App* oracle = app.add_subcommand("oracle", "exact divergence/coverage/bound report");
  oracle->add_option("--instance", o_path)->required();
  oracle->add_option("--m", o_m, "tail parameters M");
  oracle->add_option("--eta", o_eta, "action-tail parameters");
  oracle->add_option("--particles", o_particles, "N used for the bound columns");
  oracle->add_option("--out", o_out, "write JSON here instead of stdout");

  CommonOpts r;
  CLI::App* run = app.add_subcommand("run", "run one trial campaign");
  add_sampler_flags(run, r);
  run->add_option("--algo", r.algo, "smc|smc-opt2|smc-rs|dmc-restart|sis|bon|action-rs");

  CommonOpts s;
  std::vector<int> s_nlist;
  std::vector<std::string> s_algos{"smc"};
  double s_m = 2.0, s_eta = 2.0;
  CLI::App* sweep = app.add_subcommand("sweep", "particle sweep with bound overlays");
  add_sampler_flags(sweep, s);
  sweep->add_option("--particles-list", s_nlist, "N values")->required();
  sweep->add_option("--algos", s_algos, "algorithms to sweep");
  sweep->add_option("--bound-m", s_m, "M in the coverage bounds");
  sweep->add_option("--bound-eta", s_eta, "eta in the action-tail bound");

  std::string c_path, c_out;
  int c_n = 3;
  long long c_trials = 50000, c_pairs = 1000, c_cap = 1000000;
  uint64_t c_seed = 0;
  CLI::App* couple = app.add_subcommand("couple", "walk/branching coupling check");
  couple->add_option("--instance", c_path)->required();
  couple->add_option("--particles", c_n);
  couple->add_option("--trials", c_trials, "independent runs per process for GOF");
  couple->add_option("--pairs", c_pairs, "shared-seed pairs for the exact coupling");
  couple->add_option("--seed", c_seed);
  couple->add_option("--step-cap", c_cap);
  couple->add_option("--out", c_out);

  std::string g_out;
  int gl_h = 8;
  double gl_lambda = 1.0;
  bool gl_force_full = false;
  long long g_budget = kDefaultStateBudget;
  CLI::App* mk_lower = app.add_subcommand("make-lower", "√H lower-bound instance");
  mk_lower->add_option("--horizon", gl_h)->required();
  mk_lower->add_option("--lambda", gl_lambda);
  mk_lower->add_option("--budget", g_budget);
  mk_lower->add_flag("--force-full", gl_force_full);
  mk_lower->add_option("--out", g_out)->required();

  int gv_h = 20;
  CLI::App* mk_varblow = app.add_subcommand("make-varblow", "variance-blowup instance");
  mk_varblow->add_option("--horizon", gv_h)->required();
  mk_varblow->add_option("--out", g_out)->required();

  int gm_levels = 1, gm_h1 = 64, gm_h2 = 0;
  double gm_g1 = 0.25, gm_g2 = 0.2;
  uint64_t gm_ystar_seed = 0;
  CLI::App* mk_myopic = app.add_subcommand("make-myopic", "delayed-signal instance");
  mk_myopic->add_option("--levels", gm_levels, "recursion depth (1 or 2)");
  mk_myopic->add_option("--h1", gm_h1, "base horizon");
  mk_myopic->add_option("--h2", gm_h2, "outer horizon (levels=2)");
  mk_myopic->add_option("--gamma1", gm_g1);
  mk_myopic->add_option("--gamma2", gm_g2);
  mk_myopic->add_option("--ystar-seed", gm_ystar_seed);
  mk_myopic->add_option("--budget", g_budget);
  mk_myopic->add_option("--out", g_out)->required();

  uint64_t gk_seed = 0;
  double gk_eps = 0.3, gk_alpha = 1.0;
  int gk_h = 12;
  CLI::App* mk_kswitch = app.add_subcommand("make-kswitch", "kernel-switching instance");
  mk_kswitch->add_option("--seed", gk_seed);
  mk_kswitch->add_option("--epsilon", gk_eps);
  mk_kswitch->add_option("--alpha", gk_alpha);
  mk_kswitch->add_option("--horizon", gk_h);
  mk_kswitch->add_option("--out", g_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(v_path);
    if (*oracle) return cmd_oracle(o_path, o_m, o_eta, o_particles, o_out);
    if (*run) return cmd_run(r);
    if (*sweep) return cmd_sweep(s, s_nlist, s_algos, s_m, s_eta);
    if (*couple) return cmd_couple(c_path, c_n, c_trials, c_seed, c_pairs, c_out, c_cap);
    if (*mk_lower) {
      SmcLowerInstance made = build_smc_lower(gl_h, gl_lambda, g_budget, gl_force_full);
      write_instance_with_params(made.instance, g_out,
                                 {{"generator", "make-lower"},
                                  {"horizon", gl_h},
                                  {"lambda", gl_lambda},
                                  {"collapsed", made.collapsed},
                                  {"coords", made.collapsed ? "delta" : "tree"}});
      return 0;
    }
    if (*mk_varblow) {
      write_instance_with_params(build_var_blowup(gv_h), g_out,
                                 {{"generator", "make-varblow"}, {"horizon", gv_h}});
      return 0;
    }
    if (*mk_myopic) {
      std::vector<int> hs{gm_h1};
      std::vector<double> gs{gm_g1};
      if (gm_levels == 2) {
        hs.push_back(gm_h2);
        gs.push_back(gm_g2);
      }
      MyopicConstruction mc = build_myopic_lb(gm_levels, hs, gs, {}, gm_ystar_seed, g_budget);
      write_instance_with_params(mc.instance, g_out,
                                 {{"generator", "make-myopic"},
                                  {"levels", gm_levels},
                                  {"h_schedule", mc.h_schedule},
                                  {"gamma", mc.gamma},
                                  {"ystar_seed", gm_ystar_seed},
                                  {"collapsed", mc.collapsed},
                                  {"coords", mc.collapsed ? "lowbit" : "tree"}});
      return 0;
    }
    if (*mk_kswitch) {
      write_instance_with_params(seeded_kernel_switch(gk_seed, gk_eps, gk_alpha, gk_h), g_out,
                                 {{"generator", "make-kswitch"},
                                  {"seed", gk_seed},
                                  {"epsilon", gk_eps},
                                  {"alpha", gk_alpha},
                                  {"horizon", gk_h}});
      return 0;
    }
  } catch (const PfError& e) {
    std::cerr << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kValidation: return 2;
      case ErrorKind::kBudget: return 4;
      case ErrorKind::kRuntime: return 3;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 3;
}
