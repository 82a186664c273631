#include <cmath>

#include "doctest.h"
#include "pfkit/instances.hpp"
#include "pfkit/oracle.hpp"

using namespace pfkit;

namespace {

// Brute-force Z by path enumeration on small trees: Σ_paths Π probs · r*.
double enumerate_z(const ProblemInstance& inst) {
  double total = 0.0;
  struct Item {
    int level, state;
    double prob;
  };
  std::vector<Item> stack{{0, 0, 1.0}};
  while (!stack.empty()) {
    Item it = stack.back();
    stack.pop_back();
    if (it.level == inst.chain.horizon) {
      total += it.prob * inst.terminal_reward[it.state];
      continue;
    }
    for (const Transition& t : inst.chain.row(it.level, it.state))
      stack.push_back({it.level + 1, t.target, it.prob * t.prob});
  }
  return total;
}

ProblemInstance constant_reward_instance() {
  ProblemInstance inst = random_tree_instance(2, 5, 17);
  inst.terminal_reward.assign(inst.terminal_reward.size(), 1.0);
  inst.prm.values[5] = inst.terminal_reward;
  return inst;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("constant reward gives constant value function") {
  ProblemInstance inst = constant_reward_instance();
  ValueTable v = backward_induction(inst);
  for (int h = 0; h <= inst.chain.horizon; ++h)
    for (int s = 0; s < inst.chain.level_size(h); ++s)
      CHECK(v.at(h, s) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-path value function by hand enumeration") {
  ValueTable v = backward_induction(two_path_instance());
  CHECK(v.at(1, 0) == doctest::Approx(2.0));
  CHECK(v.at(1, 1) == doctest::Approx(1.0));
  CHECK(v.at(0, 0) == doctest::Approx(1.5));
}

TEST_CASE("lower-bound construction has closed-form values in both representations") {
  for (bool force_full : {true, false}) {
    const int H = 8;
    const double lambda = 1.0;
    SmcLowerInstance lower =
        force_full ? build_smc_lower(H, lambda) : build_smc_lower(H, lambda, 4);  // tiny budget
    CHECK(lower.collapsed == !force_full);
    ValueTable v = backward_induction(lower.instance);
    for (int h = 0; h <= H; ++h) {
      for (int s = 0; s < lower.instance.chain.level_size(h); ++s) {
        const int ones = lower.collapsed ? s : __builtin_popcount(static_cast<unsigned>(s));
        const double expect =
            std::pow(1.0 + lambda, ones) * std::pow((2.0 + lambda) / 2.0, H - h);
        CHECK(v.at(h, s) == doctest::Approx(expect).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("tilted marginals: exact and flat PRM on two-path") {
  ProblemInstance inst = two_path_instance();
  TiltedMarginals star = tilted_marginals(inst, backward_induction(inst));
  CHECK(star.dist[1].probs[0] == doctest::Approx(2.0 / 3));
  CHECK(star.dist[1].probs[1] == doctest::Approx(1.0 / 3));
  CHECK(star.normalizer[0] == doctest::Approx(1.5));

  TiltedMarginals hat = tilted_marginals(inst, inst.prm);
  CHECK(hat.dist[1].probs[0] == doctest::Approx(0.5));
  CHECK(hat.dist[1].probs[1] == doctest::Approx(0.5));
}

TEST_CASE("lower-bound final tilt is a product of per-coordinate biases") {
  SmcLowerInstance lower = build_smc_lower(6, 1.0);
  TiltedMarginals star =
      tilted_marginals(lower.instance, backward_induction(lower.instance));
  const double p = 2.0 / 3.0;
  for (int s = 0; s < 64; ++s) {
    const int ones = __builtin_popcount(static_cast<unsigned>(s));
    CHECK(star.dist[6].probs[s] ==
          doctest::Approx(std::pow(p, ones) * std::pow(1 - p, 6 - ones)).epsilon(1e-10));
  }
}

TEST_CASE("optimal kernel rows") {
  OptimalKernel opt = optimal_kernel(two_path_instance());
  REQUIRE(opt.defined[0][0]);
  CHECK(opt.rows[0][0][0].prob == doctest::Approx(2.0 / 3));
  CHECK(opt.rows[0][0][1].prob == doctest::Approx(1.0 / 3));

  ProblemInstance flat = constant_reward_instance();
  OptimalKernel id = optimal_kernel(flat);
  for (int h = 0; h < flat.chain.horizon; ++h)
    for (int s = 0; s < flat.chain.level_size(h); ++s)
      for (size_t t = 0; t < flat.chain.row(h, s).size(); ++t)
        CHECK(id.rows[h][s][t].prob ==
              doctest::Approx(flat.chain.row(h, s)[t].prob).epsilon(1e-12));

  for (bool collapsed : {false, true}) {
    SmcLowerInstance lower = build_smc_lower(6, 1.0, collapsed ? 4 : kDefaultStateBudget);
    OptimalKernel rows = optimal_kernel(lower.instance);
    for (int h = 0; h < 6; ++h) {
      for (int s = 0; s < lower.instance.chain.level_size(h); ++s) {
        REQUIRE(rows.rows[h][s].size() == 2);
        CHECK(rows.rows[h][s][0].prob == doctest::Approx(1.0 / 3).epsilon(1e-10));
        CHECK(rows.rows[h][s][1].prob == doctest::Approx(2.0 / 3).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("pushforward through the optimal kernel reproduces the tilted marginals") {
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull, 6ull, 7ull, 8ull}) {
    ProblemInstance inst = random_tree_instance(seed % 3 ? 2 : 3, 4, seed);
    ValueTable v = backward_induction(inst);
    TiltedMarginals star = tilted_marginals(inst, v);
    OptimalKernel opt = optimal_kernel(inst);
    for (int h = 0; h < inst.chain.horizon; ++h) {
      std::vector<double> pushed(inst.chain.level_size(h + 1), 0.0);
      for (int s = 0; s < inst.chain.level_size(h); ++s) {
        if (star.dist[h].probs[s] == 0.0) continue;
        for (const Transition& t : opt.row_checked(h, s))
          pushed[t.target] += star.dist[h].probs[s] * t.prob;
      }
      for (int s = 0; s < inst.chain.level_size(h + 1); ++s)
        CHECK(std::abs(pushed[s] - star.dist[h + 1].probs[s]) <= 1e-10);
    }
  }
}

TEST_CASE("divergences vanish when the PRM is exact") {
  ProblemInstance inst = with_exact_prm(random_tree_instance(2, 5, 23));
  DivergenceReport rep = divergence_report(inst, {1.000001, 2.0, 8.0});
  for (int h = 0; h <= inst.chain.horizon; ++h) {
    CHECK(std::abs(rep.chi2[h]) <= 1e-10);
    CHECK(std::abs(rep.kl[h]) <= 1e-10);
    CHECK(rep.d_cov[1][h] == 0.0);
    CHECK(rep.d_cov[2][h] == 0.0);
  }
}

TEST_CASE("two-path divergences by hand") {
  DivergenceReport rep = divergence_report(two_path_instance(), {4.0 / 3});
  CHECK(rep.chi2[1] == doctest::Approx(1.0 / 9).epsilon(1e-12));
  CHECK(std::abs(rep.chi2[2]) <= 1e-12);
  CHECK(rep.d_cov[0][1] == doctest::Approx(2.0 / 3));
  CHECK(rep.z == doctest::Approx(1.5));
  CHECK(rep.z_hat[1] == doctest::Approx(1.0));
  CHECK(rep.z_hat[2] == doctest::Approx(1.5));
}

TEST_CASE("coverage tails are monotone in M") {
  for (uint64_t seed : {11ull, 12ull, 13ull}) {
    ProblemInstance inst = random_tree_instance(2, 5, seed);
    std::vector<double> ms = {1.0, 1.2, 1.5, 2.0, 4.0, 16.0};
    DivergenceReport rep = divergence_report(inst, ms);
    for (size_t m = 1; m < ms.size(); ++m)
      for (int h = 0; h <= inst.chain.horizon; ++h)
        CHECK(rep.d_cov[m][h] <= rep.d_cov[m - 1][h] + 1e-15);
  }
}

TEST_CASE("Z agrees with brute-force path enumeration") {
  for (uint64_t seed : {5ull, 9ull, 31ull}) {
    ProblemInstance inst = random_tree_instance(2, 6, seed);
    ValueTable v = backward_induction(inst);
    CHECK(std::abs(v.at(0, 0) - enumerate_z(inst)) <= 1e-10);
  }
}

TEST_CASE("two-path coverage constants") {
  CoverageConstants cov = coverage_constants(two_path_instance(), {1.2, 4.0 / 3});
  CHECK(cov.c_act == doctest::Approx(4.0 / 3).epsilon(1e-12));
  CHECK(cov.c_act_hat == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cov.c_inf_raw == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(cov.c_inf_rescaled == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  // Under π*, the step ⊥→a has ratio 4/3 and happens w.p. 2/3; a→a' and b→b'
  // have ratios 1 and 1/… below both etas.
  CHECK(cov.action_tail[0][1] == doctest::Approx(2.0 / 3));
  CHECK(cov.action_tail[1][1] == doctest::Approx(2.0 / 3));
  CHECK(cov.action_tail[0][2] == doctest::Approx(0.0));
}

TEST_CASE("flat instance has unit constants") {
  ProblemInstance inst = constant_reward_instance();
  inst.prm = exact_prm_from(backward_induction(inst));
  CoverageConstants cov = coverage_constants(inst, {1.0});
  CHECK(cov.c_act == doctest::Approx(1.0));
  CHECK(cov.c_act_hat == doctest::Approx(1.0));
  CHECK(cov.c_inf_raw == doctest::Approx(1.0));
}

TEST_CASE("two-path bound values") {
  TheoryBounds b = theory_bounds(two_path_instance(), 100, 2.0, 4.0 / 3);
  CHECK(b.thm_3_2 == doctest::Approx(std::sqrt(4.0 / 300.0) * (2.0 + 1.0 / 3)).epsilon(1e-12));
  CHECK(b.thm_3_2 == doctest::Approx(0.26943).epsilon(1e-4));
}

TEST_CASE("exact PRM zeroes the chi-square bound") {
  ProblemInstance inst = with_exact_prm(two_path_instance());
  CHECK(theory_bounds(inst, 50, 2.0, 2.0).thm_3_6 <= 1e-8);
  SmcLowerInstance lower = build_smc_lower(10, 1.0);
  CHECK(theory_bounds(lower.instance, 4, 2.0, 2.0).thm_3_6 <= 1e-6);
}

TEST_CASE("per-step deviation bound is never above the coverage bound") {
  for (uint64_t seed = 40; seed < 60; ++seed) {
    ProblemInstance inst = random_tree_instance(2, 5, seed);
    for (int n : {2, 16, 128}) {
      TheoryBounds b = theory_bounds(inst, n, 2.0, 2.0);
      CHECK(b.prop_b1_sharp <= b.thm_3_2 + 1e-12);
    }
  }
  TheoryBounds b = theory_bounds(two_path_instance(), 100, 2.0, 2.0);
  CHECK(b.prop_b1_sharp <= b.thm_3_2 + 1e-12);
}

TEST_CASE("lookahead second moment on the variance-blowup instance") {
  ProblemInstance inst = build_var_blowup(8);
  std::vector<double> vt = conditional_expectation(inst, inst.prm, 4, 1);
  CHECK(vt[0] == doctest::Approx(16.0));
  CHECK(vt[1] == doctest::Approx(1.0));
  TiltedMarginals pi = tilted_marginals(inst, unit_table(inst.chain));
  double second = 0.0;
  for (int s = 0; s < 2; ++s) second += pi.dist[1].probs[s] * vt[s] * vt[s];
  CHECK(second >= 16.0);
  CHECK(second == doctest::Approx(16.0 + 1.0 - 1.0 / 16).epsilon(1e-12));
}

TEST_CASE("degenerate tilts raise") {
  ProblemInstance inst = two_path_instance();
  ValueTable zero = unit_table(inst.chain);
  zero.values[1] = {0.0, 0.0};
  CHECK_THROWS_AS(tilted_marginals(inst, zero), DegenerateLevel);
}

}  // TEST_SUITE
