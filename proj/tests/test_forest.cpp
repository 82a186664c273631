#include <cmath>
#include <map>

#include "doctest.h"
#include "pfkit/forest.hpp"
#include "pfkit/instances.hpp"
#include "pfkit/oracle.hpp"
#include "pfkit/stats.hpp"

using namespace pfkit;

namespace {

constexpr uint64_t kSeed = 0xF0537;

ProblemInstance binary_tree_prm(int depth, uint64_t seed) {
  return random_tree_instance(2, depth, seed);
}

ProblemInstance uniform_unit_tree(int depth) {
  ProblemInstance inst;
  inst.name = "unit-tree";
  inst.chain = build_tree_chain(2, depth, uniform_rows(2));
  inst.prm.tag = ValueTag::kPrm;
  inst.prm.values.resize(depth + 1);
  for (int h = 0; h <= depth; ++h)
    inst.prm.values[h].assign(inst.chain.level_size(h), 1.0);
  inst.terminal_reward.assign(inst.chain.level_size(depth), 1.0);
  return inst;
}

}  // namespace

TEST_SUITE("forest") {

TEST_CASE("walk rows: hand values and stochasticity everywhere") {
  ProblemInstance inst = two_path_instance();
  TreeIndex tree = build_tree_index(inst.chain);

  VgbRow at_aux = vgb_step_distribution(inst, tree, VgbState::make_aux());
  CHECK(at_aux.to_parent == 0.0);
  REQUIRE(at_aux.to_children.size() == 1);
  CHECK(at_aux.to_children[0].prob == 1.0);

  // V̂(⊥)=1, V̂(a)=V̂(b)=1: children ¼ each, up-move ½.
  VgbRow at_root = vgb_step_distribution(inst, tree, VgbState::at(0, 0));
  CHECK(at_root.to_parent == doctest::Approx(0.5));
  CHECK(at_root.to_children[0].prob == doctest::Approx(0.25));
  CHECK(at_root.to_children[1].prob == doctest::Approx(0.25));
  KernelRow down = at_root.down_conditioned();
  CHECK(down[0].prob == doctest::Approx(0.5));
  CHECK(down[1].prob == doctest::Approx(0.5));

  VgbRow at_leaf = vgb_step_distribution(inst, tree, VgbState::at(2, 0));
  CHECK(at_leaf.to_parent == 1.0);
  CHECK(at_leaf.to_children.empty());

  ProblemInstance rnd = binary_tree_prm(5, 8);
  TreeIndex rtree = build_tree_index(rnd.chain);
  for (int h = 0; h <= 5; ++h) {
    for (int s = 0; s < rnd.chain.level_size(h); ++s) {
      VgbRow row = vgb_step_distribution(rnd, rtree, VgbState::at(h, s));
      double sum = row.to_parent;
      for (const Transition& t : row.to_children) sum += t.prob;
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("non-tree chains are rejected") {
  ProblemInstance inst = two_path_instance();
  inst.chain.kernels[1] = {{{0, 1.0}}, {{0, 1.0}}};  // both parents hit state 0
  CHECK_THROWS_AS(build_tree_index(inst.chain), NotATree);
}

TEST_CASE("interval parser on hand trajectories") {
  const VgbState aux = VgbState::make_aux();
  const VgbState root = VgbState::at(0, 0);
  const VgbState a = VgbState::at(1, 0);
  const VgbState b = VgbState::at(1, 1);
  const VgbState a2 = VgbState::at(2, 0);
  const VgbState b2 = VgbState::at(2, 1);

  ParticleForest two_roots = parse_vgb_trajectory({aux, root, aux, root, aux});
  REQUIRE(two_roots.nodes.size() == 2);
  CHECK(two_roots.nodes[0].parent == -1);
  CHECK(two_roots.nodes[1].parent == -1);
  CHECK(two_roots.nodes[0].level == 0);
  CHECK(!two_roots.truncated);

  ParticleForest with_child = parse_vgb_trajectory({aux, root, a, root, aux});
  REQUIRE(with_child.nodes.size() == 2);
  CHECK(with_child.nodes[0].level == 0);
  CHECK(with_child.nodes[1].level == 1);
  CHECK(with_child.nodes[1].parent == 0);

  // One excursion that touches both branches and their leaves: the repeated
  // visits to ⊥ inside the excursion stay a single node.
  ParticleForest deep =
      parse_vgb_trajectory({aux, root, a, a2, a, root, b, b2, b, root, aux});
  REQUIRE(deep.nodes.size() == 5);
  auto counts = forest_label_counts(deep);
  CHECK(counts[{0, 0}] == 1);
  CHECK(counts[{1, 0}] == 1);
  CHECK(counts[{1, 1}] == 1);
  CHECK(counts[{2, 0}] == 1);
  CHECK(counts[{2, 1}] == 1);
  CHECK(deep.nodes[1].parent == 0);  // a under ⊥
  CHECK(deep.nodes[2].parent == 1);  // a' under a
  CHECK(deep.nodes[3].parent == 0);  // b under ⊥
  CHECK(deep.nodes[4].parent == 3);  // b' under b

  CHECK_THROWS_AS(parse_vgb_trajectory({root}), InvalidSpec);
}

TEST_CASE("walks that never descend give exactly K root nodes") {
  ProblemInstance inst = uniform_unit_tree(3);
  for (int h = 1; h <= 3; ++h)
    for (double& v : inst.prm.values[h]) v = 1e-12;
  inst.prm.values[3].assign(8, 1.0);  // PRM must match r* at the final level
  inst.terminal_reward.assign(8, 1.0);
  ParticleForest f = vgb_walk_forest(inst, 5, {kSeed, 0});
  CHECK(f.nodes.size() == 5);
  for (const ForestNode& n : f.nodes) {
    CHECK(n.level == 0);
    CHECK(n.parent == -1);
  }
}

TEST_CASE("unit-PRM binary tree is critical: one expected child per node") {
  ProblemInstance inst = uniform_unit_tree(3);
  // p_up = 1/(1+1) = 1/2 at internal nodes, so E[D] = (1-p)/p = 1.
  TreeIndex tree = build_tree_index(inst.chain);
  CHECK(vgb_step_distribution(inst, tree, VgbState::at(0, 0)).to_parent ==
        doctest::Approx(0.5));
  const long long trials = 20000;
  KahanSum level1;
  for (long long t = 0; t < trials; ++t) {
    ParticleForest f = smc_ind_run(inst, 1, {kSeed + 1, static_cast<uint64_t>(t)});
    long long c = 0;
    for (const ForestNode& n : f.nodes) c += n.level == 1;
    level1.add(static_cast<double>(c));
  }
  const double mean = level1.get() / trials;
  // Geometric(1/2) on {0,1,...} has mean 1 and variance 2.
  CHECK(std::abs(mean - 1.0) <= 3.0 * std::sqrt(2.0 / trials));
}

TEST_CASE("expected level counts follow the branching recursion") {
  ProblemInstance inst = binary_tree_prm(3, 33);
  TreeIndex tree = build_tree_index(inst.chain);
  const int n0 = 2;

  // Exact expected count per (level, state): c_{h+1}(x') = Σ_x c_h(x)·E[D(x)]·P_down(x'|x).
  std::vector<std::vector<double>> expected(4);
  expected[0] = {static_cast<double>(n0)};
  for (int h = 0; h < 3; ++h) {
    expected[h + 1].assign(inst.chain.level_size(h + 1), 0.0);
    for (int s = 0; s < inst.chain.level_size(h); ++s) {
      if (expected[h][s] == 0.0) continue;
      VgbRow row = vgb_step_distribution(inst, tree, VgbState::at(h, s));
      const double mean_children = (1.0 - row.to_parent) / row.to_parent;
      for (const Transition& t : row.down_conditioned())
        expected[h + 1][t.target] += expected[h][s] * mean_children * t.prob;
    }
  }

  const long long trials = 20000;
  std::map<std::pair<int, int>, KahanSum> sums;
  std::map<std::pair<int, int>, KahanSum> sqs;
  for (long long t = 0; t < trials; ++t) {
    ParticleForest f = smc_ind_run(inst, n0, {kSeed + 2, static_cast<uint64_t>(t)});
    auto counts = forest_label_counts(f);
    for (int h = 0; h <= 3; ++h) {
      for (int s = 0; s < inst.chain.level_size(h); ++s) {
        const auto it = counts.find({h, s});
        const double c = it == counts.end() ? 0.0 : static_cast<double>(it->second);
        sums[{h, s}].add(c);
        sqs[{h, s}].add(c * c);
      }
    }
  }
  for (int h = 0; h <= 3; ++h) {
    for (int s = 0; s < inst.chain.level_size(h); ++s) {
      const double mean = sums[{h, s}].get() / trials;
      const double var =
          std::max(0.0, sqs[{h, s}].get() / trials - mean * mean);
      const double se = std::sqrt(var / trials) + 1e-12;
      CHECK(std::abs(mean - expected[h][s]) <= 4.0 * se);
    }
  }
}

TEST_CASE("shared-draw coupling gives exact forest equality") {
  ProblemInstance inst = binary_tree_prm(3, 21);
  int equal = 0;
  const int pairs = 300;
  for (int t = 0; t < pairs; ++t) {
    CoupledForests cf = coupled_pair(inst, 3, {kSeed + 3, static_cast<uint64_t>(t)});
    equal += forest_equal(cf.ind, cf.vgb);
    if (t == 0) {
      // Multiset equality is implied by forest equality.
      CHECK(forest_label_counts(cf.ind) == forest_label_counts(cf.vgb));
    }
  }
  CHECK(equal == pairs);
}

TEST_CASE("independent runs of the two processes match in law") {
  ProblemInstance inst = binary_tree_prm(3, 52);
  const long long runs = 8000;
  const int n = 3;
  std::map<std::pair<int, int>, std::vector<long long>> hist_ind, hist_vgb;
  const int max_count = 24;
  auto absorb = [&](std::map<std::pair<int, int>, std::vector<long long>>& hist,
                    const ParticleForest& f) {
    auto counts = forest_label_counts(f);
    for (int h = 0; h <= 3; ++h) {
      for (int s = 0; s < inst.chain.level_size(h); ++s) {
        auto& bucket = hist[{h, s}];
        if (bucket.empty()) bucket.assign(max_count + 1, 0);
        const auto it = counts.find({h, s});
        const long long c = it == counts.end() ? 0 : it->second;
        ++bucket[std::min<long long>(c, max_count)];
      }
    }
  };
  long long truncated = 0;
  for (long long t = 0; t < runs; ++t) {
    absorb(hist_ind, smc_ind_run(inst, n, {kSeed + 4, static_cast<uint64_t>(t)}));
    ParticleForest w = vgb_walk_forest(inst, n, {kSeed + 5, static_cast<uint64_t>(t)});
    truncated += w.truncated;
    absorb(hist_vgb, w);
  }
  CHECK(truncated == 0);
  double min_p = 1.0;
  int tests = 0;
  for (const auto& [label, bucket] : hist_ind) {
    try {
      GofResult g = gof_two_sample(bucket, hist_vgb[label]);
      min_p = std::min(min_p, g.p_value);
      ++tests;
    } catch (const InsufficientData&) {
      // Degenerate margins (e.g. the root count is always N) carry no signal.
      CHECK(bucket == hist_vgb[label]);
    }
  }
  CHECK(tests > 0);
  CHECK(min_p >= 0.01 / tests);
}

TEST_CASE("caps are surfaced") {
  ProblemInstance inst = uniform_unit_tree(4);
  for (int h = 1; h < 4; ++h)
    for (double& v : inst.prm.values[h]) v = 100.0;  // heavily supercritical
  CHECK_THROWS_AS(smc_ind_run(inst, 4, {kSeed + 6, 0}, /*spawn_cap=*/64), BudgetExceeded);
  ParticleForest w = vgb_walk_forest(inst, 3, {kSeed + 7, 0}, /*step_cap=*/40);
  CHECK(w.truncated);
  CHECK(w.steps_used == 40);
}

}  // TEST_SUITE
