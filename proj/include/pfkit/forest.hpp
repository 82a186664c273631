#pragma once

/**
 * The backtracking random walk on the generation tree (with the auxiliary
 * state that re-seeds the walk at the root), the interval parser that turns a
 * walk trajectory into a rooted forest of excursions, the SMC-IND branching
 * process whose particle multiset is equal in law to the walk's visit forest,
 * and the shared-draw constructive coupling between the two.
 */

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "pfkit/chain.hpp"
#include "pfkit/rng.hpp"
#include "pfkit/samplers.hpp"

namespace pfkit {

struct VgbState {
  bool aux = false;  // the re-seeding state; adjacent only to ⊥
  int level = 0;
  int state = 0;

  static VgbState make_aux() { return {true, -1, -1}; }
  static VgbState at(int level, int state) { return {false, level, state}; }
  bool operator==(const VgbState& o) const {
    return aux == o.aux && (aux || (level == o.level && state == o.state));
  }
};

// Parent lookup for tree-structured chains (every level-h>0 state has exactly
// one in-edge); throws NotATree otherwise.
struct TreeIndex {
  std::vector<std::vector<int>> parent;  // parent[h][s] = source state at level h-1
};

TreeIndex build_tree_index(const LayeredChain& chain);

// One step of the walk from `state`: probability of the up-move and the
// absolute probabilities of each child move; the two sum to 1.
struct VgbRow {
  double to_parent = 0.0;
  KernelRow to_children;  // target = child state at level+1, prob = absolute

  // Child distribution conditioned on moving down.
  KernelRow down_conditioned() const;
};

VgbRow vgb_step_distribution(const ProblemInstance& inst, const TreeIndex& tree,
                             const VgbState& state);

struct ForestNode {
  int level = 0;
  int state = 0;
  int parent = -1;  // index into nodes; -1 for roots (children of the aux root)
};

struct ParticleForest {
  std::vector<ForestNode> nodes;  // in birth order; children contiguous-ordered
  bool truncated = false;         // hit the step cap or spawn budget
  long long steps_used = 0;
};

// Multiset census: (level, state) -> count.
std::map<std::pair<int, int>, long long> forest_label_counts(const ParticleForest& forest);

// Ordered rooted-forest equality (labels, root order, child birth order).
bool forest_equal(const ParticleForest& a, const ParticleForest& b);

// Parses a walk trajectory (starting at the aux state) into the excursion
// forest, dropping the aux root. Exposed for direct tests of the parse rule.
ParticleForest parse_vgb_trajectory(const std::vector<VgbState>& traj);

// Simulates the walk from the aux state until it is visited `visits_of_aux`+1
// times (so the forest has `visits_of_aux` roots), or until step_cap steps
// have elapsed, in which case the partial forest is returned flagged.
ParticleForest vgb_walk_forest(const ProblemInstance& inst, int visits_of_aux, RunKey key,
                               long long step_cap = 1'000'000);

// Alg. 4: every level-(h-1) particle spawns a geometric number of children
// (success = that particle's up-move probability, support {0,1,...}), each
// child drawn from the down-conditioned kernel. Throws BudgetExceeded when
// the total spawned node count passes spawn_cap.
ParticleForest smc_ind_run(const ProblemInstance& inst, int n_particles, RunKey key,
                           long long spawn_cap = 1'000'000);

// Shared-draw constructive coupling: the same per-node geometric and child
// draws feed (a) the layered branching build and (b) a synthesized walk
// trajectory run through the interval parser. The two forests are equal
// almost surely; asserting that tests both processes and the parser at once.
struct CoupledForests {
  ParticleForest ind;
  ParticleForest vgb;
};

CoupledForests coupled_pair(const ProblemInstance& inst, int n_particles, RunKey key,
                            long long spawn_cap = 1'000'000);

}  // namespace pfkit
