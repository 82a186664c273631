#include "pfkit/forest.hpp"

#include <cmath>
#include <functional>

#include "pfkit/oracle.hpp"

namespace pfkit {

namespace {

// Geometric on {0,1,2,...} with success probability p: Pr[D=k] = (1-p)^k·p.
long long sample_geometric(double p, double u, long long cap) {
  if (p >= 1.0) return 0;
  if (!(p > 0.0)) return cap;
  const double d = std::floor(std::log1p(-u) / std::log1p(-p));
  if (!(d < static_cast<double>(cap))) return cap;
  return static_cast<long long>(d);
}

int sample_kernel_row(RngStream& rng, const KernelRow& row) {
  double total = 0.0;
  for (const Transition& t : row) total += t.prob;
  if (!(total > 0.0)) throw DegenerateRow("down-conditioned row has zero mass");
  double u = rng.next_unit() * total;
  double acc = 0.0;
  int last = row.back().target;
  for (const Transition& t : row) {
    acc += t.prob;
    last = t.target;
    if (u < acc) break;
  }
  return last;
}

}  // namespace

TreeIndex build_tree_index(const LayeredChain& chain) {
  TreeIndex idx;
  idx.parent.resize(chain.horizon + 1);
  idx.parent[0] = {-1};
  for (int h = 0; h < chain.horizon; ++h) {
    idx.parent[h + 1].assign(chain.level_size(h + 1), -1);
    for (int s = 0; s < chain.level_size(h); ++s) {
      for (const Transition& t : chain.row(h, s)) {
        if (idx.parent[h + 1][t.target] != -1 && idx.parent[h + 1][t.target] != s)
          throw NotATree("state has two distinct parents at level " + std::to_string(h + 1));
        idx.parent[h + 1][t.target] = s;
      }
    }
    for (int s = 0; s < chain.level_size(h + 1); ++s)
      if (idx.parent[h + 1][s] == -1)
        throw NotATree("orphan state at level " + std::to_string(h + 1));
  }
  return idx;
}

KernelRow VgbRow::down_conditioned() const {
  double total = 0.0;
  for (const Transition& t : to_children) total += t.prob;
  KernelRow out;
  if (!(total > 0.0)) return out;
  out.reserve(to_children.size());
  for (const Transition& t : to_children) out.push_back({t.target, t.prob / total});
  return out;
}

VgbRow vgb_step_distribution(const ProblemInstance& inst, const TreeIndex& tree,
                             const VgbState& state) {
  (void)tree;
  VgbRow row;
  if (state.aux) {
    row.to_parent = 0.0;
    row.to_children = {{0, 1.0}};  // always re-enter at ⊥
    return row;
  }
  const LayeredChain& chain = inst.chain;
  if (state.level == chain.horizon) {
    row.to_parent = 1.0;
    return row;
  }
  const double self_value = inst.prm.at(state.level, state.state);
  KahanSum child_mass;
  const KernelRow& step = chain.row(state.level, state.state);
  std::vector<double> weighted(step.size());
  for (size_t i = 0; i < step.size(); ++i) {
    weighted[i] = step[i].prob * inst.prm.at(state.level + 1, step[i].target);
    child_mass.add(weighted[i]);
  }
  const double denom = self_value + child_mass.get();
  if (!(denom > 0.0)) throw DegenerateRow("walk row has zero mass");
  row.to_parent = self_value / denom;
  row.to_children.reserve(step.size());
  for (size_t i = 0; i < step.size(); ++i)
    if (weighted[i] > 0.0) row.to_children.push_back({step[i].target, weighted[i] / denom});
  return row;
}

std::map<std::pair<int, int>, long long> forest_label_counts(const ParticleForest& forest) {
  std::map<std::pair<int, int>, long long> counts;
  for (const ForestNode& n : forest.nodes) ++counts[{n.level, n.state}];
  return counts;
}

bool forest_equal(const ParticleForest& a, const ParticleForest& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  auto children_of = [](const ParticleForest& f) {
    std::vector<std::vector<int>> ch(f.nodes.size() + 1);  // slot size() = roots
    for (size_t i = 0; i < f.nodes.size(); ++i) {
      const int p = f.nodes[i].parent;
      ch[p < 0 ? f.nodes.size() : static_cast<size_t>(p)].push_back(static_cast<int>(i));
    }
    return ch;
  };
  const auto ca = children_of(a), cb = children_of(b);

  // Compare ordered trees pairwise, roots in birth order.
  struct Frame {
    int na, nb;
  };
  const auto& roots_a = ca.back();
  const auto& roots_b = cb.back();
  if (roots_a.size() != roots_b.size()) return false;
  std::vector<Frame> stack;
  for (size_t r = 0; r < roots_a.size(); ++r) stack.push_back({roots_a[r], roots_b[r]});
  while (!stack.empty()) {
    auto [na, nb] = stack.back();
    stack.pop_back();
    const ForestNode& x = a.nodes[na];
    const ForestNode& y = b.nodes[nb];
    if (x.level != y.level || x.state != y.state) return false;
    const auto& cha = ca[na];
    const auto& chb = cb[nb];
    if (cha.size() != chb.size()) return false;
    for (size_t i = 0; i < cha.size(); ++i) stack.push_back({cha[i], chb[i]});
  }
  return true;
}

ParticleForest parse_vgb_trajectory(const std::vector<VgbState>& traj) {
  ParticleForest forest;
  if (traj.empty() || !traj.front().aux)
    throw InvalidSpec("trajectory must start at the aux state");
  std::vector<int> open;  // stack of open node indices; aux context when empty
  for (size_t t = 1; t < traj.size(); ++t) {
    const VgbState& prev = traj[t - 1];
    const VgbState& cur = traj[t];
    const int prev_level = prev.aux ? -1 : prev.level;
    const int cur_level = cur.aux ? -1 : cur.level;
    if (cur_level == prev_level + 1) {
      // Down-move opens a new excursion node.
      forest.nodes.push_back({cur.level, cur.state, open.empty() ? -1 : open.back()});
      open.push_back(static_cast<int>(forest.nodes.size()) - 1);
    } else if (cur_level == prev_level - 1) {
      if (open.empty()) throw InvalidSpec("trajectory moved above the aux state");
      open.pop_back();
    } else {
      throw InvalidSpec("trajectory steps must move one level at a time");
    }
  }
  forest.truncated = !open.empty();
  forest.steps_used = static_cast<long long>(traj.size()) - 1;
  return forest;
}

ParticleForest vgb_walk_forest(const ProblemInstance& inst, int visits_of_aux, RunKey key,
                               long long step_cap) {
  const TreeIndex tree = build_tree_index(inst.chain);
  ParticleForest forest;
  std::vector<int> open;
  VgbState state = VgbState::make_aux();
  int aux_visits = 1;
  long long step = 0;
  while (aux_visits < visits_of_aux + 1) {
    if (step >= step_cap) {
      forest.truncated = true;
      break;
    }
    RngStream rng =
        derive_stream(key.master, {key.trial, kRngWalk, static_cast<uint64_t>(step)});
    ++step;
    const VgbRow row = vgb_step_distribution(inst, tree, state);
    const double u = rng.next_unit();
    if (u < row.to_parent) {
      // Up-move closes the current excursion.
      if (open.empty())
        throw SelfCheckFailed("walk moved up from the aux state");
      open.pop_back();
      if (state.level == 0) {
        state = VgbState::make_aux();
        ++aux_visits;
      } else {
        state = VgbState::at(state.level - 1, tree.parent[state.level][state.state]);
      }
    } else {
      double acc = row.to_parent;
      int target = row.to_children.empty() ? -1 : row.to_children.back().target;
      for (const Transition& t : row.to_children) {
        acc += t.prob;
        target = t.target;
        if (u < acc) break;
      }
      const int child_level = state.aux ? 0 : state.level + 1;
      forest.nodes.push_back({child_level, target, open.empty() ? -1 : open.back()});
      open.push_back(static_cast<int>(forest.nodes.size()) - 1);
      state = VgbState::at(child_level, target);
    }
  }
  forest.steps_used = step;
  return forest;
}

ParticleForest smc_ind_run(const ProblemInstance& inst, int n_particles, RunKey key,
                           long long spawn_cap) {
  const TreeIndex tree = build_tree_index(inst.chain);
  const int H = inst.chain.horizon;
  ParticleForest forest;
  std::vector<int> frontier;  // node indices at level h-1
  for (int r = 0; r < n_particles; ++r) {
    forest.nodes.push_back({0, 0, -1});
    frontier.push_back(r);
  }
  if (static_cast<long long>(forest.nodes.size()) > spawn_cap)
    throw BudgetExceeded("initial particles exceed spawn cap");

  for (int h = 1; h <= H; ++h) {
    std::vector<int> next;
    for (size_t fi = 0; fi < frontier.size(); ++fi) {
      const int node = frontier[fi];
      const VgbState at = VgbState::at(h - 1, forest.nodes[node].state);
      const VgbRow row = vgb_step_distribution(inst, tree, at);
      RngStream rng = derive_stream(key.master, {key.trial, kRngSpawn, static_cast<uint64_t>(h),
                                                 static_cast<uint64_t>(fi)});
      const long long d = sample_geometric(row.to_parent, rng.next_unit(), spawn_cap);
      const KernelRow down = row.down_conditioned();
      for (long long c = 0; c < d; ++c) {
        if (static_cast<long long>(forest.nodes.size()) >= spawn_cap)
          throw BudgetExceeded("spawned particle count exceeds cap");
        const int child = sample_kernel_row(rng, down);
        forest.nodes.push_back({h, child, node});
        next.push_back(static_cast<int>(forest.nodes.size()) - 1);
      }
    }
    frontier = std::move(next);
  }
  return forest;
}

// ---------------------------------------------------------------------------
// Constructive coupling
// ---------------------------------------------------------------------------

namespace {

struct SharedDraws {
  const ProblemInstance& inst;
  const TreeIndex& tree;
  RunKey key;
  long long spawn_cap;

  // Per-node stream keyed by the node's birth path (root ordinal, then child
  // ordinals). Both constructions consume: one uniform for the geometric
  // count, then one per child label, in birth order.
  RngStream stream_for(const std::vector<uint64_t>& path) const {
    std::vector<uint64_t> full;
    full.reserve(path.size() + 2);
    full.push_back(key.trial);
    full.push_back(kRngSpawn);
    full.insert(full.end(), path.begin(), path.end());
    return derive_stream(key.master, std::span<const uint64_t>(full));
  }

  // Draws the child labels for the node at `state`/`level` with birth path
  // `path`. Returns the child states in birth order.
  std::vector<int> children(int level, int state, const std::vector<uint64_t>& path) const {
    const VgbRow row = vgb_step_distribution(inst, tree, VgbState::at(level, state));
    RngStream rng = stream_for(path);
    const long long d = sample_geometric(row.to_parent, rng.next_unit(), spawn_cap);
    const KernelRow down = row.down_conditioned();
    std::vector<int> out;
    out.reserve(static_cast<size_t>(d));
    for (long long c = 0; c < d; ++c) out.push_back(sample_kernel_row(rng, down));
    return out;
  }
};

}  // namespace

CoupledForests coupled_pair(const ProblemInstance& inst, int n_particles, RunKey key,
                            long long spawn_cap) {
  const TreeIndex tree = build_tree_index(inst.chain);
  const SharedDraws draws{inst, tree, key, spawn_cap};
  const int H = inst.chain.horizon;
  CoupledForests out;

  // (a) Layered branching build, exactly the Alg. 4 loop but with per-node
  // path-derived streams so the walk synthesis below can replay them.
  struct Pending {
    int node;
    std::vector<uint64_t> path;
  };
  std::vector<Pending> frontier;
  for (int r = 0; r < n_particles; ++r) {
    out.ind.nodes.push_back({0, 0, -1});
    frontier.push_back({r, {static_cast<uint64_t>(r)}});
  }
  for (int h = 1; h <= H; ++h) {
    std::vector<Pending> next;
    for (const Pending& p : frontier) {
      const std::vector<int> kids =
          draws.children(h - 1, out.ind.nodes[p.node].state, p.path);
      for (size_t c = 0; c < kids.size(); ++c) {
        if (static_cast<long long>(out.ind.nodes.size()) >= spawn_cap)
          throw BudgetExceeded("coupled build exceeds spawn cap");
        out.ind.nodes.push_back({h, kids[c], p.node});
        std::vector<uint64_t> child_path = p.path;
        child_path.push_back(static_cast<uint64_t>(c));
        next.push_back({static_cast<int>(out.ind.nodes.size()) - 1, std::move(child_path)});
      }
    }
    frontier = std::move(next);
  }

  // (b) Walk-trajectory synthesis from the same draws: depth-first emission,
  // then the interval parser recovers the forest.
  std::vector<VgbState> traj;
  traj.push_back(VgbState::make_aux());
  struct DfsFrame {
    int level;
    int state;
    std::vector<uint64_t> path;
  };
  std::function<void(const DfsFrame&)> emit = [&](const DfsFrame& f) {
    traj.push_back(VgbState::at(f.level, f.state));
    if (f.level == H) return;
    const std::vector<int> kids = draws.children(f.level, f.state, f.path);
    for (size_t c = 0; c < kids.size(); ++c) {
      std::vector<uint64_t> child_path = f.path;
      child_path.push_back(static_cast<uint64_t>(c));
      emit({f.level + 1, kids[c], std::move(child_path)});
      traj.push_back(VgbState::at(f.level, f.state));  // excursion returns here
    }
  };
  for (int r = 0; r < n_particles; ++r) {
    emit({0, 0, {static_cast<uint64_t>(r)}});
    traj.push_back(VgbState::make_aux());
  }
  out.vgb = parse_vgb_trajectory(traj);
  return out;
}

}  // namespace pfkit
