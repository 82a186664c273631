#pragma once

/**
 * Layered Markov chain model: explicit per-level state spaces, sparse
 * row-stochastic step kernels, value tables, and the problem instance
 * (chain + terminal reward + process reward model) that every sampler and
 * oracle consumes. Includes construction, validation, and JSON file I/O.
 */

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pfkit/errors.hpp"

namespace pfkit {

inline constexpr long long kDefaultStateBudget = 1LL << 20;

struct Transition {
  int target = 0;
  double prob = 0.0;
};

// Sparse kernel row: zero entries omitted.
using KernelRow = std::vector<Transition>;

struct LayeredChain {
  int horizon = 0;                                  // H
  std::vector<std::vector<std::string>> levels;     // H+1 label lists; level 0 = {"⊥"}
  std::vector<std::vector<KernelRow>> kernels;      // kernels[h][src], h in [0, H)

  int level_size(int h) const { return static_cast<int>(levels[h].size()); }
  const KernelRow& row(int h, int src) const { return kernels[h][src]; }
};

enum class ValueTag { kExactVstar, kPrm };

// One nonnegative scalar per state at every level.
struct ValueTable {
  ValueTag tag = ValueTag::kPrm;
  std::vector<std::vector<double>> values;  // values[h][state]

  double at(int h, int i) const { return values[h][i]; }
};

struct ProblemInstance {
  std::string name;
  LayeredChain chain;
  std::vector<double> terminal_reward;  // r* over level-H states
  ValueTable prm;                       // tag kPrm; prm[H] == r*, prm[0] == {1}
};

struct Violation {
  std::string what;
  int level = -1;
  int index = -1;
};

std::string to_string(const Violation& v);

// Reports every violated invariant; an empty list means the instance is valid.
std::vector<Violation> validate_instance(const ProblemInstance& inst);

// States reachable from ⊥ with positive probability, per level.
std::vector<std::vector<char>> reachable_mask(const LayeredChain& chain);

// ---------------------------------------------------------------------------
// Tree chains (autoregressive special case: level-h states are length-h
// strings over a finite alphabet, indexed as base-A integers).
// ---------------------------------------------------------------------------

// Conditional row for the state with index `state` at level `level`; must
// return `alphabet` probabilities summing to 1.
using RowFn = std::function<std::vector<double>(int level, long long state)>;

RowFn uniform_rows(int alphabet);
RowFn seeded_rows(int alphabet, uint64_t seed, double lo = 0.1, double hi = 0.9);

LayeredChain build_tree_chain(int alphabet, int horizon, const RowFn& rows,
                              long long budget = kDefaultStateBudget);

// Symbol decoding for tree chains: the level-h symbol of a root-to-leaf path.
inline int tree_symbol(int alphabet, long long idx_h, long long idx_prev) {
  return static_cast<int>(idx_h - idx_prev * alphabet);
}

// ---------------------------------------------------------------------------
// Instance file I/O (JSON; see README for the schema). save+load is the
// identity on all numeric fields bit-exactly; the loader validates.
// ---------------------------------------------------------------------------

void save_instance(const ProblemInstance& inst, const std::string& path);
ProblemInstance load_instance(const std::string& path);
ProblemInstance parse_instance_json(const std::string& text);
std::string instance_to_json(const ProblemInstance& inst);

// FNV-1a of the serialized instance; embedded in output rows for provenance.
std::string content_hash(const std::string& bytes);

}  // namespace pfkit
