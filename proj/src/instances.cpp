#include "pfkit/instances.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

namespace pfkit {

namespace {

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

ValueTable prm_shell(const LayeredChain& chain) {
  ValueTable prm;
  prm.tag = ValueTag::kPrm;
  prm.values.resize(chain.horizon + 1);
  for (int h = 0; h <= chain.horizon; ++h) prm.values[h].assign(chain.level_size(h), 1.0);
  return prm;
}

}  // namespace

ProblemInstance two_path_instance() {
  ProblemInstance inst;
  inst.name = "two-path";
  LayeredChain& chain = inst.chain;
  chain.horizon = 2;
  chain.levels = {{"⊥"}, {"a", "b"}, {"a'", "b'"}};
  chain.kernels = {{{{0, 0.5}, {1, 0.5}}}, {{{0, 1.0}}, {{1, 1.0}}}};
  inst.terminal_reward = {2.0, 1.0};
  inst.prm.tag = ValueTag::kPrm;
  inst.prm.values = {{1.0}, {1.0, 1.0}, {2.0, 1.0}};
  return inst;
}

ProblemInstance with_exact_prm(const ProblemInstance& inst) {
  ProblemInstance out = inst;
  out.name = inst.name + "-exact-prm";
  out.prm = exact_prm_from(backward_induction(inst));
  return out;
}

ProblemInstance random_tree_instance(int alphabet, int depth, uint64_t seed) {
  ProblemInstance inst;
  inst.name = "random-tree-a" + std::to_string(alphabet) + "-d" + std::to_string(depth) +
              "-s" + std::to_string(seed);
  inst.chain = build_tree_chain(alphabet, depth, seeded_rows(alphabet, seed));
  inst.prm = prm_shell(inst.chain);
  const int leaves = inst.chain.level_size(depth);
  inst.terminal_reward.resize(leaves);
  for (int s = 0; s < leaves; ++s) {
    RngStream rng = derive_stream(seed, {0x726577ULL, static_cast<uint64_t>(s)});
    inst.terminal_reward[s] = 0.5 + 1.5 * rng.next_unit();
    inst.prm.values[depth][s] = inst.terminal_reward[s];
  }
  for (int h = 1; h < depth; ++h) {
    for (int s = 0; s < inst.chain.level_size(h); ++s) {
      RngStream rng = derive_stream(
          seed, {0x70726dULL, static_cast<uint64_t>(h), static_cast<uint64_t>(s)});
      inst.prm.values[h][s] = 0.5 + 1.5 * rng.next_unit();
    }
  }
  return inst;
}

// ---------------------------------------------------------------------------
// SMC lower-bound instance
// ---------------------------------------------------------------------------

SmcLowerInstance build_smc_lower(int horizon, double lambda, long long budget,
                                 bool force_full) {
  if (horizon < 1 || !(lambda > 0.0)) throw InvalidSpec("need horizon >= 1 and lambda > 0");
  SmcLowerInstance out;
  out.lambda = lambda;
  const bool fits = horizon < 62 && (1LL << horizon) <= budget;
  if (!fits && force_full)
    throw BudgetExceeded("full tree with 2^" + std::to_string(horizon) + " leaves");
  out.collapsed = !fits;

  ProblemInstance& inst = out.instance;
  if (!out.collapsed) {
    inst.name = "smc-lower-H" + std::to_string(horizon) + "-lam" + fmt_double(lambda);
    inst.chain = build_tree_chain(2, horizon, uniform_rows(2), budget);
    inst.prm = prm_shell(inst.chain);
    for (int h = 1; h <= horizon; ++h) {
      for (int s = 0; s < inst.chain.level_size(h); ++s) {
        inst.prm.values[h][s] =
            std::pow(1.0 + lambda, std::popcount(static_cast<uint64_t>(s)));
      }
    }
    inst.terminal_reward = inst.prm.values[horizon];
  } else {
    // Exchangeable collapse: the kernel and PRM depend on the path only
    // through its 1-count, so SMC run on 1-count states has exactly the same
    // law; per-coordinate symbols come back from path increments.
    inst.name = "smc-lower-H" + std::to_string(horizon) + "-lam" + fmt_double(lambda) +
                "-collapsed";
    LayeredChain& chain = inst.chain;
    chain.horizon = horizon;
    chain.levels.resize(horizon + 1);
    chain.kernels.resize(horizon);
    chain.levels[0] = {"⊥"};
    for (int h = 1; h <= horizon; ++h) {
      chain.levels[h].resize(h + 1);
      for (int c = 0; c <= h; ++c) chain.levels[h][c] = "c" + std::to_string(c);
    }
    for (int h = 0; h < horizon; ++h) {
      chain.kernels[h].resize(h + 1);
      for (int c = 0; c <= h; ++c) chain.kernels[h][c] = {{c, 0.5}, {c + 1, 0.5}};
    }
    inst.prm = prm_shell(chain);
    for (int h = 1; h <= horizon; ++h)
      for (int c = 0; c <= h; ++c) inst.prm.values[h][c] = std::pow(1.0 + lambda, c);
    inst.terminal_reward = inst.prm.values[horizon];
  }
  return out;
}

std::vector<int> SmcLowerInstance::coordinates(std::span<const int> path) const {
  std::vector<int> bits;
  bits.reserve(path.size() - 1);
  for (size_t h = 1; h < path.size(); ++h) {
    bits.push_back(collapsed ? path[h] - path[h - 1]
                             : tree_symbol(2, path[h], path[h - 1]));
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Variance-blowup instance
// ---------------------------------------------------------------------------

ProblemInstance build_var_blowup(int horizon) {
  if (horizon < 2) throw InvalidSpec("variance blowup needs horizon >= 2");
  const int n = horizon / 2;
  ProblemInstance inst;
  inst.name = "var-blowup-H" + std::to_string(horizon);
  LayeredChain& chain = inst.chain;
  chain.horizon = horizon;
  chain.levels.resize(horizon + 1);
  chain.kernels.resize(horizon);
  chain.levels[0] = {"⊥"};
  for (int h = 1; h <= horizon; ++h) chain.levels[h] = {"b0", "b1"};
  const double rare = std::ldexp(1.0, -n);  // 2^{-n} on the peaked branch
  chain.kernels[0] = {{{0, rare}, {1, 1.0 - rare}}};
  for (int h = 1; h < horizon; ++h) chain.kernels[h] = {{{0, 1.0}}, {{1, 1.0}}};
  inst.terminal_reward = {1.0, 1.0};
  inst.prm = prm_shell(chain);
  for (int h = 1; h <= horizon; ++h) {
    const int exponent = h <= n ? h : std::max(2 * n - h, 0);
    inst.prm.values[h][0] = std::ldexp(1.0, exponent);
    inst.prm.values[h][1] = 1.0;
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Myopic lower-bound construction
// ---------------------------------------------------------------------------

namespace {

double log_bias(bool agree, double gamma) {
  return std::log(agree ? 0.5 + gamma : 0.5 - gamma);
}

}  // namespace

double MyopicConstruction::log_mu(std::span<const uint8_t> agree) const {
  KahanSum acc;
  if (n_level == 1) {
    for (uint8_t z : agree) acc.add(log_bias(z != 0, gamma[0]));
    return acc.get();
  }
  const int block = h_schedule[0] + 2;
  for (size_t k = 1; k <= agree.size(); ++k) {
    const int pos = static_cast<int>((k - 1) % block);
    const double g = (pos == 0 || pos == block - 1) ? gamma[1] : gamma[0];
    acc.add(log_bias(agree[k - 1] != 0, g));
  }
  return acc.get();
}

double MyopicConstruction::log_muhat(std::span<const uint8_t> agree) const {
  const int h_total = horizon();
  const size_t len = agree.size();
  KahanSum acc;
  if (n_level == 1) {
    for (size_t k = 1; k <= len; ++k) {
      if (k == 1) {
        acc.add(std::log(0.5));
      } else if (static_cast<int>(k) < h_total) {
        acc.add(log_bias(agree[k - 2] != 0, gamma[0]));  // delayed one step
      } else {
        // Final step folds the two-coordinate factor.
        acc.add(std::log(2.0) + log_bias(agree[k - 2] != 0, gamma[0]) +
                log_bias(agree[k - 1] != 0, gamma[0]));
      }
    }
    return acc.get();
  }
  const int inner_h = h_schedule[0];
  const int block = inner_h + 2;
  for (size_t k = 1; k <= len; ++k) {
    const int pos = static_cast<int>((k - 1) % block);
    const size_t block_start = k - 1 - pos;  // 0-based index of the block leader
    if (pos == 0) {
      acc.add(std::log(0.5));
    } else if (pos < block - 1) {
      // Embedded copy of the one-level construction on the block interior.
      const int inner_k = pos;  // 1..inner_h
      if (inner_k == 1) {
        acc.add(std::log(0.5));
      } else if (inner_k < inner_h) {
        acc.add(log_bias(agree[k - 2] != 0, gamma[0]));
      } else {
        acc.add(std::log(2.0) + log_bias(agree[k - 2] != 0, gamma[0]) +
                log_bias(agree[k - 1] != 0, gamma[0]));
      }
    } else {
      // Block end reveals the delayed leader coordinate and its own.
      acc.add(std::log(2.0) + log_bias(agree[block_start] != 0, gamma[1]) +
              log_bias(agree[k - 1] != 0, gamma[1]));
    }
  }
  return acc.get();
}

bool MyopicConstruction::in_failure_event(std::span<const uint8_t> agree) const {
  const int h_total = horizon();
  if (static_cast<int>(agree.size()) != h_total)
    throw DimensionMismatch("failure event needs a full-length output");
  if (n_level == 1) {
    long long count = 0;
    for (int k = 2; k < h_total; ++k) count += agree[k - 1];
    return static_cast<double>(count) >= (0.5 + gamma[0] / 2.0) * (h_total - 2);
  }
  const int block = h_schedule[0] + 2;
  const int blocks = h_total / block;
  long long leaders = 0;
  for (int i = 0; i < blocks; ++i) {
    leaders += agree[static_cast<size_t>(i) * block];
    // Interior slice runs over global coordinates iK+2 .. (i+1)K-1.
    MyopicConstruction inner;
    inner.n_level = 1;
    inner.h_schedule = {h_schedule[0]};
    inner.gamma = {gamma[0]};
    std::span<const uint8_t> slice =
        agree.subspan(static_cast<size_t>(i) * block + 1, static_cast<size_t>(block) - 2);
    if (!inner.in_failure_event(slice)) return false;
  }
  return static_cast<double>(leaders) / blocks >= 0.5 + gamma[1] / 2.0;
}

std::vector<uint8_t> MyopicConstruction::sample_mu_agreement(RngStream& rng) const {
  const int h_total = horizon();
  const int block = n_level == 1 ? 0 : h_schedule[0] + 2;
  std::vector<uint8_t> agree(h_total);
  for (int k = 1; k <= h_total; ++k) {
    double g = gamma[0];
    if (n_level == 2) {
      const int pos = (k - 1) % block;
      if (pos == 0 || pos == block - 1) g = gamma[1];
    }
    agree[k - 1] = rng.next_unit() < 0.5 + g ? 1 : 0;
  }
  return agree;
}

std::vector<uint8_t> MyopicConstruction::decode_agreement(std::span<const int> path) const {
  std::vector<uint8_t> agree(path.size() - 1);
  for (size_t h = 1; h < path.size(); ++h) {
    if (collapsed) {
      agree[h - 1] = static_cast<uint8_t>(path[h] & 1);
    } else {
      const int bit = tree_symbol(2, path[h], path[h - 1]);
      agree[h - 1] = static_cast<uint8_t>(bit == ystar[h - 1] ? 1 : 0);
    }
  }
  return agree;
}

MyopicConstruction build_myopic_lb(int n_level, std::vector<int> h_schedule,
                                   std::vector<double> gamma_schedule,
                                   std::vector<uint8_t> ystar, uint64_t ystar_seed,
                                   long long budget) {
  if (n_level != 1 && n_level != 2)
    throw ScheduleInvalid("recursion depth must be 1 or 2");
  if (static_cast<int>(h_schedule.size()) != n_level ||
      static_cast<int>(gamma_schedule.size()) != n_level)
    throw ScheduleInvalid("need one horizon and one gamma per recursion level");
  for (double g : gamma_schedule)
    if (!(g > 0.0 && g < 0.5)) throw ScheduleInvalid("gamma must lie in (0, 1/2)");
  if (h_schedule[0] < 3) throw ScheduleInvalid("base horizon must be at least 3");
  if (n_level == 2 && h_schedule[1] % (h_schedule[0] + 2) != 0)
    throw ScheduleInvalid("outer horizon must be a multiple of inner horizon + 2");

  MyopicConstruction mc;
  mc.n_level = n_level;
  mc.h_schedule = std::move(h_schedule);
  mc.gamma = std::move(gamma_schedule);
  const int h_total = mc.horizon();

  if (ystar.empty()) {
    RngStream rng = derive_stream(ystar_seed, {0x79737461ULL});
    ystar.resize(h_total);
    for (int k = 0; k < h_total; ++k) ystar[k] = rng.next_unit() < 0.5 ? 0 : 1;
  }
  if (static_cast<int>(ystar.size()) != h_total)
    throw ScheduleInvalid("y* must have the full horizon length");
  mc.ystar = std::move(ystar);

  const bool fits = h_total < 62 && (1LL << h_total) <= budget;
  mc.collapsed = !fits;
  if (mc.collapsed && n_level != 1)
    throw BudgetExceeded("two-level construction beyond the explicit budget");

  ProblemInstance& inst = mc.instance;
  inst.name = "myopic-N" + std::to_string(n_level) + "-H" + std::to_string(h_total) +
              (mc.collapsed ? "-collapsed" : "");
  LayeredChain& chain = inst.chain;

  if (!mc.collapsed) {
    chain = build_tree_chain(2, h_total, uniform_rows(2), budget);
    inst.prm = prm_shell(chain);
    inst.terminal_reward.resize(chain.level_size(h_total));
    std::vector<uint8_t> agree;
    for (int h = 1; h <= h_total; ++h) {
      agree.resize(h);
      for (int s = 0; s < chain.level_size(h); ++s) {
        for (int k = 0; k < h; ++k) {
          const int bit = (s >> (h - 1 - k)) & 1;
          agree[k] = static_cast<uint8_t>(bit == mc.ystar[k] ? 1 : 0);
        }
        const double value = std::exp(h * std::log(2.0) + mc.log_muhat(agree));
        inst.prm.values[h][s] = value;
        if (h == h_total) inst.terminal_reward[s] = std::exp(h * std::log(2.0) + mc.log_mu(agree));
      }
    }
    // μ̂ = μ at full length, so the PRM already matches r* bit-for-bit up to
    // the different evaluation route; force exact equality.
    inst.prm.values[h_total] = inst.terminal_reward;
  } else {
    // Agreement-collapsed chain: level-h states are (m, z) with m agreements
    // among coordinates 1..h-1 and current-coordinate agreement z; the PRM
    // depends only on (h, m) and the reward only on m+z, so the collapse is
    // exact. State index = 2m + z.
    chain.horizon = h_total;
    chain.levels.resize(h_total + 1);
    chain.kernels.resize(h_total);
    chain.levels[0] = {"⊥"};
    for (int h = 1; h <= h_total; ++h) {
      chain.levels[h].resize(2 * h);
      for (int m = 0; m < h; ++m)
        for (int z = 0; z <= 1; ++z)
          chain.levels[h][2 * m + z] = "m" + std::to_string(m) + "z" + std::to_string(z);
    }
    chain.kernels[0] = {{{0, 0.5}, {1, 0.5}}};
    for (int h = 1; h < h_total; ++h) {
      chain.kernels[h].resize(2 * h);
      for (int m = 0; m < h; ++m) {
        for (int z = 0; z <= 1; ++z) {
          const int m_next = m + z;
          chain.kernels[h][2 * m + z] = {{2 * m_next, 0.5}, {2 * m_next + 1, 0.5}};
        }
      }
    }
    inst.prm = prm_shell(chain);
    const double g = mc.gamma[0];
    auto log_mu_count = [&](int m, int len) {
      return m * std::log(0.5 + g) + (len - m) * std::log(0.5 - g);
    };
    for (int h = 1; h <= h_total; ++h) {
      for (int m = 0; m < h; ++m) {
        for (int z = 0; z <= 1; ++z) {
          double lv;
          if (h < h_total) {
            lv = h * std::log(2.0) + std::log(0.5) + log_mu_count(m, h - 1);
          } else {
            lv = h * std::log(2.0) + log_mu_count(m + z, h);
          }
          inst.prm.values[h][2 * m + z] = std::exp(lv);
        }
      }
    }
    inst.terminal_reward = inst.prm.values[h_total];
  }
  return mc;
}

// ---------------------------------------------------------------------------
// Kernel-switching instance
// ---------------------------------------------------------------------------

ProblemInstance build_kernel_switch(const RowFn& base, const RowFn& perturbed, double alpha,
                                    int horizon, int alphabet, long long budget) {
  if (!(alpha >= 0.0)) throw InvalidSpec("alpha must be nonnegative");
  ProblemInstance inst;
  inst.name = "kernel-switch-a" + fmt_double(alpha) + "-H" + std::to_string(horizon);
  inst.chain = build_tree_chain(alphabet, horizon, base, budget);
  inst.prm = prm_shell(inst.chain);

  // Exact prefix log-probabilities of the reference and the perturbed target.
  std::vector<double> log_ref = {0.0};
  std::vector<double> log_tgt = {0.0};
  for (int h = 0; h < horizon; ++h) {
    const long long width = inst.chain.level_size(h);
    std::vector<double> next_ref(width * alphabet), next_tgt(width * alphabet);
    for (long long s = 0; s < width; ++s) {
      std::vector<double> brow = base(h, s);
      std::vector<double> prow = perturbed(h, s);
      if (static_cast<int>(prow.size()) != alphabet)
        throw InvalidSpec("perturbed row has wrong arity");
      for (int a = 0; a < alphabet; ++a) {
        if (!(brow[a] > 0.0) || !(prow[a] > 0.0))
          throw SupportMismatch("kernel-switch requires strictly positive rows");
        next_ref[s * alphabet + a] = log_ref[s] + std::log(brow[a]);
        next_tgt[s * alphabet + a] = log_tgt[s] + std::log(prow[a]);
      }
    }
    log_ref = std::move(next_ref);
    log_tgt = std::move(next_tgt);
    // V̂ = (π_tgt/π_ref)^{1 - (1-h/H)·α}: the target's value function, with
    // the early-step signal attenuated toward the reference direction.
    const int level = h + 1;
    const double exponent = 1.0 - (1.0 - static_cast<double>(level) / horizon) * alpha;
    for (long long s = 0; s < static_cast<long long>(log_ref.size()); ++s) {
      inst.prm.values[level][s] = std::exp(exponent * (log_tgt[s] - log_ref[s]));
    }
  }
  inst.terminal_reward.resize(log_ref.size());
  for (long long s = 0; s < static_cast<long long>(log_ref.size()); ++s)
    inst.terminal_reward[s] = std::exp(log_tgt[s] - log_ref[s]);
  inst.prm.values[horizon] = inst.terminal_reward;
  return inst;
}

ProblemInstance seeded_kernel_switch(uint64_t seed, double epsilon, double alpha, int horizon,
                                     long long budget) {
  if (!(epsilon >= 0.0 && epsilon < 0.5)) throw InvalidSpec("epsilon must lie in [0, 0.5)");
  RowFn perturbed = [seed, epsilon](int level, long long state) {
    RngStream rng = derive_stream(seed, {0x6b737763ULL, static_cast<uint64_t>(level),
                                         static_cast<uint64_t>(state)});
    double q = 0.5 + epsilon * (2.0 * rng.next_unit() - 1.0);
    q = std::clamp(q, 0.02, 0.98);
    return std::vector<double>{q, 1.0 - q};
  };
  ProblemInstance inst =
      build_kernel_switch(uniform_rows(2), perturbed, alpha, horizon, 2, budget);
  inst.name = "kswitch-s" + std::to_string(seed) + "-eps" + fmt_double(epsilon) + "-a" +
              fmt_double(alpha) + "-H" + std::to_string(horizon);
  return inst;
}

}  // namespace pfkit
