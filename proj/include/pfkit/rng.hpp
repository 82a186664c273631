#pragma once

/**
 * Counter-derived random substreams.
 *
 * Every random decision in the toolkit draws from a stream whose state is a
 * hash of (master seed, trial, restart, step, purpose, particle/attempt).
 * Streams are cheap to derive, so parallel trial execution order can never
 * change any result: trial k always sees the same bits no matter which worker
 * runs it.
 */

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace pfkit {

// SplitMix64 finalizer (Steele et al.); good avalanche, cheap.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  explicit RngStream(uint64_t state) : state_(state) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Multiply-shift; bias is negligible for the n used here (<= 2^32).
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  uint64_t state_;
};

// Hash-chains the path elements onto the master seed.
inline RngStream derive_stream(uint64_t master, std::initializer_list<uint64_t> path) {
  uint64_t s = mix64(master ^ 0x6a09e667f3bcc909ULL);
  for (uint64_t v : path) s = mix64(s ^ mix64(v ^ 0xbb67ae8584caa73bULL));
  return RngStream(s);
}

// Stream identified by an arbitrary-length path (used for per-node draws in
// the forest coupling, where the path is the node's position in the tree).
inline RngStream derive_stream(uint64_t master, std::span<const uint64_t> path) {
  uint64_t s = mix64(master ^ 0x6a09e667f3bcc909ULL);
  for (uint64_t v : path) s = mix64(s ^ mix64(v ^ 0xbb67ae8584caa73bULL));
  return RngStream(s);
}

// Purpose tags keep substreams for different decisions disjoint.
enum RngPurpose : uint64_t {
  kRngResample = 1,
  kRngPropagate = 2,
  kRngOutput = 3,
  kRngAccept = 4,
  kRngAttempt = 5,
  kRngWalk = 6,
  kRngPilot = 7,
  kRngSpawn = 8,
};

// Samples an index from unnormalized nonnegative weights. Returns -1 when the
// total mass is zero.
inline int sample_index(RngStream& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return -1;
  double u = rng.next_unit() * total;
  double acc = 0.0;
  int last = -1;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;  // u landed in the rounding gap at the top
}

}  // namespace pfkit
