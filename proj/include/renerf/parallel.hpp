// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace renerf {

// Worker count: RENERF_THREADS when set and positive, otherwise hardware concurrency.
int worker_count();

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on up to
// worker_count() threads. Callers write results into disjoint slots, so the
// outcome never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

// Stateless mixing for per-item random streams (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(a ^ mix_seed(b)); }

// Uniform double in [0,1) from a 64-bit hash.
inline double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace renerf
