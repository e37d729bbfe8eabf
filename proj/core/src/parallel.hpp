#pragma once

#include <cstdint>
#include <thread>
#include <utility>

// Two-way range split for kernels whose iterations write disjoint output
// regions. Each element's accumulation order is unchanged, so results are
// bit-identical to the sequential run, per the concurrency contract.

namespace ctcycle::detail {

inline bool pair_available() {
  static const bool available = std::thread::hardware_concurrency() >= 2;
  return available;
}

template <typename Fn>
void split_range(std::int64_t n, std::int64_t min_per_thread, Fn&& fn) {
  if (n < 2 * min_per_thread || !pair_available()) {
    fn(std::int64_t{0}, n);
    return;
  }
  const std::int64_t mid = n / 2;
  std::thread other([&fn, mid, n] { fn(mid, n); });
  fn(std::int64_t{0}, mid);
  other.join();
}

}  // namespace ctcycle::detail
