// Seeded, order-independent sampling loops.

#ifndef PATHENT_MONTECARLO_HPP
#define PATHENT_MONTECARLO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

namespace pathent {

/// splitmix64 finaliser; sample k of a run seeded with `master` always gets
/// the same stream no matter which thread evaluates it.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Spread {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

inline Spread spread(const std::vector<double>& x) {
  Spread s;
  if (x.empty()) return s;
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (x.size() < 2) return s;
  double ss = 0.0;
  for (double v : x) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(x.size() - 1));
  return s;
}

/// Calls fn(k, seed_k) for k in [0, n) across worker threads and returns the
/// results in index order.
template <typename Fn>
auto sample_indexed(std::size_t n, std::uint64_t master_seed, Fn fn, unsigned threads = 0)
    -> std::vector<decltype(fn(std::size_t{}, std::uint64_t{}))> {
  using T = decltype(fn(std::size_t{}, std::uint64_t{}));
  std::vector<T> out(n);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) out[k] = fn(k, derive_seed(master_seed, k));
    return out;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < n; k += threads) out[k] = fn(k, derive_seed(master_seed, k));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace pathent

#endif  // PATHENT_MONTECARLO_HPP
