#ifndef COVWISH_COMMON_HPP
#define COVWISH_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace covwish {

// Error taxonomy. The numeric value doubles as the process exit code when an
// error escapes to the CLI driver.
enum class ErrorClass : int {
  config = 2,   // invalid configuration / arguments
  data = 3,     // malformed or inconsistent input data
  numeric = 4,  // numerical failure (non-SPD input, divergence, ...)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& msg)
      : std::runtime_error(msg), cls_(cls) {}
  ErrorClass error_class() const { return cls_; }
  int exit_code() const { return static_cast<int>(cls_); }

 private:
  ErrorClass cls_;
};

[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(ErrorClass::config, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorClass::data, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorClass::numeric, msg);
}

inline void require(bool cond, ErrorClass cls, const std::string& msg) {
  if (!cond) throw Error(cls, msg);
}

// FNV-1a 64-bit hash; used for config fingerprints and RNG stream derivation.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffull;
    h *= 0x100000001b3ull;
  }
  return h;
}

// splitmix64 finalizer; scrambles derived seeds so related tags give
// statistically unrelated streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Runs fn(i) for i in [0, n). With n_threads > 1 the index range is split
// into contiguous blocks, one per thread. Each index must touch only its own
// state; any cross-index reduction must happen serially afterwards, which is
// what keeps results independent of the thread count.
template <typename Fn>
void parallel_for(int n, int n_threads, Fn&& fn) {
  if (n <= 0) return;
  if (n_threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int workers = std::min(n_threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  // Contiguous blocks of near-equal size.
  int base = n / workers, extra = n % workers, start = 0;
  std::vector<std::exception_ptr> errs(workers);
  for (int w = 0; w < workers; ++w) {
    int len = base + (w < extra ? 1 : 0);
    int lo = start, hi = start + len;
    start = hi;
    pool.emplace_back([lo, hi, &fn, &errs, w]() {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace covwish

#endif  // COVWISH_COMMON_HPP
