#ifndef COVWISH_RNG_HPP
#define COVWISH_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "covwish/common.hpp"

namespace covwish {

// Standard normal CDF, accurate in both tails via erfc.
inline double norm_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double norm_logpdf(double x) {
  return -0.5 * x * x - 0.9189385332046727417803297;  // log(2*pi)/2
}

// Standard normal quantile. Bracketed Newton iteration on norm_cdf, so the
// accuracy comes from erfc rather than from a fixed polynomial fit.
inline double norm_quantile(double p) {
  require(p > 0.0 && p < 1.0, ErrorClass::numeric,
          "norm_quantile: p must lie strictly inside (0,1)");
  if (p > 0.5) return -norm_quantile(1.0 - p);
  // Left-half problem: result is <= 0. Start from the asymptotic tail form.
  double lo = -40.0, hi = 0.0;
  double x = (p < 0.4) ? -std::sqrt(-2.0 * std::log(p)) : 0.0;
  if (!(x > lo && x < hi)) x = -0.5 * (40.0);
  for (int iter = 0; iter < 100; ++iter) {
    double f = norm_cdf(x) - p;
    if (f > 0)
      hi = x;
    else
      lo = x;
    double logpdf = norm_logpdf(x);
    double step = 0.0;
    if (logpdf > -700.0) {
      step = f * std::exp(-logpdf);
    }
    double xn = x - step;
    if (!(xn > lo && xn < hi) || step == 0.0) xn = 0.5 * (lo + hi);
    if (std::abs(xn - x) < 1e-15 * (1.0 + std::abs(x))) {
      x = xn;
      break;
    }
    x = xn;
  }
  return x;
}

// Deterministic pseudo-random stream. Every consumer owns its own Rng,
// derived from (master seed, tag...) so that the draw sequence seen by one
// model component never depends on what other components consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  static std::uint64_t derive(std::uint64_t master, std::string_view tag,
                              std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(tag);
    h = fnv1a64_u64(index, h);
    h = fnv1a64_u64(master, h);
    return splitmix64(h);
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on the open interval (0,1); never returns an endpoint, so
  // log(u) and log(1-u) are always finite.
  double uniform() {
    return (static_cast<double>(eng_() >> 12) + 0.5) * 0x1.0p-52;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Unbiased integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    require(n > 0, ErrorClass::numeric, "uniform_int: n must be positive");
    std::uint64_t q = ~0ull / n;  // floor((2^64-1)/n)
    std::uint64_t bound = n * q;
    std::uint64_t r;
    do {
      r = eng_();
    } while (r >= bound);
    return r % n;
  }

  int rademacher() { return (eng_() & 1ull) ? 1 : -1; }

  bool bernoulli(double p) { return uniform() < p; }

  // Marsaglia polar method with a cached spare deviate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform()); }

  // Gamma(shape, 1). Algorithm from George Marsaglia and Wai Wan Tsang,
  // "A simple method for generating gamma variables" (2000) for shape >= 1;
  // the power-of-uniform boost handles shape < 1.
  double gamma(double shape) {
    require(shape > 0.0, ErrorClass::numeric, "gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double gamma(double shape, double scale) { return scale * gamma(shape); }

  double chisq(double df) { return 2.0 * gamma(0.5 * df); }

  double inverse_gamma(double shape, double rate) {
    return rate / gamma(shape);
  }

  double beta(double a, double b) {
    double x = gamma(a), y = gamma(b);
    return x / (x + y);
  }

  // Half-Cauchy with unit scale: |C(0,1)|.
  double half_cauchy() { return std::tan(1.5707963267948966 * uniform()); }

  // Draws an index with probability proportional to exp(logw[i]).
  int categorical_from_log(const std::vector<double>& logw) {
    require(!logw.empty(), ErrorClass::numeric,
            "categorical_from_log: empty weight vector");
    double mx = logw[0];
    for (double w : logw) mx = std::max(mx, w);
    require(std::isfinite(mx), ErrorClass::numeric,
            "categorical_from_log: all weights are -inf or nan");
    double total = 0.0;
    std::vector<double> cum(logw.size());
    for (std::size_t i = 0; i < logw.size(); ++i) {
      total += std::exp(logw[i] - mx);
      cum[i] = total;
    }
    double u = uniform() * total;
    for (std::size_t i = 0; i + 1 < logw.size(); ++i) {
      if (u <= cum[i]) return static_cast<int>(i);
    }
    return static_cast<int>(logw.size()) - 1;
  }

  // Normal truncated to [lo, hi] via CDF inversion. Intended for intervals
  // holding non-negligible mass (e.g. an autocorrelation on (-1,1)).
  double truncated_normal(double mean, double sd, double lo, double hi) {
    require(hi > lo && sd > 0.0, ErrorClass::numeric,
            "truncated_normal: requires hi > lo and sd > 0");
    double a = (lo - mean) / sd, b = (hi - mean) / sd;
    double pa = norm_cdf(a), pb = norm_cdf(b);
    if (pb - pa > 1e-12) {
      double u = pa + uniform() * (pb - pa);
      u = std::min(std::max(u, 1e-300), 1.0 - 1e-16);
      double z = norm_quantile(u);
      return mean + sd * std::min(std::max(z, a), b);
    }
    // Interval mass is numerically zero: fall back to a one-sided
    // exponential-tilt rejection anchored at the nearer endpoint.
    bool left_tail = a > 0.0;  // interval sits in the upper tail of N(0,1)
    double alpha = left_tail ? a : -b;  // distance of nearest endpoint
    double width = b - a;
    for (int it = 0; it < 10000; ++it) {
      double rate = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
      double e = exponential() / rate;
      if (e > width) continue;
      double z = alpha + e;
      double log_acc = -0.5 * (z - rate) * (z - rate);
      if (std::log(uniform()) < log_acc)
        return left_tail ? mean + sd * (a + e) : mean + sd * (b - e);
    }
    throw_numeric("truncated_normal: rejection fallback failed to accept");
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace covwish

#endif  // COVWISH_RNG_HPP
