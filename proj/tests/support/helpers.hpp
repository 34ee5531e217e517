#ifndef COVWISH_TEST_HELPERS_HPP
#define COVWISH_TEST_HELPERS_HPP

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace covwish::testing {

// Asymptotic Kolmogorov-Smirnov p-value for a sample against a continuous
// CDF (one-sample test, Stephens' small-sample correction).
inline double ks_pvalue(std::vector<double> samples,
                        const std::function<double(double)>& cdf) {
  const std::size_t n = samples.size();
  std::sort(samples.begin(), samples.end());
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  double sn = std::sqrt(static_cast<double>(n));
  double lam = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * lam * lam);
    p += 2.0 * sign * term;
    sign = -sign;
    if (term < 1e-16) break;
  }
  return std::min(1.0, std::max(0.0, p));
}

// Upper-tail chi-square p-value.
inline double chisq_pvalue(double stat, double df) {
  return boost::math::gamma_q(0.5 * df, 0.5 * stat);
}

// Pearson chi-square GOF p-value from observed counts and expected
// probabilities (bins with tiny expectation should be merged by caller).
inline double chisq_gof_pvalue(const std::vector<double>& observed,
                               const std::vector<double>& expected_prob,
                               double total) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    double e = expected_prob[i] * total;
    stat += (observed[i] - e) * (observed[i] - e) / e;
  }
  return chisq_pvalue(stat, static_cast<double>(observed.size()) - 1.0);
}

// Two-sample Kolmogorov-Smirnov p-value.
inline double ks2_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() -
                             static_cast<double>(j) / b.size()));
  }
  double ne = std::sqrt(static_cast<double>(a.size()) * b.size() /
                        (a.size() + b.size()));
  double lam = (ne + 0.12 + 0.11 / ne) * d;
  double p = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * lam * lam);
    p += 2.0 * sign * term;
    sign = -sign;
    if (term < 1e-16) break;
  }
  return std::min(1.0, std::max(0.0, p));
}

// Monte Carlo standard error of the mean of a (possibly autocorrelated)
// sequence, via non-overlapping batch means.
inline double batch_se(const std::vector<double>& x, int n_batches = 25) {
  std::size_t bl = x.size() / n_batches;
  std::vector<double> bm;
  for (int b = 0; b < n_batches; ++b) {
    double s = 0.0;
    for (std::size_t k = b * bl; k < (b + 1) * bl; ++k) s += x[k];
    bm.push_back(s / bl);
  }
  double m = 0.0;
  for (double v : bm) m += v;
  m /= bm.size();
  double var = 0.0;
  for (double v : bm) var += (v - m) * (v - m);
  var /= (bm.size() - 1);
  return std::sqrt(var / bm.size());
}

inline double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / x.size();
}

inline double variance(const std::vector<double>& x) {
  double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / (x.size() - 1);
}

// Adaptive Simpson integration.
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int n) {
  if (n % 2) ++n;
  double h = (b - a) / n, s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * ((i % 2) ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace covwish::testing

#endif  // COVWISH_TEST_HELPERS_HPP
