#ifndef COVWISH_SHRINKAGE_HPP
#define COVWISH_SHRINKAGE_HPP

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>

#include "covwish/linalg.hpp"
#include "covwish/rng.hpp"

namespace covwish {

// Inverse-gamma prior hyperparameters for sigma^2.
struct IgHyper {
  double alpha_sigma = 3.0;
  double beta_sigma = 1.0;

  void validate() const {
    require(alpha_sigma > 2.0, ErrorClass::config,
            "IgHyper: alpha_sigma must exceed 2 (finite prior variance)");
    require(beta_sigma > 0.0, ErrorClass::config,
            "IgHyper: beta_sigma must be positive");
  }
  double prior_mean() const { return beta_sigma / (alpha_sigma - 1.0); }
};

// Global-local shrinkage block for one regime: global g = tau in (0,1),
// locals lambda_h > 0, derived dtilde_h = tau * lambda_h, and the noise
// variance sigma2.
struct ShrinkState {
  double tau = 0.1;
  VectorXd lambda;  // length r*
  VectorXd dtilde;  // derived: tau * lambda
  double sigma2 = 1.0;

  static ShrinkState make(double tau, VectorXd lambda, double sigma2) {
    ShrinkState s;
    s.tau = tau;
    s.lambda = std::move(lambda);
    s.sigma2 = sigma2;
    s.recompute_dtilde();
    s.validate();
    return s;
  }

  void recompute_dtilde() { dtilde = tau * lambda; }

  void validate() const {
    require(tau > 0.0 && tau < 1.0, ErrorClass::numeric,
            "ShrinkState: tau must lie in (0,1)");
    require(sigma2 > 0.0, ErrorClass::numeric,
            "ShrinkState: sigma2 must be positive");
    for (int h = 0; h < lambda.size(); ++h) {
      require(lambda[h] > 0.0, ErrorClass::numeric,
              "ShrinkState: lambda entries must be positive");
      require(std::abs(dtilde[h] - tau * lambda[h]) <=
                  1e-15 * std::max(1.0, std::abs(dtilde[h])),
              ErrorClass::numeric, "ShrinkState: dtilde out of sync");
    }
  }
};

// Quantile u in (0,1) of a Gamma(shape, rate) conditioned to [lo, hi],
// via the regularized incomplete gamma and its inverse. Accurate while the
// interval probability stays well above machine noise.
inline double truncated_gamma_quantile(double shape, double rate, double lo,
                                       double hi, double u) {
  double plo = boost::math::gamma_p(shape, rate * lo);
  double phi = boost::math::gamma_p(shape, rate * hi);
  double v = plo + u * (phi - plo);
  v = std::min(std::max(v, 1e-300), 1.0 - 1e-16);
  double x = boost::math::gamma_p_inv(shape, v);
  return std::min(std::max(x / rate, lo), hi);
}

// Gamma(shape, rate) draw conditioned to [lo, hi]. Uses inverse-CDF
// conditioning when the interval carries measurable probability, with
// envelope-rejection fallbacks for far-tail intervals. rate == 0 degenerates
// to the power-law density x^{shape-1} on [lo, hi], which stays proper on a
// bounded interval.
inline double truncated_gamma(Rng& rng, double shape, double rate, double lo,
                              double hi) {
  require(shape > 0.0, ErrorClass::config,
          "truncated_gamma: shape must be positive");
  require(hi > lo && lo >= 0.0 && std::isfinite(hi), ErrorClass::config,
          "truncated_gamma: need finite 0 <= lo < hi");
  if (rate <= 0.0) {
    require(rate == 0.0, ErrorClass::numeric,
            "truncated_gamma: rate must be nonnegative");
    double a = std::pow(lo, shape), b = std::pow(hi, shape);
    return std::pow(a + rng.uniform() * (b - a), 1.0 / shape);
  }
  double xlo = rate * lo, xhi = rate * hi;  // unit-scale interval
  double plo = boost::math::gamma_p(shape, xlo);
  double phi = boost::math::gamma_p(shape, xhi);
  if (phi - plo >= 1e-10) {
    return truncated_gamma_quantile(shape, rate, lo, hi, rng.uniform());
  }
  // Far-tail interval: envelope rejection on the unit-scale log density
  // l(x) = (shape-1) log x - x over (xlo, xhi).
  auto logd = [&](double x) { return (shape - 1.0) * std::log(x) - x; };
  double width = xhi - xlo;
  double slope;
  if (shape >= 1.0) {
    // l is concave: the tangent at the left endpoint is an upper envelope.
    slope = (shape - 1.0) / std::max(xlo, 1e-300) - 1.0;
  } else {
    // l is convex: the chord between the endpoints dominates it.
    slope = (logd(xhi) - logd(xlo)) / width;
  }
  // Propose x = xlo + E with E from an exponential of rate -slope truncated
  // to (0, width); slope >= 0 degenerates to the uniform proposal.
  for (int it = 0; it < 100000; ++it) {
    double e;
    double lam = -slope;
    if (lam > 1e-14) {
      double u = rng.uniform();
      // inverse CDF of Exp(lam) truncated to (0, width)
      e = -std::log1p(u * std::expm1(-lam * width)) / lam;
    } else {
      e = rng.uniform() * width;
    }
    double x = xlo + e;
    double log_acc = logd(x) - (logd(xlo) + slope * e);
    if (std::log(rng.uniform()) < log_acc)
      return std::min(std::max(x / rate, lo), hi);
  }
  throw_numeric("truncated_gamma: tail rejection failed to accept");
}

// Slice update of the local shrinkage parameters. Works on the inverted
// scale w_h = (1 + dtilde_h)^{-1} in (0,1}: the likelihood factor for
// component h is w^{N phi/2} exp(-c_h w) with c_h = phi M_hh / (2 sigma2),
// the half-Cauchy prior contributes w^{-2}/(g^2 + ((1-w)/w)^2), and a
// uniform slice variable u_h linearizes the prior factor so that w_h | u_h
// is a truncated Gamma(N phi/2 - 1, c_h) on
//   ( {1 + sqrt(1/u_h - g^2)}^{-1}, 1 ).
// The upper limit keeps lambda_h = (1-w_h)/(w_h g) strictly positive.
inline ShrinkState slice_update_locals(Rng& rng, const ShrinkState& state,
                                       const VectorXd& m_diag, int n_eff,
                                       double phi) {
  require(m_diag.size() == state.lambda.size(), ErrorClass::config,
          "slice_update_locals: M_diag size mismatch");
  double shape = 0.5 * n_eff * phi - 1.0;
  require(shape > 0.0, ErrorClass::config,
          "slice_update_locals: N_eff*phi/2 - 1 must be positive");
  ShrinkState out = state;
  const double g = state.tau;
  for (int h = 0; h < m_diag.size(); ++h) {
    require(m_diag[h] >= -1e-9, ErrorClass::numeric,
            "slice_update_locals: M_diag must be nonnegative");
    double w = 1.0 / (1.0 + state.dtilde[h]);
    double ratio = (1.0 - w) / w;
    double fmax = 1.0 / (g * g + ratio * ratio);
    double u = rng.uniform() * fmax;
    double s2 = 1.0 / u - g * g;
    double lo = (s2 > 0.0) ? 1.0 / (1.0 + std::sqrt(s2)) : 0.0;
    double rate = 0.5 * phi * std::max(m_diag[h], 0.0) / state.sigma2;
    double w_new = truncated_gamma(rng, shape, rate, lo, 1.0);
    w_new = std::min(w_new, 1.0 - 1e-14);  // keep lambda strictly positive
    out.lambda[h] = (1.0 - w_new) / (w_new * g);
  }
  out.recompute_dtilde();
  return out;
}

namespace detail {

// log of the global's conditional density in mu = log g, including the
// truncated-half-Cauchy prior factor e^mu / (1 + e^{2 mu}) on g < 1.
inline double global_log_target(double mu, const ShrinkState& state,
                                const VectorXd& m_diag, int n_eff,
                                double phi) {
  double g = std::exp(mu);
  double acc = mu - std::log1p(std::exp(2.0 * mu));
  for (int h = 0; h < state.lambda.size(); ++h) {
    double lg = state.lambda[h] * g;
    double c = 0.5 * phi * m_diag[h] / state.sigma2;
    // (1 + lambda g)^{-N phi / 2} * exp(c * (lambda g) / (1 + lambda g))
    acc += -0.5 * n_eff * phi * std::log1p(lg) + c * (lg / (1.0 + lg));
  }
  return acc;
}

}  // namespace detail

// Random-walk Metropolis step for the global shrinkage parameter on the
// log scale. Proposals implying g >= 1 are rejected outright (the prior is
// a half-Cauchy truncated to (0,1)).
inline std::pair<ShrinkState, bool> mh_update_global(Rng& rng,
                                                     const ShrinkState& state,
                                                     const VectorXd& m_diag,
                                                     int n_eff, double phi,
                                                     double step_sd) {
  require(step_sd >= 0.0, ErrorClass::config,
          "mh_update_global: step_sd must be nonnegative");
  double mu = std::log(state.tau);
  double mu_star = mu + step_sd * rng.normal();
  if (mu_star >= 0.0) return {state, false};  // g* >= 1
  if (step_sd == 0.0) return {state, true};
  double diff = detail::global_log_target(mu_star, state, m_diag, n_eff, phi) -
                detail::global_log_target(mu, state, m_diag, n_eff, phi);
  if (std::log(rng.uniform()) < diff) {
    ShrinkState out = state;
    out.tau = std::exp(mu_star);
    out.recompute_dtilde();
    return {out, true};
  }
  return {state, false};
}

// Conjugate inverse-gamma update for sigma^2 given trQS = tr(Q S^N) with
// Q = (V Dt V' + I)^{-1}.
inline ShrinkState gibbs_update_sigma2(Rng& rng, const ShrinkState& state,
                                       const IgHyper& hyper, double tr_qs,
                                       int n_eff, int p, double phi) {
  require(tr_qs >= -1e-9 * std::max(1.0, std::abs(tr_qs)), ErrorClass::numeric,
          "gibbs_update_sigma2: tr(QS) must be nonnegative");
  double shape = hyper.alpha_sigma - 1.0 + 0.5 * n_eff * p * phi;
  double rate = hyper.beta_sigma + 0.5 * phi * std::max(tr_qs, 0.0);
  require(shape > 0.0, ErrorClass::config,
          "gibbs_update_sigma2: nonpositive posterior shape");
  ShrinkState out = state;
  out.sigma2 = rate / rng.gamma(shape);
  return out;
}

// Method-of-moments elicitation for the sigma^2 prior: the mean of the
// p - r* smallest eigenvalues of the average matrix estimates the noise
// floor s; alpha = 3 and beta = 2 s give prior mean s and prior sd s.
inline IgHyper elicit_ig_hyper(const std::vector<MatrixXd>& data,
                               int r_star) {
  require(!data.empty(), ErrorClass::config,
          "elicit_ig_hyper: empty data list");
  const int p = static_cast<int>(data[0].rows());
  require(p > r_star, ErrorClass::config,
          "elicit_ig_hyper: need p > r_star");
  MatrixXd avg = MatrixXd::Zero(p, p);
  for (const auto& s : data) {
    require(s.rows() == p && s.cols() == p, ErrorClass::data,
            "elicit_ig_hyper: inconsistent matrix dimensions");
    avg += s;
  }
  avg /= static_cast<double>(data.size());
  EigenDecomp ed(avg);
  double s = 0.0;
  for (int i = r_star; i < p; ++i) s += ed.values[i];
  s /= (p - r_star);
  require(s > 0.0, ErrorClass::numeric,
          "elicit_ig_hyper: estimated noise floor is not positive");
  IgHyper hyper{3.0, 2.0 * s};
  hyper.validate();
  return hyper;
}

// Draw a shrinkage block from its prior: lambda_h half-Cauchy, tau a
// half-Cauchy conditioned to (0,1), sigma2 inverse-gamma. Used for
// initialization-by-prior and for regimes with no attached observations.
inline ShrinkState shrinkage_prior_draw(Rng& rng, int r_star,
                                        const IgHyper& hyper) {
  double tau;
  do {
    tau = rng.half_cauchy();
  } while (tau >= 1.0);
  tau = std::max(tau, 1e-12);
  VectorXd lambda(r_star);
  for (int h = 0; h < r_star; ++h)
    lambda[h] = std::max(rng.half_cauchy(), 1e-12);
  double sigma2 = rng.inverse_gamma(hyper.alpha_sigma, hyper.beta_sigma);
  return ShrinkState::make(tau, lambda, sigma2);
}

}  // namespace covwish

#endif  // COVWISH_SHRINKAGE_HPP
