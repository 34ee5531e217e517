#ifndef COVWISH_WISHART_HPP
#define COVWISH_WISHART_HPP

#include <cmath>

#include "covwish/linalg.hpp"
#include "covwish/rng.hpp"

namespace covwish {

// log of the multivariate gamma function Gamma_p(a), a > (p-1)/2.
inline double mvlgamma(int p, double a) {
  require(p >= 1, ErrorClass::numeric, "mvlgamma: p must be >= 1");
  require(a > 0.5 * (p - 1), ErrorClass::numeric,
          "mvlgamma: argument must exceed (p-1)/2");
  double s = 0.25 * p * (p - 1) * std::log(M_PI);
  for (int j = 1; j <= p; ++j) s += std::lgamma(a + 0.5 * (1.0 - j));
  return s;
}

// Wishart draw W_p(df, scale) by the Bartlett decomposition:
// W = L A A' L' with L = chol(scale), A lower triangular, A_ii^2 ~ chi^2
// with df - i degrees of freedom (0-based row i), A_ij ~ N(0,1) below the
// diagonal.
inline MatrixXd wishart_sample(Rng& rng, double df, const MatrixXd& scale) {
  const int p = static_cast<int>(scale.rows());
  require(scale.rows() == scale.cols(), ErrorClass::numeric,
          "wishart_sample: scale must be square");
  require(df > p - 1, ErrorClass::config,
          "wishart_sample: df must exceed p - 1");
  Eigen::LLT<MatrixXd> llt(symmetrize(scale));
  require(llt.info() == Eigen::Success, ErrorClass::numeric,
          "wishart_sample: scale matrix is not positive definite");
  MatrixXd l = llt.matrixL();
  MatrixXd a = MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chisq(df - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  MatrixXd la = l * a;
  return la * la.transpose();
}

// Full normalized Wishart log density of X ~ W_p(df, scale).
inline double wishart_logpdf(const MatrixXd& x, double df,
                             const MatrixXd& scale) {
  const int p = static_cast<int>(x.rows());
  require(x.rows() == x.cols() && scale.rows() == p && scale.cols() == p,
          ErrorClass::numeric, "wishart_logpdf: shape mismatch");
  require(df > p - 1, ErrorClass::config,
          "wishart_logpdf: df must exceed p - 1 for a density to exist");
  double logdet_scale = spd_logdet(scale);
  double logdet_x = spd_logdet(x);
  Eigen::LLT<MatrixXd> llt(symmetrize(scale));
  require(llt.info() == Eigen::Success, ErrorClass::numeric,
          "wishart_logpdf: scale matrix is not positive definite");
  double tr = llt.solve(x).trace();
  return -0.5 * df * p * std::log(2.0) - 0.5 * df * logdet_scale -
         mvlgamma(p, 0.5 * df) + 0.5 * (df - p - 1.0) * logdet_x - 0.5 * tr;
}

// Mean-parameterized scaled Wishart: S ~ W_p(phi, Omega/phi) has E[S] =
// Omega and element variances shrinking like 1/phi.
inline MatrixXd scaled_wishart_sample(Rng& rng, double phi,
                                      const MatrixXd& omega) {
  return wishart_sample(rng, phi, omega / phi);
}

inline double scaled_wishart_logpdf(const MatrixXd& s, double phi,
                                    const MatrixXd& omega) {
  return wishart_logpdf(s, phi, omega / phi);
}

// ---------------------------------------------------------------------------
// Low-rank-plus-diagonal mean structure: Omega = sigma2 * (V Dt V' + I_p)
// with V a p x r orthonormal frame and Dt = diag(dtilde), dtilde >= 0.
// Orthonormality gives closed forms:
//   |Omega|          = sigma2^p * prod_h (1 + dtilde_h)
//   Omega^{-1}       = sigma2^{-1} (I - V E V') with E = diag(dtilde/(1+dtilde))
//   tr(Omega^{-1} S) = sigma2^{-1} (tr S - sum_h e_h (V' S V)_hh)
// ---------------------------------------------------------------------------

struct LowRankOmega {
  const MatrixXd* v = nullptr;  // p x r orthonormal columns
  VectorXd dtilde;              // length r, entries >= 0
  double sigma2 = 1.0;
  double phi = 0.0;

  int p() const { return static_cast<int>(v->rows()); }
  int r() const { return static_cast<int>(v->cols()); }

  double logdet_omega() const {
    double s = p() * std::log(sigma2);
    for (int h = 0; h < dtilde.size(); ++h) s += std::log1p(dtilde[h]);
    return s;
  }

  // tr(Omega^{-1} S) from cached tr(S) and the diagonal of V' S V.
  double trace_inv_s(double tr_s, const VectorXd& vsv_diag) const {
    double acc = tr_s;
    for (int h = 0; h < dtilde.size(); ++h) {
      double e = dtilde[h] / (1.0 + dtilde[h]);
      acc -= e * vsv_diag[h];
    }
    return acc / sigma2;
  }

  MatrixXd dense_omega() const {
    const MatrixXd& vv = *v;
    return sigma2 *
           (vv * dtilde.asDiagonal() * vv.transpose() +
            MatrixXd::Identity(p(), p()));
  }
};

// Per-observation log densities under the structured mean. logdet_s and
// tr_s are per-matrix quantities that callers cache once per data set;
// vsv_diag is diag(V' S V) for the current frame.
inline double structured_wishart_loglik(const LowRankOmega& lro,
                                        double logdet_s, double tr_s,
                                        const VectorXd& vsv_diag) {
  const int p = lro.p();
  const double phi = lro.phi;
  require(phi > p - 1, ErrorClass::config,
          "structured_wishart_loglik: phi must exceed p - 1");
  double logdet_omega = lro.logdet_omega();
  double tr = lro.trace_inv_s(tr_s, vsv_diag);
  return -0.5 * phi * p * std::log(2.0) + 0.5 * phi * p * std::log(phi) -
         0.5 * phi * logdet_omega - mvlgamma(p, 0.5 * phi) +
         0.5 * (phi - p - 1.0) * logdet_s - 0.5 * phi * tr;
}

// Unnormalized kernel: -(phi/2) (log|Omega| + tr(Omega^{-1} S)). Defined for
// every phi > 0 (no density normalizer), which matters when phi is swept
// below p - 1.
inline double structured_wishart_kernel(const LowRankOmega& lro, double tr_s,
                                        const VectorXd& vsv_diag) {
  return -0.5 * lro.phi * (lro.logdet_omega() + lro.trace_inv_s(tr_s, vsv_diag));
}

// Parameter-free remainder of the density: for any mean parameters,
// structured_wishart_loglik = structured_wishart_kernel + this constant.
inline double structured_wishart_const(int p, double phi, double logdet_s) {
  return -0.5 * phi * p * std::log(2.0) + 0.5 * phi * p * std::log(phi) -
         mvlgamma(p, 0.5 * phi) + 0.5 * (phi - p - 1.0) * logdet_s;
}

}  // namespace covwish

#endif  // COVWISH_WISHART_HPP
