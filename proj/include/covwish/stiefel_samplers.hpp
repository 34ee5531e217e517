#ifndef COVWISH_STIEFEL_SAMPLERS_HPP
#define COVWISH_STIEFEL_SAMPLERS_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "covwish/linalg.hpp"
#include "covwish/rng.hpp"

namespace covwish {

// Matrix Bingham parameters: density on the Stiefel manifold proportional
// to etr(B V' A V) with A symmetric p x p and B diagonal (given by b_diag).
struct BinghamParams {
  MatrixXd a;
  VectorXd b_diag;
};

// Independent quadratic potentials per column: density proportional to
// exp( sum_j v_j' H_j v_j ) subject to V'V = I. The matrix Bingham family
// is the special case H_j = b_j A.
struct ColumnFieldParams {
  std::vector<MatrixXd> h;
};

namespace detail {

// One slice-sampling move for the angle substitution of the squared-
// coordinate conditional. Target on (0, pi/2):
//   log f(psi) = (m-2) log cos(psi) + a sin(psi)^2,
// which is the theta = sin(psi)^2 reparameterization of
//   f(theta) ∝ theta^{-1/2} (1-theta)^{(m-3)/2} exp(a theta)
// and is bounded and smooth for every m >= 2. Uses shrinkage from the full
// interval (Neal 2003), which keeps the move exactly invariant.
inline double slice_angle(Rng& rng, double psi0, double a, int m) {
  const double half_pi = 1.5707963267948966;
  const double eps = 1e-12;
  const double m2 = static_cast<double>(m - 2);
  auto logf = [&](double psi) {
    double c = std::cos(psi);
    double s = std::sin(psi);
    return m2 * std::log(c) + a * s * s;
  };
  psi0 = std::min(std::max(psi0, eps), half_pi - eps);
  double level = logf(psi0) - rng.exponential();
  double lo = 0.0, hi = half_pi;
  for (int it = 0; it < 400; ++it) {
    double psi = rng.uniform(lo, hi);
    if (logf(psi) >= level) return psi;
    if (psi < psi0)
      lo = psi;
    else
      hi = psi;
  }
  return psi0;  // interval collapsed to the current point
}

// Draws a uniform direction on the sphere S^{k-1}.
inline VectorXd uniform_direction(Rng& rng, int k) {
  VectorXd u(k);
  double n2 = 0.0;
  do {
    for (int i = 0; i < k; ++i) u[i] = rng.normal();
    n2 = u.squaredNorm();
  } while (n2 <= 0.0);
  return u / std::sqrt(n2);
}

}  // namespace detail

// One Gibbs sweep for z on the unit sphere with density proportional to
// exp(z' H z). Coordinates are updated in the eigenbasis of H: each squared
// coordinate has a univariate conditional that is sampled by slice moves,
// and its sign is symmetric so it is redrawn uniformly.
inline VectorXd sample_vector_bingham(Rng& rng, const MatrixXd& h,
                                      const VectorXd& z) {
  const int m = static_cast<int>(z.size());
  require(h.rows() == m && h.cols() == m, ErrorClass::numeric,
          "sample_vector_bingham: dimension mismatch");
  if (m == 1) {
    // S^0 = {-1, +1}; z^2 = 1 makes both points equally likely.
    VectorXd out(1);
    out[0] = static_cast<double>(rng.rademacher());
    return out;
  }
  EigenDecomp ed(h);
  const VectorXd& lam = ed.values;
  VectorXd y = ed.vectors.transpose() * z;
  y /= y.norm();

  for (int i = 0; i < m; ++i) {
    double r2 = 0.0;
    double srest = 0.0;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      r2 += y[j] * y[j];
      srest += lam[j] * y[j] * y[j];
    }
    if (r2 < 1e-280) {
      // The remaining block has collapsed to zero; its direction is
      // unidentified, so refresh it uniformly (a valid Gibbs move).
      VectorXd u = detail::uniform_direction(rng, m - 1);
      int k = 0;
      srest = 0.0;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        y[j] = u[k++];
        srest += lam[j] * y[j] * y[j];
      }
      r2 = 1.0;
      y[i] = 0.0;
    }
    double s = srest / r2;
    double a = lam[i] - s;
    double theta_old = std::min(std::max(y[i] * y[i], 0.0), 1.0);
    double psi_old = std::asin(std::sqrt(theta_old));
    double psi = detail::slice_angle(rng, psi_old, a, m);
    double sin_psi = std::sin(psi), cos_psi = std::cos(psi);
    double scale = cos_psi / std::sqrt(r2);  // sqrt((1 - sin^2 psi) / r2)
    for (int j = 0; j < m; ++j) {
      if (j != i) y[j] *= scale;
    }
    y[i] = rng.rademacher() * sin_psi;
  }
  VectorXd out = ed.vectors * y;
  out /= out.norm();
  return out;
}

namespace detail {

// Shared column-at-a-time sweep machinery. reduced_h(j, N) must return the
// symmetric (p-r+1) x (p-r+1) potential N' H_j N for column j.
inline MatrixXd column_sweeps(
    Rng& rng, const MatrixXd& v_in, int sweeps, int reorth_interval,
    const std::function<MatrixXd(int, const MatrixXd&)>& reduced_h) {
  MatrixXd v = v_in;
  const int r = static_cast<int>(v.cols());
  for (int sweep = 1; sweep <= sweeps; ++sweep) {
    for (int j = 0; j < r; ++j) {
      MatrixXd nb = null_basis(v, j);
      VectorXd z = nb.transpose() * v.col(j);
      double zn = z.norm();
      if (zn < 0.9) {
        // Numerical drift has made the column leave its complement space;
        // replace it with a fresh direction inside the complement.
        z = uniform_direction(rng, static_cast<int>(nb.cols()));
      } else {
        z /= zn;
      }
      MatrixXd hred = symmetrize(reduced_h(j, nb));
      z = sample_vector_bingham(rng, hred, z);
      VectorXd vj = nb * z;
      // The target is invariant to column sign; flip uniformly so the
      // chain never conditions on an arbitrary orientation.
      if (rng.rademacher() < 0) vj = -vj;
      v.col(j) = vj;
    }
    if (reorth_interval > 0 && sweep % reorth_interval == 0) {
      v = orthonormalize(v);
    }
  }
  return v;
}

}  // namespace detail

// Gibbs sweeps for V with independent column potentials exp(v_j' H_j v_j).
// Each column is updated on the unit sphere of the orthogonal complement of
// the remaining columns (the conditional distribution is a vector Bingham
// there), followed by a uniform sign flip.
inline StiefelMatrix sample_column_field(Rng& rng,
                                         const ColumnFieldParams& params,
                                         const StiefelMatrix& v, int sweeps = 1,
                                         int reorth_interval = 100) {
  const int r = v.cols();
  require(static_cast<int>(params.h.size()) == r, ErrorClass::config,
          "sample_column_field: need one potential per column");
  for (const auto& h : params.h) {
    require(h.rows() == v.rows() && h.cols() == v.rows(), ErrorClass::config,
            "sample_column_field: potential dimension mismatch");
  }
  require(sweeps >= 1, ErrorClass::config,
          "sample_column_field: sweeps must be >= 1");
  MatrixXd out = detail::column_sweeps(
      rng, v.mat(), sweeps, reorth_interval,
      [&](int j, const MatrixXd& nb) -> MatrixXd {
        return nb.transpose() * params.h[static_cast<std::size_t>(j)] * nb;
      });
  return StiefelMatrix::from(out);
}

// Gibbs sweeps for the matrix Bingham density etr(B V' A V) with diagonal
// B: column j feels the potential b_j * A.
inline StiefelMatrix sample_matrix_bingham(Rng& rng,
                                           const BinghamParams& params,
                                           const StiefelMatrix& v,
                                           int sweeps = 1,
                                           int reorth_interval = 100) {
  require(params.a.rows() == v.rows() && params.a.cols() == v.rows(),
          ErrorClass::config, "sample_matrix_bingham: A dimension mismatch");
  require(params.b_diag.size() == v.cols(), ErrorClass::config,
          "sample_matrix_bingham: B dimension mismatch");
  require(sweeps >= 1, ErrorClass::config,
          "sample_matrix_bingham: sweeps must be >= 1");
  MatrixXd a = symmetrize(params.a);
  MatrixXd out = detail::column_sweeps(
      rng, v.mat(), sweeps, reorth_interval,
      [&](int j, const MatrixXd& nb) -> MatrixXd {
        return params.b_diag[j] * (nb.transpose() * a * nb);
      });
  return StiefelMatrix::from(out);
}

}  // namespace covwish

#endif  // COVWISH_STIEFEL_SAMPLERS_HPP
