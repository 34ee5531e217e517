#ifndef COVWISH_LINALG_HPP
#define COVWISH_LINALG_HPP

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "covwish/common.hpp"
#include "covwish/rng.hpp"

namespace covwish {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd symmetrize(const MatrixXd& a) {
  return 0.5 * (a + a.transpose());
}

// Symmetric eigendecomposition with eigenvalues sorted descending and
// orthonormal eigenvectors in matching column order.
struct EigenDecomp {
  VectorXd values;   // descending
  MatrixXd vectors;  // vectors.col(k) pairs with values[k]

  explicit EigenDecomp(const MatrixXd& a) {
    require(a.rows() == a.cols(), ErrorClass::numeric,
            "EigenDecomp: matrix must be square");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a));
    require(es.info() == Eigen::Success, ErrorClass::numeric,
            "EigenDecomp: eigensolver failed to converge");
    const int p = static_cast<int>(a.rows());
    values = es.eigenvalues().reverse();
    vectors.resize(p, p);
    for (int k = 0; k < p; ++k) vectors.col(k) = es.eigenvectors().col(p - 1 - k);
  }

  MatrixXd reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

// Symmetric positive definite matrix. Construction mirrors the upper
// triangle into the lower one (the upper triangle is authoritative) and
// validates shape, finiteness and approximate symmetry; the SPD check
// itself is optional because it costs an eigendecomposition.
class SpdMatrix {
 public:
  static SpdMatrix from(const MatrixXd& a, bool check_spd = false,
                        double sym_tol = 1e-8) {
    require(a.rows() == a.cols() && a.rows() > 0, ErrorClass::data,
            "SpdMatrix: matrix must be square and non-empty");
    require(a.allFinite(), ErrorClass::data,
            "SpdMatrix: matrix has non-finite entries");
    const int p = static_cast<int>(a.rows());
    double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    MatrixXd m(p, p);
    for (int j = 0; j < p; ++j) {
      for (int i = 0; i <= j; ++i) {
        require(std::abs(a(i, j) - a(j, i)) <= sym_tol * scale,
                ErrorClass::data, "SpdMatrix: matrix is not symmetric");
        m(i, j) = a(i, j);
        m(j, i) = a(i, j);
      }
    }
    SpdMatrix s;
    s.m_ = std::move(m);
    if (check_spd) {
      EigenDecomp ed(s.m_);
      require(ed.values[p - 1] > 1e-12 * std::max(1.0, ed.values[0]),
              ErrorClass::numeric,
              "SpdMatrix: matrix is not positive definite");
    }
    return s;
  }

  const MatrixXd& mat() const { return m_; }
  int dim() const { return static_cast<int>(m_.rows()); }

 private:
  MatrixXd m_;
};

// Matrix with orthonormal columns (a point on a Stiefel manifold).
class StiefelMatrix {
 public:
  static constexpr double kOrthoTol = 1e-8;

  static StiefelMatrix from(const MatrixXd& v) {
    require(v.rows() >= v.cols() && v.cols() > 0, ErrorClass::numeric,
            "StiefelMatrix: need rows >= cols >= 1");
    MatrixXd g = v.transpose() * v;
    g.diagonal().array() -= 1.0;
    require(g.cwiseAbs().maxCoeff() <= kOrthoTol, ErrorClass::numeric,
            "StiefelMatrix: columns are not orthonormal");
    StiefelMatrix s;
    s.m_ = v;
    return s;
  }

  const MatrixXd& mat() const { return m_; }
  int rows() const { return static_cast<int>(m_.rows()); }
  int cols() const { return static_cast<int>(m_.cols()); }

 private:
  MatrixXd m_;
};

// Thin QR with the positive-diagonal-R sign convention, which makes the
// orthonormal factor unique (and hence deterministic).
inline MatrixXd orthonormalize(const MatrixXd& a) {
  require(a.rows() >= a.cols() && a.cols() > 0, ErrorClass::numeric,
          "orthonormalize: need rows >= cols >= 1");
  Eigen::HouseholderQR<MatrixXd> qr(a);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(a.rows(), a.cols());
  for (int j = 0; j < a.cols(); ++j) {
    if (qr.matrixQR()(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

// Haar-uniform draw on the Stiefel manifold of p x r orthonormal frames:
// QR of a Gaussian matrix with the R-diagonal sign fix.
inline StiefelMatrix uniform_stiefel(Rng& rng, int p, int r) {
  require(p >= r && r >= 1, ErrorClass::config,
          "uniform_stiefel: need p >= r >= 1");
  MatrixXd g(p, r);
  for (int j = 0; j < r; ++j)
    for (int i = 0; i < p; ++i) g(i, j) = rng.normal();
  return StiefelMatrix::from(orthonormalize(g));
}

// Orthonormal basis of the orthogonal complement of span(V with column j
// removed); returns p x (p - r + 1). Computed from a full Householder QR,
// so the basis is a deterministic function of V.
inline MatrixXd null_basis(const MatrixXd& v, int drop_col) {
  const int p = static_cast<int>(v.rows());
  const int r = static_cast<int>(v.cols());
  require(drop_col >= 0 && drop_col < r, ErrorClass::numeric,
          "null_basis: column index out of range");
  if (r == 1) return MatrixXd::Identity(p, p);
  MatrixXd rest(p, r - 1);
  int k = 0;
  for (int j = 0; j < r; ++j) {
    if (j != drop_col) rest.col(k++) = v.col(j);
  }
  Eigen::HouseholderQR<MatrixXd> qr(rest);
  MatrixXd qfull = qr.householderQ() * MatrixXd::Identity(p, p);
  return qfull.rightCols(p - (r - 1));
}

// Ratio of trace to largest eigenvalue: 1 for a rank-one matrix, p for a
// multiple of the identity. Eigenvalues are clamped at zero first.
inline double effective_rank(const MatrixXd& a) {
  EigenDecomp ed(a);
  double lmax = ed.values[0];
  require(lmax > 0.0, ErrorClass::numeric,
          "effective_rank: matrix has no positive eigenvalue");
  double tr = 0.0;
  for (int i = 0; i < ed.values.size(); ++i)
    tr += std::max(0.0, ed.values[i]);
  return tr / lmax;
}

namespace detail {

// Applies f to the eigenvalues of an SPD matrix. Eigenvalues are clamped
// below at 1e-12 * lambda_max so that tiny negative round-off does not
// poison log/sqrt; a non-positive largest eigenvalue is a hard error.
template <typename F>
MatrixXd spd_eig_map(const MatrixXd& a, F&& f, const char* what) {
  EigenDecomp ed(a);
  require(ed.values[0] > 0.0, ErrorClass::numeric,
          std::string(what) + ": matrix is not positive definite");
  double floor_val = 1e-12 * ed.values[0];
  VectorXd mapped(ed.values.size());
  for (int i = 0; i < ed.values.size(); ++i)
    mapped[i] = f(std::max(ed.values[i], floor_val));
  return ed.vectors * mapped.asDiagonal() * ed.vectors.transpose();
}

}  // namespace detail

inline MatrixXd spd_log(const MatrixXd& a) {
  return detail::spd_eig_map(a, [](double x) { return std::log(x); },
                             "spd_log");
}

inline MatrixXd spd_sqrt(const MatrixXd& a) {
  return detail::spd_eig_map(a, [](double x) { return std::sqrt(x); },
                             "spd_sqrt");
}

inline MatrixXd spd_inv_sqrt(const MatrixXd& a) {
  return detail::spd_eig_map(
      a, [](double x) { return 1.0 / std::sqrt(x); }, "spd_inv_sqrt");
}

// log determinant of an SPD matrix via eigenvalues (robust near-singular
// diagnostics beat raw Cholesky here; p stays small in this library).
inline double spd_logdet(const MatrixXd& a) {
  EigenDecomp ed(a);
  require(ed.values[ed.values.size() - 1] >
              1e-12 * std::max(1.0, std::abs(ed.values[0])),
          ErrorClass::numeric, "spd_logdet: matrix is numerically singular");
  double s = 0.0;
  for (int i = 0; i < ed.values.size(); ++i) s += std::log(ed.values[i]);
  return s;
}

// Frobenius distance.
inline double dist_frobenius(const MatrixXd& a, const MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorClass::numeric,
          "dist_frobenius: shape mismatch");
  return (a - b).norm();
}

// Affine-invariant Riemannian distance: || log(A^{-1/2} B A^{-1/2}) ||_F.
inline double dist_riemannian(const MatrixXd& a, const MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorClass::numeric,
          "dist_riemannian: shape mismatch");
  MatrixXd ai = spd_inv_sqrt(a);
  MatrixXd w = symmetrize(ai * b * ai);
  EigenDecomp ed(w);
  require(ed.values[ed.values.size() - 1] > 0.0, ErrorClass::numeric,
          "dist_riemannian: arguments are not both positive definite");
  double s = 0.0;
  for (int i = 0; i < ed.values.size(); ++i) {
    double l = std::log(ed.values[i]);
    s += l * l;
  }
  return std::sqrt(s);
}

// Cholesky distance: Frobenius distance between the lower Cholesky factors.
inline double dist_cholesky(const MatrixXd& a, const MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorClass::numeric,
          "dist_cholesky: shape mismatch");
  Eigen::LLT<MatrixXd> la(symmetrize(a)), lb(symmetrize(b));
  require(la.info() == Eigen::Success && lb.info() == Eigen::Success,
          ErrorClass::numeric,
          "dist_cholesky: arguments are not both positive definite");
  return (MatrixXd(la.matrixL()) - MatrixXd(lb.matrixL())).norm();
}

// Divides a matrix by its smallest eigenvalue (a light-tailed rescaling
// used before fitting when measurement scales are arbitrary).
inline MatrixXd scale_by_min_eig(const MatrixXd& a) {
  EigenDecomp ed(a);
  double lmin = ed.values[ed.values.size() - 1];
  require(lmin > 0.0, ErrorClass::numeric,
          "scale_by_min_eig: smallest eigenvalue is not positive");
  return a / lmin;
}

}  // namespace covwish

#endif  // COVWISH_LINALG_HPP
