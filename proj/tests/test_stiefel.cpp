#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "covwish/stiefel_samplers.hpp"
#include "support/helpers.hpp"

using namespace covwish;
namespace ct = covwish::testing;

namespace {

// Exact rejection sampler for the vector Bingham density exp(z'Hz) on the
// sphere: propose uniform directions, accept with exp(z'Hz - lambda_max).
VectorXd bingham_rejection_oracle(Rng& rng, const MatrixXd& h) {
  EigenDecomp ed(h);
  double lmax = ed.values[0];
  for (;;) {
    VectorXd z =
        covwish::detail::uniform_direction(rng, static_cast<int>(h.rows()));
    double logacc = z.dot(h * z) - lmax;
    if (std::log(rng.uniform()) < logacc) return z;
  }
}

}  // namespace

TEST_CASE("vector Bingham at m=1 is a fair sign", "[stiefel]") {
  Rng rng(301);
  MatrixXd h(1, 1);
  h << 4.2;
  VectorXd z(1);
  z << 1.0;
  int pos = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    z = sample_vector_bingham(rng, h, z);
    REQUIRE(std::abs(std::abs(z[0]) - 1.0) < 1e-12);
    pos += (z[0] > 0);
  }
  CHECK(std::abs(pos - n / 2) < 4 * std::sqrt(n / 4.0));
}

TEST_CASE("vector Bingham with H = cI is uniform on the sphere", "[stiefel]") {
  // All eigenvalues equal means the quadratic form is constant on the
  // sphere, so the chain must deliver the uniform distribution.
  Rng rng(307);
  const int m = 3;
  MatrixXd h = 3.7 * MatrixXd::Identity(m, m);
  VectorXd z(m);
  z << 1.0, 0.0, 0.0;
  std::vector<double> y2;
  for (int i = 0; i < 30000; ++i) {
    z = sample_vector_bingham(rng, h, z);
    if (i % 3 == 0) y2.push_back(z[0] * z[0]);
  }
  // Squared coordinate of a uniform point on S^2 is Beta(1/2, 1).
  auto cdf = [](double t) { return boost::math::ibeta(0.5, 1.0, t); };
  CHECK(ct::ks_pvalue(y2, cdf) > 0.01);
}

TEST_CASE("vector Bingham at m=2 matches quadrature", "[stiefel]") {
  Rng rng(311);
  MatrixXd h(2, 2);
  h << 2.0, 0.8, 0.8, -1.0;
  VectorXd z(2);
  z << 1.0, 0.0;

  // Bin the angle of z and compare against probabilities integrated from
  // the exact density f(alpha) ∝ exp(z(alpha)' H z(alpha)).
  auto dens = [&](double alpha) {
    VectorXd w(2);
    w << std::cos(alpha), std::sin(alpha);
    return std::exp(w.dot(h * w));
  };
  const int bins = 16;
  const double two_pi = 2.0 * M_PI;
  std::vector<double> prob(bins);
  double total = ct::simpson(dens, 0.0, two_pi, 4000);
  for (int b = 0; b < bins; ++b) {
    prob[b] = ct::simpson(dens, b * two_pi / bins, (b + 1) * two_pi / bins,
                          400) /
              total;
  }
  std::vector<double> counts(bins, 0.0);
  const int n = 40000;
  int kept = 0;
  for (int i = 0; i < 4 * n; ++i) {
    z = sample_vector_bingham(rng, h, z);
    if (i % 4 != 0) continue;
    double alpha = std::atan2(z[1], z[0]);
    if (alpha < 0) alpha += two_pi;
    counts[std::min(bins - 1, static_cast<int>(alpha / (two_pi / bins)))] +=
        1.0;
    ++kept;
  }
  CHECK(ct::chisq_gof_pvalue(counts, prob, kept) > 0.01);
}

TEST_CASE("vector Bingham matches an exact rejection oracle at m=4",
          "[stiefel]") {
  Rng rng(313);
  MatrixXd g(4, 4);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) g(i, j) = rng.normal();
  MatrixXd h = symmetrize(g);  // modest eigenvalue spread keeps rejection fast
  EigenDecomp ed(h);

  const int n = 10000;
  VectorXd z = covwish::detail::uniform_direction(rng, 4);
  std::vector<double> chain_stat, oracle_stat;
  for (int i = 0; i < 5 * n; ++i) {
    z = sample_vector_bingham(rng, h, z);
    if (i % 5 == 0) chain_stat.push_back(z.dot(h * z));
  }
  Rng rng2(317);
  for (int i = 0; i < n; ++i) {
    VectorXd w = bingham_rejection_oracle(rng2, h);
    oracle_stat.push_back(w.dot(h * w));
  }
  CHECK(ct::ks2_pvalue(chain_stat, oracle_stat) > 0.01);

  // Also compare the leading squared eigen-coordinate.
  Rng rng3(331);
  std::vector<double> c1, o1;
  z = covwish::detail::uniform_direction(rng3, 4);
  for (int i = 0; i < 5 * n; ++i) {
    z = sample_vector_bingham(rng3, h, z);
    if (i % 5 == 0) {
      double y = ed.vectors.col(0).dot(z);
      c1.push_back(y * y);
    }
  }
  Rng rng4(337);
  for (int i = 0; i < n; ++i) {
    VectorXd w = bingham_rejection_oracle(rng4, h);
    double y = ed.vectors.col(0).dot(w);
    o1.push_back(y * y);
  }
  CHECK(ct::ks2_pvalue(c1, o1) > 0.01);
}

TEST_CASE("matrix Bingham with B=0 is uniform: projector mean", "[stiefel]") {
  Rng rng(347);
  const int p = 4, r = 2;
  BinghamParams params{MatrixXd::Identity(p, p), VectorXd::Zero(r)};
  StiefelMatrix v = uniform_stiefel(rng, p, r);
  const int n = 10000;
  MatrixXd acc = MatrixXd::Zero(p, p);
  std::vector<double> diag0;
  for (int i = 0; i < n; ++i) {
    v = sample_matrix_bingham(rng, params, v);
    MatrixXd pr = v.mat() * v.mat().transpose();
    acc += pr;
    diag0.push_back(pr(0, 0));
  }
  acc /= n;
  double se = ct::batch_se(diag0);
  MatrixXd want = (double(r) / p) * MatrixXd::Identity(p, p);
  CHECK((acc - want).cwiseAbs().maxCoeff() < 3.0 * std::max(se, 1e-3));
}

TEST_CASE("matrix Bingham with B=0 at p=2, r=1: uniform angle histogram",
          "[stiefel]") {
  Rng rng(349);
  BinghamParams params{MatrixXd::Identity(2, 2), VectorXd::Zero(1)};
  StiefelMatrix v = uniform_stiefel(rng, 2, 1);
  const int bins = 12, n = 10000;
  std::vector<double> counts(bins, 0.0);
  for (int i = 0; i < n; ++i) {
    v = sample_matrix_bingham(rng, params, v);
    double alpha = std::atan2(v.mat()(1, 0), v.mat()(0, 0));
    if (alpha < 0) alpha += 2.0 * M_PI;
    counts[std::min(bins - 1, static_cast<int>(alpha / (2.0 * M_PI / bins)))] +=
        1.0;
  }
  std::vector<double> prob(bins, 1.0 / bins);
  CHECK(ct::chisq_gof_pvalue(counts, prob, n) > 0.01);
}

TEST_CASE("columns stay orthonormal over a thousand sweeps", "[stiefel]") {
  Rng rng(353);
  const int p = 6, r = 3;
  MatrixXd g(p, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) g(i, j) = rng.normal();
  MatrixXd a = g * g.transpose();
  VectorXd b(r);
  b << 1.5, 0.7, 0.2;
  BinghamParams params{a, b};
  StiefelMatrix v = uniform_stiefel(rng, p, r);
  for (int i = 0; i < 1000; ++i) {
    v = sample_matrix_bingham(rng, params, v);
  }
  MatrixXd gram = v.mat().transpose() * v.mat();
  gram.diagonal().array() -= 1.0;
  CHECK(gram.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("column field with zero potentials is uniform", "[stiefel]") {
  Rng rng(359);
  const int p = 4, r = 2;
  ColumnFieldParams params;
  params.h.assign(r, MatrixXd::Zero(p, p));
  StiefelMatrix v = uniform_stiefel(rng, p, r);
  const int n = 10000;
  MatrixXd acc = MatrixXd::Zero(p, p);
  std::vector<double> diag0;
  for (int i = 0; i < n; ++i) {
    v = sample_column_field(rng, params, v);
    MatrixXd pr = v.mat() * v.mat().transpose();
    acc += pr;
    diag0.push_back(pr(0, 0));
  }
  acc /= n;
  double se = ct::batch_se(diag0);
  MatrixXd want = (double(r) / p) * MatrixXd::Identity(p, p);
  CHECK((acc - want).cwiseAbs().maxCoeff() < 3.0 * std::max(se, 1e-3));
}

TEST_CASE("column field at r=1 agrees with matrix Bingham", "[stiefel]") {
  Rng rng(367);
  const int p = 3;
  MatrixXd g(p, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) g(i, j) = rng.normal();
  MatrixXd h1 = symmetrize(g);

  ColumnFieldParams cf;
  cf.h = {h1};
  BinghamParams mb{h1, VectorXd::Ones(1)};

  const int n = 8000;
  std::vector<double> stat_cf, stat_mb;
  StiefelMatrix v1 = uniform_stiefel(rng, p, 1);
  StiefelMatrix v2 = uniform_stiefel(rng, p, 1);
  for (int i = 0; i < 3 * n; ++i) {
    v1 = sample_column_field(rng, cf, v1);
    v2 = sample_matrix_bingham(rng, mb, v2);
    if (i % 3 == 0) {
      stat_cf.push_back(v1.mat().col(0).dot(h1 * v1.mat().col(0)));
      stat_mb.push_back(v2.mat().col(0).dot(h1 * v2.mat().col(0)));
    }
  }
  CHECK(ct::ks2_pvalue(stat_cf, stat_mb) > 0.01);
}

TEST_CASE("concentration grows monotonically with the spectral gap",
          "[stiefel]") {
  Rng rng(373);
  const int p = 3;
  MatrixXd a = MatrixXd::Zero(p, p);
  a.diagonal() << 1.0, 0.0, -1.0;
  double prev = 0.0;
  for (double scale : {1.0, 10.0, 100.0}) {
    BinghamParams params{scale * a, VectorXd::Ones(1)};
    StiefelMatrix v = uniform_stiefel(rng, p, 1);
    double acc = 0.0;
    const int n = 6000;
    for (int i = 0; i < n; ++i) {
      v = sample_matrix_bingham(rng, params, v);
      acc += v.mat()(0, 0) * v.mat()(0, 0);
    }
    acc /= n;
    CHECK(acc > prev);
    prev = acc;
  }
  CHECK(prev > 0.95);  // near-degenerate at scale 100
}

TEST_CASE("two chains from different starts agree (successive-conditional)",
          "[stiefel]") {
  // Geweke-style smoke test: independent chains with different seeds and
  // opposite starting frames must share their stationary moments.
  Rng rng_a(379), rng_b(383);
  const int p = 5, r = 2;
  MatrixXd g(p, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) g(i, j) = rng_a.normal();
  MatrixXd a = symmetrize(g) * 2.0;
  VectorXd b(r);
  b << 1.0, 0.4;
  BinghamParams params{a, b};

  auto run = [&](Rng& rng, StiefelMatrix v, std::vector<double>& stat) {
    for (int i = 0; i < 12000; ++i) {
      v = sample_matrix_bingham(rng, params, v);
      stat.push_back(
          (params.b_diag.asDiagonal() * v.mat().transpose() * a * v.mat())
              .trace());
    }
  };
  std::vector<double> sa, sb;
  run(rng_a, uniform_stiefel(rng_a, p, r), sa);
  run(rng_b, uniform_stiefel(rng_b, p, r), sb);
  double se = std::hypot(ct::batch_se(sa), ct::batch_se(sb));
  CHECK(std::abs(ct::mean(sa) - ct::mean(sb)) < 4.0 * se);
}

TEST_CASE("column update order does not change the stationary law",
          "[stiefel]") {
  // Reversing the sweep order is also a valid Gibbs scheme for the same
  // target; long-run means of a smooth statistic must agree.
  Rng rng(389);
  const int p = 4, r = 2;
  MatrixXd g(p, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < p; ++i) g(i, j) = rng.normal();
  MatrixXd a = symmetrize(g) * 1.5;

  ColumnFieldParams fwd;
  fwd.h = {2.0 * a, 0.5 * a};
  ColumnFieldParams rev;
  rev.h = {0.5 * a, 2.0 * a};

  auto stat_of = [&](const MatrixXd& v, const ColumnFieldParams& f) {
    double s = 0.0;
    for (int j = 0; j < static_cast<int>(f.h.size()); ++j)
      s += v.col(j).dot(f.h[j] * v.col(j));
    return s;
  };

  std::vector<double> sa, sb;
  StiefelMatrix v1 = uniform_stiefel(rng, p, r);
  StiefelMatrix v2 = uniform_stiefel(rng, p, r);
  for (int i = 0; i < 12000; ++i) {
    v1 = sample_column_field(rng, fwd, v1);
    sa.push_back(stat_of(v1.mat(), fwd));
    v2 = sample_column_field(rng, rev, v2);
    // Swapping both the potentials and the column labels is the same
    // target with columns relabeled; the summed statistic is invariant.
    sb.push_back(stat_of(v2.mat(), rev));
  }
  double se = std::hypot(ct::batch_se(sa), ct::batch_se(sb));
  CHECK(std::abs(ct::mean(sa) - ct::mean(sb)) < 4.0 * se);
}
