#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "covwish/posthoc.hpp"
#include "support/helpers.hpp"

using namespace covwish;

namespace {

MatrixXd structured_omega(const MatrixXd& v, const VectorXd& dtilde,
                          double sigma2) {
  int p = static_cast<int>(v.rows());
  return sigma2 * (v * dtilde.asDiagonal() * v.transpose() +
                   MatrixXd::Identity(p, p));
}

// N replicate draws with a single shared mean, as one-subject data.
Dataset replicated_draws(Rng& rng, const MatrixXd& omega, double phi,
                         int n_draws) {
  std::vector<MatrixXd> mats;
  mats.reserve(n_draws);
  for (int j = 0; j < n_draws; ++j)
    mats.push_back(scaled_wishart_sample(rng, phi, omega));
  return Dataset::from_series({{"s1", std::move(mats)}});
}

double karcher_objective(const MatrixXd& x,
                         const std::vector<MatrixXd>& samples) {
  double obj = 0.0;
  for (const auto& v : samples) {
    double d = projection_distance(x, v);
    obj += d * d;
  }
  return obj;
}

}  // namespace

TEST_CASE("active-set size clusters loading scales exactly") {
  VectorXd d(6);
  d << 1.25, 2.0, 1.55, 1e-6, 1e-6, 1e-6;
  REQUIRE(detail::rank_active_size(d) == 3);

  VectorXd flat = VectorXd::Constant(5, 0.7);
  REQUIRE(detail::rank_active_size(flat) == 5);  // no shrinkage evidence

  VectorXd one(1);
  one << 3.0;
  REQUIRE(detail::rank_active_size(one) == 1);

  VectorXd pair(2);
  pair << 1.0, 10.0;
  REQUIRE(detail::rank_active_size(pair) == 1);

  // 2-means on one dimension is scale- and permutation-equivariant.
  Rng rng(4101);
  for (int rep = 0; rep < 50; ++rep) {
    VectorXd x(5);
    for (int i = 0; i < 5; ++i) x[i] = rng.gamma(2.0, 1.0);
    int a = detail::rank_active_size(x);
    REQUIRE(detail::rank_active_size(3.7 * x) == a);
    std::reverse(x.data(), x.data() + 5);
    REQUIRE(detail::rank_active_size(x) == a);
    REQUIRE(a >= 1);
    REQUIRE(a <= 4);  // a proper split never claims the whole set
  }
}

TEST_CASE("rank estimate recovers the active set on replicated-mean fits") {
  const int p = 12, n_draws = 80;
  const double phi = p + 1.0;
  Rng gen(4102);
  MatrixXd v0 = uniform_stiefel(gen, p, 3).mat();
  VectorXd dt0(3);
  dt0 << 1.25, 2.0, 1.55;
  Dataset data = replicated_draws(gen, structured_omega(v0, dt0, 0.25), phi,
                                  n_draws);

  ModelConfig cfg;
  cfg.model = ModelKind::independence;
  cfg.r_star = 6;
  cfg.iterations = 1000;
  cfg.burn_in = 500;
  cfg.seed = 4102;
  ChainTrace trace = fit_independence(data, cfg);

  RankEstimate est = estimate_rank(trace);
  REQUIRE(est.mode == 3);
  REQUIRE(static_cast<int>(est.active_sizes.size()) == trace.kept());
  REQUIRE(std::accumulate(est.histogram.begin(), est.histogram.end(), 0) ==
          trace.kept());
  for (int a : est.active_sizes) {
    REQUIRE(a >= 1);
    REQUIRE(a <= cfg.r_star);
  }
}

TEST_CASE("rank estimate keeps mass on the boundary pair for weak signal") {
  const int p = 12, n_draws = 250;
  const double phi = p + 1.0;
  Rng gen(4103);
  MatrixXd v0 = uniform_stiefel(gen, p, 4).mat();
  VectorXd dt0(4);
  dt0 << 0.75, 1.25, 2.0, 1.55;  // one loading barely above the noise floor
  Dataset data = replicated_draws(gen, structured_omega(v0, dt0, 0.25), phi,
                                  n_draws);

  ModelConfig cfg;
  cfg.model = ModelKind::independence;
  cfg.r_star = 6;
  cfg.iterations = 1600;
  cfg.burn_in = 800;
  cfg.seed = 4103;
  ChainTrace trace = fit_independence(data, cfg);

  RankEstimate est = estimate_rank(trace);
  REQUIRE((est.mode == 3 || est.mode == 4));
  double boundary_mass =
      static_cast<double>(est.histogram[2] + est.histogram[3]) /
      trace.kept();
  REQUIRE(boundary_mass > 0.6);
}

TEST_CASE("waic functional: identities, degenerate input, permutations") {
  ChainTrace t;
  t.loglik.resize(2, 3);
  t.loglik << -1.0, -2.0, -0.5, -1.0, -2.0, -0.5;  // constant over iterations
  WaicReport rep = compute_waic(t);
  REQUIRE(rep.p_waic == Catch::Approx(0.0).margin(1e-14));
  REQUIRE(rep.lppd == Catch::Approx(-3.5).margin(1e-12));
  REQUIRE(rep.waic == Catch::Approx(7.0).margin(1e-12));
  REQUIRE(rep.lppd_cell.size() == 3);
  REQUIRE(rep.p_waic_cell.size() == 3);

  ChainTrace bad;
  bad.loglik.resize(1, 3);
  bad.loglik.setZero();
  REQUIRE_THROWS_AS(compute_waic(bad), Error);

  ChainTrace nf;
  nf.loglik.resize(3, 2);
  nf.loglik.setZero();
  nf.loglik(1, 1) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(compute_waic(nf), Error);

  // Iteration order is irrelevant.
  Rng rng(4104);
  MatrixXd ll(60, 5);
  for (int i = 0; i < ll.rows(); ++i)
    for (int j = 0; j < ll.cols(); ++j) ll(i, j) = -2.0 + rng.normal();
  WaicReport a = detail::waic_from_loglik(ll);
  REQUIRE(a.p_waic >= 0.0);
  std::vector<int> perm(ll.rows());
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = static_cast<int>(perm.size()) - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  MatrixXd shuffled(ll.rows(), ll.cols());
  for (int i = 0; i < ll.rows(); ++i) shuffled.row(i) = ll.row(perm[i]);
  WaicReport b = detail::waic_from_loglik(shuffled);
  REQUIRE(b.waic == Catch::Approx(a.waic).margin(1e-9));
  REQUIRE(b.lppd == Catch::Approx(a.lppd).margin(1e-9));
  REQUIRE(b.p_waic == Catch::Approx(a.p_waic).margin(1e-9));
}

TEST_CASE("waic prefers the pooled-frame model on its own data") {
  // Subjects share one frame but get their own loadings and noise; the
  // subject-specific model should beat both the fully pooled single-mean
  // fit and the two-regime change-point fit (which has nothing to split).
  const int n = 8, p = 8, t_len = 10;
  const double phi = p + 1.0;
  Rng gen(4105);
  MatrixXd v0 = uniform_stiefel(gen, p, 2).mat();
  std::vector<std::pair<std::string, std::vector<MatrixXd>>> series;
  for (int i = 0; i < n; ++i) {
    VectorXd dt(2);
    dt << gen.uniform(3.0, 9.0), gen.uniform(3.0, 9.0);
    MatrixXd omega = structured_omega(v0, dt, gen.uniform(0.25, 0.5));
    std::vector<MatrixXd> mats;
    for (int t = 0; t < t_len; ++t)
      mats.push_back(scaled_wishart_sample(gen, phi, omega));
    series.emplace_back("s" + std::to_string(10 + i), std::move(mats));
  }
  Dataset data = Dataset::from_series(std::move(series));

  ModelConfig cfg;
  cfg.r_star = 3;
  cfg.iterations = 1200;
  cfg.burn_in = 600;
  cfg.seed = 4105;

  cfg.model = ModelKind::hierarchical;
  ChainTrace hier = fit_hierarchical(data, cfg);
  cfg.model = ModelKind::independence;
  ChainTrace pooled = fit_independence(data, cfg);
  cfg.model = ModelKind::changepoint;
  ChainTrace cp = fit_changepoint(data, cfg);

  double w_hier = compute_waic(hier).waic;
  double w_pooled = compute_waic(pooled).waic;
  double w_cp = compute_waic(cp).waic;
  REQUIRE(w_hier < w_pooled);
  REQUIRE(w_hier < w_cp);

  // Per-subject rank readout stays within the support on subject blocks.
  for (int i = 0; i < n; ++i) {
    RankEstimate est = estimate_rank(hier, i);
    REQUIRE(est.mode >= 1);
    REQUIRE(est.mode <= cfg.r_star);
    REQUIRE(std::accumulate(est.histogram.begin(), est.histogram.end(), 0) ==
            hier.kept());
  }
}

TEST_CASE("projection distance is a metric on column spaces") {
  Rng rng(4106);
  const int p = 7;

  // Rotation invariance: any orthogonal mix of columns spans the same space.
  MatrixXd u = uniform_stiefel(rng, p, 2).mat();
  double th = 1.1;
  MatrixXd rot(2, 2);
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  REQUIRE(projection_distance(u, u * rot) < 1e-12);

  // Orthogonal complements in the plane.
  MatrixXd e1(2, 1), e2(2, 1);
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  REQUIRE(projection_distance(e1, e2) ==
          Catch::Approx(std::sqrt(2.0)).margin(1e-14));

  for (int rep = 0; rep < 30; ++rep) {
    int r = 1 + static_cast<int>(rng.uniform_int(3));
    MatrixXd a = uniform_stiefel(rng, p, r).mat();
    MatrixXd b = uniform_stiefel(rng, p, r).mat();
    MatrixXd c = uniform_stiefel(rng, p, r).mat();
    double dab = projection_distance(a, b);
    double dba = projection_distance(b, a);
    double dac = projection_distance(a, c);
    double dbc = projection_distance(b, c);
    REQUIRE(dab == Catch::Approx(dba).margin(1e-12));
    REQUIRE(projection_distance(a, a) < 1e-12);
    REQUIRE(dac <= dab + dbc + 1e-10);
    // Closed form for orthonormal frames.
    double gram = (a.transpose() * b).squaredNorm();
    REQUIRE(dab * dab == Catch::Approx(2.0 * r - 2.0 * gram).margin(1e-10));
  }

  MatrixXd w = uniform_stiefel(rng, p, 3).mat();
  REQUIRE_THROWS_AS(projection_distance(u, w), Error);
}

TEST_CASE("frame mean minimizes summed squared projection distance") {
  Rng rng(4107);
  const int p = 8, r = 2;

  // Identical inputs reproduce their column space.
  MatrixXd v0 = uniform_stiefel(rng, p, r).mat();
  std::vector<MatrixXd> same(5, v0);
  KarcherMean km = karcher_mean_stiefel(same);
  REQUIRE_FALSE(km.degenerate);
  REQUIRE(projection_distance(km.mean.mat(), v0) < 1e-10);

  // Perturbation oracle: small tangent noise keeps the mean near the truth.
  std::vector<MatrixXd> cloud;
  for (int k = 0; k < 100; ++k) {
    MatrixXd noise(p, r);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < r; ++j) noise(i, j) = 0.01 * rng.normal();
    cloud.push_back(orthonormalize(v0 + noise));
  }
  KarcherMean km2 = karcher_mean_stiefel(cloud);
  REQUIRE_FALSE(km2.degenerate);
  REQUIRE(projection_distance(km2.mean.mat(), v0) < 0.05);

  double best_input = std::numeric_limits<double>::infinity();
  for (const auto& v : cloud)
    best_input = std::min(best_input, karcher_objective(v, cloud));
  REQUIRE(karcher_objective(km2.mean.mat(), cloud) <= best_input + 1e-9);

  // Two orthogonal lines average to the degenerate projector I/2.
  MatrixXd e1(2, 1), e2(2, 1);
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  KarcherMean deg = karcher_mean_stiefel({e1, e2});
  REQUIRE(deg.degenerate);
  REQUIRE(deg.mean.rows() == 2);
  REQUIRE(deg.mean.cols() == 1);

  REQUIRE_THROWS_AS(karcher_mean_stiefel({}), Error);
  REQUIRE_THROWS_AS(karcher_mean_stiefel({e1, MatrixXd::Identity(3, 1)}),
                    Error);
}

TEST_CASE("recursive windowing recovers two change points per subject") {
  const int n = 10, p = 10, t_len = 30;
  const int b1 = 10, b2 = 20;  // regime boundaries (last time of a regime)
  const double phi = p + 1.0;
  Rng gen(4108);
  VectorXd dt(2);
  dt << 8.0, 4.0;
  MatrixXd oa = structured_omega(uniform_stiefel(gen, p, 2).mat(), dt, 0.3);
  MatrixXd ob = structured_omega(uniform_stiefel(gen, p, 2).mat(), dt, 0.3);
  MatrixXd oc = structured_omega(uniform_stiefel(gen, p, 2).mat(), dt, 0.3);
  std::vector<std::pair<std::string, std::vector<MatrixXd>>> series;
  for (int i = 0; i < n; ++i) {
    std::vector<MatrixXd> mats;
    for (int t = 1; t <= t_len; ++t) {
      const MatrixXd& o = t <= b1 ? oa : (t <= b2 ? ob : oc);
      mats.push_back(scaled_wishart_sample(gen, phi, o));
    }
    series.emplace_back("s" + std::to_string(10 + i), std::move(mats));
  }
  Dataset data = Dataset::from_series(std::move(series));

  ModelConfig cfg;
  cfg.model = ModelKind::changepoint;
  cfg.r_star = 3;
  cfg.iterations = 600;
  cfg.burn_in = 300;
  cfg.seed = 4108;

  auto lists = multiple_changepoints(data, cfg, 1);
  REQUIRE(static_cast<int>(lists.size()) == n);
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const auto& cps = lists[i];
    REQUIRE(static_cast<int>(cps.size()) <= 3);  // depth-1 tree bound
    REQUIRE(std::is_sorted(cps.begin(), cps.end()));
    for (std::size_t j = 1; j < cps.size(); ++j)
      REQUIRE(cps[j] > cps[j - 1]);
    for (int c : cps) {
      REQUIRE(c >= 2);
      REQUIRE(c <= t_len - 1);
    }
    bool near1 = false, near2 = false;
    for (int c : cps) {
      near1 = near1 || std::abs(c - b1) <= 1;
      near2 = near2 || std::abs(c - b2) <= 1;
    }
    hits += (near1 && near2) ? 1 : 0;
  }
  REQUIRE(hits >= 8);

  // Depth zero stops after the dominant point.
  auto shallow = multiple_changepoints(data, cfg, 0);
  for (const auto& cps : shallow) REQUIRE(cps.size() <= 1);
}

TEST_CASE("recursive windowing stays silent on change-free data") {
  const int n = 10, p = 8, t_len = 26;
  const double phi = p + 1.0;
  Rng gen(4509);
  VectorXd dt(2);
  dt << 6.0, 3.0;
  std::vector<std::pair<std::string, std::vector<MatrixXd>>> series;
  for (int i = 0; i < n; ++i) {
    MatrixXd omega =
        structured_omega(uniform_stiefel(gen, p, 2).mat(), dt, 0.3);
    std::vector<MatrixXd> mats;
    for (int t = 0; t < t_len; ++t)
      mats.push_back(scaled_wishart_sample(gen, phi, omega));
    series.emplace_back("s" + std::to_string(10 + i), std::move(mats));
  }
  Dataset data = Dataset::from_series(std::move(series));

  ModelConfig cfg;
  cfg.model = ModelKind::changepoint;
  cfg.r_star = 4;
  cfg.iterations = 3000;
  cfg.burn_in = 1500;
  cfg.seed = 4509;

  auto lists = multiple_changepoints(data, cfg, 2);
  for (const auto& cps : lists) REQUIRE(cps.empty());
}

TEST_CASE("shared-frame diagnostic separates common from private frames") {
  const int p = 8, t_len = 14;
  const double phi = p + 1.0;

  ModelConfig cfg;
  cfg.r_star = 3;
  cfg.iterations = 800;
  cfg.burn_in = 400;
  cfg.seed = 4110;

  auto make_data = [&](int n, bool shared, Rng& gen) {
    MatrixXd v_common = uniform_stiefel(gen, p, 2).mat();
    std::vector<std::pair<std::string, std::vector<MatrixXd>>> series;
    for (int i = 0; i < n; ++i) {
      MatrixXd v_i = shared ? v_common : uniform_stiefel(gen, p, 2).mat();
      VectorXd dt(2);
      dt << gen.uniform(5.0, 10.0), gen.uniform(5.0, 10.0);
      MatrixXd omega = structured_omega(v_i, dt, gen.uniform(0.25, 0.5));
      std::vector<MatrixXd> mats;
      for (int t = 0; t < t_len; ++t)
        mats.push_back(scaled_wishart_sample(gen, phi, omega));
      series.emplace_back("s" + std::to_string(10 + i), std::move(mats));
    }
    return Dataset::from_series(std::move(series));
  };

  SECTION("shared truth: overlapping spreads") {
    const int n = 6;
    Rng gen(4111);
    SharedVDiagnostic diag = shared_v_diagnostic(make_data(n, true, gen), cfg);
    REQUIRE(diag.different_v.size() == n);
    REQUIRE(diag.same_v.size() == n);
    double m1 = diag.different_v.mean(), m2 = diag.same_v.mean();
    double v1 = (diag.different_v.array() - m1).square().sum() / (n - 1);
    double v2 = (diag.same_v.array() - m2).square().sum() / (n - 1);
    double pooled_se = std::sqrt(v1 / n + v2 / n);
    REQUIRE(std::abs(m1 - m2) < 2.0 * pooled_se);
  }

  SECTION("private truth: regenerated spread is strictly tighter") {
    const int n = 6;
    Rng gen(4112);
    SharedVDiagnostic diag =
        shared_v_diagnostic(make_data(n, false, gen), cfg);
    REQUIRE(diag.same_v.mean() < diag.different_v.mean());
  }

  SECTION("single subject: both collections degenerate to zero") {
    Rng gen(4113);
    SharedVDiagnostic diag = shared_v_diagnostic(make_data(1, true, gen), cfg);
    REQUIRE(diag.different_v.size() == 1);
    REQUIRE(diag.same_v.size() == 1);
    REQUIRE(diag.different_v[0] < 1e-8);
    REQUIRE(diag.same_v[0] < 1e-8);
  }
}

TEST_CASE("dispersion sweep prefers the smallest workable phi") {
  const int p = 6, n_draws = 40;
  Rng gen(4114);
  VectorXd dt(2);
  dt << 2.0, 1.0;
  MatrixXd omega = structured_omega(uniform_stiefel(gen, p, 2).mat(), dt, 0.3);
  Dataset data = replicated_draws(gen, omega, 12.0, n_draws);
  data.scale_by_min_eigenvalue();

  ModelConfig cfg;
  cfg.model = ModelKind::independence;
  cfg.r_star = 3;
  cfg.iterations = 800;
  cfg.burn_in = 400;
  cfg.seed = 4114;

  PhiSweepResult sweep = phi_waic_sweep(data, cfg, {7.0, 9.0, 12.0, 15.0});
  REQUIRE(sweep.table.size() == 4);
  REQUIRE(sweep.best_phi == Catch::Approx(7.0));
  REQUIRE(sweep.argmin == 0);
  for (std::size_t g = 1; g < sweep.table.size(); ++g)
    REQUIRE(sweep.table[g].waic > sweep.table[g - 1].waic);

  PhiSweepResult single = phi_waic_sweep(data, cfg, {9.0});
  REQUIRE(single.best_phi == Catch::Approx(9.0));

  REQUIRE_THROWS_AS(phi_waic_sweep(data, cfg, {5.0, 9.0}), Error);
  REQUIRE_THROWS_AS(phi_waic_sweep(data, cfg, {}), Error);
}
