#ifndef COVWISH_DYNAMIC_HPP
#define COVWISH_DYNAMIC_HPP

#include <array>

#include "covwish/models.hpp"

namespace covwish {
namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}
inline double gauss_logpdf(double x, double mean, double var) {
  double d = x - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * d * d / var;
}

// Likelihood contribution of one loading coordinate x = log dtilde_h at one
// cell: -(phi/2)[log(1 + dtilde) - dtilde/(1+dtilde) * M_h / sigma2].
inline double dyn_coord_loglik(double x, double m, double sigma2, double phi) {
  return -0.5 * phi * (softplus(x) - sigmoid(x) * m / sigma2);
}

// Full and kernel per-cell log densities from a row of log-loadings.
inline CellLoglik dyn_cell_loglik(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                  const Eigen::Ref<const Eigen::RowVectorXd>& m,
                                  double sigma2, double phi, double logdet_s,
                                  double tr_s, int p) {
  double logdet_omega = p * std::log(sigma2);
  double weighted = 0.0;
  for (int h = 0; h < x.size(); ++h) {
    logdet_omega += softplus(x[h]);
    weighted += sigmoid(x[h]) * m[h];
  }
  double tr = (tr_s - weighted) / sigma2;
  CellLoglik out;
  out.kernel = -0.5 * phi * (logdet_omega + tr);
  out.full = out.kernel - 0.5 * phi * p * std::log(2.0) +
             0.5 * phi * p * std::log(phi) - mvlgamma(p, 0.5 * phi) +
             0.5 * (phi - p - 1.0) * logdet_s;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dynamic two-regime model: within each regime the log-loadings follow a
// stationary AR(1) chain over time, the chain-start loading carries the
// global-local prior (shared global per regime, subject-specific locals),
// and each subject has its own change point. Latent chains are kept at full
// length (coordinates outside the likelihood window are refreshed from the
// AR prior), so the change-point conditional stays well defined for every
// grid value. The regime-2 chain origin is pinned at the earliest time the
// grid can assign to regime 2.
// ---------------------------------------------------------------------------
inline ChainTrace fit_dynamic(const Dataset& data, const ModelConfig& cfg) {
  cfg.validate(data);
  const int p = data.dim();
  const int r = cfg.r_star;
  const int n = data.n();
  const double phi1 = cfg.resolved_phi1(p);
  const double phi2 = cfg.resolved_phi2(p);
  const double cp_temper = cfg.resolved_cp_temper(p);
  const auto stats = detail::CellStats::from(data);
  const IgHyper hyper = detail::resolve_hyper(data, cfg);
  const int start2 = cfg.cp_interior_only ? 3 : 2;  // 1-based chain origin

  std::vector<std::vector<int>> grid(n);
  int t_max = 0;
  for (int i = 0; i < n; ++i) {
    int t_i = data.t_len(i);
    t_max = std::max(t_max, t_i);
    // k = T would leave the second regime empty; such values are excluded.
    int lo = cfg.cp_interior_only ? 2 : 1;
    int hi = t_i - 1;
    for (int k = lo; k <= hi; ++k) grid[i].push_back(k);
  }

  Rng rng_init(Rng::derive(cfg.seed, "init", 0));
  Rng rng_v(Rng::derive(cfg.seed, "stiefel", 0));
  Rng rng_dyn(Rng::derive(cfg.seed, "dynamics", 0));
  std::vector<Rng> rng_sub;
  rng_sub.reserve(n);
  for (int i = 0; i < n; ++i)
    rng_sub.emplace_back(Rng::derive(cfg.seed, "subject:" + data.id(i), 0));

  StiefelMatrix v1 = uniform_stiefel(rng_init, p, r);
  StiefelMatrix v2 = uniform_stiefel(rng_init, p, r);
  double tau[2] = {0.1, 0.1};
  MatrixXd loglambda[2] = {MatrixXd::Zero(n, r), MatrixXd::Zero(n, r)};
  double rho[2] = {0.0, 0.0};
  double var_ar[2] = {1.0, 1.0};
  std::vector<double> sigma2_1(n, hyper.prior_mean());
  std::vector<double> sigma2_2(n, hyper.prior_mean());
  std::vector<int> cp(n);
  for (int i = 0; i < n; ++i) cp[i] = (data.t_len(i) + 1) / 2;

  // x[reg][i] is T_i x r; regime 1 rows cover times 1..T, regime 2 rows
  // start2..T (earlier rows unused). Row start-1 is derived from (tau,
  // loglambda) and kept in sync after every chain-start update.
  const int origin[2] = {1, start2};
  std::vector<MatrixXd> x[2];
  for (int reg = 0; reg < 2; ++reg) {
    x[reg].resize(n);
    for (int i = 0; i < n; ++i) {
      x[reg][i] = MatrixXd::Constant(data.t_len(i), r, std::log(tau[reg]));
    }
  }

  ChainTrace trace;
  trace.model = ModelKind::dynamic_cp;
  trace.p = p;
  trace.r_star = r;
  trace.phi1 = phi1;
  trace.phi2 = phi2;
  trace.seed = cfg.seed;
  for (int i = 0; i < n; ++i) {
    trace.subject_ids.push_back(data.id(i));
    trace.t_len.push_back(data.t_len(i));
  }
  auto& names = trace.param_names;
  for (int i = 1; i <= n; ++i) {
    detail::add_scalar_names(names, "c", i);
    detail::add_scalar_names(names, "sigma2_1", i);
    detail::add_scalar_names(names, "sigma2_2", i);
    detail::add_block_names(names, "loglambda_1", i, r);
    detail::add_block_names(names, "loglambda_2", i, r);
  }
  names.push_back("tau_1");
  names.push_back("tau_2");
  names.push_back("rho_1");
  names.push_back("rho_2");
  names.push_back("v_1");
  names.push_back("v_2");
  detail::add_frame_names(names, "V1", p, r);
  detail::add_frame_names(names, "V2", p, r);
  trace.draws.resize(cfg.kept(), static_cast<int>(names.size()));
  trace.cells = detail::cell_index(data);
  const int n_cells = data.total_cells();
  trace.loglik.resize(cfg.kept(), n_cells);
  trace.loglik_kernel.resize(cfg.kept(), n_cells);
  trace.cp_prob = MatrixXd::Zero(n, t_max);
  trace.mean_omega_cell.assign(n_cells, MatrixXd::Zero(p, p));
  trace.mean_projector1 = MatrixXd::Zero(p, p);
  trace.mean_projector2 = MatrixXd::Zero(p, p);

  std::vector<int> cell_offset(n, 0);
  for (int i = 1; i < n; ++i)
    cell_offset[i] = cell_offset[i - 1] + data.t_len(i - 1);

  // Per-iteration scratch: m[reg][i](t, h) = (V_reg' S_it V_reg)_hh.
  std::vector<MatrixXd> m_diag[2];
  m_diag[0].resize(n);
  m_diag[1].resize(n);

  detail::RowWriter row(trace.draws);
  long acc_lambda[2] = {0, 0}, try_lambda[2] = {0, 0};
  long acc_tau[2] = {0, 0};
  long acc_lat[2] = {0, 0}, try_lat[2] = {0, 0};
  long acc_var[2] = {0, 0};
  int kept = 0;

  auto in_regime = [&](int reg, int i, int t1b) {
    return reg == 0 ? t1b <= cp[i] : t1b > cp[i];
  };
  auto sigma2_of = [&](int reg, int i) {
    return reg == 0 ? sigma2_1[i] : sigma2_2[i];
  };
  auto phi_of = [&](int reg) { return reg == 0 ? phi1 : phi2; };

  for (int it = 1; it <= cfg.iterations; ++it) {
    // (a) Frames: column potentials accumulate time-specific weights.
    for (int reg = 0; reg < 2; ++reg) {
      ColumnFieldParams field;
      field.h.assign(r, MatrixXd::Zero(p, p));
      for (int i = 0; i < n; ++i) {
        int t_i = data.t_len(i);
        double c0 = 0.5 * phi_of(reg) / sigma2_of(reg, i);
        for (int t1b = 1; t1b <= t_i; ++t1b) {
          if (!in_regime(reg, i, t1b)) continue;
          const auto& xr = x[reg][i];
          for (int j = 0; j < r; ++j)
            field.h[j] +=
                c0 * detail::sigmoid(xr(t1b - 1, j)) * data.at(i, t1b - 1);
        }
      }
      StiefelMatrix& v = reg == 0 ? v1 : v2;
      v = sample_column_field(rng_v, field, v, cfg.bingham_sweeps,
                              cfg.reorth_interval);
    }
    parallel_for(n, cfg.threads, [&](int i) {
      int t_i = data.t_len(i);
      for (int reg = 0; reg < 2; ++reg) {
        const MatrixXd& v = (reg == 0 ? v1 : v2).mat();
        m_diag[reg][i].resize(t_i, r);
        for (int t = 0; t < t_i; ++t)
          m_diag[reg][i].row(t) = detail::vsv_diag(data.at(i, t), v).transpose();
      }
    });

    // (b) Chain starts: locals per subject ...
    std::vector<std::array<long, 2>> lam_acc(n, {0, 0});
    parallel_for(n, cfg.threads, [&](int i) {
      int t_i = data.t_len(i);
      for (int reg = 0; reg < 2; ++reg) {
        int s = origin[reg];  // 1-based chain-start time
        if (s > t_i) continue;
        for (int h = 0; h < r; ++h) {
          double xi = loglambda[reg](i, h);
          double xi_star = xi + cfg.dyn_step_sd * rng_sub[i].normal();
          double u = rng_sub[i].uniform();
          auto target = [&](double lx) {
            double xs = std::log(tau[reg]) + lx;
            double acc = lx - std::log1p(std::exp(2.0 * lx));
            if (s < t_i)
              acc += detail::gauss_logpdf(x[reg][i](s, h), rho[reg] * xs,
                                          var_ar[reg]);
            if (in_regime(reg, i, s))
              acc += detail::dyn_coord_loglik(xs, m_diag[reg][i](s - 1, h),
                                              sigma2_of(reg, i), phi_of(reg));
            return acc;
          };
          if (std::log(u) < target(xi_star) - target(xi)) {
            loglambda[reg](i, h) = xi_star;
            ++lam_acc[i][reg];
          }
          x[reg][i](s - 1, h) = std::log(tau[reg]) + loglambda[reg](i, h);
        }
      }
    });
    for (int i = 0; i < n; ++i)
      for (int reg = 0; reg < 2; ++reg) {
        acc_lambda[reg] += lam_acc[i][reg];
        try_lambda[reg] += (origin[reg] <= data.t_len(i)) ? r : 0;
      }

    // ... then the shared per-regime global on the log scale.
    for (int reg = 0; reg < 2; ++reg) {
      double mu = std::log(tau[reg]);
      double mu_star = mu + cfg.dyn_step_sd * rng_dyn.normal();
      double u = rng_dyn.uniform();
      if (mu_star < 0.0) {
        auto target = [&](double m) {
          double acc = m - std::log1p(std::exp(2.0 * m));
          for (int i = 0; i < n; ++i) {
            int t_i = data.t_len(i);
            int s = origin[reg];
            if (s > t_i) continue;
            for (int h = 0; h < r; ++h) {
              double xs = m + loglambda[reg](i, h);
              if (s < t_i)
                acc += detail::gauss_logpdf(x[reg][i](s, h), rho[reg] * xs,
                                            var_ar[reg]);
              if (in_regime(reg, i, s))
                acc += detail::dyn_coord_loglik(xs, m_diag[reg][i](s - 1, h),
                                                sigma2_of(reg, i), phi_of(reg));
            }
          }
          return acc;
        };
        if (std::log(u) < target(mu_star) - target(mu)) {
          tau[reg] = std::exp(mu_star);
          ++acc_tau[reg];
        }
      }
      for (int i = 0; i < n; ++i) {
        int s = origin[reg];
        if (s > data.t_len(i)) continue;
        for (int h = 0; h < r; ++h)
          x[reg][i](s - 1, h) = std::log(tau[reg]) + loglambda[reg](i, h);
      }
    }

    // (c) Interior latents: Metropolis against the Wishart factor when the
    // coordinate is inside its regime's window, exact Gaussian otherwise.
    std::vector<std::array<long, 4>> lat_acc(n, {0, 0, 0, 0});
    parallel_for(n, cfg.threads, [&](int i) {
      int t_i = data.t_len(i);
      for (int reg = 0; reg < 2; ++reg) {
        int s = origin[reg];
        if (s > t_i) continue;
        for (int t1b = s + 1; t1b <= t_i; ++t1b) {
          for (int h = 0; h < r; ++h) {
            double prev = x[reg][i](t1b - 2, h);
            double cur = x[reg][i](t1b - 1, h);
            bool has_next = t1b < t_i;
            double next = has_next ? x[reg][i](t1b, h) : 0.0;
            if (in_regime(reg, i, t1b)) {
              double cand = cur + cfg.dyn_step_sd * rng_sub[i].normal();
              double u = rng_sub[i].uniform();
              auto target = [&](double xv) {
                double acc = detail::gauss_logpdf(xv, rho[reg] * prev,
                                                  var_ar[reg]);
                if (has_next)
                  acc += detail::gauss_logpdf(next, rho[reg] * xv,
                                              var_ar[reg]);
                acc += detail::dyn_coord_loglik(xv, m_diag[reg][i](t1b - 1, h),
                                                sigma2_of(reg, i),
                                                phi_of(reg));
                return acc;
              };
              if (std::log(u) < target(cand) - target(cur)) {
                x[reg][i](t1b - 1, h) = cand;
                ++lat_acc[i][2 * reg];
              }
              ++lat_acc[i][2 * reg + 1];
            } else {
              double mean, var;
              if (has_next) {
                double denom = 1.0 + rho[reg] * rho[reg];
                mean = rho[reg] * (prev + next) / denom;
                var = var_ar[reg] / denom;
              } else {
                mean = rho[reg] * prev;
                var = var_ar[reg];
              }
              x[reg][i](t1b - 1, h) = mean + std::sqrt(var) * rng_sub[i].normal();
            }
          }
        }
      }
    });
    for (int i = 0; i < n; ++i)
      for (int reg = 0; reg < 2; ++reg) {
        acc_lat[reg] += lat_acc[i][2 * reg];
        try_lat[reg] += lat_acc[i][2 * reg + 1];
      }

    // (d) AR coefficient per regime: flat prior on (-1,1), Gaussian
    // conditional from all chain transitions. (e) Innovation variance via a
    // log-scale Metropolis step against its Gamma(1/2, scale 2) prior.
    for (int reg = 0; reg < 2; ++reg) {
      double sxx = 0.0, sxy = 0.0;
      for (int i = 0; i < n; ++i) {
        int t_i = data.t_len(i);
        for (int t1b = origin[reg] + 1; t1b <= t_i; ++t1b) {
          for (int h = 0; h < r; ++h) {
            double xp = x[reg][i](t1b - 2, h);
            double xc = x[reg][i](t1b - 1, h);
            sxx += xp * xp;
            sxy += xp * xc;
          }
        }
      }
      if (sxx > 0.0) {
        rho[reg] = rng_dyn.truncated_normal(sxy / sxx,
                                            std::sqrt(var_ar[reg] / sxx),
                                            -1.0, 1.0);
      } else {
        rho[reg] = rng_dyn.uniform(-1.0, 1.0);
      }
      double sse = 0.0;
      long k_tr = 0;
      for (int i = 0; i < n; ++i) {
        int t_i = data.t_len(i);
        for (int t1b = origin[reg] + 1; t1b <= t_i; ++t1b)
          for (int h = 0; h < r; ++h) {
            double d = x[reg][i](t1b - 1, h) - rho[reg] * x[reg][i](t1b - 2, h);
            sse += d * d;
            ++k_tr;
          }
      }
      double lv = std::log(var_ar[reg]);
      double lv_star = lv + cfg.dyn_step_sd * rng_dyn.normal();
      double u = rng_dyn.uniform();
      auto target = [&](double l) {
        double vv = std::exp(l);
        return -0.5 * k_tr * l - 0.5 * sse / vv - 0.5 * l - 0.5 * vv + l;
      };
      if (std::log(u) < target(lv_star) - target(lv)) {
        var_ar[reg] = std::exp(lv_star);
        ++acc_var[reg];
      }
    }

    // (f) Noise scales, (g) change points, and kept-iteration bookkeeping.
    bool keep = it > cfg.burn_in && (it - cfg.burn_in - 1) % cfg.thin == 0;
    parallel_for(n, cfg.threads, [&](int i) {
      int t_i = data.t_len(i);
      for (int reg = 0; reg < 2; ++reg) {
        int n_reg = 0;
        double tr_qs = 0.0;
        for (int t1b = 1; t1b <= t_i; ++t1b) {
          if (!in_regime(reg, i, t1b)) continue;
          ++n_reg;
          double weighted = 0.0;
          for (int h = 0; h < r; ++h)
            weighted += detail::sigmoid(x[reg][i](t1b - 1, h)) *
                        m_diag[reg][i](t1b - 1, h);
          tr_qs += stats.trace[i][t1b - 1] - weighted;
        }
        double& s2 = reg == 0 ? sigma2_1[i] : sigma2_2[i];
        if (n_reg > 0) {
          double shape = hyper.alpha_sigma - 1.0 + 0.5 * n_reg * p * phi_of(reg);
          double rate = hyper.beta_sigma + 0.5 * phi_of(reg) * std::max(tr_qs, 0.0);
          s2 = rate / rng_sub[i].gamma(shape);
        } else {
          s2 = rng_sub[i].inverse_gamma(hyper.alpha_sigma, hyper.beta_sigma);
        }
      }
      VectorXd ll1(t_i), ll2(t_i), kern1(t_i), kern2(t_i);
      for (int t = 0; t < t_i; ++t) {
        CellLoglik a = detail::dyn_cell_loglik(
            x[0][i].row(t), m_diag[0][i].row(t), sigma2_1[i], phi1,
            stats.logdet[i][t], stats.trace[i][t], p);
        ll1[t] = a.full;
        kern1[t] = a.kernel;
        if (t + 1 >= start2) {
          CellLoglik b = detail::dyn_cell_loglik(
              x[1][i].row(t), m_diag[1][i].row(t), sigma2_2[i], phi2,
              stats.logdet[i][t], stats.trace[i][t], p);
          ll2[t] = b.full;
          kern2[t] = b.kernel;
        } else {
          ll2[t] = kern2[t] = 0.0;  // never inside an admissible A_k
        }
      }
      VectorXd logw = changepoint_log_weights(ll1, ll2, grid[i]);
      std::vector<double> logw_v(logw.data(), logw.data() + logw.size());
      int pick = rng_sub[i].categorical_from_log(logw_v);
      cp[i] = grid[i][pick];
      if (keep) {
        VectorXd probs = normalize_log_weights(cp_temper * logw);
        for (std::size_t j = 0; j < grid[i].size(); ++j)
          trace.cp_prob(i, grid[i][j] - 1) += probs[static_cast<int>(j)];
        for (int t = 0; t < t_i; ++t) {
          bool first = t + 1 <= cp[i];
          trace.loglik(kept, cell_offset[i] + t) = first ? ll1[t] : ll2[t];
          trace.loglik_kernel(kept, cell_offset[i] + t) =
              first ? kern1[t] : kern2[t];
          int reg = first ? 0 : 1;
          const MatrixXd& v = (reg == 0 ? v1 : v2).mat();
          VectorXd dt = x[reg][i].row(t).transpose().array().exp();
          LowRankOmega o{&v, dt, sigma2_of(reg, i), phi_of(reg)};
          trace.mean_omega_cell[cell_offset[i] + t] += o.dense_omega();
        }
      }
    });

    if (!keep) continue;
    row.start(kept);
    for (int i = 0; i < n; ++i) {
      row.put(cp[i]);
      row.put(sigma2_1[i]);
      row.put(sigma2_2[i]);
      row.put_vector(loglambda[0].row(i).transpose());
      row.put_vector(loglambda[1].row(i).transpose());
    }
    row.put(tau[0]);
    row.put(tau[1]);
    row.put(rho[0]);
    row.put(rho[1]);
    row.put(var_ar[0]);
    row.put(var_ar[1]);
    row.put_matrix(v1.mat());
    row.put_matrix(v2.mat());
    row.finish();
    trace.mean_projector1 += v1.mat() * v1.mat().transpose();
    trace.mean_projector2 += v2.mat() * v2.mat().transpose();
    if (kept == 0) {
      double from_cells = trace.loglik.row(0).sum();
      double dense = detail::dense_joint_loglik(
          data,
          [&](int i, int t) {
            int reg = (t + 1 <= cp[i]) ? 0 : 1;
            const MatrixXd& v = (reg == 0 ? v1 : v2).mat();
            VectorXd dt = x[reg][i].row(t).transpose().array().exp();
            LowRankOmega o{&v, dt, sigma2_of(reg, i), phi_of(reg)};
            return o.dense_omega();
          },
          phi1, phi2, cp);
      trace.checkpoint_loglik_gap = std::abs(from_cells - dense);
    }
    ++kept;
  }
  for (auto& m : trace.mean_omega_cell) m /= kept;
  trace.mean_projector1 /= kept;
  trace.mean_projector2 /= kept;
  trace.cp_prob /= kept;
  for (int reg = 0; reg < 2; ++reg) {
    std::string sfx = reg == 0 ? "_1" : "_2";
    trace.acceptance["loading_start_mh" + sfx] =
        try_lambda[reg] > 0
            ? static_cast<double>(acc_lambda[reg]) / try_lambda[reg]
            : 0.0;
    trace.acceptance["global_mh" + sfx] =
        static_cast<double>(acc_tau[reg]) / cfg.iterations;
    trace.acceptance["loading_mh" + sfx] =
        try_lat[reg] > 0 ? static_cast<double>(acc_lat[reg]) / try_lat[reg]
                         : 0.0;
    trace.acceptance["ar_var_mh" + sfx] =
        static_cast<double>(acc_var[reg]) / cfg.iterations;
  }
  return trace;
}

}  // namespace covwish

#endif  // COVWISH_DYNAMIC_HPP
