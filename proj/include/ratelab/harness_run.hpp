#pragma once

// run_experiment: the per-kind dispatch behind the CLI subcommands.
// Included at the end of harness.hpp.

namespace ratelab {

namespace detail {

struct CellPlan {
  long n;
  int replicate;
};

inline std::vector<CellPlan> make_cells(const std::vector<long>& n_grid, int replicates) {
  std::vector<CellPlan> cells;
  cells.reserve(n_grid.size() * static_cast<std::size_t>(replicates));
  for (long n : n_grid)
    for (int r = 0; r < replicates; ++r) cells.push_back({n, r});
  return cells;
}

inline void finalize_failures(ExperimentResult& result,
                              const std::vector<std::string>& errors) {
  for (const auto& e : errors) {
    if (e.empty()) continue;
    ++result.failed_cells;
    if (result.note.size() < 500) result.note += (result.note.empty() ? "" : "; ") + e;
  }
  if (result.total_cells > 0 &&
      static_cast<double>(result.failed_cells) > 0.01 * static_cast<double>(result.total_cells))
    result.pass = false;
}

}  // namespace detail

inline ExperimentResult run_gp_rate(const ExperimentConfig& cfg) {
  const BasisFamily family = detail::make_family(cfg.get_string("model.basis"));
  const DesignMeasure measure = detail::make_measure(cfg.get_string("model.measure"),
                                                     family.space());
  const double alpha = cfg.get_double("model.alpha");
  const double s = cfg.get_double("model.s");
  const double sigma2 = cfg.get_double("model.sigma2");
  const double rank_factor = cfg.get_double("gp.rank_factor");
  const long rank_cap = cfg.get_long("gp.rank_cap");
  const auto n_grid = cfg.get_grid("run.n_grid");
  const int replicates = static_cast<int>(cfg.get_long("run.replicates"));
  const std::uint64_t seed = cfg.get_seed();

  const auto cells = detail::make_cells(n_grid, replicates);
  std::vector<std::vector<double>> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  detail::parallel_cells(static_cast<int>(cells.size()),
                         static_cast<int>(cfg.get_long("run.workers")), [&](int i) {
                           const auto& cell = cells[static_cast<std::size_t>(i)];
                           try {
                             std::mt19937_64 rng = make_cell_engine(
                                 seed, static_cast<std::uint64_t>(cell.n),
                                 static_cast<std::uint64_t>(cell.replicate));
                             const auto r = experiments::gp_rate_cell(
                                 family, measure, alpha, s, sigma2, cell.n, rank_factor, rank_cap,
                                 rng);
                             rows[static_cast<std::size_t>(i)] = {
                                 double(cell.n), double(cell.replicate), r.l2_error,
                                 r.l2_error_sq,  r.emp_error,            double(r.rank)};
                           } catch (const std::exception& e) {
                             errors[static_cast<std::size_t>(i)] =
                                 "cell n=" + std::to_string(cell.n) + " rep=" +
                                 std::to_string(cell.replicate) + ": " + e.what();
                           }
                         });

  ExperimentResult result;
  result.table.columns = {"n", "replicate", "l2_error", "l2_error_sq", "emp_error", "rank"};
  for (auto& r : rows)
    if (!r.empty()) result.table.add_row(std::move(r));
  result.total_cells = static_cast<long>(cells.size());
  detail::finalize_failures(result, errors);

  const int d = family.dim();
  const double target = -std::min(s, alpha) / (2.0 * alpha + d);
  if (!result.table.rows.empty()) {
    result.fits.push_back(fit_rate(result.table, "l2_error", target,
                                   cfg.get_double("fit.tolerance")));
    result.fits.push_back(fit_rate(result.table, "l2_error_sq", 2.0 * target,
                                   cfg.get_double("fit.tolerance_sq")));
    for (const auto& f : result.fits) result.pass = result.pass && f.pass;
  } else {
    result.pass = false;
    result.note = "no statistics were produced";
  }
  return result;
}

inline ExperimentResult run_sieve_rate(const ExperimentConfig& cfg) {
  const auto family = std::make_shared<const BasisFamily>(
      detail::make_family(cfg.get_string("model.basis")));
  const DesignMeasure measure = DesignMeasure::uniform(family->space());
  const double s = cfg.get_double("model.s");
  const double sigma2 = cfg.get_double("model.sigma2");
  const double big_m = cfg.get_double("contraction.M");
  const int draws = static_cast<int>(cfg.get_long("contraction.draws"));
  const double jmax_factor = cfg.get_double("prior.jmax_factor");
  const long jmax_cap = cfg.get_long("prior.jmax_cap");
  const std::string trunc_kind = cfg.get_string("prior.truncation");
  const auto n_grid = cfg.get_grid("run.n_grid");
  const int replicates = static_cast<int>(cfg.get_long("run.replicates"));
  const std::uint64_t seed = cfg.get_seed();
  const TestFunction f0 = TestFunction::weierstrass(s);

  auto make_prior = [&](long n) {
    const int d = family->dim();
    const double j_star = std::pow(double(n) / std::log(double(n)), 1.0 / (2.0 * s + d));
    // keep the clamped prior mass above the cap below 1e-10
    const double b = cfg.get_double("prior.b");
    const double floor_for_mass = trunc_kind == "geometric" ? std::ceil(23.1 / b) : 32.0;
    const int j_max = static_cast<int>(std::min<double>(
        jmax_cap, std::max(floor_for_mass, std::ceil(jmax_factor * j_star))));
    SievePrior::Truncation trunc = truncation::Geometric{b};
    if (trunc_kind == "poisson") trunc = truncation::Poisson{cfg.get_double("prior.rate")};
    if (trunc_kind == "fixed")
      trunc = truncation::Fixed{std::max(1, static_cast<int>(std::ceil(j_star)))};
    return SievePrior(family, trunc, j_max);
  };

  const auto cells = detail::make_cells(n_grid, replicates);
  std::vector<std::vector<double>> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  detail::parallel_cells(
      static_cast<int>(cells.size()), static_cast<int>(cfg.get_long("run.workers")), [&](int i) {
        const auto& cell = cells[static_cast<std::size_t>(i)];
        try {
          std::mt19937_64 rng = make_cell_engine(seed, static_cast<std::uint64_t>(cell.n),
                                                 static_cast<std::uint64_t>(cell.replicate));
          const SievePrior prior = make_prior(cell.n);
          const auto r = experiments::sieve_rate_cell(prior, f0, measure, cell.n, sigma2, big_m,
                                                      s, draws, rng);
          rows[static_cast<std::size_t>(i)] = {double(cell.n),    double(cell.replicate),
                                               double(r.J_drawn), r.emp_norm_error,
                                               r.l2_error,        r.post_mass_outside_ball,
                                               r.tail_mass};
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(i)] = "cell n=" + std::to_string(cell.n) +
                                                " rep=" + std::to_string(cell.replicate) + ": " +
                                                e.what();
        }
      });

  ExperimentResult result;
  result.table.columns = {"n",        "replicate", "J_drawn", "emp_norm_error",
                          "l2_error", "post_mass_outside_ball", "tail_mass"};
  for (auto& r : rows)
    if (!r.empty()) result.table.add_row(std::move(r));
  result.total_cells = static_cast<long>(cells.size());
  detail::finalize_failures(result, errors);

  const int d = family->dim();
  const bool random_j = trunc_kind != "fixed";
  if (!result.table.rows.empty()) {
    result.fits.push_back(fit_rate(result.table, "l2_error", -s / (2.0 * s + d),
                                   cfg.get_double("fit.tolerance"), random_j));
    for (const auto& f : result.fits) result.pass = result.pass && f.pass;
  } else {
    result.pass = false;
    result.note = "no statistics were produced";
  }
  return result;
}

/// The sieve contraction sweep under its documented name: replicate rows
/// over the n-grid, posterior-mass statistics, and the fitted slope against
/// the target exponent.
inline ExperimentResult contraction_statistic(const ExperimentConfig& cfg) {
  return run_sieve_rate(cfg);
}

inline ExperimentResult run_gram_conc(const ExperimentConfig& cfg) {
  const BasisFamily family = detail::make_family(cfg.get_string("model.basis"));
  const DesignMeasure measure = detail::make_measure(cfg.get_string("model.measure"),
                                                     family.space());
  const int J = static_cast<int>(cfg.get_long("gram.J"));
  const double kappa = cfg.get_double("model.kappa");
  const int replicates = static_cast<int>(cfg.get_long("run.replicates"));
  const auto n_grid = cfg.get_grid("run.n_grid");

  ExperimentResult result;
  result.table.columns = {"replicate", "J", "n", "lambda_min", "lambda_max", "op_deviation",
                          "event_E"};
  double worst_kappa_freq = 1.0;
  double bracket_freq = 1.0;
  for (long n : n_grid) {
    const ConcentrationResult conc = concentration_experiment(
        family, J, static_cast<int>(n), measure, replicates, cfg.get_seed(), kappa);
    for (const auto& row : conc.rows)
      result.table.add_row({double(row.replicate), double(row.J), double(row.n), row.lambda_min,
                            row.lambda_max, row.op_deviation, row.event_kappa ? 1.0 : 0.0});
    worst_kappa_freq = std::min(worst_kappa_freq, conc.event_kappa_frequency);
    bracket_freq = std::min(bracket_freq, conc.event_frequency);
    result.extras.emplace_back("deviation_median_n" + std::to_string(n), conc.deviation_median);
    result.extras.emplace_back("deviation_p90_n" + std::to_string(n), conc.deviation_p90);
    result.extras.emplace_back("n_over_cj2_j_lnj_n" + std::to_string(n),
                               conc.dimensionless_ratio);
  }
  result.total_cells = static_cast<long>(n_grid.size()) * replicates;
  result.extras.emplace_back("event_kappa_frequency", worst_kappa_freq);
  result.extras.emplace_back("event_bracket_frequency", bracket_freq);
  result.pass = worst_kappa_freq == 1.0;  // P(lambda_min < kappa) must be 0
  return result;
}

inline ExperimentResult run_gram_noreplace(const ExperimentConfig& cfg) {
  const BasisFamily family = detail::make_family(cfg.get_string("model.basis"));
  const int big_n = static_cast<int>(cfg.get_long("gram.N"));
  const int n = static_cast<int>(cfg.get_long("gram.n"));
  const int J = static_cast<int>(cfg.get_long("gram.J"));
  const int replicates = static_cast<int>(cfg.get_long("run.replicates"));
  const double t_max = cfg.get_double("gram.t_max");
  const int t_points = static_cast<int>(cfg.get_long("gram.t_points"));

  // frozen finite population drawn once from the uniform measure
  std::mt19937_64 rng = make_cell_engine(cfg.get_seed(), static_cast<std::uint64_t>(big_n),
                                         0xC0FFEEULL);
  const DesignMeasure uniform = DesignMeasure::uniform(family.space());
  std::vector<Point> population(static_cast<std::size_t>(big_n));
  for (auto& p : population) p = uniform.sample(rng);

  std::vector<double> t_grid(static_cast<std::size_t>(t_points));
  for (int k = 0; k < t_points; ++k) t_grid[static_cast<std::size_t>(k)] = t_max * (k + 1) / t_points;

  const WithoutReplacementResult res = without_replacement_experiment(
      family, J, population, n, replicates, t_grid, cfg.get_seed());

  ExperimentResult result;
  result.table.columns = {"t", "empirical_tail", "bound"};
  bool dominated = true;
  for (const auto& row : res.rows) {
    result.table.add_row({row.t, row.empirical_tail, row.bound});
    dominated = dominated && row.empirical_tail <= row.bound;
  }
  result.total_cells = replicates;
  result.extras.emplace_back("c_squared", res.c_squared);
  result.extras.emplace_back("max_deviation", quantile(res.deviations, 1.0));
  result.pass = dominated;
  return result;
}

inline ExperimentResult run_graph_ssl(const ExperimentConfig& cfg) {
  const double s = cfg.get_double("model.s");
  const double sigma2 = cfg.get_double("model.sigma2");
  const double tau = cfg.get_double("graph.tau");
  const long n_factor = cfg.get_long("graph.N_factor");
  const int ambient = static_cast<int>(cfg.get_long("graph.ambient_dim"));
  const double j_factor = cfg.get_double("graph.j_factor");
  const bool random_j = cfg.get_string("graph.j_policy") == "geometric";
  const double prior_b = cfg.get_double("prior.b");
  const double big_m = cfg.get_double("contraction.M");
  const int draws = static_cast<int>(cfg.get_long("contraction.draws"));
  const auto n_grid = cfg.get_grid("run.n_grid");
  const int replicates = static_cast<int>(cfg.get_long("run.replicates"));
  const std::uint64_t seed = cfg.get_seed();

  const auto cells = detail::make_cells(n_grid, replicates);
  std::vector<std::vector<double>> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  detail::parallel_cells(
      static_cast<int>(cells.size()), static_cast<int>(cfg.get_long("run.workers")), [&](int i) {
        const auto& cell = cells[static_cast<std::size_t>(i)];
        try {
          std::mt19937_64 rng = make_cell_engine(seed, static_cast<std::uint64_t>(cell.n),
                                                 static_cast<std::uint64_t>(cell.replicate));
          const auto r = experiments::graph_ssl_cell(cell.n, cell.n * n_factor, s, sigma2, tau,
                                                     ambient, j_factor, random_j, prior_b, big_m,
                                                     draws, rng);
          rows[static_cast<std::size_t>(i)] = {
              double(cell.n), double(cell.replicate), double(r.J_drawn), r.emp_norm_error,
              r.cloud_norm_error, r.post_mass_outside_ball, r.tail_mass, double(r.N), r.h,
              double(r.J)};
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(i)] = "cell n=" + std::to_string(cell.n) +
                                                " rep=" + std::to_string(cell.replicate) + ": " +
                                                e.what();
        }
      });

  ExperimentResult result;
  result.table.columns = {"n",        "replicate", "J_drawn", "emp_norm_error", "l2_error",
                          "post_mass_outside_ball", "tail_mass", "N", "h", "J"};
  for (auto& r : rows)
    if (!r.empty()) result.table.add_row(std::move(r));
  result.total_cells = static_cast<long>(cells.size());
  detail::finalize_failures(result, errors);

  if (!result.table.rows.empty()) {
    result.fits.push_back(
        fit_rate(result.table, "l2_error", -s / (2.0 * s + 1.0), cfg.get_double("fit.tolerance")));
    for (const auto& f : result.fits) result.pass = result.pass && f.pass;
  } else {
    result.pass = false;
    result.note = "no statistics were produced";
  }
  return result;
}

inline ExperimentResult run_eigenfun_bound(const ExperimentConfig& cfg) {
  const auto family = std::make_shared<const BasisFamily>(
      detail::make_family(cfg.get_string("model.basis")));
  const DesignMeasure measure = detail::make_measure(cfg.get_string("model.measure"),
                                                     family->space());
  const double alpha = cfg.get_double("model.alpha");
  const int m = static_cast<int>(cfg.get_long("nystrom.m"));
  const int L = static_cast<int>(cfg.get_long("nystrom.L"));
  const int rank = static_cast<int>(cfg.get_long("nystrom.rank"));
  const double delta = cfg.get_double("report.delta");

  const SpectralKernel kernel = SpectralKernel::sobolev(family, alpha).truncated(rank);
  const NystromEigensystem eig = nystrom_eigens(kernel, measure, m, L);
  const auto report = mercer_sup_norm_report(eig, delta);

  ExperimentResult result;
  result.table.columns = {"l", "s_hat", "sup_norm", "ratio"};
  double max_lo = 0.0, max_hi = 0.0;
  const int half = L / 2;
  for (const auto& row : report) {
    result.table.add_row({double(row.l), row.s_hat, row.sup_norm, row.ratio});
    (row.l <= half ? max_lo : max_hi) = std::max(row.l <= half ? max_lo : max_hi, row.ratio);
  }
  result.total_cells = 1;
  result.extras.emplace_back("max_ratio_low_half", max_lo);
  result.extras.emplace_back("max_ratio_high_half", max_hi);
  result.pass = max_hi <= 2.0 * max_lo;

  Table cj;
  cj.columns = {"J", "value"};
  for (const auto& [j, value] : cj_profile(*family, std::min(L, 256)))
    cj.add_row({double(j), value});
  result.side_tables.emplace_back("basis_cj_profile", std::move(cj));

  // eigenvalue decay slope against -(1 + 2 alpha / d)
  {
    std::vector<double> xs, ys;
    for (int l = 16; l <= L / 2; ++l) {
      if (eig.eigenvalues[l - 1] <= 0.0) continue;
      xs.push_back(std::log(double(l)));
      ys.push_back(std::log(eig.eigenvalues[l - 1]));
    }
    if (xs.size() >= 4) {
      const SlopeFit fit = least_squares_slope(xs, ys);
      RateFit rf;
      rf.statistic = "log_eigenvalue_decay";
      rf.slope = fit.slope;
      rf.intercept = fit.intercept;
      rf.stderr_slope = fit.stderr_slope;
      rf.target = -(1.0 + 2.0 * alpha / family->dim());
      rf.tolerance = cfg.get_double("fit.tolerance");
      rf.pass = std::abs(rf.slope - rf.target) <= rf.tolerance;
      result.fits.push_back(rf);
      if (measure.is_uniform()) result.pass = result.pass && rf.pass;
    }
  }
  return result;
}

inline ExperimentResult run_variance_identity(const ExperimentConfig& cfg) {
  const auto family = std::make_shared<const BasisFamily>(
      detail::make_family(cfg.get_string("model.basis")));
  const int instances = static_cast<int>(cfg.get_long("vi.instances"));
  const int n_max = static_cast<int>(cfg.get_long("vi.n_max"));
  const int l_max = static_cast<int>(cfg.get_long("vi.l_max"));
  const double kappa = cfg.get_double("model.kappa");
  const std::uint64_t seed = cfg.get_seed();

  ExperimentResult result;
  result.table.columns = {"instance",     "n",           "L",        "rank",
                          "trace_lhs",    "trace_rhs",   "trace_rel_err",
                          "series",       "quadrature",  "series_rel_err",
                          "bound",        "event_E",     "bound_holds",
                          "lambda_min_gram"};
  result.total_cells = instances;

  bool all_ok = true;
  const DesignMeasure uniform = DesignMeasure::uniform(family->space());
  for (int inst = 0; inst < instances; ++inst) {
    std::mt19937_64 rng = make_cell_engine(seed, static_cast<std::uint64_t>(inst), 0);
    std::uniform_int_distribution<int> pick_n(20, n_max);
    std::uniform_int_distribution<int> pick_l(5, l_max);
    std::uniform_real_distribution<double> pick_alpha(0.3, 1.5);
    std::uniform_real_distribution<double> pick_logs2(std::log(0.25), std::log(4.0));
    const int n = pick_n(rng);
    const int L = pick_l(rng);
    const int rank = 3 * L;
    const double alpha = pick_alpha(rng);
    const double sigma2 = std::exp(pick_logs2(rng));

    const SpectralKernel kernel = SpectralKernel::sobolev(family, alpha).truncated(rank);
    const TestFunction f0 = TestFunction::weierstrass(0.7);
    RegressionData data = synthesize_data(*family, f0, uniform, n, sigma2, rng);
    const GpPosterior post = fit_posterior(kernel, data, kappa);

    const TraceIdentity ti = trace_identity_check(post, L);
    const double trace_rel = std::abs(ti.lhs - ti.rhs) / std::max(std::abs(ti.rhs), 1e-300);

    const double series = integrated_variance_series(post, rank);
    // independent oracle: quadrature of the posterior-kernel diagonal
    const QuadratureGrid grid = make_grid(family->space(), 4096);
    const auto g = static_cast<Eigen::Index>(grid.nodes.size());
    Eigen::MatrixXd ug(g, rank);
    for (Eigen::Index i = 0; i < g; ++i)
      for (int l = 1; l <= rank; ++l)
        ug(i, l - 1) = family->evaluate(l, grid.nodes[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd k_gx =
        ug * post.prior_eigenvalues().asDiagonal() * post.feature_matrix().transpose();
    const Eigen::MatrixXd v = post.solve_gram(k_gx.transpose());
    double quad = 0.0;
    for (Eigen::Index i = 0; i < g; ++i) {
      double kxx = 0.0;
      for (int l = 0; l < rank; ++l)
        kxx += post.prior_eigenvalues()[l] * ug(i, l) * ug(i, l);
      const double kn = kxx - k_gx.row(i).dot(v.col(i));
      quad += grid.weights[static_cast<std::size_t>(i)] *
              uniform.density(grid.nodes[static_cast<std::size_t>(i)]) * kn;
    }
    const double series_rel = std::abs(series - quad) / std::max(std::abs(quad), 1e-300);

    const VarianceBound vb = variance_upper_bound(post, L);
    const bool bound_holds = !vb.event_E_holds || series <= vb.bound * (1.0 + 1e-10);

    all_ok = all_ok && trace_rel <= 1e-8 && series_rel <= 1e-6 && bound_holds;
    result.table.add_row({double(inst), double(n), double(L), double(rank), ti.lhs, ti.rhs,
                          trace_rel, series, quad, series_rel, vb.bound,
                          vb.event_E_holds ? 1.0 : 0.0, bound_holds ? 1.0 : 0.0,
                          vb.lambda_min_gram});

    if (inst == 0) {
      result.extras.emplace_back("n", double(n));
      result.extras.emplace_back("sigma2", sigma2);
      result.extras.emplace_back("L", double(L));
      result.extras.emplace_back("sigma_n2_series", series);
      result.extras.emplace_back("sigma_n2_bound", vb.bound);
      result.extras.emplace_back("event_E", vb.event_E_holds ? 1.0 : 0.0);
      result.extras.emplace_back("kappa", kappa);
      result.extras.emplace_back("lambda_min_gram", vb.lambda_min_gram);
    }
  }
  result.pass = all_ok;
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  switch (config.kind()) {
    case ExperimentKind::gp_rate: return run_gp_rate(config);
    case ExperimentKind::sieve_rate: return run_sieve_rate(config);
    case ExperimentKind::gram_conc: return run_gram_conc(config);
    case ExperimentKind::gram_noreplace: return run_gram_noreplace(config);
    case ExperimentKind::graph_ssl: return run_graph_ssl(config);
    case ExperimentKind::eigenfun_bound: return run_eigenfun_bound(config);
    case ExperimentKind::variance_identity: return run_variance_identity(config);
  }
  throw std::logic_error("unreachable experiment kind");
}

}  // namespace ratelab
