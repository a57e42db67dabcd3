#pragma once

// Subcommand drivers shared by the command-line tool and the tests. Each
// driver turns a validated ExperimentConfig into CSV tables plus a pass flag;
// nothing here touches the filesystem.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "malsde/bounds.hpp"
#include "malsde/config.hpp"
#include "malsde/density.hpp"
#include "malsde/quadrature.hpp"
#include "malsde/report.hpp"
#include "malsde/simulator.hpp"

namespace malsde {

inline constexpr const char* kVersion = "0.1.0";

struct RunResult {
  std::vector<std::pair<std::string, CsvTable>> files;
  bool pass = true;
  std::vector<std::string> warnings;
  Json summary = Json::object();

  const CsvTable* table(const std::string& name) const {
    for (const auto& [n, t] : files)
      if (n == name) return &t;
    return nullptr;
  }
};

inline AnyModel build_model(const ModelSpec& s) {
  const std::size_t d = s.x0.size();
  if (s.id == "bm") {
    if (d == 1) return BrownianModel<1>{{s.sigma[0]}, {s.x0[0]}, s.horizon};
    return BrownianModel<2>{{s.sigma[0], s.sigma[1]}, {s.x0[0], s.x0[1]}, s.horizon};
  }
  if (s.id == "ou") {
    if (d == 1) return OrnsteinUhlenbeck<1>{s.kappa, {s.mu[0]}, {s.sigma[0]}, {s.x0[0]}, s.horizon};
    return OrnsteinUhlenbeck<2>{s.kappa, {s.mu[0], s.mu[1]}, {s.sigma[0], s.sigma[1]}, {s.x0[0], s.x0[1]}, s.horizon};
  }
  if (s.id == "double-well-1d") return DoubleWell1d{s.sigma[0], {s.x0[0]}, s.horizon};
  if (s.id == "double-well-2d") return DoubleWell2d{s.eps, {s.x0[0], s.x0[1]}, s.horizon};
  throw ConfigError("unknown model id " + s.id);
}

template <class M>
constexpr bool has_gaussian_law = false;
template <int D>
constexpr bool has_gaussian_law<BrownianModel<D>> = true;
template <int D>
constexpr bool has_gaussian_law<OrnsteinUhlenbeck<D>> = true;

inline std::string level_cell(double level) { return format_number(level); }

namespace detail {

template <int D>
std::string point_cell(const Vec<double, D>& y) {
  std::string s;
  for (int i = 0; i < D; ++i) {
    if (i) s += ';';
    s += format_number(y[i]);
  }
  return s;
}

inline std::string pass_cell(bool ok) { return ok ? "true" : "false"; }

inline void add_bound_row(CsvTable& t, const BoundReport& r) {
  t.add({r.check, r.model, level_cell(r.level), format_number(r.steps), format_number(r.paths),
         format_number(static_cast<unsigned long long>(r.seed)), r.param, format_number(r.lhs), format_number(r.se),
         format_number(r.rhs), format_number(r.margin()), pass_cell(r.pass())});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

template <SdeModel M>
RunResult run_simulate(const ExperimentConfig& cfg, const M& model) {
  constexpr int D = M::dim;
  const TruncationFamily<M> fam(model, cfg.level);
  const TimeGrid grid(model.horizon, cfg.steps);
  RunResult res;
  CsvTable moments({"model", "n", "N", "M", "seed", "p", "k", "t", "mean", "se"});
  Json overflow = Json::array();
  for (int p : cfg.simulate.moments) {
    const auto est = moment_estimate(fam, grid, p, cfg.paths, cfg.seed, cfg.workers);
    if (est.overflow) res.warnings.push_back("moment p=" + std::to_string(p) + " overflowed; log-space estimate used");
    for (int k = 0; k <= grid.steps(); ++k)
      moments.add({model.id(), level_cell(cfg.level), format_number(grid.steps()), format_number(cfg.paths),
                   format_number(static_cast<unsigned long long>(cfg.seed)), format_number(p), format_number(k),
                   format_number(grid.time(k)), format_number(est.mean[k]), format_number(est.se[k])});
    res.summary["sup_moment"][std::to_string(p)] = {{"value", est.sup}, {"se", est.sup_se}, {"k", est.argmax}};
  }
  res.files.emplace_back("moments.csv", std::move(moments));
  if (cfg.simulate.dump_paths > 0) {
    CsvTable chains(chain_columns(D));
    for (std::size_t id = 0; id < cfg.simulate.dump_paths; ++id) {
      const auto chain = simulate_chain(fam, grid, sample_noise<D>(grid, cfg.seed, id));
      for (int k = 0; k <= grid.steps(); ++k) {
        std::vector<std::string> row{format_number(id), format_number(k), format_number(grid.time(k))};
        for (int i = 0; i < D; ++i) row.push_back(format_number(chain.states[k][i]));
        for (int i = 0; i < D; ++i)
          row.push_back(k < grid.steps() ? format_number(chain.increments[k][i]) : std::string());
        chains.add(std::move(row));
      }
    }
    res.files.emplace_back("chains.csv", std::move(chains));
  }
  return res;
}

// ---------------------------------------------------------------------------
// density

template <SdeModel M>
RunResult run_density(const ExperimentConfig& cfg, const M& model) {
  constexpr int D = M::dim;
  const TruncationFamily<M> fam(model, cfg.level);
  const TimeGrid grid(model.horizon, cfg.steps);
  Multiindex alpha;
  for (int a : cfg.density.alpha) alpha.push_back(a - 1);
  auto full = density_multiindex<D>();
  full.insert(full.end(), alpha.begin(), alpha.end());
  const auto sample = weight_sample(fam, grid, cfg.paths, cfg.seed, full, cfg.workers);
  RunResult res;
  if (sample.dropped_warning())
    res.warnings.push_back(std::to_string(sample.dropped) + " of " + std::to_string(sample.requested) +
                           " paths dropped for degenerate covariance");
  if (sample.terminal.size() < 2) throw NumericalError("no usable paths for the density estimate");

  // Grid over x0 +- width_sd empirical standard deviations, per coordinate.
  Vec<double, D> sd{};
  for (int i = 0; i < D; ++i) {
    RunningStats st;
    for (const auto& x : sample.terminal) st.add(x[i]);
    sd[i] = std::sqrt(st.variance());
    if (!(sd[i] > 0.0)) sd[i] = 1.0;
  }
  std::vector<Vec<double, D>> ys(cfg.density.points);
  for (int j = 0; j < cfg.density.points; ++j) {
    const double s = -1.0 + 2.0 * j / (cfg.density.points - 1);
    for (int i = 0; i < D; ++i) ys[j][i] = model.x0[i] + s * cfg.density.width_sd * sd[i];
  }
  const std::span<const Vec<double, D>> yspan(ys);
  const double sign = alpha.size() % 2 == 0 ? 1.0 : -1.0;
  const auto est = orthant_means<D>(sample, yspan, sign);

  std::vector<double> kde_val(ys.size(), std::nan("")), kde_risk(ys.size(), std::nan(""));
  if (cfg.density.kde && alpha.empty() && sample.terminal.size() >= 1000) {
    const auto k = kde<D>(std::span<const Vec<double, D>>(sample.terminal), yspan);
    kde_val = k.estimate;
    kde_risk = k.risk;
  }

  std::vector<double> oracle(ys.size(), std::nan("")), budget(ys.size(), 0.0);
  if constexpr (has_gaussian_law<M>) {
    const auto exact = gaussian_law(model, model.horizon);
    const auto euler = euler_gaussian_law(model, grid);
    for (std::size_t j = 0; j < ys.size(); ++j) {
      oracle[j] = gaussian_oracle<D>(exact, ys[j], alpha);
      budget[j] = std::abs(gaussian_oracle<D>(euler, ys[j], alpha) - oracle[j]);
    }
  }

  std::vector<double> envelope(ys.size(), std::nan(""));
  std::vector<bool> env_ok(ys.size(), true);
  if (cfg.density.envelope) {
    const auto fit = fit_generator_constants(fam, 2, cfg.bounds.fit_radius, cfg.bounds.fit_samples, cfg.seed);
    const auto c = model.constants();
    auto env = make_decay_envelope(D, std::span<const double>(model.x0.data(), D), model.horizon, c.c2, fit.alpha,
                                   fit.gamma, c.lambda_min);
    try {
      const auto dc = decay_check<D>(yspan, est, env);
      envelope = dc.envelope;
      env_ok = dc.pass;
      res.summary["envelope"] = {{"c", dc.c_fitted},
                                 {"q", env.q},
                                 {"eta", env.eta},
                                 {"alpha2", fit.alpha},
                                 {"alpha2_raw", fit.alpha_raw},
                                 {"gamma2", fit.gamma},
                                 {"C2", c.c2},
                                 {"lambda0", c.lambda_min},
                                 {"tail_exponent", dc.tail_exponent},
                                 {"envelope_tail", dc.envelope_tail},
                                 {"holdout_rate", dc.holdout_rate},
                                 {"time_scaling", "fitted"}};
    } catch (const std::invalid_argument& e) {
      res.warnings.push_back(std::string("envelope not fitted: ") + e.what());
    }
  }

  CsvTable t(density_columns());
  const std::string alpha_label = multiindex_label(alpha);
  for (std::size_t j = 0; j < ys.size(); ++j) {
    bool ok = env_ok[j];
    if (!std::isnan(oracle[j])) ok = ok && std::abs(est[j].estimate - oracle[j]) <= 3.0 * est[j].se + budget[j];
    if (!std::isnan(kde_val[j]))
      ok = ok && std::abs(est[j].estimate - kde_val[j]) <= 3.0 * (est[j].se + kde_risk[j]);
    res.pass = res.pass && ok;
    t.add({model.id(), level_cell(cfg.level), format_number(grid.steps()), format_number(cfg.paths),
           format_number(static_cast<unsigned long long>(cfg.seed)), detail::point_cell<D>(ys[j]), alpha_label,
           format_number(est[j].estimate), format_number(est[j].se), format_number(kde_val[j]),
           format_number(oracle[j]), format_number(envelope[j]), detail::pass_cell(ok)});
  }
  res.summary["dropped_paths"] = sample.dropped;
  res.files.emplace_back("density.csv", std::move(t));
  return res;
}

// ---------------------------------------------------------------------------
// bounds

template <SdeModel M>
RunResult run_bounds(const ExperimentConfig& cfg, const M& model) {
  constexpr int D = M::dim;
  const TruncationFamily<M> fam(model, cfg.level);
  const TimeGrid grid(model.horizon, cfg.steps);
  const auto c = model.constants();
  const std::size_t mb = cfg.bounds.paths;
  RunResult res;
  CsvTable t(bounds_columns());
  auto base_row = [&](std::string check, std::string param) {
    BoundReport r;
    r.check = std::move(check);
    r.model = model.id();
    r.level = cfg.level;
    r.steps = grid.steps();
    r.paths = mb;
    r.seed = cfg.seed;
    r.param = std::move(param);
    return r;
  };
  auto emit = [&](BoundReport r) {
    r.model = model.id();
    if (!r.informational) res.pass = res.pass && r.pass();
    detail::add_bound_row(t, r);
  };

  // Structural conditions on a sample of the ball of radius fit_radius.
  {
    const auto pairs = pair_sample<D>(model.x0, cfg.bounds.fit_radius, 1000, cfg.seed);
    const auto sm = check_semi_monotone<M, D>(model, std::span<const std::pair<Vec<double, D>, Vec<double, D>>>(pairs),
                                              c.semi_monotone);
    auto r = base_row("semi_monotone", "pairs=" + std::to_string(sm.pairs_used));
    r.lhs = sm.k_hat;
    r.rhs = c.semi_monotone + 1e-9;
    emit(r);
    const auto xs = ball_sample<D>(model.x0, cfg.bounds.fit_radius, 1000, cfg.seed, 3);
    const auto el = check_ellipticity(model, std::span<const Vec<double, D>>(xs));
    auto lo = base_row("ellipticity_min", "points=1000");
    lo.lhs = c.lambda_min;
    lo.rhs = el.min_eig + 1e-12;
    emit(lo);
    auto hi = base_row("ellipticity_max", "points=1000");
    hi.lhs = el.max_eig;
    hi.rhs = c.lambda_max + 1e-12;
    emit(hi);
  }

  const auto fit = fit_generator_constants(fam, 2, cfg.bounds.fit_radius, cfg.bounds.fit_samples, cfg.seed);
  {
    const auto fresh = ball_sample<D>(model.x0, cfg.bounds.fit_radius, 10000, cfg.seed, 12);
    auto r = base_row("generator_fit", "p=2");
    r.lhs = static_cast<double>(
        generator_violations(fam, fit, fit.alpha, fit.gamma, std::span<const Vec<double, D>>(fresh)));
    r.rhs = 0.0;
    emit(r);
    res.summary["generator_fit"] = {{"p", fit.p},
                                    {"alpha_raw", fit.alpha_raw},
                                    {"gamma_raw", fit.gamma_raw},
                                    {"alpha", fit.alpha},
                                    {"gamma", fit.gamma},
                                    {"radius", fit.radius},
                                    {"samples", fit.samples},
                                    {"holdout_violations_before_raise", fit.holdout_violations}};
  }

  const std::span<const double> zetas(cfg.bounds.zetas);
  const auto em = exp_moment_check(fam, grid, mb, cfg.seed, zetas, fit, c.c2, false, cfg.workers);
  for (const auto& r : em) emit(r);
  for (std::size_t j = 1; j < em.size(); ++j) {
    if (!(zetas[j] > zetas[j - 1])) continue;
    auto r = base_row("exp_moment_monotone", "zeta=" + format_number(zetas[j - 1]) + ":" + format_number(zetas[j]));
    r.lhs = em[j - 1].lhs;
    r.rhs = em[j].lhs;
    emit(r);
  }
  for (const auto& r : exp_moment_check(fam, grid, mb, cfg.seed, zetas, fit, c.c2, true, cfg.workers)) emit(r);
  const std::span<const double> offs(cfg.bounds.tail_offsets);
  for (const auto& r : tail_check(fam, grid, mb, cfg.seed, offs, fit, c.c2, false, cfg.workers)) emit(r);
  for (const auto& r : tail_check(fam, grid, mb, cfg.seed, offs, fit, c.c2, true, cfg.workers)) emit(r);

  const std::span<const double> levels(cfg.levels);
  const std::size_t mm = std::min<std::size_t>(mb, 20000);
  for (int p : cfg.bounds.dnorm_p) {
    const auto s = dnorm_check(model, levels, grid, mm, p, cfg.seed, cfg.workers);
    auto r = base_row("dnorm_spread", "p=" + std::to_string(p));
    r.paths = mm;
    r.lhs = s.spread;
    r.rhs = 0.10;
    emit(r);
    res.summary["dnorm"][std::to_string(p)] = {{"max", s.max}, {"spread", s.spread}};
  }
  {
    const auto s = covq_moment_check(model, levels, grid, mm, cfg.seed, cfg.workers);
    auto r = base_row("covq_spread", "max=" + format_number(s.max));
    r.paths = mm;
    r.lhs = s.spread;
    r.rhs = 0.10;
    emit(r);
  }
  {
    const bool constant_sigma = model.id() == "bm";
    const auto rows = invcov_moment_scaling(fam, std::span<const double>(cfg.bounds.invcov_times),
                                            std::span<const int>(cfg.bounds.invcov_p), cfg.bounds.invcov_steps, mm,
                                            cfg.seed, cfg.workers);
    for (const auto& row : rows) {
      for (bool w : row.ess_warning)
        if (w) {
          res.warnings.push_back("invcov p=" + std::to_string(row.p) + ": top 1% of terms carry > 50% of the sum");
          break;
        }
      const std::string ps = "p=" + std::to_string(row.p);
      auto exact = base_row(constant_sigma ? "invcov_slope_exact" : "invcov_slope_exact_info", ps);
      exact.paths = mm;
      exact.lhs = std::abs(row.slope - row.constant_sigma_exponent);
      exact.rhs = 0.01;
      exact.informational = !constant_sigma;
      emit(exact);
      auto hyp = base_row("invcov_slope_vs_hypothesis_info", ps + ";exponent=" + format_number(row.hypothesis_exponent));
      hyp.paths = mm;
      hyp.lhs = row.slope;
      hyp.rhs = row.hypothesis_exponent;
      hyp.informational = true;
      emit(hyp);
      auto app = base_row("invcov_slope_vs_appendix_info", ps + ";exponent=" + format_number(row.appendix_exponent));
      app.paths = mm;
      app.lhs = row.slope;
      app.rhs = row.appendix_exponent;
      app.informational = true;
      emit(app);
    }
  }
  {
    const auto rows = truncation_convergence(model, std::span<const double>(cfg.converge.levels), grid,
                                             cfg.converge.paths, cfg.converge.p, cfg.seed, cfg.workers);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto r = base_row("truncation_convergence", "n=" + format_number(rows[i].n1) + ":" + format_number(rows[i].n2));
      r.paths = cfg.converge.paths;
      r.lhs = rows[i].value;
      r.rhs = i == 0 ? std::numeric_limits<double>::infinity() : rows[i - 1].value;
      if (i + 1 == rows.size()) r.rhs = std::min(r.rhs, 1e-3);
      emit(r);
    }
  }
  res.files.emplace_back("bounds.csv", std::move(t));
  return res;
}

// ---------------------------------------------------------------------------
// oracle

inline TestFunction test_function_by_name(const std::string& name) {
  if (name == "cos") return cosine_test_function();
  if (name == "bump") return bump_test_function();
  throw ConfigError("unknown test function " + name);
}

inline RunResult run_oracle(const ExperimentConfig& cfg) {
  const auto& o = cfg.oracle;
  const TimeGrid grid(o.horizon, o.steps);
  RunResult res;
  CsvTable t(oracle_columns());
  for (const auto& id : o.models)
    for (const auto& fname : o.functions)
      for (const auto& a1 : o.alphas) {
        Multiindex alpha;
        for (int a : a1) alpha.push_back(a - 1);
        const auto g = test_function_by_name(fname);
        OracleResult r;
        if (id == "bm") {
          r = quadrature_oracle(untruncated(BrownianModel<1>{{1.0}, {o.x0}, o.horizon}), grid, g, alpha, o.nodes);
        } else if (id == "ou") {
          r = quadrature_oracle(untruncated(OrnsteinUhlenbeck<1>{1.0, {0.0}, {1.0}, {o.x0}, o.horizon}), grid, g,
                                alpha, o.nodes);
        } else {
          r = quadrature_oracle(TruncationFamily<DoubleWell1d>(DoubleWell1d{1.0, {o.x0}, o.horizon}, o.level), grid,
                                g, alpha, o.nodes);
        }
        const double tol = alpha.size() == 1 ? o.tolerance_first : o.tolerance_second;
        res.pass = res.pass && r.gap <= tol;
        t.add({id + ":" + fname, multiindex_label(alpha), format_number(grid.steps()), format_number(r.lhs),
               format_number(r.rhs), format_number(r.gap)});
      }
  res.files.emplace_back("oracle.csv", std::move(t));
  return res;
}

// ---------------------------------------------------------------------------
// converge

template <SdeModel M>
RunResult run_converge(const ExperimentConfig& cfg, const M& model) {
  constexpr int D = M::dim;
  RunResult res;
  CsvTable t({"study", "model", "param", "N", "M", "seed", "value", "se", "pass"});
  const std::string seed = format_number(static_cast<unsigned long long>(cfg.seed));
  {
    const TimeGrid grid(model.horizon, cfg.steps);
    const auto rows = truncation_convergence(model, std::span<const double>(cfg.converge.levels), grid,
                                             cfg.converge.paths, cfg.converge.p, cfg.seed, cfg.workers);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      bool ok = i == 0 || rows[i].value <= rows[i - 1].value;
      if (i + 1 == rows.size()) ok = ok && rows[i].value < 1e-3;
      res.pass = res.pass && ok;
      t.add({"truncation", model.id(), "n=" + format_number(rows[i].n1) + ":" + format_number(rows[i].n2) +
                                           ";p=" + std::to_string(cfg.converge.p),
             format_number(grid.steps()), format_number(cfg.converge.paths), seed, format_number(rows[i].value), "0",
             detail::pass_cell(ok)});
    }
  }
  // Step halving.
  std::vector<double> dts, errs;
  for (int n : cfg.converge.steps) {
    const TimeGrid grid(model.horizon, n);
    if constexpr (has_gaussian_law<M>) {
      // Exact weak error of the density, max over x0 +- 4 sd.
      const auto exact = gaussian_law(model, model.horizon);
      const auto euler = euler_gaussian_law(model, grid);
      double err = 0.0;
      for (int j = 0; j <= 40; ++j) {
        Vec<double, D> y;
        for (int i = 0; i < D; ++i) y[i] = exact.mean[i] + (-4.0 + 0.2 * j) * std::sqrt(exact.variance[i]);
        err = std::max(err, std::abs(gaussian_oracle<D>(euler, y) - gaussian_oracle<D>(exact, y)));
      }
      dts.push_back(grid.dt());
      errs.push_back(err);
      t.add({"weak_error_density", model.id(), "dt=" + format_number(grid.dt()), format_number(n), "0", seed,
             format_number(err), "0", "true"});
    } else {
      const TruncationFamily<M> fam(model, cfg.level);
      const auto acc = parallel_reduce<RunningStats>(
          cfg.converge.paths, cfg.workers, [] { return RunningStats{}; },
          [&](RunningStats& st, std::size_t i) {
            const auto noise = sample_noise<D>(grid, cfg.seed, i);
            const auto x = euler_terminal<TruncationFamily<M>, double, D>(
                fam, grid.dt(), std::span<const Vec<double, D>>(noise.increments));
            double v = 1.0;
            for (int k = 0; k < D; ++k) v *= std::cos(x[k]);
            st.add(v);
          },
          [](RunningStats& a, const RunningStats& b) { a.merge(b); });
      t.add({"mean_cos_terminal", model.id(), "dt=" + format_number(grid.dt()), format_number(n),
             format_number(cfg.converge.paths), seed, format_number(acc.mean), format_number(acc.se()), "true"});
    }
  }
  if (errs.size() >= 2 && *std::min_element(errs.begin(), errs.end()) > 0.0) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < errs.size(); ++i) {
      lx.push_back(std::log(dts[i]));
      ly.push_back(std::log(errs[i]));
    }
    const double slope = fit_line(lx, ly).slope;
    const bool ok = std::abs(slope - 1.0) <= 0.3;
    res.pass = res.pass && ok;
    t.add({"weak_error_slope", model.id(), "log-log", "0", "0", seed, format_number(slope), "0", detail::pass_cell(ok)});
  }
  res.files.emplace_back("converge.csv", std::move(t));
  return res;
}

// ---------------------------------------------------------------------------

/// Runs a subcommand on the configured model.
inline RunResult run_subcommand(const std::string& name, const ExperimentConfig& cfg) {
  if (name == "oracle") return run_oracle(cfg);
  const AnyModel model = build_model(cfg.model);
  return std::visit(
      [&](const auto& m) -> RunResult {
        if (name == "simulate") return run_simulate(cfg, m);
        if (name == "density") return run_density(cfg, m);
        if (name == "bounds") return run_bounds(cfg, m);
        if (name == "converge") return run_converge(cfg, m);
        throw ConfigError("unknown subcommand " + name);
      },
      model);
}

}  // namespace malsde
