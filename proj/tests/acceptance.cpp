// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
//
// Exit code: 0 when every selected criterion passes, 1 on a failure. Criteria
// 6 and 7 compare against bounds whose right-hand side sits below the
// trivial lower bound of the left-hand side (see README); when they fail the
// run exits with kKnownFailure instead, which ctest reports as skipped.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fd_oracle.hpp"
#include "malsde/app.hpp"

using namespace malsde;

namespace {

constexpr int kKnownFailure = 77;
const std::set<int> kKnownUnattainable{6, 7};

struct Outcome {
  bool pass = true;
  std::string summary;
  std::vector<std::string> details;

  void require(bool ok, const std::string& line) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + line);
  }
  void note(const std::string& line) { details.push_back("info " + line); }
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

int g_workers = 0;

template <class F>
void for_each_zoo_model(F&& f) {
  f(BrownianModel<1>{{1.3}, {0.2}, 1.0});
  f(BrownianModel<2>{{1.0, 2.0}, {0.2, -0.1}, 1.0});
  f(OrnsteinUhlenbeck<1>{1.0, {0.0}, {1.0}, {0.5}, 1.0});
  f(OrnsteinUhlenbeck<2>{1.0, {0.0, 0.5}, {1.0, 0.7}, {0.5, 0.0}, 1.0});
  f(DoubleWell1d{1.0, {0.3}, 1.0});
  f(DoubleWell2d{0.1, {0.3, -0.2}, 1.0});
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const TimeGrid g(1.0, 64);
  const double h = 1e-5 * std::sqrt(g.dt());
  double worst_all = 0.0;
  for_each_zoo_model([&](const auto& model) {
    using M = std::decay_t<decltype(model)>;
    constexpr int D = M::dim;
    const TruncationFamily<M> fam(model, 4.0);
    const NormalStream pick(1, kAuxStreamBase + 1);
    double worst = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      const std::size_t path = static_cast<std::size_t>(pick.uniform(2 * i) * 1e6);
      const std::size_t k = static_cast<std::size_t>(pick.uniform(2 * i + 1) * g.steps());
      const auto chain = simulate_chain(fam, g, sample_noise<D>(g, 20240601, path));
      const auto dc = derivative_chain(chain, fam);
      worst = std::max(worst, fd::rel_error<D>(dc.first[k], fd::first(fam, g.dt(), chain.increments, k, h)));
    }
    worst_all = std::max(worst_all, worst);
    o.require(worst <= 1e-5, model.id() + " d=" + std::to_string(D) + ": max rel err " + num(worst) +
                                 " over 100 (path, k) pairs");
  });
  o.summary = "gradient oracle, max rel err " + num(worst_all) + " (limit 1e-5)";
  return o;
}

Outcome criterion2() {
  Outcome o;
  ExperimentConfig cfg;
  cfg.oracle.models = {"ou", "double-well-1d"};
  const auto res = run_oracle(cfg);
  std::istringstream csv(res.table("oracle.csv")->str());
  std::string line;
  std::getline(csv, line);
  double worst1 = 0.0, worst2 = 0.0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    const double gap = std::stod(cells[5]);
    const bool second = cells[1] == "1.1";
    (second ? worst2 : worst1) = std::max(second ? worst2 : worst1, gap);
    const double tol = second ? 1e-6 : 1e-8;
    o.require(gap <= tol, cells[0] + " alpha=" + cells[1] + ": lhs " + cells[3] + " rhs " + cells[4] + " gap " +
                              num(gap, 3) + " (limit " + num(tol) + ")");
  }
  o.summary = "exact IBP oracle, N=2, " + std::to_string(cfg.oracle.nodes) + " nodes: max gap " + num(worst1, 3) +
              " (|a|=1), " + num(worst2, 3) + " (|a|=2)";
  return o;
}

Outcome criterion3() {
  Outcome o;
  // Per-path closed form with sigma != 1 and T != 1.
  {
    const double sigma = 1.5, t = 2.0;
    const TimeGrid g(t, 256);
    const auto fam = untruncated(BrownianModel<1>{{sigma}, {0.3}, t});
    double worst = 0.0;
    for (std::size_t i = 0; i < 2000; ++i) {
      const auto noise = sample_noise<1>(g, 7, i);
      double w = 0.0;
      for (const auto& dw : noise.increments) w += dw[0];
      const double h = ibp_weight_on(fam, g.dt(), std::span<const Vec<double, 1>>(noise.increments), {0}).value;
      worst = std::max(worst, std::abs(h - w / (sigma * sigma * t) * sigma) / std::max(1.0, std::abs(h)));
    }
    o.require(worst <= 1e-12, "H_(1) = W_T sigma / (sigma^2 T) on 2000 paths (sigma=1.5, T=2): max err " + num(worst, 3));
  }
  const TimeGrid g(1.0, 256);
  const auto fam = untruncated(BrownianModel<1>{{1.0}, {0.0}, 1.0});
  std::vector<Vec<double, 1>> ys;
  for (int i = 0; i < 11; ++i) ys.push_back({-2.5 + 0.5 * i});
  WeightSample<1> sample;
  const auto est = density_mc(fam, g, 200000, 20240601, std::span<const Vec<double, 1>>(ys), g_workers, &sample);
  double worst_path = 0.0;
  for (std::size_t i = 0; i < sample.weight.size(); ++i)
    worst_path = std::max(worst_path, std::abs(sample.weight[i] - sample.terminal[i][0]) /
                                          std::max(1.0, std::abs(sample.weight[i])));
  o.require(worst_path <= 1e-12, "H_(1) = W_T / T on all 2e5 density paths: max err " + num(worst_path, 3));
  int inside = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double phi = std::exp(-0.5 * ys[i][0] * ys[i][0]) / std::sqrt(2.0 * std::numbers::pi);
    const bool ok = std::abs(est[i].estimate - phi) <= 3.0 * est[i].se;
    inside += ok;
    o.require(ok, "y=" + num(ys[i][0]) + ": est " + num(est[i].estimate, 6) + " +- " + num(est[i].se, 2) +
                      " vs phi " + num(phi, 6));
  }
  o.summary = "Brownian closed-form weight exact; density within 3 SE at " + std::to_string(inside) + "/11 points";
  return o;
}

Outcome criterion4() {
  Outcome o;
  const OrnsteinUhlenbeck<1> m{1.0, {0.0}, {1.0}, {0.5}, 1.0};
  const auto exact = gaussian_law(m, 1.0);
  const double sd = std::sqrt(exact.variance[0]);
  std::vector<Vec<double, 1>> ys;
  for (int i = 0; i < 11; ++i) ys.push_back({exact.mean[0] + (-2.5 + 0.5 * i) * sd});
  const std::span<const Vec<double, 1>> yspan(ys);

  // Halving study on the exact law of the Euler chain.
  std::vector<double> ldt, lerr0, lerr1;
  for (int n : {64, 128, 256}) {
    const TimeGrid g(1.0, n);
    const auto euler = euler_gaussian_law(m, g);
    double e0 = 0.0, e1 = 0.0;
    for (const auto& y : ys) {
      e0 = std::max(e0, std::abs(gaussian_oracle<1>(euler, y) - gaussian_oracle<1>(exact, y)));
      e1 = std::max(e1, std::abs(gaussian_oracle<1>(euler, y, {0}) - gaussian_oracle<1>(exact, y, {0})));
    }
    ldt.push_back(std::log(g.dt()));
    lerr0.push_back(std::log(e0));
    lerr1.push_back(std::log(e1));
    o.note("N=" + std::to_string(n) + ": weak error " + num(e0, 3) + " (density), " + num(e1, 3) + " (derivative)");
  }
  const double s0 = fit_line(ldt, lerr0).slope, s1 = fit_line(ldt, lerr1).slope;
  o.require(std::abs(s0 - 1.0) <= 0.3, "weak-error slope in dt, density: " + num(s0));
  o.require(std::abs(s1 - 1.0) <= 0.3, "weak-error slope in dt, derivative: " + num(s1));

  const TimeGrid g(1.0, 256);
  const auto euler = euler_gaussian_law(m, g);
  const auto fam = untruncated(m);
  const auto rho = density_mc(fam, g, 200000, 20240601, yspan, g_workers);
  const auto drho = density_derivative_mc(fam, g, 200000, 20240601, yspan, {0}, g_workers);
  int ok0 = 0, ok1 = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double o0 = gaussian_oracle<1>(exact, ys[i]), o1 = gaussian_oracle<1>(exact, ys[i], {0});
    const double b0 = std::abs(gaussian_oracle<1>(euler, ys[i]) - o0);
    const double b1 = std::abs(gaussian_oracle<1>(euler, ys[i], {0}) - o1);
    const bool p0 = std::abs(rho[i].estimate - o0) <= 3.0 * rho[i].se + b0;
    const bool p1 = std::abs(drho[i].estimate - o1) <= 3.0 * drho[i].se + b1;
    ok0 += p0;
    ok1 += p1;
    o.require(p0 && p1, "y=" + num(ys[i][0]) + ": rho " + num(rho[i].estimate, 5) + " vs " + num(o0, 5) +
                            ", drho " + num(drho[i].estimate, 5) + " vs " + num(o1, 5) + " (SE " +
                            num(rho[i].se, 2) + ", " + num(drho[i].se, 2) + ")");
  }
  o.summary = "OU density " + std::to_string(ok0) + "/11, derivative " + std::to_string(ok1) +
              "/11 within 3 SE + budget; weak-error slopes " + num(s0, 3) + ", " + num(s1, 3);
  return o;
}

Outcome criterion5() {
  Outcome o;
  const DoubleWell1d m{1.0, {0.0}, 1.0};
  const TimeGrid g(1.0, 256);
  std::vector<Vec<double, 1>> ys;
  for (int i = 0; i < 11; ++i) ys.push_back({-2.0 + 0.4 * i});
  const std::span<const Vec<double, 1>> yspan(ys);
  WeightSample<1> s4;
  const auto r4 = density_mc(TruncationFamily<DoubleWell1d>(m, 4.0), g, 200000, 20240601, yspan, g_workers, &s4);
  const auto r8 = density_mc(TruncationFamily<DoubleWell1d>(m, 8.0), g, 200000, 20240601, yspan, g_workers);
  const auto k = kde<1>(std::span<const Vec<double, 1>>(s4.terminal), yspan);
  int kde_ok = 0, trunc_ok = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const bool a = std::abs(r4[i].estimate - k.estimate[i]) <= 3.0 * (r4[i].se + k.risk[i]);
    const double comb = std::sqrt(r4[i].se * r4[i].se + r8[i].se * r8[i].se);
    const bool b = std::abs(r4[i].estimate - r8[i].estimate) <= 3.0 * comb;
    kde_ok += a;
    trunc_ok += b;
    o.require(a && b, "y=" + num(ys[i][0]) + ": rho4 " + num(r4[i].estimate, 5) + " +- " + num(r4[i].se, 2) +
                          ", kde " + num(k.estimate[i], 5) + " +- " + num(k.risk[i], 2) + ", rho8 " +
                          num(r8[i].estimate, 5));
  }
  o.note("dropped paths (degenerate covariance): " + std::to_string(s4.dropped));
  o.summary = "double-well weight vs KDE " + std::to_string(kde_ok) + "/11, truncation n=4 vs n=8 " +
              std::to_string(trunc_ok) + "/11";
  return o;
}

template <class M>
void bound_rows(Outcome& o, const M& model, bool exp_moment) {
  const TruncationFamily<M> fam(model, 4.0);
  const TimeGrid g(model.horizon, 256);
  const auto fit = fit_generator_constants(fam, 2, 8.0, 20000, 20240601);
  const double c2 = model.constants().c2;
  o.note(model.id() + ": fitted alpha2 raw " + num(fit.alpha_raw) + ", used " + num(fit.alpha) + ", gamma2 " +
         num(fit.gamma) + ", C2 " + num(c2));
  std::vector<BoundReport> rows, flipped;
  if (exp_moment) {
    const std::vector<double> z{0.1, 0.5};
    rows = exp_moment_check(fam, g, 100000, 20240601, z, fit, c2, false, g_workers);
    flipped = exp_moment_check(fam, g, 100000, 20240601, z, fit, c2, true, g_workers);
  } else {
    const std::vector<double> off{2.0, 3.0, 4.0};
    rows = tail_check(fam, g, 100000, 20240601, off, fit, c2, false, g_workers);
    flipped = tail_check(fam, g, 100000, 20240601, off, fit, c2, true, g_workers);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    o.require(rows[i].pass(), model.id() + " " + rows[i].param + ": lhs " + num(rows[i].lhs, 6) + " +- " +
                                  num(rows[i].se, 2) + " <= rhs " + num(rows[i].rhs, 4));
    o.note(model.id() + " " + flipped[i].param + " with +gamma2/alpha2 in the exponent: rhs " +
           num(flipped[i].rhs, 4) + (flipped[i].pass() ? " (holds)" : " (violated)"));
  }
}

Outcome criterion6() {
  Outcome o;
  bound_rows(o, OrnsteinUhlenbeck<1>{1.0, {0.0}, {1.0}, {0.0}, 1.0}, true);
  bound_rows(o, DoubleWell1d{1.0, {0.0}, 1.0}, true);
  int ok = 0, total = 0;
  for (const auto& d : o.details)
    if (d.rfind("info", 0) != 0) {
      ++total;
      ok += d.rfind("ok", 0) == 0;
    }
  o.summary = "exponential-moment bound holds on " + std::to_string(ok) + "/" + std::to_string(total) +
              " rows (lhs >= 1 always; rhs uses exp(-zeta gamma2/alpha2))";
  return o;
}

Outcome criterion7() {
  Outcome o;
  bound_rows(o, OrnsteinUhlenbeck<1>{1.0, {0.0}, {1.0}, {0.0}, 1.0}, false);
  bound_rows(o, DoubleWell1d{1.0, {0.0}, 1.0}, false);
  int ok = 0, total = 0;
  for (const auto& d : o.details)
    if (d.rfind("info", 0) != 0) {
      ++total;
      ok += d.rfind("ok", 0) == 0;
    }
  o.summary = "tail bound holds on " + std::to_string(ok) + "/" + std::to_string(total) +
              " rows (rhs carries exp(-2 gamma2/alpha2))";
  return o;
}

Outcome criterion8() {
  Outcome o;
  const std::vector<double> times{0.1, 0.2, 0.5, 1.0};
  const std::vector<int> ps{1, 2, 4};
  auto exact = [&](const auto& fam, const std::string& label) {
    for (const auto& row : invcov_moment_scaling(fam, times, ps, 64, 1000, 20240601, g_workers))
      o.require(std::abs(row.slope - row.constant_sigma_exponent) <= 0.01,
                label + " p=" + std::to_string(row.p) + ": slope " + num(row.slope, 8) + " vs -dp = " +
                    num(row.constant_sigma_exponent));
  };
  exact(untruncated(BrownianModel<1>{{1.0}, {0.0}, 1.0}), "bm d=1");
  exact(untruncated(BrownianModel<2>{{1.0, 2.0}, {0.0, 0.0}, 1.0}), "bm d=2 sigma=diag(1,2)");
  auto report = [&](const auto& fam, const std::string& label) {
    for (const auto& row : invcov_moment_scaling(fam, times, ps, 64, 10000, 20240601, g_workers)) {
      bool ess = false;
      for (bool w : row.ess_warning) ess = ess || w;
      o.note(label + " p=" + std::to_string(row.p) + ": slope " + num(row.slope) + "; -d(p-1/2) = " +
             num(row.hypothesis_exponent) + ", -d(p-1/2)-2 = " + num(row.appendix_exponent) + ", -dp = " +
             num(row.constant_sigma_exponent) + (ess ? " [heavy-tailed sample]" : ""));
    }
  };
  report(TruncationFamily<DoubleWell1d>(DoubleWell1d{1.0, {0.0}, 1.0}, 4.0), "double-well-1d");
  report(TruncationFamily<DoubleWell2d>(DoubleWell2d{0.1, {0.0, 0.0}, 1.0}, 4.0), "double-well-2d");
  o.summary = "constant-sigma slopes reproduce -dp within 0.01; double-well slopes reported";
  return o;
}

Outcome criterion9() {
  Outcome o;
  {
    const DoubleWell1d m{1.0, {0.0}, 1.0};
    const TruncationFamily<DoubleWell1d> fam(m, 4.0);
    const TimeGrid g(1.0, 128);
    std::vector<Vec<double, 1>> ys;
    for (int i = 0; i < 21; ++i) ys.push_back({-3.0 + 0.3 * i});
    const std::span<const Vec<double, 1>> yspan(ys);
    const auto est = density_derivative_mc(fam, g, 200000, 20240601, yspan, {0}, g_workers);
    const auto fit = fit_generator_constants(fam, 2, 8.0, 20000, 20240601);
    const auto c = m.constants();
    const std::vector<double> x0{0.0};
    const auto env = make_decay_envelope(1, x0, 1.0, c.c2, fit.alpha, fit.gamma, c.lambda_min);
    const auto dc = decay_check<1>(yspan, est, env);
    o.note("envelope: c " + num(dc.c_fitted) + ", eta " + num(env.eta) + ", tail coefficient " +
           num(dc.envelope_tail) + ", fitted on " + std::to_string(dc.fit_points) + " inner points");
    o.require(dc.holdout_rate == 1.0, "holdout (outer half) coverage " + num(100.0 * dc.holdout_rate) + "%");
    o.require(dc.all_pass, "all 21 points inside envelope + 3 SE");
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (!dc.pass[i])
        o.note("outside at y=" + num(ys[i][0]) + ": |est| " + num(std::abs(est[i].estimate)) + ", envelope " +
               num(dc.envelope[i]));
  }
  double slope = 0.0;
  {
    const double sigma = 1.0, t = 1.0;
    const TimeGrid g(t, 128);
    std::vector<Vec<double, 1>> ys;
    for (int i = 0; i < 21; ++i) ys.push_back({-3.0 + 0.3 * i});
    const auto est = density_mc(untruncated(BrownianModel<1>{{sigma}, {0.0}, t}), g, 200000, 20240601,
                                std::span<const Vec<double, 1>>(ys), g_workers);
    slope = tail_exponent<1>(ys, est, {0.0});
    const double target = -1.0 / (2.0 * sigma * sigma * t);
    o.require(std::abs(slope - target) <= 0.1 * std::abs(target),
              "Brownian tail coefficient " + num(slope) + " vs " + num(target) + " (10%)");
  }
  o.summary = "double-well derivative envelope, 21 points; Brownian tail coefficient " + num(slope);
  return o;
}

Outcome criterion10() {
  Outcome o;
  auto config = [](const std::string& model, int workers) {
    Json doc = Json::parse(model);
    doc["steps"] = 64;
    doc["paths"] = 4000;
    doc["workers"] = workers;
    doc["levels"] = {2, 4, 8};
    doc["density"] = {{"points", 11}};
    doc["bounds"] = {{"paths", 4000},      {"fit_samples", 2000}, {"invcov_steps", 32},
                     {"zetas", {0.1, 0.5}}, {"dnorm_p", {2}},      {"invcov_p", {1, 2}}};
    doc["converge"] = {{"paths", 1000}, {"steps", {16, 32, 64}}};
    doc["oracle"] = {{"nodes", 48}};
    return parse_config(doc);
  };
  const std::vector<std::string> models{R"({"model": {"id": "double-well-1d", "x0": [0.2]}})",
                                        R"({"model": {"id": "double-well-2d", "x0": [0.1, -0.1]}})",
                                        R"({"model": {"id": "ou", "x0": [0.5], "sigma": [1], "mu": [0]}})"};
  std::size_t files = 0, bytes = 0;
  for (const auto& model : models)
    for (const std::string sub : {"simulate", "density", "bounds", "oracle", "converge"}) {
      if (sub == "oracle" && model != models.front()) continue;
      const auto a = run_subcommand(sub, config(model, 1));
      const auto b = run_subcommand(sub, config(model, 3));
      const auto c = run_subcommand(sub, config(model, 1));
      for (const auto& [name, table] : a.files) {
        const std::string sa = table.str();
        const bool same = b.table(name) && c.table(name) && sa == b.table(name)->str() && sa == c.table(name)->str();
        ++files;
        bytes += sa.size();
        if (!same) o.require(false, Json::parse(model)["model"]["id"].get<std::string>() + " " + sub + " " + name);
      }
    }
  o.require(o.pass, std::to_string(files) + " report files compared across runs at 1 and 3 workers");
  o.summary = "byte-identical reports: " + std::to_string(files) + " files, " + std::to_string(bytes) +
              " bytes, workers 1 vs 3 and repeated run";
  return o;
}

struct Criterion {
  int id;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--workers", g_workers, "worker threads (0 = hardware)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, 10, criterion1},   {2, 30, criterion2},  {3, 60, criterion3},  {4, 120, criterion4},
      {5, 180, criterion5},  {6, 120, criterion6}, {7, 60, criterion7},  {8, 120, criterion8},
      {9, 180, criterion9},  {10, 0, criterion10},
  };
  bool hard_failure = false, known_failure = false;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_seconds > 0 && secs > c.limit_seconds) {
      o.pass = false;
      o.details.push_back("FAIL runtime " + num(secs) + " s exceeds " + num(c.limit_seconds) + " s");
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << o.summary << " [" << num(secs, 3)
              << " s]" << std::endl;
    for (const auto& d : o.details) std::cout << "    " << d << '\n';
    if (!o.pass) (kKnownUnattainable.count(c.id) ? known_failure : hard_failure) = true;
  }
  if (hard_failure) return 1;
  return known_failure ? kKnownFailure : 0;
}
