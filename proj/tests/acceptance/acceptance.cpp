// Acceptance checks for the ten release criteria. Prints one PASS/FAIL line
// per criterion and exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "rlalm/rlalm.hpp"

using namespace rlalm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct LassoFixture {
  LassoInstance inst;
  SaddlePointEstimate saddle;
};

const LassoFixture& lasso_fixture() {
  static const LassoFixture fx = [] {
    LassoFixture f;
    f.inst = make_lasso_instance(LassoParams{}, 1);
    f.saddle = estimate_saddle_fgm(f.inst.problem, f.inst.x0, 20000);
    return f;
  }();
  return fx;
}

SolverConfig fixed(double alpha, double rho, Index iterations) {
  SolverConfig c;
  c.alpha = alpha;
  c.rho_mode = RhoMode::fixed;
  c.rho = rho;
  c.iterations = iterations;
  c.d_psi_mode = CurvatureMode::max_curvature;
  return c;
}

std::vector<LassoRun>& bound_runs() {
  static std::vector<LassoRun> runs;
  return runs;
}

// 1. Ergodic gap below the matching bound for every K in 1..500.
Outcome bound_dominance() {
  const auto& fx = lasso_fixture();
  auto& runs = bound_runs();
  runs.clear();
  double worst = -1.0;
  double min_gap = 0.0;
  bool ok = true;
  for (const char* method : {"simple", "proposed"}) {
    for (double alpha : {1.0, 1.999}) {
      for (double rho : {0.5, 0.1}) {
        LassoRun r = run_lasso_solver(fx.inst, fx.saddle, method, fixed(alpha, rho, 500));
        for (const auto& b : r.bound) {
          worst = std::max(worst, b.gap / b.bound);
          if (b.gap > b.bound) ok = false;
        }
        for (const auto& row : r.record.rows) min_gap = std::min(min_gap, *row.nonergodic_gap);
        runs.push_back(std::move(r));
      }
    }
  }
  return {ok, fmt("8 runs x 500 K, max gap/bound = %.4f, min raw gap = %.2e", worst, min_gap)};
}

// 2. K * gap(K) stays below the K-independent constant.
Outcome rate_one_over_k() {
  auto& runs = bound_runs();
  if (runs.empty()) bound_dominance();
  double worst = 0.0;
  for (const auto& r : runs) {
    const double c = r.terms.constant();
    for (const auto& b : r.bound) worst = std::max(worst, static_cast<double>(b.K) * b.gap / c);
  }
  return {worst <= 1.0, fmt("max K*gap/(A+B+C) = %.4f over 8 runs", worst)};
}

// 3. Non-ergodic gap reaches 1e-6 in at most 0.7x the unrelaxed iterations.
Outcome lasso_speedup() {
  const auto& fx = lasso_fixture();
  auto first_hit = [&](double alpha) -> std::optional<Index> {
    const LassoRun r = run_lasso_solver(fx.inst, fx.saddle, "proposed", fixed(alpha, 0.1, 20000));
    for (const auto& row : r.record.rows) {
      if (row.k > 0 && *row.nonergodic_gap <= 1e-6) return row.k;
    }
    return std::nullopt;
  };
  const auto k1 = first_hit(1.0);
  const auto k2 = first_hit(1.999);
  if (!k1 || !k2) return {false, "gap did not reach 1e-6 within 20000 iterations"};
  const double ratio = static_cast<double>(*k2) / static_cast<double>(*k1);
  return {ratio <= 0.7, fmt("K(alpha=1) = %.0f, K(alpha=1.999) = %.0f, ratio = %.3f", static_cast<double>(*k1),
                            static_cast<double>(*k2), ratio)};
}

// 4. Literal, practical and quadratic forms agree; nu stays exactly zero.
Outcome equivalence_lattice() {
  const Matrix a = oracle::random_matrix(30, 15, 404);
  const Vector y = oracle::random_vector(30, 405);
  auto op = std::make_shared<const DenseOperator>(a);
  const CompositeProblem p = make_problem(op, y, L1Prox{0.5});
  const Matrix gs = majorizer_gap_sqrt(p);
  const Vector x0 = oracle::random_vector(15, 406);
  const Vector u0 = a * x0;
  const Vector mu0 = y - u0;
  double worst = 0.0;
  bool nu_zero = true;
  for (double alpha : {1.0, 1.5, 1.999}) {
    const double rho = 0.5;
    SolverState lit = init_literal_state(p, x0, u0, mu0, gs);
    SolverState pra = init_practical_state(p, x0, u0, mu0);
    SolverState qua = init_quadratic_state(p, x0);
    for (int k = 0; k < 100; ++k) {
      lit = lalm_proposed_literal_step(lit, p, alpha, rho, gs);
      pra = lalm_proposed_practical_step(pra, p, alpha, rho);
      qua = lalm_proposed_quadratic_step(qua, p, alpha, rho);
      if (lit.nu.cwiseAbs().maxCoeff() != 0.0) nu_zero = false;
      worst = std::max({worst, oracle::max_abs_diff(lit.x, pra.x), oracle::max_abs_diff(pra.x, qua.x),
                        oracle::max_abs_diff(lit.x, qua.x)});
    }
  }
  return {worst <= 1e-8 && nu_zero,
          fmt("max iterate diff = %.2e, nu identically zero: ", worst) + (nu_zero ? "yes" : "no")};
}

struct CtFixture {
  CtScenario sc;
  Vector x_init;
};

const CtFixture& ct_fixture() {
  static const CtFixture fx = [] {
    CtScenarioParams prm;
    prm.seed = 1;
    CtFixture f;
    f.sc = make_ct_scenario(prm);
    f.x_init = fbp_like_init(f.sc);
    return f;
  }();
  return fx;
}

std::vector<Vector> collect(const std::function<RunResult(const RunMonitor&)>& run) {
  std::vector<Vector> xs;
  RunMonitor m;
  m.record_cost = false;
  m.observer = [&](Index k, const Vector& x) {
    if (k > 0) xs.push_back(x);
  };
  run(m);
  return xs;
}

// 5. At alpha = 1 Algorithms 1 and 2 and an unrelaxed OS-LALM coincide.
Outcome alpha_one_collapse() {
  const auto& fx = ct_fixture();
  const CompositeProblem p = build_ct_problem(fx.sc, CurvatureMode::huber);
  const SubsetSystem sub = make_ct_subsets(fx.sc, 4);
  SolverConfig cfg;
  cfg.alpha = 1.0;
  cfg.subsets = 4;
  cfg.iterations = 15;
  cfg.d_psi_mode = CurvatureMode::huber;
  const auto a1 = collect([&](const RunMonitor& m) { return os_relaxed_lalm_run(p, sub, fx.x_init, cfg, m); });
  const auto a2 = collect([&](const RunMonitor& m) { return os_simple_relaxed_lalm_run(p, sub, fx.x_init, cfg, m); });
  const auto orc = oracle::os_lalm_unrelaxed(p, sub, fx.x_init, 15, true, 1.0, fx.sc.lower, fx.sc.upper);
  if (a1.size() != 60 || a2.size() != 60 || orc.size() != 60) return {false, "expected 60 subiterations"};
  double worst = 0.0;
  for (std::size_t k = 0; k < 60; ++k) {
    worst = std::max({worst, oracle::max_abs_diff(a1[k], a2[k]), oracle::max_abs_diff(a1[k], orc[k]),
                      oracle::max_abs_diff(a2[k], orc[k])});
  }
  return {worst <= 1e-10, fmt("max abs diff over 60 subiterations = %.2e HU", worst)};
}

// 6. CT speed-up from relaxation, and proposed beating simple at fixed rho.
Outcome ct_speedup() {
  const auto& fx = ct_fixture();
  const Vector ref = fgm_restart_run(build_ct_problem(fx.sc, CurvatureMode::max_curvature), fx.x_init, 5000);
  const CompositeProblem p = build_ct_problem(fx.sc, CurvatureMode::huber);
  const SubsetSystem sub = make_ct_subsets(fx.sc, 4);
  RunMonitor m;
  m.reference = ref;
  auto cfg = [](double alpha, std::optional<double> rho) {
    SolverConfig c;
    c.alpha = alpha;
    c.subsets = 4;
    c.iterations = 20;
    c.d_psi_mode = CurvatureMode::huber;
    if (rho) {
      c.rho_mode = RhoMode::fixed;
      c.rho = *rho;
    }
    return c;
  };
  const auto unrelaxed = os_relaxed_lalm_run(p, sub, fx.x_init, cfg(1.0, std::nullopt), m);
  const auto relaxed = os_relaxed_lalm_run(p, sub, fx.x_init, cfg(1.999, std::nullopt), m);
  const auto proposed = os_relaxed_lalm_run(p, sub, fx.x_init, cfg(1.999, 0.05), m);
  const auto simple = os_simple_relaxed_lalm_run(p, sub, fx.x_init, cfg(1.999, 0.05), m);
  const double r10 = *relaxed.record.at(40).rms_hu;
  const double u20 = *unrelaxed.record.at(80).rms_hu;
  const double p20 = *proposed.record.at(80).rms_hu;
  const double s20 = *simple.record.at(80).rms_hu;
  return {r10 <= u20 && p20 < s20,
          fmt("relaxed@10 = %.3f HU vs unrelaxed@20 = %.3f HU; fixed rho: proposed@20 = %.3f HU vs simple@20 = %.3f HU",
              r10, u20, p20, s20)};
}

// 7. Spectral analysis: discriminant root, damping frequency, simulated contraction.
Outcome spectral() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> lip(0.5, 10.0);
  std::uniform_real_distribution<double> logr(std::log(1e-4), std::log(0.9));
  double root_err = 0.0;
  double alpha_spread = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double L = lip(rng);
    const double l1 = L * std::exp(logr(rng));
    const double rc = critical_rho(l1, L);
    std::vector<double> roots;
    for (double a : {1.0, 1.5, 1.999}) roots.push_back(discriminant_root(l1, L, a));
    for (double r : roots) {
      root_err = std::max(root_err, std::abs(r - rc));
      alpha_spread = std::max(alpha_spread, std::abs(r - roots[0]));
    }
  }
  double damp_err = 0.0;
  for (double r : {1e-2, 1e-3, 1e-4}) {
    for (double a : {1.0, 1.5, 1.999}) {
      const double w = damping_frequency(r, 1.0, a);
      const double approx = a * std::sqrt(r);
      damp_err = std::max(damp_err, std::abs(w - approx) / approx);
    }
  }

  // Per-mode contraction of the quadratic form on 1/2 ||Ax||^2, A diagonal.
  const std::vector<double> lambdas{0.01, 0.2, 0.5, 0.9};
  const Index n = static_cast<Index>(lambdas.size());
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) a(i, i) = std::sqrt(lambdas[static_cast<std::size_t>(i)]);
  CompositeProblem p = make_problem(std::make_shared<const DenseOperator>(a), Vector::Zero(n), NoProx{});
  p.d_a.entries = Vector::Ones(n);
  double sim_err = 0.0;
  for (double alpha : {1.0, 1.5, 1.999}) {
    for (double rho : {0.05, 0.3}) {
      SolverState s = init_quadratic_state(p, Vector::Ones(n));
      std::vector<std::vector<double>> norms(static_cast<std::size_t>(n));
      for (int k = 0; k < 400; ++k) {
        for (Index i = 0; i < n; ++i) norms[static_cast<std::size_t>(i)].push_back(std::hypot(s.g[i], s.h[i]));
        s = lalm_proposed_quadratic_step(s, p, alpha, rho);
      }
      for (Index i = 0; i < n; ++i) {
        const auto& v = norms[static_cast<std::size_t>(i)];
        const double radius = transition_matrix(lambdas[static_cast<std::size_t>(i)], 1.0, rho, alpha).spectral_radius();
        // Window [k0, k1] late enough to lose transients, early enough to stay above underflow.
        std::size_t k1 = v.size() - 1;
        while (k1 > 60 && v[k1] < 1e-250) --k1;
        const std::size_t k0 = k1 / 3;
        const double rate = std::pow(v[k1] / v[k0], 1.0 / static_cast<double>(k1 - k0));
        sim_err = std::max(sim_err, std::abs(rate - radius) / radius);
      }
    }
  }
  const bool ok = root_err <= 1e-8 && alpha_spread <= 1e-8 && damp_err <= 0.05 && sim_err <= 0.05;
  return {ok, fmt("root err = %.1e, alpha spread = %.1e, damping rel err = %.3f, contraction rel err = %.3f", root_err,
                  alpha_spread, damp_err, sim_err)};
}

// 8. The weighting matrix of the ergodic analysis is PSD.
Outcome lemma_psd() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ua(0.0, 2.0), ur(0.0, 10.0), u01(0.0, 1.0);
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 50; ++i) {
    double alpha = 0.0, rho = 0.0;
    while (alpha == 0.0) alpha = ua(rng);
    while (rho == 0.0) rho = ur(rng);
    const Matrix b = oracle::random_matrix(6, 4, 1000 + i);
    const Matrix c = oracle::random_matrix(5, 5, 2000 + i);
    const Matrix pm = c.transpose() * c;
    Vector d(5);
    for (Index j = 0; j < 5; ++j) d[j] = u01(rng);
    worst = std::min(worst, check_psd_H(alpha, rho, b, d, pm).min_eigenvalue);
  }
  return {worst >= -1e-10, fmt("min eigenvalue over 50 instances = %.3e", worst)};
}

// 9. Majorization, surrogate and adjoint checks.
Outcome majorization_suite() {
  const auto& fx = ct_fixture();
  const auto& proj = *fx.sc.projector;
  double maj = std::numeric_limits<double>::infinity();
  const Matrix a = oracle::random_matrix(40, 25, 9);
  const DenseOperator dense(a);
  const Vector wd = oracle::random_vector(40, 10).cwiseAbs();
  maj = std::min(maj, majorization_margin(dense, diag_majorizer_ata(dense, wd).entries, wd, 200, 11));
  maj = std::min(maj, majorization_margin(dense, diag_majorizer_ata(dense).entries, std::nullopt, 200, 12));
  maj = std::min(maj, majorization_margin(proj, diag_majorizer_ata(proj, fx.sc.weights).entries, fx.sc.weights, 200, 13));
  for (const auto& dir : default_directions()) {
    const auto fd = finite_difference_op(ImageShape{16, 16}, dir);
    maj = std::min(maj, majorization_margin(*fd, diag_majorizer_ata(*fd).entries, std::nullopt, 200, 14));
  }

  double sur = std::numeric_limits<double>::infinity();
  const RegularizerSpec& reg = *fx.sc.regularizer;
  for (auto mode : {CurvatureMode::huber, CurvatureMode::max_curvature}) {
    for (double scale : {1.0, 20.0, 200.0}) {
      const double m = surrogate_margin(reg, fx.x_init, mode, 200, scale, 15);
      sur = std::min(sur, m / (1.0 + std::abs(regularizer_eval(reg, fx.x_init))));
    }
  }

  double adj = 0.0;
  const auto dense_ptr = std::make_shared<const DenseOperator>(a);
  adj = std::max(adj, adjoint_mismatch(IdentityOperator(7), 20, 16));
  adj = std::max(adj, adjoint_mismatch(dense, 20, 17));
  adj = std::max(adj, adjoint_mismatch(RowScaledOperator(dense_ptr, wd), 20, 18));
  adj = std::max(adj, adjoint_mismatch(CountingOperator(dense_ptr), 20, 19));
  adj = std::max(adj, adjoint_mismatch(proj, 20, 20));
  adj = std::max(adj, adjoint_mismatch(*proj.subset({0, 4, 8}), 20, 21));
  for (const auto& dir : default_directions()) adj = std::max(adj, adjoint_mismatch(*finite_difference_op({9, 7}, dir), 20, 22));
  for (const auto& op : make_ct_subsets(fx.sc, 4).ops) adj = std::max(adj, adjoint_mismatch(*op, 20, 23));

  const bool ok = maj >= -1e-9 && sur >= -1e-9 && adj <= 1e-10;
  return {ok, fmt("min majorization margin = %.2e, min surrogate margin = %.2e, max adjoint mismatch = %.2e", maj, sur,
                  adj)};
}

// 10. One forward and one adjoint per (sub)iteration.
Outcome work_accounting() {
  const auto& fx = ct_fixture();
  const CompositeProblem p = build_ct_problem(fx.sc, CurvatureMode::huber);
  SubsetSystem sub = make_ct_subsets(fx.sc, 4);
  std::vector<std::shared_ptr<const CountingOperator>> counters;
  for (auto& op : sub.ops) {
    auto c = std::make_shared<const CountingOperator>(op);
    counters.push_back(c);
    op = c;
  }
  auto totals = [&] {
    long f = 0, b = 0;
    for (const auto& c : counters) {
      f += c->forward_count();
      b += c->adjoint_count();
    }
    return std::pair{f, b};
  };
  SolverConfig cfg;
  cfg.alpha = 1.999;
  cfg.subsets = 4;
  cfg.iterations = 3;
  bool ok = true;
  std::string detail;
  for (int which = 0; which < 2; ++which) {
    for (const auto& c : counters) c->reset();
    std::pair<long, long> last{0, 0};
    RunMonitor m;
    m.record_cost = false;
    m.observer = [&](Index k, const Vector&) {
      const auto now = totals();
      if (k > 0 && (now.first - last.first != 1 || now.second - last.second != 1)) ok = false;
      last = now;
    };
    if (which == 0) {
      os_relaxed_lalm_run(p, sub, fx.x_init, cfg, m);
    } else {
      os_simple_relaxed_lalm_run(p, sub, fx.x_init, cfg, m);
    }
    detail += (which == 0 ? "alg1 " : "alg2 ") + std::to_string(last.first) + "/" + std::to_string(last.second) + " ";
  }

  const Matrix a = oracle::random_matrix(30, 15, 1010);
  const auto counted = std::make_shared<const CountingOperator>(std::make_shared<const DenseOperator>(a));
  const Vector y = oracle::random_vector(30, 1011);
  const CompositeProblem dp = make_problem(counted, y, L1Prox{0.5});
  const Vector x0 = oracle::random_vector(15, 1012);
  SolverState pra = init_practical_state(dp, x0, a * x0, y - a * x0);
  SolverState qua = init_quadratic_state(dp, x0);
  for (int k = 0; k < 10; ++k) {
    counted->reset();
    pra = lalm_proposed_practical_step(pra, dp, 1.999, 0.5);
    if (counted->forward_count() != 1 || counted->adjoint_count() != 1) ok = false;
    counted->reset();
    qua = lalm_proposed_quadratic_step(qua, dp, 1.999, 0.5);
    if (counted->forward_count() != 1 || counted->adjoint_count() != 1) ok = false;
  }
  detail += "(forward/adjoint totals over 12 subiterations incl. init); practical and quadratic forms 10 steps checked";
  return {ok, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    Outcome (*run)();
  };
  const std::vector<Criterion> criteria{
      {1, "theorem bound dominance", 60, bound_dominance},
      {2, "O(1/K) rate", 60, rate_one_over_k},
      {3, "LASSO relaxation speed-up", 30, lasso_speedup},
      {4, "equivalence lattice", 10, equivalence_lattice},
      {5, "alpha=1 collapse", 60, alpha_one_collapse},
      {6, "CT speed-up", 600, ct_speedup},
      {7, "spectral analysis", 30, spectral},
      {8, "weighting matrix PSD", 5, lemma_psd},
      {9, "majorization and adjoint suites", 10, majorization_suite},
      {10, "work accounting", 60, work_accounting},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("criterion %2d %-34s %s  [%.1f s / %.0f s]  %s%s\n", c.id, c.name, pass ? "PASS" : "FAIL", secs,
                c.limit_s, o.detail.c_str(), in_time ? "" : "  (over time limit)");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
