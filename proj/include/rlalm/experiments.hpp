#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rlalm/ct.hpp"

namespace rlalm {

// ---------------------------------------------------------------------------
// Configuration.

struct SolverSpec {
  std::string name;
  std::string method;
  SolverConfig config;
};

struct LassoParams {
  Index rows = 100;
  Index cols = 400;
  Index sparsity = 20;
  double noise_variance = 0.1;
  double lambda = 1.0;
  Index reference_iterations = 20000;
};

struct CtParams {
  CtScenarioParams scenario;
  Index reference_iterations = 5000;
  double window_lo = 800.0;
  double window_hi = 1200.0;
  double diff_window = 50.0;
};

struct SpectralParams {
  std::vector<double> ratios{0.5, 0.1, 0.01, 1e-3, 1e-4};
  std::vector<double> alphas{1.0, 1.5, 1.999};
  std::vector<double> rhos{1e-3, 1e-2, 0.1, 0.5, 1.0};
  double rho_small = 1e-3;
};

struct ExperimentConfig {
  std::string experiment;  // lasso, ct or spectral
  std::uint64_t seed = 0;
  bool timing = false;
  LassoParams lasso;
  CtParams ct;
  SpectralParams spectral;
  std::vector<SolverSpec> solvers;
};

inline const std::vector<std::string>& lasso_methods() {
  static const std::vector<std::string> m{"simple", "proposed"};
  return m;
}
inline const std::vector<std::string>& ct_methods() {
  static const std::vector<std::string> m{"proposed", "simple", "sqs"};
  return m;
}

namespace detail {

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

inline std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " is empty");
  return out;
}

template <typename T>
T get_or(const boost::property_tree::ptree& pt, const std::string& key, T fallback) {
  try {
    return pt.get<T>(key, fallback);
  } catch (const boost::property_tree::ptree_error& e) {
    throw ConfigError("config key " + key + ": " + e.what());
  }
}

inline CurvatureMode parse_mode(const std::string& s) {
  if (s == "huber") return CurvatureMode::huber;
  if (s == "max_curvature") return CurvatureMode::max_curvature;
  throw ConfigError("d_psi_mode must be huber or max_curvature, got '" + s + "'");
}

}  // namespace detail

/// Parses the INI-style experiment file. See configs/ for the schema.
inline ExperimentConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  const auto exp = tree.get_child_optional("experiment");
  if (!exp) throw ConfigError("config needs an [experiment] section");
  cfg.experiment = exp->get<std::string>("type", "");
  if (cfg.experiment != "lasso" && cfg.experiment != "ct" && cfg.experiment != "spectral") {
    throw ConfigError("experiment type must be lasso, ct or spectral, got '" + cfg.experiment + "'");
  }
  cfg.seed = detail::get_or<std::uint64_t>(*exp, "seed", 0);
  cfg.timing = detail::get_or<bool>(*exp, "timing", false);

  if (const auto s = tree.get_child_optional("lasso")) {
    auto& l = cfg.lasso;
    l.rows = detail::get_or<Index>(*s, "rows", l.rows);
    l.cols = detail::get_or<Index>(*s, "cols", l.cols);
    l.sparsity = detail::get_or<Index>(*s, "sparsity", l.sparsity);
    l.noise_variance = detail::get_or<double>(*s, "noise_variance", l.noise_variance);
    l.lambda = detail::get_or<double>(*s, "lambda", l.lambda);
    l.reference_iterations = detail::get_or<Index>(*s, "reference_iterations", l.reference_iterations);
  }
  if (const auto s = tree.get_child_optional("ct")) {
    auto& c = cfg.ct;
    auto& sp = c.scenario;
    sp.nx = detail::get_or<Index>(*s, "nx", sp.nx);
    sp.ny = detail::get_or<Index>(*s, "ny", sp.ny);
    sp.fov_mm = detail::get_or<double>(*s, "fov_mm", sp.fov_mm);
    sp.num_bins = detail::get_or<Index>(*s, "bins", sp.num_bins);
    sp.num_views = detail::get_or<Index>(*s, "views", sp.num_views);
    sp.i0 = detail::get_or<double>(*s, "i0", sp.i0);
    sp.noiseless = detail::get_or<bool>(*s, "noiseless", sp.noiseless);
    sp.water_attenuation = detail::get_or<double>(*s, "water_attenuation", sp.water_attenuation);
    sp.delta = detail::get_or<double>(*s, "delta", sp.delta);
    sp.beta_fraction = detail::get_or<double>(*s, "beta_fraction", sp.beta_fraction);
    if (s->get_optional<std::string>("beta")) sp.beta = detail::get_or<double>(*s, "beta", 0.0);
    c.reference_iterations = detail::get_or<Index>(*s, "reference_iterations", c.reference_iterations);
    c.window_lo = detail::get_or<double>(*s, "window_lo", c.window_lo);
    c.window_hi = detail::get_or<double>(*s, "window_hi", c.window_hi);
    c.diff_window = detail::get_or<double>(*s, "diff_window", c.diff_window);
  }
  if (const auto s = tree.get_child_optional("spectral")) {
    auto& sp = cfg.spectral;
    if (auto v = s->get_optional<std::string>("ratios")) sp.ratios = detail::parse_list(*v, "ratios");
    if (auto v = s->get_optional<std::string>("alphas")) sp.alphas = detail::parse_list(*v, "alphas");
    if (auto v = s->get_optional<std::string>("rhos")) sp.rhos = detail::parse_list(*v, "rhos");
    sp.rho_small = detail::get_or<double>(*s, "rho_small", sp.rho_small);
  }

  const auto& valid = cfg.experiment == "lasso" ? lasso_methods() : ct_methods();
  for (const auto& [section, body] : tree) {
    if (section.rfind("solver:", 0) != 0) continue;
    SolverSpec spec;
    spec.name = section.substr(7);
    if (spec.name.empty() || spec.name.find_first_of("/\\ ") != std::string::npos) {
      throw ConfigError("solver name '" + spec.name + "' must be non-empty without spaces or slashes");
    }
    spec.method = body.get<std::string>("method", "");
    if (std::find(valid.begin(), valid.end(), spec.method) == valid.end()) {
      throw ConfigError("solver " + spec.name + ": unknown method '" + spec.method + "'; valid: " + detail::join(valid));
    }
    auto& sc = spec.config;
    sc.alpha = detail::get_or<double>(body, "alpha", 1.0);
    const std::string rho = body.get<std::string>("rho", "continuation");
    if (rho == "continuation") {
      sc.rho_mode = RhoMode::continuation;
    } else {
      sc.rho_mode = RhoMode::fixed;
      sc.rho = detail::parse_list(rho, "rho").front();
    }
    sc.subsets = detail::get_or<Index>(body, "subsets", 1);
    sc.iterations = detail::get_or<Index>(body, "iterations", 20);
    sc.d_psi_mode = detail::parse_mode(body.get<std::string>(
        "d_psi_mode", cfg.experiment == "lasso" ? "max_curvature" : "huber"));
    sc.seed = cfg.seed;
    sc.validate();
    cfg.solvers.push_back(std::move(spec));
  }
  if (cfg.experiment != "spectral" && cfg.solvers.empty()) {
    throw ConfigError("config needs at least one [solver:NAME] section");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  return parse_config(is);
}

// ---------------------------------------------------------------------------
// LASSO.

struct LassoInstance {
  CompositeProblem problem;
  Vector x_true;
  Vector x0, u0, mu0;
};

/// iid N(0,1) matrix, k-sparse N(0,1) truth, noise of the given variance,
/// D_A = lambda_max(A'A) I, x0 = A^+ y (least norm), u0 = A x0, mu0 = y - u0.
inline LassoInstance make_lasso_instance(const LassoParams& prm, std::uint64_t seed) {
  if (prm.rows < 1 || prm.cols < 1) throw ConfigError("lasso: sizes must be positive");
  if (prm.sparsity < 0 || prm.sparsity > prm.cols) throw ConfigError("lasso: sparsity must lie in [0, cols]");
  if (!(prm.noise_variance >= 0.0) || !(prm.lambda >= 0.0)) throw ConfigError("lasso: noise and lambda must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix a(prm.rows, prm.cols);
  for (Index i = 0; i < prm.rows; ++i) {
    for (Index j = 0; j < prm.cols; ++j) a(i, j) = normal(rng);
  }
  std::vector<Index> idx(static_cast<std::size_t>(prm.cols));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < prm.sparsity; ++i) {
    std::uniform_int_distribution<Index> pick(i, prm.cols - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  LassoInstance inst;
  inst.x_true = Vector::Zero(prm.cols);
  for (Index i = 0; i < prm.sparsity; ++i) inst.x_true[idx[static_cast<std::size_t>(i)]] = normal(rng);
  Vector y = a * inst.x_true;
  const double sd = std::sqrt(prm.noise_variance);
  for (Index i = 0; i < prm.rows; ++i) y[i] += sd * normal(rng);

  inst.x0 = a.completeOrthogonalDecomposition().pseudoInverse() * y;
  auto op = std::make_shared<const DenseOperator>(a);
  inst.problem = make_problem(op, y, L1Prox{prm.lambda});
  inst.problem.d_a.entries = Vector::Constant(prm.cols, max_eigenvalue(*op, 1e-13, 100000));
  inst.problem.d_loss = inst.problem.d_a;
  inst.u0 = a * inst.x0;
  inst.mu0 = y - inst.u0;
  return inst;
}

struct BoundRow {
  Index K;
  double gap;
  double bound;
};

struct LassoRun {
  std::string name;
  std::string method;
  double alpha = 1.0;
  double rho = 1.0;
  BoundTerms terms;
  ConvergenceRecord record;   // k = iteration, with both gaps
  std::vector<BoundRow> bound;
  Vector x_final;
};

/// Runs a non-OS relaxed LALM on the instance, recording the ergodic gap of
/// the time-averaged (x, u) and the gap of the raw iterate at every K.
inline LassoRun run_lasso_solver(const LassoInstance& inst, const SaddlePointEstimate& saddle,
                                 const std::string& method, const SolverConfig& cfg, bool timing = false) {
  cfg.validate();
  const auto& p = inst.problem;
  const bool proposed = method == "proposed";
  if (!proposed && method != "simple") throw ConfigError("unknown lasso method '" + method + "'; valid: " + detail::join(lasso_methods()));
  const double rho0 = cfg.rho_at(0);
  LassoRun out;
  out.method = method;
  out.alpha = cfg.alpha;
  out.rho = rho0;
  const Vector d_psi = Vector::Zero(p.domain_dim());
  out.terms = proposed ? theorem2_terms(inst.x0, inst.u0, inst.mu0, saddle, d_psi, p.d_a.entries, rho0, cfg.alpha, p)
                       : theorem1_terms(inst.x0, inst.u0, inst.mu0, saddle, d_psi, p.d_a.entries, rho0, cfg.alpha, p);

  SolverState s = proposed ? init_practical_state(p, inst.x0, inst.u0, inst.mu0)
                           : init_al_state(p, inst.x0, inst.u0, inst.mu0);
  RunningAverage avg_x, avg_u, avg_ax;
  const auto start = std::chrono::steady_clock::now();
  {
    RecordRow r0;
    r0.k = 0;
    r0.cost = p.cost(s.x);
    r0.nonergodic_gap = duality_gap_with_ax(s.x, s.ax, s.u, saddle, p);
    out.record.rows.push_back(r0);
  }
  for (Index k = 1; k <= cfg.iterations; ++k) {
    const double rho = cfg.rho_at(k - 1);
    s = proposed ? lalm_proposed_practical_step(s, p, cfg.alpha, rho) : lalm_simple_relaxed_step(s, p, cfg.alpha, rho);
    avg_x.add(s.x);
    avg_u.add(s.u);
    avg_ax.add(s.ax);
    RecordRow row;
    row.k = k;
    row.rho = rho;
    row.cost = p.loss_value(s.ax) + p.prox_value(s.x);
    row.nonergodic_gap = duality_gap_with_ax(s.x, s.ax, s.u, saddle, p);
    const double eg = duality_gap_with_ax(avg_x.mean(), avg_ax.mean(), avg_u.mean(), saddle, p);
    row.ergodic_gap = eg;
    if (timing) row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.record.rows.push_back(row);
    out.bound.push_back({k, eg, out.terms.at(static_cast<double>(k))});
  }
  out.x_final = s.x;
  return out;
}

inline void write_bound_csv(std::ostream& os, const std::vector<BoundRow>& rows) {
  os << "K,gap,bound,ratio\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", static_cast<long>(r.K), r.gap, r.bound,
                  r.gap != 0.0 ? r.bound / r.gap : std::numeric_limits<double>::infinity());
    os << buf;
  }
}

struct LassoExperimentResult {
  LassoInstance instance;
  SaddlePointEstimate saddle;
  std::vector<LassoRun> runs;
};

namespace detail {

inline std::filesystem::path prepare_out(const std::string& dir) {
  std::filesystem::path out(dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace detail

/// Writes <name>.csv (gap curves) and <name>_bound.csv per solver.
inline LassoExperimentResult run_lasso_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.experiment != "lasso") throw ConfigError("run_lasso_experiment needs experiment type lasso");
  const auto out = detail::prepare_out(out_dir);
  LassoExperimentResult res;
  res.instance = make_lasso_instance(cfg.lasso, cfg.seed);
  res.saddle = estimate_saddle_fgm(res.instance.problem, res.instance.x0, cfg.lasso.reference_iterations);
  for (const auto& spec : cfg.solvers) {
    LassoRun run = run_lasso_solver(res.instance, res.saddle, spec.method, spec.config, cfg.timing);
    run.name = spec.name;
    auto csv = detail::open_out(out / (spec.name + ".csv"));
    run.record.write_csv(csv);
    auto bcsv = detail::open_out(out / (spec.name + "_bound.csv"));
    write_bound_csv(bcsv, run.bound);
    res.runs.push_back(std::move(run));
  }
  return res;
}

// ---------------------------------------------------------------------------
// CT.

struct CtRun {
  std::string name;
  RunResult result;
};

struct CtExperimentResult {
  CtScenario scenario;
  Vector x_init;
  Vector x_ref;
  std::vector<CtRun> runs;
};

inline RunResult run_ct_solver(const CompositeProblem& problem, const CtScenario& sc, const Vector& x0,
                               const std::string& method, const SolverConfig& cfg, const RunMonitor& monitor) {
  const SubsetSystem sub = make_ct_subsets(sc, cfg.subsets);
  if (method == "proposed") return os_relaxed_lalm_run(problem, sub, x0, cfg, monitor);
  if (method == "simple") return os_simple_relaxed_lalm_run(problem, sub, x0, cfg, monitor);
  if (method == "sqs") return os_sqs_run(problem, sub, x0, cfg, monitor);
  throw ConfigError("unknown ct method '" + method + "'; valid: " + detail::join(ct_methods()));
}

/// Reference by FGM-restart from the FBP image, then each configured solver.
/// Writes <name>.csv, <name>.pgm/.raw and <name>_diff.pgm per solver, plus
/// truth, fbp, reference and sinogram files.
inline CtExperimentResult run_ct_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.experiment != "ct") throw ConfigError("run_ct_experiment needs experiment type ct");
  const auto out = detail::prepare_out(out_dir);
  CtScenarioParams prm = cfg.ct.scenario;
  prm.seed = cfg.seed;
  CtExperimentResult res;
  res.scenario = make_ct_scenario(prm);
  const auto& sc = res.scenario;
  const ImageShape shape = sc.geometry.image;
  res.x_init = fbp_like_init(sc);
  const CompositeProblem reference_problem = build_ct_problem(sc, CurvatureMode::max_curvature);
  res.x_ref = fgm_restart_run(reference_problem, res.x_init, cfg.ct.reference_iterations);

  const double lo = cfg.ct.window_lo;
  const double hi = cfg.ct.window_hi;
  const double dw = cfg.ct.diff_window;
  write_pgm((out / "truth.pgm").string(), sc.x_true, shape, lo, hi);
  write_pgm((out / "fbp.pgm").string(), res.x_init, shape, lo, hi);
  write_pgm((out / "reference.pgm").string(), res.x_ref, shape, lo, hi);
  write_raw((out / "reference.raw").string(), res.x_ref, shape.nx, shape.ny);
  write_raw((out / "sinogram.raw").string(), sc.y, sc.geometry.num_bins, sc.geometry.num_views);

  for (const auto& spec : cfg.solvers) {
    const CompositeProblem problem = build_ct_problem(sc, spec.config.d_psi_mode);
    RunMonitor monitor;
    monitor.reference = res.x_ref;
    monitor.timing = cfg.timing;
    RunResult r = run_ct_solver(problem, sc, res.x_init, spec.method, spec.config, monitor);
    auto csv = detail::open_out(out / (spec.name + ".csv"));
    r.record.write_csv(csv);
    write_pgm((out / (spec.name + ".pgm")).string(), r.x, shape, lo, hi);
    write_raw((out / (spec.name + ".raw")).string(), r.x, shape.nx, shape.ny);
    write_pgm((out / (spec.name + "_diff.pgm")).string(), r.x - res.x_ref, shape, -dw, dw);
    res.runs.push_back({spec.name, std::move(r)});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Spectral analysis of the continuation rationale.

struct SpectralRow {
  double ratio;
  double alpha;
  double critical_rho;
  double discriminant_root;
  std::optional<double> damping_frequency;
  double alpha_sqrt_ratio;
};

struct EigenRow {
  double ratio;
  double alpha;
  double rho;
  double abs_eig1;
  double abs_eig2;
  double spectral_radius;
};

struct SpectralTables {
  std::vector<SpectralRow> summary;
  std::vector<EigenRow> eigen;
};

/// Writes spectral.csv and transition_eigenvalues.csv. L_A is normalized
/// to 1; every quantity depends only on the ratio lambda_1 / L_A.
inline SpectralTables analyze_spectral(const ExperimentConfig& cfg, const std::string& out_dir) {
  const auto& sp = cfg.spectral;
  for (double r : sp.ratios) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("spectral ratios must lie in (0, 1)");
  }
  SpectralTables t;
  for (double r : sp.ratios) {
    for (double a : sp.alphas) {
      SpectralRow row{r, a, critical_rho(r, 1.0), discriminant_root(r, 1.0, a), std::nullopt, a * std::sqrt(r)};
      try {
        row.damping_frequency = damping_frequency(r, 1.0, a, sp.rho_small);
      } catch (const RegimeError&) {
      }
      t.summary.push_back(row);
      for (double rho : sp.rhos) {
        const auto tm = transition_matrix(r, 1.0, rho, a);
        const auto [e1, e2] = tm.eigenvalues();
        t.eigen.push_back({r, a, rho, std::abs(e1), std::abs(e2), tm.spectral_radius()});
      }
    }
  }
  const auto out = detail::prepare_out(out_dir);
  auto os = detail::open_out(out / "spectral.csv");
  os << "ratio,alpha,critical_rho,discriminant_root,damping_frequency,alpha_sqrt_ratio\n";
  char buf[256];
  for (const auto& r : t.summary) {
    std::string damp;
    if (r.damping_frequency) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.damping_frequency);
      damp = buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,", r.ratio, r.alpha, r.critical_rho, r.discriminant_root);
    os << buf << damp;
    std::snprintf(buf, sizeof buf, ",%.17g\n", r.alpha_sqrt_ratio);
    os << buf;
  }
  auto es = detail::open_out(out / "transition_eigenvalues.csv");
  es << "ratio,alpha,rho,abs_eig1,abs_eig2,spectral_radius\n";
  for (const auto& r : t.eigen) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.ratio, r.alpha, r.rho, r.abs_eig1,
                  r.abs_eig2, r.spectral_radius);
    es << buf;
  }
  return t;
}

}  // namespace rlalm
