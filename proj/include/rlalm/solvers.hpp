#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "rlalm/analysis.hpp"

namespace rlalm {

// ---------------------------------------------------------------------------
// Configuration and state.

enum class RhoMode { fixed, continuation };

/// rho_0 = 1, rho_k = pi/(alpha(k+1)) sqrt(1 - (pi/(2 alpha (k+1)))^2).
inline double continuation_rho(Index k, double alpha) {
  if (k < 0) throw ConfigError("continuation_rho: k must be nonnegative");
  if (!(alpha > 0.0 && alpha < 2.0)) throw ConfigError("continuation_rho: alpha must lie in (0, 2)");
  if (k == 0) return 1.0;
  const double a = std::numbers::pi / (alpha * static_cast<double>(k + 1));
  const double t = 1.0 - 0.25 * a * a;
  if (t < 0.0) throw NumericalError("continuation_rho: schedule undefined for this alpha at k = " + std::to_string(k));
  return a * std::sqrt(t);
}

struct SolverConfig {
  double alpha = 1.999;
  RhoMode rho_mode = RhoMode::continuation;
  double rho = 1.0;  // used when rho_mode == fixed
  Index subsets = 1;
  Index iterations = 20;
  CurvatureMode d_psi_mode = CurvatureMode::huber;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 2.0)) throw ConfigError("alpha must lie in (0, 2)");
    if (rho_mode == RhoMode::fixed && !(rho > 0.0)) throw ConfigError("fixed rho must be positive");
    if (subsets < 1) throw ConfigError("number of subsets must be at least 1");
    if (iterations < 1) throw ConfigError("iterations must be at least 1");
  }
  /// Penalty used for subiteration k (k = 0 is the first).
  double rho_at(Index k) const { return rho_mode == RhoMode::fixed ? rho : continuation_rho(k, alpha); }
};

/// Iterate bundle shared by all step functions. Each form uses a subset of
/// the fields; unused ones stay empty.
struct SolverState {
  Vector x;
  Vector u;
  Vector mu;
  Vector v;   // literal form: copy of G^{1/2} x
  Vector nu;  // literal form: multiplier of v = G^{1/2} x
  Vector h;   // quadratic form
  Vector g;   // quadratic form: A'(u - y)
  Vector zeta;
  /// Practical form keeps h = h_domain - A' h_range so that the A' in eta
  /// fuses with the A' in gamma.
  Vector h_domain;
  Vector h_range;
  Vector ax;  // A x, carried between steps
  Index k = 0;
};

inline void check_finite(const SolverState& s) {
  for (const Vector* v : {&s.x, &s.u, &s.mu, &s.v, &s.nu, &s.h, &s.g, &s.zeta, &s.h_domain, &s.h_range}) {
    if (v->size() > 0 && !v->allFinite()) throw NumericalError("solver state became non-finite at step " + std::to_string(s.k));
  }
}

namespace detail {

inline void check_alpha_rho(double alpha, double rho) {
  if (!(alpha > 0.0 && alpha < 2.0)) throw ConfigError("alpha must lie in (0, 2)");
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
}

/// argmin phi(x) + <grad, x - x0> + 1/2 ||x - x0||^2_hess, with zero-curvature
/// pixels frozen at x0.
inline Vector prox_step(const CompositeProblem& p, const Vector& x0, const Vector& grad, const Vector& hess) {
  Vector z = x0;
  for (Index j = 0; j < z.size(); ++j) {
    if (hess[j] > 0.0) z[j] -= grad[j] / hess[j];
  }
  return p.prox(z, hess, x0);
}

inline const Vector& cached_ax(const SolverState& s, const CompositeProblem& p, Vector& storage) {
  if (s.ax.size() == p.range_dim()) return s.ax;
  storage = p.op->apply(s.x);
  return storage;
}

inline void relax_u_mu(SolverState& out, const SolverState& s, const CompositeProblem& p, double alpha, double rho) {
  const Vector r = alpha * out.ax + (1.0 - alpha) * s.u;
  out.u = p.loss_u_update(r, s.mu, rho);
  out.mu = s.mu - rho * (r - out.u);
}

inline void require_al_state(const SolverState& s, const CompositeProblem& p) {
  if (s.x.size() != p.domain_dim()) throw ShapeError("state x does not match the problem domain");
  if (s.u.size() != p.range_dim() || s.mu.size() != p.range_dim()) {
    throw ShapeError("state u and mu must match the problem range");
  }
}

/// Exact minimizer of 1/2 x'Px - q'x + phi(x) for small dense P.
///
/// Coordinate descent to stagnation, then a Newton solve on the active
/// structure (support for l1, free set for a box) when that structure is
/// self-consistent, which brings the answer to rounding level.
inline Vector solve_dense_prox_qp(const Matrix& P, const Vector& q, const ProxPart& part, Vector x) {
  const Index n = P.rows();
  for (Index j = 0; j < n; ++j) {
    if (!(P(j, j) > 0.0)) throw NumericalError("x-subproblem normal matrix is singular");
  }
  const auto* l1 = std::get_if<L1Prox>(&part);
  const auto* box = std::get_if<BoxProx>(&part);
  auto coord = [&](Index j, double c) {
    double v = c / P(j, j);
    if (l1) {
      const double m = std::abs(c) - l1->lambda;
      v = m > 0.0 ? std::copysign(m, c) / P(j, j) : 0.0;
    } else if (box) {
      v = std::min(std::max(v, box->lower), box->upper);
    }
    return v;
  };
  Vector px = P * x;
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double change = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double c = q[j] - (px[j] - P(j, j) * x[j]);
      const double nv = coord(j, c);
      const double d = nv - x[j];
      if (d != 0.0) {
        px += d * P.col(j);
        x[j] = nv;
        change = std::max(change, std::abs(d));
      }
    }
    if (change <= 1e-15 * std::max(1.0, x.lpNorm<Eigen::Infinity>())) break;
  }

  std::vector<Index> active;
  for (Index j = 0; j < n; ++j) {
    const bool free = l1 ? x[j] != 0.0 : (!box || (x[j] > box->lower && x[j] < box->upper));
    if (free) active.push_back(j);
  }
  if (active.empty()) return x;
  const Index na = static_cast<Index>(active.size());
  Matrix pa(na, na);
  Vector rhs(na);
  for (Index a = 0; a < na; ++a) {
    const Index ja = active[static_cast<std::size_t>(a)];
    rhs[a] = q[ja];
    if (l1) rhs[a] -= l1->lambda * (x[ja] > 0.0 ? 1.0 : -1.0);
    for (Index b = 0; b < na; ++b) pa(a, b) = P(ja, active[static_cast<std::size_t>(b)]);
    if (!l1) {
      for (Index j = 0; j < n; ++j) {
        if (std::find(active.begin(), active.end(), j) == active.end()) rhs[a] -= P(ja, j) * x[j];
      }
    }
  }
  Eigen::LLT<Matrix> llt(pa);
  if (llt.info() != Eigen::Success) return x;
  const Vector xa = llt.solve(rhs);
  Vector candidate = x;
  for (Index a = 0; a < na; ++a) {
    const Index ja = active[static_cast<std::size_t>(a)];
    if (l1 && (xa[a] > 0.0) != (x[ja] > 0.0)) return x;
    if (box && (xa[a] < box->lower || xa[a] > box->upper)) return x;
    candidate[ja] = xa[a];
  }
  return candidate;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Initializers.

/// State for the AL forms that carry (x, u, mu).
inline SolverState init_al_state(const CompositeProblem& p, const Vector& x0, const Vector& u0, const Vector& mu0) {
  SolverState s;
  s.x = x0;
  s.u = u0;
  s.mu = mu0;
  detail::require_al_state(s, p);
  s.ax = p.op->apply(x0);
  return s;
}

/// Literal form: v0 = G^{1/2} x0, nu0 = 0.
inline SolverState init_literal_state(const CompositeProblem& p, const Vector& x0, const Vector& u0,
                                      const Vector& mu0, const Matrix& g_sqrt) {
  SolverState s = init_al_state(p, x0, u0, mu0);
  if (g_sqrt.rows() != p.domain_dim() || g_sqrt.cols() != p.domain_dim()) {
    throw ShapeError("G^{1/2} must be square of size domain_dim");
  }
  s.v = g_sqrt * x0;
  s.nu = Vector::Zero(p.domain_dim());
  return s;
}

/// Practical form with h0 = D_A x0 - A'(A x0 - y).
inline SolverState init_practical_state(const CompositeProblem& p, const Vector& x0, const Vector& u0,
                                        const Vector& mu0) {
  SolverState s = init_al_state(p, x0, u0, mu0);
  s.h_domain = p.d_a.entries.cwiseProduct(x0);
  s.h_range = s.ax - p.data;
  return s;
}

/// Practical form with an explicit h0.
inline SolverState init_practical_state(const CompositeProblem& p, const Vector& x0, const Vector& u0,
                                        const Vector& mu0, const Vector& h0) {
  SolverState s = init_al_state(p, x0, u0, mu0);
  if (h0.size() != p.domain_dim()) throw ShapeError("h0 must match the problem domain");
  s.h_domain = h0;
  s.h_range = Vector::Zero(p.range_dim());
  return s;
}

/// h of the practical form, which is stored in split form. Costs one A'.
inline Vector materialize_h(const SolverState& s, const CompositeProblem& p) {
  return s.h_domain - p.op->apply_adjoint(s.h_range);
}

/// Quadratic form: zeta0 = A'(A x0 - y), g0 = zeta0, h0 = D_A x0 - zeta0.
inline SolverState init_quadratic_state(const CompositeProblem& p, const Vector& x0) {
  if (p.weights) throw ConfigError("quadratic form needs an unweighted loss; apply the W^{1/2} substitution first");
  if (x0.size() != p.domain_dim()) throw ShapeError("x0 does not match the problem domain");
  SolverState s;
  s.x = x0;
  s.zeta = p.op->apply_adjoint(p.op->apply(x0) - p.data);
  s.g = s.zeta;
  s.h = p.d_a.entries.cwiseProduct(x0) - s.zeta;
  return s;
}

// ---------------------------------------------------------------------------
// Single steps.

/// Relaxed AL / ADMM with an exact x-subproblem (small dense problems only).
inline SolverState relaxed_al_step(const SolverState& s, const CompositeProblem& p, double alpha, double rho) {
  detail::check_alpha_rho(alpha, rho);
  detail::require_al_state(s, p);
  if (p.smooth_part) throw ConfigError("relaxed_al_step solves the x-subproblem exactly and needs psi = 0");
  const Matrix a = to_dense(*p.op);
  const Matrix P = rho * a.transpose() * a;
  const Vector q = a.transpose() * (s.mu + rho * s.u);
  SolverState out = s;
  if (std::holds_alternative<NoProx>(p.prox_part)) {
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
      throw NumericalError("x-subproblem normal matrix is singular");
    }
    out.x = llt.solve(q);
  } else {
    out.x = detail::solve_dense_prox_qp(P, q, p.prox_part, s.x);
  }
  out.ax = a * out.x;
  detail::relax_u_mu(out, s, p, alpha, rho);
  ++out.k;
  check_finite(out);
  return out;
}

/// LALM with simple relaxation: explicit G-weighted proximity term, Hessian
/// rho D_A + D_psi.
inline SolverState lalm_simple_relaxed_step(const SolverState& s, const CompositeProblem& p, double alpha,
                                            double rho) {
  detail::check_alpha_rho(alpha, rho);
  detail::require_al_state(s, p);
  Vector storage;
  const Vector& ax = detail::cached_ax(s, p, storage);
  const Vector grad = p.smooth_gradient(s.x) + p.op->apply_adjoint(rho * (ax - s.u) - s.mu);
  const Vector hess = rho * p.d_a.entries + p.smooth_majorizer(s.x);
  SolverState out = s;
  out.x = detail::prox_step(p, s.x, grad, hess);
  out.ax = p.op->apply(out.x);
  detail::relax_u_mu(out, s, p, alpha, rho);
  ++out.k;
  check_finite(out);
  return out;
}

/// Symmetric square root of G = D_A - A'A from a dense eigendecomposition.
inline Matrix majorizer_gap_sqrt(const CompositeProblem& p, double tol = 1e-8) {
  const Matrix a = to_dense(*p.op);
  Matrix g = -a.transpose() * a;
  g.diagonal() += p.d_a.entries;
  Eigen::SelfAdjointEigenSolver<Matrix> es(g);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of D_A - A'A failed");
  const double min_eig = es.eigenvalues().minCoeff();
  if (min_eig < -tol) {
    throw MajorizationError("D_A - A'A has eigenvalue " + std::to_string(min_eig) + ", D_A does not majorize A'A");
  }
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Proposed relaxation with the redundant constraint v = G^{1/2} x kept explicit.
inline SolverState lalm_proposed_literal_step(const SolverState& s, const CompositeProblem& p, double alpha,
                                              double rho, const Matrix& g_sqrt) {
  detail::check_alpha_rho(alpha, rho);
  detail::require_al_state(s, p);
  if (g_sqrt.rows() != p.domain_dim() || g_sqrt.cols() != p.domain_dim()) {
    throw ShapeError("G^{1/2} must be square of size domain_dim");
  }
  if (s.v.size() != p.domain_dim() || s.nu.size() != p.domain_dim()) {
    throw ShapeError("literal form needs v and nu; use init_literal_state");
  }
  Vector storage;
  const Vector& ax = detail::cached_ax(s, p, storage);
  const Vector gx = g_sqrt * s.x;
  const Vector grad = p.smooth_gradient(s.x) + p.op->apply_adjoint(rho * (ax - s.u) - s.mu) +
                      g_sqrt * (rho * (gx - s.v) - s.nu);
  const Vector hess = rho * p.d_a.entries + p.smooth_majorizer(s.x);
  SolverState out = s;
  out.x = detail::prox_step(p, s.x, grad, hess);
  out.ax = p.op->apply(out.x);
  detail::relax_u_mu(out, s, p, alpha, rho);
  const Vector rv = alpha * (g_sqrt * out.x) + (1.0 - alpha) * s.v;
  out.v = rv - s.nu / rho;
  out.nu = s.nu - rho * (rv - out.v);
  ++out.k;
  check_finite(out);
  return out;
}

/// Proposed relaxation without G^{1/2}: one A and one A' per step.
///
/// gamma = rho A'(u - y + mu/rho) + rho h with h = h_domain - A' h_range, so
/// gamma = A'[rho(u - y) + mu - rho h_range] + rho h_domain.
inline SolverState lalm_proposed_practical_step(const SolverState& s, const CompositeProblem& p, double alpha,
                                                double rho) {
  detail::check_alpha_rho(alpha, rho);
  detail::require_al_state(s, p);
  if (s.h_domain.size() != p.domain_dim() || s.h_range.size() != p.range_dim()) {
    throw ShapeError("practical form needs h; use init_practical_state");
  }
  const Vector& d = p.d_a.entries;
  const Vector gamma = p.op->apply_adjoint(rho * (s.u - p.data) + s.mu - rho * s.h_range) + rho * s.h_domain;
  const Vector grad = p.smooth_gradient(s.x) + rho * d.cwiseProduct(s.x) - gamma;
  const Vector hess = rho * d + p.smooth_majorizer(s.x);
  SolverState out = s;
  out.x = detail::prox_step(p, s.x, grad, hess);
  out.ax = p.op->apply(out.x);
  detail::relax_u_mu(out, s, p, alpha, rho);
  out.h_domain = alpha * d.cwiseProduct(out.x) + (1.0 - alpha) * s.h_domain;
  out.h_range = alpha * (out.ax - p.data) + (1.0 - alpha) * s.h_range;
  ++out.k;
  check_finite(out);
  return out;
}

/// Proposed relaxation specialized to g_y(z) = 1/2 ||z - y||^2.
inline SolverState lalm_proposed_quadratic_step(const SolverState& s, const CompositeProblem& p, double alpha,
                                                double rho) {
  detail::check_alpha_rho(alpha, rho);
  if (p.weights) throw ConfigError("quadratic form needs an unweighted loss; apply the W^{1/2} substitution first");
  if (s.x.size() != p.domain_dim() || s.g.size() != p.domain_dim() || s.h.size() != p.domain_dim()) {
    throw ShapeError("quadratic form needs x, g and h; use init_quadratic_state");
  }
  const Vector& d = p.d_a.entries;
  const Vector gamma = (rho - 1.0) * s.g + rho * s.h;
  const Vector grad = p.smooth_gradient(s.x) + rho * d.cwiseProduct(s.x) - gamma;
  const Vector hess = rho * d + p.smooth_majorizer(s.x);
  SolverState out = s;
  out.x = detail::prox_step(p, s.x, grad, hess);
  out.zeta = p.op->apply_adjoint(p.op->apply(out.x) - p.data);
  out.g = rho / (rho + 1.0) * (alpha * out.zeta + (1.0 - alpha) * s.g) + s.g / (rho + 1.0);
  out.h = alpha * (d.cwiseProduct(out.x) - out.zeta) + (1.0 - alpha) * s.h;
  ++out.k;
  check_finite(out);
  return out;
}

// ---------------------------------------------------------------------------
// Convergence records.

struct RecordRow {
  Index k = 0;
  std::optional<double> rho;
  std::optional<double> cost;
  std::optional<double> rms_hu;
  std::optional<double> ergodic_gap;
  std::optional<double> nonergodic_gap;
  std::optional<double> wall_seconds;
};

struct ConvergenceRecord {
  std::vector<RecordRow> rows;

  static constexpr const char* kHeader = "k,rho,cost,rms_hu,ergodic_gap,nonergodic_gap,wall_seconds";

  void write_csv(std::ostream& os) const {
    auto field = [&](const std::optional<double>& v) {
      os << ',';
      if (!v) return;
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", *v);
      os << buf;
    };
    os << kHeader << '\n';
    for (const auto& r : rows) {
      os << r.k;
      field(r.rho);
      field(r.cost);
      field(r.rms_hu);
      field(r.ergodic_gap);
      field(r.nonergodic_gap);
      field(r.wall_seconds);
      os << '\n';
    }
  }
  std::string to_csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }
  /// Row with the given k; throws if absent.
  const RecordRow& at(Index k) const {
    for (const auto& r : rows) {
      if (r.k == k) return r;
    }
    throw ConfigError("record has no row k = " + std::to_string(k));
  }
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, ConvergenceRecord record)
      : Error("divergence", what), record_(std::move(record)) {}
  const ConvergenceRecord& record() const noexcept { return record_; }

 private:
  ConvergenceRecord record_;
};

// ---------------------------------------------------------------------------
// Ordered subsets.

/// View j goes to subset j mod M. Subsets are visited in index order.
inline std::vector<std::vector<Index>> partition_subsets(Index num_views, Index M) {
  if (M < 1) throw ConfigError("number of subsets must be at least 1");
  if (M > num_views) throw ConfigError("number of subsets exceeds number of views");
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(M));
  for (Index j = 0; j < num_views; ++j) out[static_cast<std::size_t>(j % M)].push_back(j);
  return out;
}

/// Data term split into row blocks: L(x) = sum_m 1/2 ||A_m x - y_m||^2.
struct SubsetSystem {
  std::vector<OperatorPtr> ops;
  std::vector<Vector> data;

  Index size() const { return static_cast<Index>(ops.size()); }

  void validate(Index domain_dim) const {
    if (ops.empty() || ops.size() != data.size()) throw ConfigError("subset system needs one data block per operator");
    for (std::size_t m = 0; m < ops.size(); ++m) {
      if (ops[m]->domain_dim() != domain_dim) throw ShapeError("subset operator domain does not match the image");
      if (ops[m]->range_dim() != data[m].size()) throw ShapeError("subset data length does not match its operator");
    }
  }

  /// M A_m'(A_m x - y_m).
  Vector scaled_gradient(Index m, const Vector& x) const {
    const auto& op = *ops[static_cast<std::size_t>(m)];
    return static_cast<double>(size()) * op.apply_adjoint(op.apply(x) - data[static_cast<std::size_t>(m)]);
  }
};

inline SubsetSystem single_subset(const CompositeProblem& p) {
  if (p.weights) throw ConfigError("subset system needs an unweighted loss; apply the W^{1/2} substitution first");
  return SubsetSystem{{p.op}, {p.data}};
}

/// What to measure while a runner iterates.
struct RunMonitor {
  std::optional<Vector> reference;
  std::optional<Vector> mask;
  double hu_scale = 1.0;
  bool record_cost = true;
  bool timing = false;
  double divergence_factor = 10.0;
  /// Called with (k, x) after every recorded row, including k = 0.
  std::function<void(Index, const Vector&)> observer;
};

struct RunResult {
  Vector x;
  ConvergenceRecord record;
};

enum class OsMethod { proposed, simple, sqs };

namespace detail {

class Recorder {
 public:
  Recorder(const CompositeProblem& p, const RunMonitor& m) : p_(p), m_(m), start_(std::chrono::steady_clock::now()) {}

  void add(Index k, std::optional<double> rho, const Vector& x) {
    RecordRow row;
    row.k = k;
    row.rho = rho;
    if (m_.record_cost) {
      const double c = p_.cost(x);
      row.cost = c;
      if (!initial_cost_) initial_cost_ = c;
      if (!std::isfinite(c) || (*initial_cost_ > 0.0 && c > m_.divergence_factor * *initial_cost_)) {
        record_.rows.push_back(row);
        throw DivergenceError("cost " + std::to_string(c) + " exceeds " + std::to_string(m_.divergence_factor) +
                                  "x the initial cost at subiteration " + std::to_string(k),
                              record_);
      }
    }
    if (m_.reference) row.rms_hu = rms_difference(x, *m_.reference, m_.mask, m_.hu_scale);
    if (m_.timing) {
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    record_.rows.push_back(row);
    if (m_.observer) m_.observer(k, x);
  }
  ConvergenceRecord take() { return std::move(record_); }

 private:
  const CompositeProblem& p_;
  const RunMonitor& m_;
  std::chrono::steady_clock::time_point start_;
  std::optional<double> initial_cost_;
  ConvergenceRecord record_;
};

inline RunResult os_run(OsMethod method, const CompositeProblem& p, const SubsetSystem& sub, const Vector& x0,
                        const SolverConfig& cfg, const RunMonitor& monitor) {
  cfg.validate();
  if (method != OsMethod::sqs && cfg.alpha < 1.0) throw ConfigError("OS-LALM runners need 1 <= alpha < 2");
  if (p.weights) throw ConfigError("OS runners need an unweighted loss; apply the W^{1/2} substitution first");
  sub.validate(p.domain_dim());
  if (sub.size() != cfg.subsets) throw ConfigError("config subsets does not match the subset system");
  if (x0.size() != p.domain_dim()) throw ShapeError("x0 does not match the problem domain");

  const Index M = sub.size();
  const double alpha = cfg.alpha;
  const Vector& d = p.d_a.entries;
  CompositeProblem local = p;
  local.d_psi_mode = cfg.d_psi_mode;

  Vector x = x0;
  Vector zeta, g, h;
  if (method != OsMethod::sqs) {
    zeta = sub.scaled_gradient(M - 1, x);
    g = zeta;
    if (method == OsMethod::proposed) h = d.cwiseProduct(x) - zeta;
  }
  Recorder rec(local, monitor);
  rec.add(0, std::nullopt, x);

  Index k = 0;
  for (Index it = 0; it < cfg.iterations; ++it) {
    for (Index m = 0; m < M; ++m) {
      const double rho = cfg.rho_at(k);
      const Vector grad_r = local.smooth_gradient(x);
      const Vector d_r = local.smooth_majorizer(x);
      Vector s;
      Vector denom;
      switch (method) {
        case OsMethod::proposed:
          s = rho * (d.cwiseProduct(x) - h) + (1.0 - rho) * g;
          denom = rho * d + d_r;
          break;
        case OsMethod::simple:
          s = rho * zeta + (1.0 - rho) * g;
          denom = rho * d + d_r;
          break;
        case OsMethod::sqs:
          s = sub.scaled_gradient(m, x);
          denom = d + d_r;
          break;
      }
      Vector x_new = prox_step(local, x, s + grad_r, denom);
      if (method != OsMethod::sqs) {
        Vector zeta_new = sub.scaled_gradient(m, x_new);
        g = rho / (rho + 1.0) * (alpha * zeta_new + (1.0 - alpha) * g) + g / (rho + 1.0);
        if (method == OsMethod::proposed) h = alpha * (d.cwiseProduct(x_new) - zeta_new) + (1.0 - alpha) * h;
        zeta = std::move(zeta_new);
      }
      x = std::move(x_new);
      if (!x.allFinite()) throw NumericalError("iterate became non-finite at subiteration " + std::to_string(k + 1));
      ++k;
      rec.add(k, method == OsMethod::sqs ? std::nullopt : std::optional<double>(rho), x);
    }
  }
  return {x, rec.take()};
}

}  // namespace detail

/// Proposed (over-)relaxed OS-LALM. Rows are recorded per subiteration, k
/// counting subiterations (iteration n ends at k = n M).
inline RunResult os_relaxed_lalm_run(const CompositeProblem& p, const SubsetSystem& subsets, const Vector& x0,
                                     const SolverConfig& cfg, const RunMonitor& monitor = {}) {
  return detail::os_run(OsMethod::proposed, p, subsets, x0, cfg, monitor);
}

/// Simple (over-)relaxed OS-LALM: no h recursion.
inline RunResult os_simple_relaxed_lalm_run(const CompositeProblem& p, const SubsetSystem& subsets, const Vector& x0,
                                            const SolverConfig& cfg, const RunMonitor& monitor = {}) {
  return detail::os_run(OsMethod::simple, p, subsets, x0, cfg, monitor);
}

/// OS-SQS baseline; alpha and rho are ignored.
inline RunResult os_sqs_run(const CompositeProblem& p, const SubsetSystem& subsets, const Vector& x0,
                            const SolverConfig& cfg, const RunMonitor& monitor = {}) {
  return detail::os_run(OsMethod::sqs, p, subsets, x0, cfg, monitor);
}

// ---------------------------------------------------------------------------
// Reference solver.

/// FISTA in the metric D = D_L + D_psi(max curvature) with function-value
/// restart: a step that raises the cost is discarded and momentum is reset,
/// so the accepted cost sequence never increases.
inline Vector fgm_restart_run(const CompositeProblem& p, const Vector& x0, Index iterations,
                              std::vector<double>* cost_trace = nullptr) {
  if (x0.size() != p.domain_dim()) throw ShapeError("x0 does not match the problem domain");
  if (iterations < 0) throw ConfigError("iterations must be nonnegative");
  const Vector d = p.d_loss.entries + p.d_psi_max.entries;
  auto weighted = [&](const Vector& r) { return p.weights ? Vector(p.weights->cwiseProduct(r)) : r; };
  auto full_cost = [&](const Vector& x, const Vector& ax) {
    return p.loss_value(ax) + p.prox_value(x) + p.smooth_value(x);
  };

  Vector x = x0;
  if (!std::isfinite(p.prox_value(x))) x = p.prox(x0, Vector::Ones(x0.size()), x0);
  Vector ax = p.op->apply(x);
  double fx = full_cost(x, ax);
  Vector z = x;
  Vector az = ax;
  double t = 1.0;
  bool momentum = false;
  if (cost_trace) cost_trace->assign(1, fx);

  for (Index it = 0; it < iterations; ++it) {
    Vector grad;
    if (p.smooth_part) {
      grad = p.op->apply_adjoint(weighted(az - p.data)) + p.smooth_gradient(z);
    } else {
      grad = p.op->apply_adjoint(weighted(az - p.data));
    }
    Vector x_new = detail::prox_step(p, z, grad, d);
    Vector ax_new = p.op->apply(x_new);
    const double f_new = full_cost(x_new, ax_new);
    if (f_new > fx) {
      if (momentum) {
        t = 1.0;
        z = x;
        az = ax;
        momentum = false;
      }
      if (cost_trace) cost_trace->push_back(fx);
      continue;
    }
    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_new;
    z = x_new + beta * (x_new - x);
    az = ax_new + beta * (ax_new - ax);
    momentum = beta != 0.0;
    x = std::move(x_new);
    ax = std::move(ax_new);
    fx = f_new;
    t = t_new;
    if (cost_trace) cost_trace->push_back(fx);
  }
  return x;
}

/// Refines an l1-regularized least-squares estimate by solving the optimality
/// conditions on its support. Returns the input when the support solve is
/// inconsistent (sign flips or violated off-support conditions).
inline Vector polish_l1_support(const CompositeProblem& p, const Vector& x) {
  const auto* l1 = std::get_if<L1Prox>(&p.prox_part);
  if (!l1 || p.smooth_part) return x;
  const Matrix a = to_dense(*p.op);
  const Vector w = p.weights ? *p.weights : Vector::Ones(p.range_dim());
  std::vector<Index> support;
  for (Index j = 0; j < x.size(); ++j) {
    if (x[j] != 0.0) support.push_back(j);
  }
  if (support.empty()) return x;
  const Index ns = static_cast<Index>(support.size());
  Matrix as(a.rows(), ns);
  Vector sign(ns);
  for (Index i = 0; i < ns; ++i) {
    const Index j = support[static_cast<std::size_t>(i)];
    as.col(i) = a.col(j);
    sign[i] = x[j] > 0.0 ? 1.0 : -1.0;
  }
  const Matrix normal = as.transpose() * w.asDiagonal() * as;
  Eigen::LLT<Matrix> llt(normal);
  if (llt.info() != Eigen::Success) return x;
  const Vector xs = llt.solve(as.transpose() * w.cwiseProduct(p.data) - l1->lambda * sign);
  Vector out = Vector::Zero(x.size());
  for (Index i = 0; i < ns; ++i) {
    if ((xs[i] > 0.0) != (sign[i] > 0.0)) return x;
    out[support[static_cast<std::size_t>(i)]] = xs[i];
  }
  const Vector corr = a.transpose() * w.cwiseProduct(p.data - a * out);
  for (Index j = 0; j < x.size(); ++j) {
    if (out[j] == 0.0 && std::abs(corr[j]) > l1->lambda * (1.0 + 1e-9)) return x;
  }
  return p.cost(out) <= p.cost(x) ? out : x;
}

/// Saddle estimate from a long FGM-restart run, support-polished for l1.
inline SaddlePointEstimate estimate_saddle_fgm(const CompositeProblem& p, const Vector& x0, Index iterations) {
  Vector x = fgm_restart_run(p, x0, iterations);
  x = polish_l1_support(p, x);
  return saddle_from_primal(p, std::move(x), SaddleSource::fgm_restart);
}

}  // namespace rlalm
