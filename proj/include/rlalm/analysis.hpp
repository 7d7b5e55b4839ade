#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/tools/roots.hpp>

#include "rlalm/problem.hpp"

namespace rlalm {

// ---------------------------------------------------------------------------
// Duality gap and bounds.

enum class SaddleSource { dense_kkt, fgm_restart };

/// (x̂, û, μ̂) of the Lagrangian minimax problem.
struct SaddlePointEstimate {
  Vector x_hat;
  Vector u_hat;
  Vector mu_hat;
  SaddleSource source = SaddleSource::fgm_restart;
};

/// Builds û = Ax̂ and μ̂ from u-stationarity of L = f - <μ, Ax - u>,
/// i.e. μ̂ = -∇g_y(û) = W(y - û).
inline SaddlePointEstimate saddle_from_primal(const CompositeProblem& problem, Vector x_hat,
                                              SaddleSource source) {
  SaddlePointEstimate s;
  s.u_hat = problem.op->apply(x_hat);
  const Vector r = problem.data - s.u_hat;
  s.mu_hat = problem.weights ? Vector(problem.weights->cwiseProduct(r)) : r;
  s.x_hat = std::move(x_hat);
  s.source = source;
  return s;
}

/// [f(x,u) - f(x̂,û)] - <μ̂, Ax - u>, with Ax supplied by the caller.
inline double duality_gap_with_ax(const Vector& x, const Vector& ax, const Vector& u,
                                  const SaddlePointEstimate& saddle, const CompositeProblem& problem) {
  return problem.split_cost(x, u) - problem.split_cost(saddle.x_hat, saddle.u_hat) - saddle.mu_hat.dot(ax - u);
}

/// The gap does not involve the multiplier of w, only μ̂.
inline double duality_gap(const Vector& x, const Vector& u, const SaddlePointEstimate& saddle,
                          const CompositeProblem& problem) {
  return duality_gap_with_ax(x, problem.op->apply(x), u, saddle, problem);
}

/// Mean of iterates 1..K of `history` (history[0] is iterate 1).
inline Vector ergodic_average(const std::vector<Vector>& history, std::size_t K) {
  if (K == 0) throw ConfigError("ergodic_average: K must be positive");
  if (K > history.size()) throw ConfigError("ergodic_average: K exceeds history length");
  Vector acc = history[0];
  for (std::size_t k = 1; k < K; ++k) acc += history[k];
  return acc / static_cast<double>(K);
}

/// Running mean, so gaps at every K cost O(n) each.
class RunningAverage {
 public:
  void add(const Vector& v) {
    if (count_ == 0) {
      sum_ = v;
    } else {
      sum_ += v;
    }
    ++count_;
  }
  std::size_t count() const { return count_; }
  Vector mean() const {
    if (count_ == 0) throw ConfigError("running average is empty");
    return sum_ / static_cast<double>(count_);
  }

 private:
  Vector sum_;
  std::size_t count_ = 0;
};

struct BoundTerms {
  double a = 0.0;  // 1/2 ||x0 - x̂||^2_{D_psi}
  double b = 0.0;  // linearization term (divided by alpha for the proposed method)
  double c = 0.0;  // alpha-dependent (u, mu) term
  double constant() const { return a + b + c; }
  double at(double K) const { return constant() / K; }
};

namespace detail {

inline BoundTerms bound_terms(const Vector& x0, const Vector& u0, const Vector& mu0,
                              const SaddlePointEstimate& saddle, const Vector& d_psi, const Vector& d_a,
                              double rho, double alpha, const CompositeProblem& problem) {
  if (!(rho > 0.0)) throw ConfigError("bound: rho must be positive");
  if (!(alpha > 0.0 && alpha < 2.0)) throw ConfigError("bound: alpha must lie in (0, 2)");
  const Vector e = x0 - saddle.x_hat;
  BoundTerms t;
  t.a = 0.5 * e.dot(d_psi.cwiseProduct(e));
  t.b = 0.5 * rho * (e.dot(d_a.cwiseProduct(e)) - problem.op->apply(e).squaredNorm());
  const double s = std::sqrt(rho) * (u0 - saddle.u_hat).norm() + (mu0 - saddle.mu_hat).norm() / std::sqrt(rho);
  t.c = s * s / (2.0 * alpha);
  return t;
}

}  // namespace detail

/// Constants of the simple-relaxation bound; the bound at K is `at(K)`.
inline BoundTerms theorem1_terms(const Vector& x0, const Vector& u0, const Vector& mu0,
                                 const SaddlePointEstimate& saddle, const Vector& d_psi, const Vector& d_a,
                                 double rho, double alpha, const CompositeProblem& problem) {
  return detail::bound_terms(x0, u0, mu0, saddle, d_psi, d_a, rho, alpha, problem);
}

/// As theorem1_terms but with the linearization term divided by alpha.
inline BoundTerms theorem2_terms(const Vector& x0, const Vector& u0, const Vector& mu0,
                                 const SaddlePointEstimate& saddle, const Vector& d_psi, const Vector& d_a,
                                 double rho, double alpha, const CompositeProblem& problem) {
  BoundTerms t = detail::bound_terms(x0, u0, mu0, saddle, d_psi, d_a, rho, alpha, problem);
  t.b /= alpha;
  return t;
}

inline double theorem1_bound(double K, const Vector& x0, const Vector& u0, const Vector& mu0,
                             const SaddlePointEstimate& saddle, const Vector& d_psi, const Vector& d_a, double rho,
                             double alpha, const CompositeProblem& problem) {
  if (!(K > 0.0)) throw ConfigError("bound: K must be positive");
  return theorem1_terms(x0, u0, mu0, saddle, d_psi, d_a, rho, alpha, problem).at(K);
}

inline double theorem2_bound(double K, const Vector& x0, const Vector& u0, const Vector& mu0,
                             const SaddlePointEstimate& saddle, const Vector& d_psi, const Vector& d_a, double rho,
                             double alpha, const CompositeProblem& problem) {
  if (!(K > 0.0)) throw ConfigError("bound: K must be positive");
  return theorem2_terms(x0, u0, mu0, saddle, d_psi, d_a, rho, alpha, problem).at(K);
}

// ---------------------------------------------------------------------------
// Second-order recursion of one eigencomponent of the quadratic-loss form
// applied to 1/2 ||Ax||^2 with D_A = L_A I.

struct TransitionMatrix2x2 {
  double t11 = 0.0, t12 = 0.0, t21 = 0.0, t22 = 0.0;
  double lambda = 0.0, lipschitz = 0.0, rho = 0.0, alpha = 0.0;

  double trace() const { return t11 + t22; }
  double det() const { return t11 * t22 - t12 * t21; }
  double discriminant() const { return trace() * trace() - 4.0 * det(); }
  std::pair<std::complex<double>, std::complex<double>> eigenvalues() const {
    const std::complex<double> root = std::sqrt(std::complex<double>(discriminant(), 0.0));
    return {0.5 * (trace() + root), 0.5 * (trace() - root)};
  }
  double spectral_radius() const {
    const auto [a, b] = eigenvalues();
    return std::max(std::abs(a), std::abs(b));
  }
};

/// Acts on (g_i, h_i) of one eigencomponent.
inline TransitionMatrix2x2 transition_matrix(double lambda_i, double L_A, double rho, double alpha) {
  if (!(lambda_i > 0.0)) throw ConfigError("transition_matrix: lambda_i must be positive");
  if (lambda_i > L_A) throw ConfigError("transition_matrix: lambda_i exceeds L_A");
  if (!(rho > 0.0)) throw ConfigError("transition_matrix: rho must be positive");
  TransitionMatrix2x2 t;
  const double inv = 1.0 / (rho * L_A);
  const double a = alpha * rho * lambda_i / (rho + 1.0);
  t.t11 = a * inv * (rho - 1.0) + ((1.0 - alpha) * rho + 1.0) / (rho + 1.0);
  t.t12 = a * inv * rho;
  t.t21 = alpha * (L_A - lambda_i) * inv * (rho - 1.0);
  t.t22 = alpha * (L_A - lambda_i) * inv * rho + (1.0 - alpha);
  t.lambda = lambda_i;
  t.lipschitz = L_A;
  t.rho = rho;
  t.alpha = alpha;
  return t;
}

/// rho at which the two eigenvalues of the slowest component coalesce.
inline double critical_rho(double lambda_1, double L_A) {
  if (!(lambda_1 > 0.0) || lambda_1 > L_A) throw ConfigError("critical_rho: need 0 < lambda_1 <= L_A");
  const double r = lambda_1 / L_A;
  return 2.0 * std::sqrt(r * (1.0 - r));
}

/// Numeric root of trace^2 - 4 det in rho, found without the closed form:
/// a log-spaced scan over [rho_lo, rho_hi] brackets the first sign change,
/// which TOMS 748 then refines to full precision.
inline double discriminant_root(double lambda_1, double L_A, double alpha, double rho_lo = 1e-10,
                                double rho_hi = 4.0) {
  auto disc = [&](double rho) { return transition_matrix(lambda_1, L_A, rho, alpha).discriminant(); };
  constexpr int kGrid = 4000;
  const double step = std::log(rho_hi / rho_lo) / kGrid;
  double a = rho_lo;
  double fa = disc(a);
  for (int i = 1; i <= kGrid; ++i) {
    const double b = rho_lo * std::exp(step * i);
    const double fb = disc(b);
    if (fa == 0.0) return a;
    if ((fa < 0.0) != (fb < 0.0)) {
      std::uintmax_t max_iter = 200;
      const auto [lo, hi] = boost::math::tools::toms748_solve(
          disc, a, b, fa, fb, boost::math::tools::eps_tolerance<double>(52), max_iter);
      return 0.5 * (lo + hi);
    }
    a = b;
    fa = fb;
  }
  throw NumericalError("discriminant_root: no sign change in the scanned rho range");
}

/// Damping frequency of the slowest component from cos w = tr / sqrt(4 det)
/// evaluated at a small rho.
inline double damping_frequency(double lambda_1, double L_A, double alpha, double rho_small = 1e-3) {
  const auto t = transition_matrix(lambda_1, L_A, rho_small, alpha);
  if (!(t.det() > 0.0)) throw RegimeError("damping_frequency: determinant is not positive, no oscillation");
  const double c = t.trace() / std::sqrt(4.0 * t.det());
  if (std::abs(c) > 1.0) throw RegimeError("damping_frequency: |cos w| > 1, overdamped");
  return std::acos(c);
}

// ---------------------------------------------------------------------------
// PSD check of the weighting matrix used in the ergodic analysis.

struct PsdReport {
  double min_eigenvalue;
  bool is_psd;
};

/// H = [[D_psi + P, 0, 0], [0, (rho/a) B'B, ((1-a)/a) B'], [0, ((1-a)/a) B, 1/(a rho) I]].
inline Matrix assemble_H(double alpha, double rho, const Matrix& b, const Vector& d_psi, const Matrix& p) {
  if (p.rows() != p.cols() || p.rows() != d_psi.size()) throw ShapeError("assemble_H: P must be square and match D_psi");
  const Index n = p.rows();
  const Index nu = b.cols();
  const Index nm = b.rows();
  Matrix h = Matrix::Zero(n + nu + nm, n + nu + nm);
  h.topLeftCorner(n, n) = p;
  h.topLeftCorner(n, n).diagonal() += d_psi;
  h.block(n, n, nu, nu) = (rho / alpha) * b.transpose() * b;
  h.block(n, n + nu, nu, nm) = ((1.0 - alpha) / alpha) * b.transpose();
  h.block(n + nu, n, nm, nu) = ((1.0 - alpha) / alpha) * b;
  h.block(n + nu, n + nu, nm, nm) = Matrix::Identity(nm, nm) / (alpha * rho);
  return h;
}

inline PsdReport check_psd_H(double alpha, double rho, const Matrix& b, const Vector& d_psi, const Matrix& p,
                             double tol = 1e-10) {
  if (!(rho > 0.0) || !(alpha > 0.0)) throw ConfigError("check_psd_H: alpha and rho must be positive");
  const Matrix h = assemble_H(alpha, rho, b, d_psi, p);
  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  const double m = es.eigenvalues().minCoeff();
  return {m, m >= -tol};
}

// ---------------------------------------------------------------------------
// Image metrics.

/// sqrt(mean over the mask of (x - x_ref)^2) * hu_scale. The mask marks
/// included pixels with nonzero entries.
inline double rms_difference(const Vector& x, const Vector& x_ref, const std::optional<Vector>& mask = std::nullopt,
                             double hu_scale = 1.0) {
  if (x.size() != x_ref.size()) throw ShapeError("rms_difference: image sizes differ");
  if (mask && mask->size() != x.size()) throw ShapeError("rms_difference: mask size differs");
  double acc = 0.0;
  Index count = 0;
  for (Index j = 0; j < x.size(); ++j) {
    if (mask && (*mask)[j] == 0.0) continue;
    const double d = x[j] - x_ref[j];
    acc += d * d;
    ++count;
  }
  if (count == 0) throw ConfigError("rms_difference: empty mask");
  return std::sqrt(acc / static_cast<double>(count)) * hu_scale;
}

// ---------------------------------------------------------------------------
// Randomized consistency checks.

/// Largest |<Ax, y> - <x, A'y>| / (||Ax|| ||y|| + ||x|| ||A'y||) over random pairs.
inline double adjoint_mismatch(const LinearOperator& op, int pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int i = 0; i < pairs; ++i) {
    Vector x(op.domain_dim());
    Vector y(op.range_dim());
    for (Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
    for (Index j = 0; j < y.size(); ++j) y[j] = normal(rng);
    const Vector ax = op.apply(x);
    const Vector aty = op.apply_adjoint(y);
    const double scale = ax.norm() * y.norm() + x.norm() * aty.norm();
    if (scale == 0.0) continue;
    worst = std::max(worst, std::abs(ax.dot(y) - x.dot(aty)) / scale);
  }
  return worst;
}

/// min over random x of x'(D - A'WA)x / (||x||^2 max D); nonnegative when D majorizes.
inline double majorization_margin(const LinearOperator& op, const Vector& d, const std::optional<Vector>& weights,
                                  int probes, std::uint64_t seed) {
  if (d.size() != op.domain_dim()) throw ShapeError("majorization_margin: D size must equal domain_dim");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const double dmax = std::max(d.maxCoeff(), std::numeric_limits<double>::min());
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < probes; ++i) {
    Vector x(op.domain_dim());
    for (Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
    const Vector ax = op.apply(x);
    const double quad = weights ? ax.dot(weights->cwiseProduct(ax)) : ax.squaredNorm();
    worst = std::min(worst, (x.dot(d.cwiseProduct(x)) - quad) / (x.squaredNorm() * dmax));
  }
  return worst;
}

/// min over random perturbations e of Q(x + e; x) - R(x + e), with
/// Q(z; x) = R(x) + <grad R(x), z - x> + 1/2 ||z - x||^2_D and D = D_R(x)
/// in the requested mode. `scale` sets the perturbation size.
inline double surrogate_margin(const RegularizerSpec& spec, const Vector& x, CurvatureMode mode, int probes,
                               double scale, std::uint64_t seed) {
  const double r0 = regularizer_eval(spec, x);
  const Vector g = regularizer_grad(spec, x);
  const Vector d = regularizer_sqs_diag(spec, x, mode).entries;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < probes; ++i) {
    Vector e(x.size());
    for (Index j = 0; j < e.size(); ++j) e[j] = scale * normal(rng);
    const double q = r0 + g.dot(e) + 0.5 * e.dot(d.cwiseProduct(e));
    worst = std::min(worst, q - regularizer_eval(spec, x + e));
  }
  return worst;
}

}  // namespace rlalm
