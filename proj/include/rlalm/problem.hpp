#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "rlalm/operators.hpp"

namespace rlalm {

// ---------------------------------------------------------------------------
// Proximal operators.

/// sign(x) * max(|x| - tau, 0), componentwise.
inline Vector prox_l1(const Vector& x, double tau) {
  if (tau < 0.0) throw ConfigError("prox_l1: tau must be nonnegative");
  Vector out(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double m = std::abs(x[j]) - tau;
    out[j] = m > 0.0 ? std::copysign(m, x[j]) : 0.0;
  }
  return out;
}

inline Vector project_box(const Vector& x, double lower, double upper) {
  if (lower > upper) throw ConfigError("project_box: lower bound exceeds upper bound");
  return x.cwiseMax(lower).cwiseMin(upper);
}

struct NoProx {};
struct L1Prox {
  double lambda = 1.0;
};
struct BoxProx {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
};

/// The prox-friendly part phi of h = phi + psi.
using ProxPart = std::variant<NoProx, L1Prox, BoxProx>;

inline double prox_part_value(const ProxPart& part, const Vector& x) {
  if (std::holds_alternative<L1Prox>(part)) return std::get<L1Prox>(part).lambda * x.lpNorm<1>();
  if (const auto* box = std::get_if<BoxProx>(&part)) {
    const bool inside = (x.array() >= box->lower).all() && (x.array() <= box->upper).all();
    return inside ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

/// argmin_x phi(x) + 1/2 ||x - z||^2_H for diagonal H >= 0.
///
/// Entries with H_j == 0 keep `frozen[j]`: a pixel with no curvature at all
/// has no well-defined update and stays where it was.
inline Vector weighted_prox(const ProxPart& part, const Vector& z, const Vector& h, const Vector& frozen) {
  Vector out(z.size());
  for (Index j = 0; j < z.size(); ++j) {
    if (!(h[j] > 0.0)) {
      out[j] = frozen[j];
      continue;
    }
    double v = z[j];
    if (const auto* l1 = std::get_if<L1Prox>(&part)) {
      const double m = std::abs(v) - l1->lambda / h[j];
      v = m > 0.0 ? std::copysign(m, v) : 0.0;
    } else if (const auto* box = std::get_if<BoxProx>(&part)) {
      v = std::min(std::max(v, box->lower), box->upper);
    }
    out[j] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edge-preserving regularizer with the Fair potential.

struct PotentialValue {
  double value;
  double derivative;
  double huber_curvature;
};

/// delta^2 (|t/delta| - log(1 + |t/delta|)). The Huber curvature
/// phi'(t)/t = 1/(1 + |t|/delta) never exceeds the maximum curvature 1.
inline PotentialValue fair_potential(double t, double delta) {
  if (!(delta > 0.0)) throw ConfigError("fair_potential: delta must be positive");
  const double a = std::abs(t) / delta;
  const double w = 1.0 / (1.0 + a);
  return {delta * delta * (a - std::log1p(a)), t * w, w};
}

enum class CurvatureMode { huber, max_curvature };

/// R(x) = sum_i beta_i sum_n kappa_n kappa_{n+s_i} phi([C_i x]_n).
class RegularizerSpec {
 public:
  RegularizerSpec(ImageShape shape, std::vector<Offset> directions, std::vector<double> betas, double delta,
                  Vector kappas)
      : shape_(shape),
        directions_(std::move(directions)),
        betas_(std::move(betas)),
        delta_(delta),
        kappas_(std::move(kappas)) {
    if (directions_.empty()) throw ConfigError("regularizer needs at least one direction");
    if (betas_.size() != directions_.size()) throw ConfigError("regularizer needs one beta per direction");
    for (double b : betas_) {
      if (!(b >= 0.0)) throw ConfigError("regularizer betas must be nonnegative");
    }
    if (!(delta_ > 0.0)) throw ConfigError("regularizer delta must be positive");
    if (kappas_.size() != shape_.size()) throw ShapeError("kappas must have one entry per pixel");
    if (!(kappas_.array() > 0.0).all()) throw ConfigError("kappas must be positive");
    for (const auto& d : directions_) {
      auto op = finite_difference_op(shape_, d);
      Vector weights(op->range_dim());
      for (Index r = 0; r < op->range_dim(); ++r) {
        const auto [n, m] = op->pairs()[static_cast<std::size_t>(r)];
        weights[r] = kappas_[n] * kappas_[m];
      }
      pair_weights_.push_back(std::move(weights));
      diff_ops_.push_back(std::move(op));
    }
  }

  /// Same beta in every default direction and kappa = 1.
  static RegularizerSpec uniform(ImageShape shape, double beta, double delta) {
    const auto dirs = default_directions();
    return RegularizerSpec(shape, dirs, std::vector<double>(dirs.size(), beta), delta,
                           Vector::Ones(shape.size()));
  }

  ImageShape shape() const { return shape_; }
  const std::vector<Offset>& directions() const { return directions_; }
  const std::vector<double>& betas() const { return betas_; }
  double delta() const { return delta_; }
  const Vector& kappas() const { return kappas_; }
  const std::vector<std::shared_ptr<const FiniteDifferenceOperator>>& diff_ops() const { return diff_ops_; }
  /// kappa_n kappa_{n+s_i} for each row of C_i.
  const Vector& pair_weights(std::size_t i) const { return pair_weights_[i]; }

  void check_image(const Vector& x) const {
    if (x.size() != shape_.size()) throw ShapeError("regularizer: image size does not match its shape");
  }

 private:
  ImageShape shape_;
  std::vector<Offset> directions_;
  std::vector<double> betas_;
  double delta_;
  Vector kappas_;
  std::vector<std::shared_ptr<const FiniteDifferenceOperator>> diff_ops_;
  std::vector<Vector> pair_weights_;
};

inline double regularizer_eval(const RegularizerSpec& spec, const Vector& x) {
  spec.check_image(x);
  double total = 0.0;
  for (std::size_t i = 0; i < spec.diff_ops().size(); ++i) {
    const Vector t = spec.diff_ops()[i]->apply(x);
    const Vector& w = spec.pair_weights(i);
    double acc = 0.0;
    for (Index r = 0; r < t.size(); ++r) acc += w[r] * fair_potential(t[r], spec.delta()).value;
    total += spec.betas()[i] * acc;
  }
  return total;
}

inline Vector regularizer_grad(const RegularizerSpec& spec, const Vector& x) {
  spec.check_image(x);
  Vector grad = Vector::Zero(x.size());
  for (std::size_t i = 0; i < spec.diff_ops().size(); ++i) {
    const auto& c = *spec.diff_ops()[i];
    Vector t = c.apply(x);
    const Vector& w = spec.pair_weights(i);
    for (Index r = 0; r < t.size(); ++r) t[r] = spec.betas()[i] * w[r] * fair_potential(t[r], spec.delta()).derivative;
    grad += c.apply_adjoint(t);
  }
  return grad;
}

/// Separable quadratic surrogate curvatures D_R of the regularizer at x.
///
/// Each difference row touches two pixels with |c| = 1, so its curvature
/// beta * kappa kappa * omega is spread as omega * |c_nj| * sum_j'|c_nj'| = 2 * omega
/// onto both pixels. omega is the Huber curvature at [C_i x]_n, or 1.
inline DiagonalMajorizer regularizer_sqs_diag(const RegularizerSpec& spec, const Vector& x, CurvatureMode mode) {
  spec.check_image(x);
  Vector d = Vector::Zero(x.size());
  for (std::size_t i = 0; i < spec.diff_ops().size(); ++i) {
    const auto& c = *spec.diff_ops()[i];
    const Vector& w = spec.pair_weights(i);
    Vector curv(c.range_dim());
    if (mode == CurvatureMode::huber) {
      const Vector t = c.apply(x);
      for (Index r = 0; r < t.size(); ++r) curv[r] = fair_potential(t[r], spec.delta()).huber_curvature;
    } else {
      curv.setOnes();
    }
    d += c.apply_abs_adjoint((2.0 * spec.betas()[i]) * w.cwiseProduct(curv));
  }
  return {d};
}

// ---------------------------------------------------------------------------
// Data term.

struct LossEval {
  double value;
  Vector gradient;
};

/// 1/2 (y - Ax)' W (y - Ax) and its gradient A'W(Ax - y); W = I when absent.
inline LossEval weighted_quadratic_loss(const LinearOperator& op, const Vector& data,
                                        const std::optional<Vector>& weights, const Vector& x) {
  if (data.size() != op.range_dim()) throw ShapeError("loss: data length must equal range_dim");
  Vector residual = op.apply(x) - data;
  Vector weighted = residual;
  if (weights) {
    if (weights->size() != op.range_dim()) throw ShapeError("loss: weights length must equal range_dim");
    if ((weights->array() < 0.0).any()) throw ConfigError("loss: weights must be nonnegative");
    weighted = weights->cwiseProduct(residual);
  }
  return {0.5 * residual.dot(weighted), op.apply_adjoint(weighted)};
}

// ---------------------------------------------------------------------------
// Composite problem  min_x g_y(Ax) + phi(x) + psi(x).

/// g_y(u) = 1/2 ||u - y||^2_W, phi from `prox_part`, psi the regularizer (or 0).
struct CompositeProblem {
  OperatorPtr op;
  Vector data;
  std::optional<Vector> weights;
  ProxPart prox_part = NoProx{};
  std::optional<RegularizerSpec> smooth_part;
  /// Majorizer of A'A, used by the AL methods' linearization.
  DiagonalMajorizer d_a;
  /// Majorizer of A'WA, the data-term Hessian (equal to d_a when unweighted).
  DiagonalMajorizer d_loss;
  CurvatureMode d_psi_mode = CurvatureMode::max_curvature;
  /// Max-curvature D_psi, which does not depend on x.
  DiagonalMajorizer d_psi_max;

  Index domain_dim() const { return op->domain_dim(); }
  Index range_dim() const { return op->range_dim(); }
  bool has_weights() const { return weights.has_value(); }

  double loss_value(const Vector& u) const {
    const Vector r = u - data;
    return weights ? 0.5 * r.dot(weights->cwiseProduct(r)) : 0.5 * r.squaredNorm();
  }

  /// argmin_u g_y(u) + <mu, u> + rho/2 ||r - u||^2.
  Vector loss_u_update(const Vector& r, const Vector& mu, double rho) const {
    if (weights) {
      return (weights->cwiseProduct(data) - mu + rho * r).cwiseQuotient((weights->array() + rho).matrix());
    }
    return (data - mu + rho * r) / (1.0 + rho);
  }

  double smooth_value(const Vector& x) const { return smooth_part ? regularizer_eval(*smooth_part, x) : 0.0; }
  Vector smooth_gradient(const Vector& x) const {
    return smooth_part ? regularizer_grad(*smooth_part, x) : Vector::Zero(x.size());
  }
  /// D_psi at x for the configured curvature mode.
  Vector smooth_majorizer(const Vector& x) const {
    if (!smooth_part) return Vector::Zero(x.size());
    if (d_psi_mode == CurvatureMode::max_curvature) return d_psi_max.entries;
    return regularizer_sqs_diag(*smooth_part, x, CurvatureMode::huber).entries;
  }

  double prox_value(const Vector& x) const { return prox_part_value(prox_part, x); }
  Vector prox(const Vector& z, const Vector& h, const Vector& frozen) const {
    return weighted_prox(prox_part, z, h, frozen);
  }

  /// f(x, Ax) = g_y(Ax) + phi(x) + psi(x).
  double cost(const Vector& x) const { return loss_value(op->apply(x)) + prox_value(x) + smooth_value(x); }

  /// f(x, u) = g_y(u) + phi(x) + psi(x), the split objective.
  double split_cost(const Vector& x, const Vector& u) const {
    return loss_value(u) + prox_value(x) + smooth_value(x);
  }
};

inline CompositeProblem make_problem(OperatorPtr op, Vector data, ProxPart prox_part,
                                     std::optional<RegularizerSpec> smooth_part = std::nullopt,
                                     std::optional<Vector> weights = std::nullopt,
                                     CurvatureMode d_psi_mode = CurvatureMode::max_curvature) {
  if (!op) throw ConfigError("problem needs an operator");
  if (data.size() != op->range_dim()) throw ShapeError("problem data length must equal range_dim");
  if (weights) {
    if (weights->size() != op->range_dim()) throw ShapeError("problem weights length must equal range_dim");
    if ((weights->array() < 0.0).any()) throw ConfigError("problem weights must be nonnegative");
  }
  if (const auto* box = std::get_if<BoxProx>(&prox_part); box && box->lower > box->upper) {
    throw ConfigError("box lower bound exceeds upper bound");
  }
  if (const auto* l1 = std::get_if<L1Prox>(&prox_part); l1 && l1->lambda < 0.0) {
    throw ConfigError("l1 weight must be nonnegative");
  }
  if (smooth_part && smooth_part->shape().size() != op->domain_dim()) {
    throw ShapeError("regularizer image size must equal domain_dim");
  }
  CompositeProblem p;
  p.d_a = diag_majorizer_ata(*op);
  p.d_loss = weights ? diag_majorizer_ata(*op, weights) : p.d_a;
  p.d_psi_max = smooth_part ? regularizer_sqs_diag(*smooth_part, Vector::Zero(op->domain_dim()),
                                                   CurvatureMode::max_curvature)
                            : DiagonalMajorizer{Vector::Zero(op->domain_dim())};
  p.op = std::move(op);
  p.data = std::move(data);
  p.weights = std::move(weights);
  p.prox_part = prox_part;
  p.smooth_part = std::move(smooth_part);
  p.d_psi_mode = d_psi_mode;
  return p;
}

/// A <- W^{1/2} A, y <- W^{1/2} y, leaving an unweighted quadratic loss with
/// the same value for every x.
inline CompositeProblem apply_ct_substitution(const CompositeProblem& problem) {
  if (!problem.weights) return problem;
  if ((problem.weights->array() < 0.0).any()) throw ConfigError("substitution: weights must be nonnegative");
  const Vector root = problem.weights->cwiseSqrt();
  CompositeProblem out = problem;
  out.op = std::make_shared<const RowScaledOperator>(problem.op, root);
  out.data = root.cwiseProduct(problem.data);
  out.weights.reset();
  out.d_a = diag_majorizer_ata(*out.op);
  out.d_loss = out.d_a;
  return out;
}

}  // namespace rlalm
