#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rlalm/errors.hpp"

namespace rlalm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Real linear map A : R^domain_dim -> R^range_dim with its adjoint.
///
/// Implementations also provide products with the entrywise absolute value
/// |A|, which is what the diagonal majorizers need. Operators are immutable
/// once built; concurrent calls to the const interface are safe.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  virtual Index domain_dim() const = 0;
  virtual Index range_dim() const = 0;

  Vector apply(const Vector& x) const {
    check_size(x, domain_dim(), "apply");
    return do_apply(x);
  }
  Vector apply_adjoint(const Vector& y) const {
    check_size(y, range_dim(), "apply_adjoint");
    return do_apply_adjoint(y);
  }
  Vector apply_abs(const Vector& x) const {
    check_size(x, domain_dim(), "apply_abs");
    return do_apply_abs(x);
  }
  Vector apply_abs_adjoint(const Vector& y) const {
    check_size(y, range_dim(), "apply_abs_adjoint");
    return do_apply_abs_adjoint(y);
  }

 protected:
  virtual Vector do_apply(const Vector& x) const = 0;
  virtual Vector do_apply_adjoint(const Vector& y) const = 0;
  virtual Vector do_apply_abs(const Vector& x) const = 0;
  virtual Vector do_apply_abs_adjoint(const Vector& y) const = 0;

 private:
  static void check_size(const Vector& v, Index expected, const char* where) {
    if (v.size() != expected) {
      throw ShapeError(std::string(where) + ": expected length " + std::to_string(expected) +
                       ", got " + std::to_string(v.size()));
    }
  }
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(Index n) : n_(n) {
    if (n <= 0) throw ShapeError("identity operator needs a positive dimension");
  }
  Index domain_dim() const override { return n_; }
  Index range_dim() const override { return n_; }

 protected:
  Vector do_apply(const Vector& x) const override { return x; }
  Vector do_apply_adjoint(const Vector& y) const override { return y; }
  Vector do_apply_abs(const Vector& x) const override { return x; }
  Vector do_apply_abs_adjoint(const Vector& y) const override { return y; }

 private:
  Index n_;
};

class DenseOperator final : public LinearOperator {
 public:
  explicit DenseOperator(Matrix a) : a_(std::move(a)), abs_(a_.cwiseAbs()) {
    if (a_.rows() == 0 || a_.cols() == 0) throw ShapeError("dense operator must be non-empty");
  }
  Index domain_dim() const override { return a_.cols(); }
  Index range_dim() const override { return a_.rows(); }
  const Matrix& matrix() const { return a_; }

 protected:
  Vector do_apply(const Vector& x) const override { return a_ * x; }
  Vector do_apply_adjoint(const Vector& y) const override { return a_.transpose() * y; }
  Vector do_apply_abs(const Vector& x) const override { return abs_ * x; }
  Vector do_apply_abs_adjoint(const Vector& y) const override { return abs_.transpose() * y; }

 private:
  Matrix a_;
  Matrix abs_;
};

/// diag(scale) * A. Used for the W^{1/2} row weighting.
class RowScaledOperator final : public LinearOperator {
 public:
  RowScaledOperator(OperatorPtr base, Vector scale) : base_(std::move(base)), scale_(std::move(scale)) {
    if (!base_) throw ConfigError("row-scaled operator needs a base operator");
    if (scale_.size() != base_->range_dim()) throw ShapeError("row scale length must equal range_dim");
  }
  Index domain_dim() const override { return base_->domain_dim(); }
  Index range_dim() const override { return base_->range_dim(); }
  const Vector& scale() const { return scale_; }
  const OperatorPtr& base() const { return base_; }

 protected:
  Vector do_apply(const Vector& x) const override { return scale_.cwiseProduct(base_->apply(x)); }
  Vector do_apply_adjoint(const Vector& y) const override {
    return base_->apply_adjoint(scale_.cwiseProduct(y));
  }
  Vector do_apply_abs(const Vector& x) const override {
    return scale_.cwiseAbs().cwiseProduct(base_->apply_abs(x));
  }
  Vector do_apply_abs_adjoint(const Vector& y) const override {
    return base_->apply_abs_adjoint(scale_.cwiseAbs().cwiseProduct(y));
  }

 private:
  OperatorPtr base_;
  Vector scale_;
};

/// Forwards to a wrapped operator and counts forward/adjoint applications.
class CountingOperator final : public LinearOperator {
 public:
  explicit CountingOperator(OperatorPtr base) : base_(std::move(base)) {
    if (!base_) throw ConfigError("counting operator needs a base operator");
  }
  Index domain_dim() const override { return base_->domain_dim(); }
  Index range_dim() const override { return base_->range_dim(); }

  long forward_count() const { return forward_.load(); }
  long adjoint_count() const { return adjoint_.load(); }
  void reset() const {
    forward_ = 0;
    adjoint_ = 0;
  }

 protected:
  Vector do_apply(const Vector& x) const override {
    ++forward_;
    return base_->apply(x);
  }
  Vector do_apply_adjoint(const Vector& y) const override {
    ++adjoint_;
    return base_->apply_adjoint(y);
  }
  Vector do_apply_abs(const Vector& x) const override { return base_->apply_abs(x); }
  Vector do_apply_abs_adjoint(const Vector& y) const override { return base_->apply_abs_adjoint(y); }

 private:
  OperatorPtr base_;
  mutable std::atomic<long> forward_{0};
  mutable std::atomic<long> adjoint_{0};
};

// ---------------------------------------------------------------------------
// Finite differences on a 2-D image grid.

struct ImageShape {
  Index nx = 0;
  Index ny = 0;
  Index size() const { return nx * ny; }
  bool operator==(const ImageShape&) const = default;
};

/// Neighbor offset s_i in pixels. Pixel (ix, iy) has flat index ix + nx*iy.
struct Offset {
  Index dx = 0;
  Index dy = 0;
  bool operator==(const Offset&) const = default;
};

/// The four offsets that visit every unordered 8-neighbor pair exactly once.
inline std::vector<Offset> default_directions() { return {{1, 0}, {0, 1}, {1, 1}, {1, -1}}; }

/// Rows are [Cx]_r = x[n] - x[n + s] over all in-bounds pairs, ordered by n.
class FiniteDifferenceOperator final : public LinearOperator {
 public:
  FiniteDifferenceOperator(ImageShape shape, Offset direction) : shape_(shape), direction_(direction) {
    if (shape.nx <= 0 || shape.ny <= 0) throw ShapeError("finite differences need a non-empty image");
    const auto allowed = default_directions();
    if (std::find(allowed.begin(), allowed.end(), direction) == allowed.end()) {
      throw ConfigError("finite-difference direction must be one of (1,0), (0,1), (1,1), (1,-1)");
    }
    for (Index iy = 0; iy < shape.ny; ++iy) {
      for (Index ix = 0; ix < shape.nx; ++ix) {
        const Index jx = ix + direction.dx;
        const Index jy = iy + direction.dy;
        if (jx < 0 || jx >= shape.nx || jy < 0 || jy >= shape.ny) continue;
        pairs_.emplace_back(ix + shape.nx * iy, jx + shape.nx * jy);
      }
    }
  }

  Index domain_dim() const override { return shape_.size(); }
  Index range_dim() const override { return static_cast<Index>(pairs_.size()); }
  ImageShape shape() const { return shape_; }
  Offset direction() const { return direction_; }
  /// (n, n + s) for each row.
  const std::vector<std::pair<Index, Index>>& pairs() const { return pairs_; }

 protected:
  Vector do_apply(const Vector& x) const override {
    Vector out(range_dim());
    for (Index r = 0; r < range_dim(); ++r) out[r] = x[pairs_[r].first] - x[pairs_[r].second];
    return out;
  }
  Vector do_apply_adjoint(const Vector& y) const override {
    Vector out = Vector::Zero(domain_dim());
    for (Index r = 0; r < range_dim(); ++r) {
      out[pairs_[r].first] += y[r];
      out[pairs_[r].second] -= y[r];
    }
    return out;
  }
  Vector do_apply_abs(const Vector& x) const override {
    Vector out(range_dim());
    for (Index r = 0; r < range_dim(); ++r) out[r] = x[pairs_[r].first] + x[pairs_[r].second];
    return out;
  }
  Vector do_apply_abs_adjoint(const Vector& y) const override {
    Vector out = Vector::Zero(domain_dim());
    for (Index r = 0; r < range_dim(); ++r) {
      out[pairs_[r].first] += y[r];
      out[pairs_[r].second] += y[r];
    }
    return out;
  }

 private:
  ImageShape shape_;
  Offset direction_;
  std::vector<std::pair<Index, Index>> pairs_;
};

inline std::shared_ptr<const FiniteDifferenceOperator> finite_difference_op(ImageShape shape,
                                                                            Offset direction) {
  return std::make_shared<const FiniteDifferenceOperator>(shape, direction);
}

// ---------------------------------------------------------------------------
// Majorizers and spectral utilities.

/// Diagonal matrix stored as its entries.
struct DiagonalMajorizer {
  Vector entries;
  Index size() const { return entries.size(); }
};

/// diag(|A|' W |A| 1) >= A'WA. W = I when `weights` is empty.
inline DiagonalMajorizer diag_majorizer_ata(const LinearOperator& op,
                                            const std::optional<Vector>& weights = std::nullopt) {
  Vector row_sums = op.apply_abs(Vector::Ones(op.domain_dim()));
  if (weights) {
    if (weights->size() != op.range_dim()) throw ShapeError("majorizer weights must have length range_dim");
    if ((weights->array() < 0.0).any()) throw ConfigError("majorizer weights must be nonnegative");
    row_sums = row_sums.cwiseProduct(*weights);
  }
  return {op.apply_abs_adjoint(row_sums)};
}

/// Largest eigenvalue of A'A by power iteration.
///
/// The start vector is all-ones plus a small perturbation from a fixed seed, so
/// results are reproducible. Stops when successive Rayleigh quotients agree to
/// relative `tol`.
inline double max_eigenvalue(const LinearOperator& op, double tol = 1e-10, int max_iter = 10000) {
  if (!(tol > 0.0)) throw ConfigError("max_eigenvalue: tol must be positive");
  const Index n = op.domain_dim();
  std::mt19937_64 rng(0x5eedULL);
  std::uniform_real_distribution<double> perturb(-1e-3, 1e-3);
  Vector v(n);
  for (Index j = 0; j < n; ++j) v[j] = 1.0 + perturb(rng);
  v.normalize();

  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = op.apply_adjoint(op.apply(v));
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    if (it > 0 && std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
    v = w / norm;
  }
  throw ConvergenceError("max_eigenvalue: power iteration did not converge", lambda);
}

/// Materializes any operator as a dense matrix (small problems only).
inline Matrix to_dense(const LinearOperator& op) {
  Matrix m(op.range_dim(), op.domain_dim());
  Vector e = Vector::Zero(op.domain_dim());
  for (Index j = 0; j < op.domain_dim(); ++j) {
    e[j] = 1.0;
    m.col(j) = op.apply(e);
    e[j] = 0.0;
  }
  return m;
}

/// Reads "rows cols" followed by rows*cols row-major values.
inline Matrix load_dense_matrix(std::istream& in) {
  long rows = 0;
  long cols = 0;
  if (!(in >> rows >> cols) || rows <= 0 || cols <= 0) {
    throw ShapeError("dense matrix: header must be two positive integers 'rows cols'");
  }
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) {
      if (!(in >> m(i, j))) throw ShapeError("dense matrix: expected " + std::to_string(rows * cols) + " values");
    }
  }
  return m;
}

inline Matrix load_dense_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open matrix file " + path);
  return load_dense_matrix(in);
}

}  // namespace rlalm
