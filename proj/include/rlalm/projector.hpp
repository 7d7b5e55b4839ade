#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <vector>

#include "rlalm/operators.hpp"

namespace rlalm {

/// 2-D parallel-beam scan over [0, pi). The image grid and the detector are
/// both centered on the rotation axis.
struct CtGeometry {
  ImageShape image{64, 64};
  double pixel_size = 1.0;  // mm
  Index num_bins = 92;
  double bin_spacing = 1.0;  // mm
  Index num_views = 90;

  double angle(Index view) const {
    return std::numbers::pi * static_cast<double>(view) / static_cast<double>(num_views);
  }
  /// Signed detector coordinate of a bin center.
  double bin_center(Index bin) const {
    return (static_cast<double>(bin) - 0.5 * static_cast<double>(num_bins - 1)) * bin_spacing;
  }
  Index num_rays() const { return num_bins * num_views; }

  void validate() const {
    if (image.nx <= 0 || image.ny <= 0 || num_bins <= 0 || num_views <= 0 || !(pixel_size > 0.0) ||
        !(bin_spacing > 0.0)) {
      throw ConfigError("CT geometry: all dimensions must be positive");
    }
  }
};

namespace detail {

/// Ray/pixel intersection lengths for every ray, in CSR form, rows ordered
/// view-major (row = view * num_bins + bin).
struct RaySystem {
  CtGeometry geometry;
  std::vector<Index> row_start;
  std::vector<Index> pixel;
  std::vector<double> length;
};

/// Exact intersection lengths of one line with the pixel grid.
///
/// The line is p0 + s*d with |d| = 1. All grid-plane crossings inside the
/// image box are collected and sorted; each consecutive pair bounds a segment
/// lying in a single pixel, which is identified from the segment midpoint.
inline void trace_ray(const CtGeometry& g, double theta, double t, std::vector<Index>& pixels,
                      std::vector<double>& lengths) {
  const double dx = -std::sin(theta);
  const double dy = std::cos(theta);
  const double px = t * std::cos(theta);
  const double py = t * std::sin(theta);
  const double half_x = 0.5 * static_cast<double>(g.image.nx) * g.pixel_size;
  const double half_y = 0.5 * static_cast<double>(g.image.ny) * g.pixel_size;
  constexpr double kParallel = 1e-12;

  double s_lo = -std::numeric_limits<double>::infinity();
  double s_hi = std::numeric_limits<double>::infinity();
  auto clip = [&](double p, double d, double half) {
    if (std::abs(d) < kParallel) {
      if (std::abs(p) >= half) s_hi = s_lo - 1.0;  // empty
      return;
    }
    double a = (-half - p) / d;
    double b = (half - p) / d;
    if (a > b) std::swap(a, b);
    s_lo = std::max(s_lo, a);
    s_hi = std::min(s_hi, b);
  };
  clip(px, dx, half_x);
  clip(py, dy, half_y);
  if (!(s_hi > s_lo)) return;

  std::vector<double> s{s_lo, s_hi};
  if (std::abs(dx) >= kParallel) {
    for (Index i = 0; i <= g.image.nx; ++i) {
      const double sv = (-half_x + static_cast<double>(i) * g.pixel_size - px) / dx;
      if (sv > s_lo && sv < s_hi) s.push_back(sv);
    }
  }
  if (std::abs(dy) >= kParallel) {
    for (Index i = 0; i <= g.image.ny; ++i) {
      const double sv = (-half_y + static_cast<double>(i) * g.pixel_size - py) / dy;
      if (sv > s_lo && sv < s_hi) s.push_back(sv);
    }
  }
  std::sort(s.begin(), s.end());

  const double min_len = 1e-12 * g.pixel_size;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    const double len = s[k + 1] - s[k];
    if (len <= min_len) continue;
    const double mid = 0.5 * (s[k] + s[k + 1]);
    const double mx = px + mid * dx;
    const double my = py + mid * dy;
    Index ix = static_cast<Index>(std::floor((mx + half_x) / g.pixel_size));
    Index iy = static_cast<Index>(std::floor((my + half_y) / g.pixel_size));
    ix = std::clamp<Index>(ix, 0, g.image.nx - 1);
    iy = std::clamp<Index>(iy, 0, g.image.ny - 1);
    pixels.push_back(ix + g.image.nx * iy);
    lengths.push_back(len);
  }
}

inline std::shared_ptr<const RaySystem> build_ray_system(const CtGeometry& g) {
  g.validate();
  auto sys = std::make_shared<RaySystem>();
  sys->geometry = g;
  sys->row_start.reserve(static_cast<std::size_t>(g.num_rays()) + 1);
  sys->row_start.push_back(0);
  for (Index v = 0; v < g.num_views; ++v) {
    const double theta = g.angle(v);
    for (Index b = 0; b < g.num_bins; ++b) {
      trace_ray(g, theta, g.bin_center(b), sys->pixel, sys->length);
      sys->row_start.push_back(static_cast<Index>(sys->pixel.size()));
    }
  }
  return sys;
}

}  // namespace detail

/// Ray-driven parallel-beam projector with exact line lengths.
///
/// Entries are `scale * (intersection length in mm)`; with `scale` set to an
/// attenuation-per-HU factor the projector maps HU images to line integrals.
/// A projector may cover only some views of its geometry; `subset()` produces
/// such restrictions without re-tracing rays.
class ParallelBeamProjector final : public LinearOperator {
 public:
  explicit ParallelBeamProjector(const CtGeometry& geometry, double scale = 1.0)
      : system_(detail::build_ray_system(geometry)), scale_(scale) {
    if (!(scale > 0.0)) throw ConfigError("projector scale must be positive");
    views_.resize(static_cast<std::size_t>(geometry.num_views));
    for (Index v = 0; v < geometry.num_views; ++v) views_[static_cast<std::size_t>(v)] = v;
  }

  Index domain_dim() const override { return system_->geometry.image.size(); }
  Index range_dim() const override {
    return static_cast<Index>(views_.size()) * system_->geometry.num_bins;
  }

  const CtGeometry& geometry() const { return system_->geometry; }
  const std::vector<Index>& views() const { return views_; }
  double scale() const { return scale_; }

  /// The same projector restricted to `views` (in the given order).
  std::shared_ptr<const ParallelBeamProjector> subset(const std::vector<Index>& views) const {
    for (Index v : views) {
      if (v < 0 || v >= system_->geometry.num_views) throw ConfigError("projector subset: view out of range");
    }
    return std::shared_ptr<const ParallelBeamProjector>(new ParallelBeamProjector(system_, scale_, views));
  }

  /// Range-space row indices of this projector's rays within the full sinogram.
  std::vector<Index> global_rows() const {
    const Index nb = system_->geometry.num_bins;
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(range_dim()));
    for (Index v : views_) {
      for (Index b = 0; b < nb; ++b) rows.push_back(v * nb + b);
    }
    return rows;
  }

 protected:
  Vector do_apply(const Vector& x) const override {
    Vector out(range_dim());
    for_each_row([&](Index r, Index begin, Index end) {
      double acc = 0.0;
      for (Index e = begin; e < end; ++e) acc += system_->length[e] * x[system_->pixel[e]];
      out[r] = scale_ * acc;
    });
    return out;
  }
  Vector do_apply_adjoint(const Vector& y) const override {
    Vector out = Vector::Zero(domain_dim());
    for_each_row([&](Index r, Index begin, Index end) {
      const double yr = scale_ * y[r];
      if (yr == 0.0) return;
      for (Index e = begin; e < end; ++e) out[system_->pixel[e]] += system_->length[e] * yr;
    });
    return out;
  }
  Vector do_apply_abs(const Vector& x) const override { return do_apply(x); }
  Vector do_apply_abs_adjoint(const Vector& y) const override { return do_apply_adjoint(y); }

 private:
  ParallelBeamProjector(std::shared_ptr<const detail::RaySystem> system, double scale, std::vector<Index> views)
      : system_(std::move(system)), scale_(scale), views_(std::move(views)) {}

  template <typename F>
  void for_each_row(F&& f) const {
    const Index nb = system_->geometry.num_bins;
    Index r = 0;
    for (Index v : views_) {
      for (Index b = 0; b < nb; ++b, ++r) {
        const auto global = static_cast<std::size_t>(v * nb + b);
        f(r, system_->row_start[global], system_->row_start[global + 1]);
      }
    }
  }

  std::shared_ptr<const detail::RaySystem> system_;
  double scale_;
  std::vector<Index> views_;
};

}  // namespace rlalm
