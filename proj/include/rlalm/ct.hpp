#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <fftw3.h>

#include "rlalm/projector.hpp"
#include "rlalm/solvers.hpp"

namespace rlalm {

// ---------------------------------------------------------------------------
// Phantom.

struct Ellipse {
  double x0, y0;  // center, in units of the half field of view
  double a, b;    // semi-axes along the rotated x and y axes
  double angle_deg;
  double value;   // additive intensity
};

/// The original 10-ellipse Shepp-Logan head, intensities as published.
inline const std::array<Ellipse, 10>& shepp_logan_ellipses() {
  static const std::array<Ellipse, 10> e{{
      {0.0, 0.0, 0.69, 0.92, 0.0, 2.0},
      {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98},
      {0.22, 0.0, 0.11, 0.31, -18.0, -0.02},
      {-0.22, 0.0, 0.16, 0.41, 18.0, -0.02},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.01},
      {0.0, 0.1, 0.046, 0.046, 0.0, 0.01},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.01},
      {-0.08, -0.605, 0.046, 0.023, 0.0, 0.01},
      {0.0, -0.605, 0.023, 0.023, 0.0, 0.01},
      {0.06, -0.605, 0.023, 0.046, 0.0, 0.01},
  }};
  return e;
}

/// Shepp-Logan sampled at pixel centers, in HU with air at 0: intensities are
/// scaled by 1000 (skull 2000, brain about 1000) and clamped to [0, 2000].
/// Pixel (ix, iy) has center ((ix + 1/2) 2/nx - 1, (iy + 1/2) 2/ny - 1).
inline Vector shepp_logan(Index nx, Index ny) {
  if (nx < 16 || ny < 16) throw ConfigError("shepp_logan: image must be at least 16x16");
  Vector img = Vector::Zero(nx * ny);
  for (Index iy = 0; iy < ny; ++iy) {
    const double y = (static_cast<double>(iy) + 0.5) * 2.0 / static_cast<double>(ny) - 1.0;
    for (Index ix = 0; ix < nx; ++ix) {
      const double x = (static_cast<double>(ix) + 0.5) * 2.0 / static_cast<double>(nx) - 1.0;
      double v = 0.0;
      for (const auto& e : shepp_logan_ellipses()) {
        const double th = e.angle_deg * std::numbers::pi / 180.0;
        const double dx = x - e.x0;
        const double dy = y - e.y0;
        const double xr = dx * std::cos(th) + dy * std::sin(th);
        const double yr = -dx * std::sin(th) + dy * std::cos(th);
        if ((xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b) <= 1.0) v += e.value;
      }
      img[ix + nx * iy] = std::clamp(1000.0 * v, 0.0, 2000.0);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Measurements.

struct Sinogram {
  Vector y;       // log(I0 / max(I, 1)), or the line integrals when noiseless
  Vector counts;  // detected photons (expected counts when noiseless)
};

/// Monoenergetic transmission model with Poisson counts.
inline Sinogram simulate_sinogram(const Vector& x_true, const LinearOperator& projector, double i0,
                                  std::uint64_t seed, bool noiseless = false) {
  if (!(i0 > 0.0)) throw ConfigError("simulate_sinogram: I0 must be positive");
  const Vector ell = projector.apply(x_true);
  Sinogram s;
  s.y.resize(ell.size());
  s.counts.resize(ell.size());
  if (noiseless) {
    s.y = ell;
    for (Index j = 0; j < ell.size(); ++j) s.counts[j] = i0 * std::exp(-ell[j]);
    return s;
  }
  std::mt19937_64 rng(seed);
  for (Index j = 0; j < ell.size(); ++j) {
    std::poisson_distribution<long long> poisson(i0 * std::exp(-ell[j]));
    const double count = static_cast<double>(poisson(rng));
    s.counts[j] = count;
    s.y[j] = std::log(i0 / std::max(count, 1.0));
  }
  return s;
}

inline Vector statistical_weights(const Vector& y) {
  if (!y.allFinite()) throw ConfigError("statistical_weights: sinogram must be finite");
  return (-y.array()).exp().matrix();
}

/// kappa_j = sqrt([A'W1]_j / [A'1]_j), 1 where the pixel meets no ray. A
/// pixel seen only by zero-weight rays gets a small positive floor.
inline Vector kappa_weights(const LinearOperator& op, const Vector& weights) {
  if (weights.size() != op.range_dim()) throw ShapeError("kappa_weights: weights length must equal range_dim");
  if ((weights.array() < 0.0).any()) throw ConfigError("kappa_weights: weights must be nonnegative");
  const Vector num = op.apply_abs_adjoint(weights);
  const Vector den = op.apply_abs_adjoint(Vector::Ones(op.range_dim()));
  Vector k(num.size());
  for (Index j = 0; j < k.size(); ++j) {
    if (den[j] == 0.0) {
      k[j] = 1.0;
    } else {
      k[j] = std::max(std::sqrt(num[j] / den[j]), 1e-6);
    }
  }
  return k;
}

// ---------------------------------------------------------------------------
// Scenario.

/// Attenuation of 1000 HU (water) per mm. Together with a 200 mm field of
/// view this keeps line integrals of the head phantom below about 7, so the
/// weights exp(-y) span roughly three decades.
inline constexpr double kDefaultWaterAttenuation = 0.035;

struct CtScenarioParams {
  Index nx = 64;
  Index ny = 64;
  double fov_mm = 200.0;
  Index num_bins = 92;
  Index num_views = 90;
  double i0 = 1e5;
  std::uint64_t seed = 0;
  bool noiseless = false;
  double water_attenuation = kDefaultWaterAttenuation;  // per mm at 1000 HU
  std::optional<double> beta;  // absent: calibrated, see make_ct_scenario
  double delta = 10.0;         // HU
  double beta_fraction = 0.05;
};

struct CtScenario {
  CtGeometry geometry;
  std::shared_ptr<const ParallelBeamProjector> projector;  // maps HU images to line integrals
  Vector x_true;
  Vector y;
  Vector counts;
  Vector weights;
  Vector kappas;
  std::optional<RegularizerSpec> regularizer;
  double i0 = 1e5;
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
};

inline double attenuation_scale(double water_attenuation) { return water_attenuation / 1000.0; }

/// Unweighted filtered backprojection: Ram-Lak kernel with Hann apodization
/// applied per view via FFTW, ray-driven backprojection with the adjoint,
/// then clamped to the box. Output is in HU.
inline Vector fbp_like_init(const CtScenario& sc) {
  const auto& g = sc.geometry;
  const Index nb = g.num_bins;
  const Index nv = g.num_views;
  if (sc.y.size() != nb * nv) throw ShapeError("fbp: sinogram size does not match the geometry");
  Index n = 1;
  while (n < 2 * nb) n *= 2;
  const double tau = g.bin_spacing;

  // Ram-Lak kernel on the wrapped grid, scaled by tau for the convolution sum.
  std::vector<double> kernel(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i < n; ++i) {
    const Index m = i <= n / 2 ? i : i - n;
    double h = 0.0;
    if (m == 0) {
      h = 1.0 / (4.0 * tau * tau);
    } else if (m % 2 != 0) {
      h = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(m * m) * tau * tau);
    }
    kernel[static_cast<std::size_t>(i)] = tau * h;
  }
  const Index nc = n / 2 + 1;
  std::vector<fftw_complex> spectrum(static_cast<std::size_t>(nc));
  std::vector<double> buf(static_cast<std::size_t>(n));
  fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf.data(), spectrum.data(), FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spectrum.data(), buf.data(), FFTW_ESTIMATE);

  std::copy(kernel.begin(), kernel.end(), buf.begin());
  fftw_execute(fwd);
  std::vector<double> filter(static_cast<std::size_t>(nc));
  for (Index k = 0; k < nc; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(n);  // cycles per sample, up to 1/2
    const double hann = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * f));
    filter[static_cast<std::size_t>(k)] = spectrum[static_cast<std::size_t>(k)][0] * hann / static_cast<double>(n);
  }

  Vector q(sc.y.size());
  for (Index v = 0; v < nv; ++v) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (Index b = 0; b < nb; ++b) buf[static_cast<std::size_t>(b)] = sc.y[v * nb + b];
    fftw_execute(fwd);
    for (Index k = 0; k < nc; ++k) {
      spectrum[static_cast<std::size_t>(k)][0] *= filter[static_cast<std::size_t>(k)];
      spectrum[static_cast<std::size_t>(k)][1] *= filter[static_cast<std::size_t>(k)];
    }
    fftw_execute(inv);
    for (Index b = 0; b < nb; ++b) q[v * nb + b] = buf[static_cast<std::size_t>(b)];
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);

  // Sum over a view of strip lengths through a pixel is about pixel_area/tau,
  // and the projector carries the attenuation scale once more.
  const double c = sc.projector->scale();
  const double norm = (std::numbers::pi / static_cast<double>(nv)) * tau /
                      (g.pixel_size * g.pixel_size) / (c * c);
  Vector x = norm * sc.projector->apply_adjoint(q);
  return project_box(x, sc.lower, sc.upper);
}

/// Builds the desk scenario. Without an explicit beta, beta is set so that
/// R(x_fbp) = beta_fraction * (1/2)||y - A x_fbp||^2_W.
inline CtScenario make_ct_scenario(const CtScenarioParams& prm) {
  if (!(prm.fov_mm > 0.0) || !(prm.water_attenuation > 0.0)) throw ConfigError("CT scenario: fov and attenuation must be positive");
  if (!(prm.delta > 0.0)) throw ConfigError("CT scenario: delta must be positive");
  CtScenario sc;
  sc.geometry.image = {prm.nx, prm.ny};
  sc.geometry.pixel_size = prm.fov_mm / static_cast<double>(std::max(prm.nx, prm.ny));
  sc.geometry.num_bins = prm.num_bins;
  sc.geometry.bin_spacing = sc.geometry.pixel_size;
  sc.geometry.num_views = prm.num_views;
  sc.geometry.validate();
  sc.projector = std::make_shared<const ParallelBeamProjector>(sc.geometry, attenuation_scale(prm.water_attenuation));
  sc.x_true = shepp_logan(prm.nx, prm.ny);
  auto sino = simulate_sinogram(sc.x_true, *sc.projector, prm.i0, prm.seed, prm.noiseless);
  sc.y = std::move(sino.y);
  sc.counts = std::move(sino.counts);
  sc.weights = statistical_weights(sc.y);
  sc.kappas = kappa_weights(*sc.projector, sc.weights);
  sc.i0 = prm.i0;

  const ImageShape shape{prm.nx, prm.ny};
  const auto dirs = default_directions();
  double beta = 0.0;
  if (prm.beta) {
    beta = *prm.beta;
  } else {
    RegularizerSpec unit(shape, dirs, std::vector<double>(dirs.size(), 1.0), prm.delta, sc.kappas);
    const Vector x0 = fbp_like_init(sc);
    const Vector r = sc.y - sc.projector->apply(x0);
    const double data = 0.5 * r.dot(sc.weights.cwiseProduct(r));
    const double reg = regularizer_eval(unit, x0);
    beta = reg > 0.0 ? prm.beta_fraction * data / reg : 0.0;
  }
  sc.regularizer.emplace(shape, dirs, std::vector<double>(dirs.size(), beta), prm.delta, sc.kappas);
  return sc;
}

/// 1/2 ||y - Ax||^2_W + R(x) over x >= 0, before the W^{1/2} substitution.
inline CompositeProblem build_ct_problem_weighted(const CtScenario& sc,
                                                  CurvatureMode mode = CurvatureMode::huber) {
  return make_problem(sc.projector, sc.y, BoxProx{sc.lower, sc.upper}, sc.regularizer, sc.weights, mode);
}

/// The reconstruction problem with A <- W^{1/2} A and y <- W^{1/2} y applied.
inline CompositeProblem build_ct_problem(const CtScenario& sc, CurvatureMode mode = CurvatureMode::huber) {
  return apply_ct_substitution(build_ct_problem_weighted(sc, mode));
}

/// Ordered subsets of the substituted data term, view j in subset j mod M.
inline SubsetSystem make_ct_subsets(const CtScenario& sc, Index M) {
  const auto parts = partition_subsets(sc.geometry.num_views, M);
  SubsetSystem sys;
  for (const auto& views : parts) {
    auto sub = sc.projector->subset(views);
    const auto rows = sub->global_rows();
    Vector root(static_cast<Index>(rows.size()));
    Vector data(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      root[static_cast<Index>(i)] = std::sqrt(sc.weights[rows[i]]);
      data[static_cast<Index>(i)] = root[static_cast<Index>(i)] * sc.y[rows[i]];
    }
    sys.ops.push_back(std::make_shared<const RowScaledOperator>(sub, root));
    sys.data.push_back(std::move(data));
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Image files.

/// 8-bit binary graymap, values mapped linearly from [lo, hi] and clipped.
/// Row iy = ny - 1 is written first so that +y points up.
inline void write_pgm(const std::string& path, const Vector& img, ImageShape shape, double lo, double hi) {
  if (img.size() != shape.size()) throw ShapeError("write_pgm: image size does not match its shape");
  if (!(hi > lo)) throw ConfigError("write_pgm: window must have hi > lo");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << "P5\n" << shape.nx << ' ' << shape.ny << "\n255\n";
  for (Index iy = shape.ny - 1; iy >= 0; --iy) {
    for (Index ix = 0; ix < shape.nx; ++ix) {
      const double t = (img[ix + shape.nx * iy] - lo) / (hi - lo);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)))));
    }
  }
}

/// Text line "nx ny" then nx*ny little-endian float64 values, x fastest.
inline void write_raw(const std::string& path, const Vector& data, Index nx, Index ny) {
  if (data.size() != nx * ny) throw ShapeError("write_raw: data size does not match nx*ny");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << nx << ' ' << ny << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    const double v = data[i];
    unsigned char bytes[8];
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    os.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

struct RawImage {
  Index nx = 0;
  Index ny = 0;
  Vector data;
};

inline RawImage read_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  RawImage img;
  is >> img.nx >> img.ny;
  if (!is || img.nx <= 0 || img.ny <= 0) throw ConfigError(path + ": bad raw header");
  is.get();
  img.data.resize(img.nx * img.ny);
  for (Index i = 0; i < img.data.size(); ++i) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ConfigError(path + ": truncated raw data");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    double v;
    std::memcpy(&v, &bits, 8);
    img.data[i] = v;
  }
  return img;
}

}  // namespace rlalm
