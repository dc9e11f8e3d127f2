#pragma once

// The FKP measure d mu_w = |grad_x log(w * phi_r)(x)|^2 r dx dr, its box
// masses mu_w(T_Delta), Carleson norms, and the same quantities with the
// reference bump varphi in place of the Gaussian.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "fkplab/heat.hpp"
#include "fkplab/kernels.hpp"
#include "fkplab/parallel.hpp"
#include "fkplab/quadrature.hpp"
#include "fkplab/types.hpp"
#include "fkplab/weight.hpp"

namespace fkplab {

enum class FkpKernel { gauss, reference_bump };

inline const char* to_string(FkpKernel k) { return k == FkpKernel::gauss ? "gauss" : "reference_bump"; }

/// |(w * grad K_r)(x)|^2 / (w * K_r)(x)^2 / r, the density of mu_w (K = phi)
/// or of mu~_w (K = varphi) with respect to dx dr.
inline double mu_density(const WeightSpec& w, const Point& x, double r, FkpKernel kernel = FkpKernel::gauss,
                         const ConvolveOptions& opt = {}) {
  if (w.is_constant()) return 0.0;
  KernelDescriptor d{kernel == FkpKernel::gauss ? KernelKind::gauss : KernelKind::reference_bump, r};
  d.kappa = opt.kappa;
  const auto s = convolve(w, RadialKernel(w.dimension(), d), x, opt);
  if (!(s.u > 0.0) || !std::isfinite(s.u))
    throw PositivityViolation("heat average underflows; weight floor too small for this point");
  const double g2 = s.grad[0] * s.grad[0] + s.grad[1] * s.grad[1];
  return g2 / (s.u * s.u) / r;
}

inline double mu_tilde_density(const WeightSpec& w, const Point& x, double r, const ConvolveOptions& opt = {}) {
  return mu_density(w, x, r, FkpKernel::reference_bump, opt);
}

// ---------------------------------------------------------------------------
// Box integration

/// Where a box density needs resolution in y: break points (piecewise
/// smoothness) and singular points (structure at the height scale t).
struct BoxLayout {
  std::vector<Point> breaks;    // n = 1 only: first coordinates are used
  std::vector<Point> singular;  // concentration points
  double max_panel = std::numeric_limits<double>::infinity();
};

inline BoxLayout layout_for(const WeightSpec& w) {
  BoxLayout l;
  if (w.dimension() == 1) {
    // the density is smooth in y at height t; kinks of a sampled weight only
    // matter below the grid spacing, where the density is small anyway
    if (w.family() != WeightFamily::grid)
      for (double p : w.break_points()) l.breaks.push_back({p, 0.0});
    // log w is singular wherever w vanishes or blows up
    for (double p : w.singular_points()) l.singular.push_back({p, 0.0});
  } else if (w.singular_at_center()) {
    l.singular.push_back(w.radial_center());
  }
  if (w.family() == WeightFamily::plateau) l.max_panel = w.radius() / 4.0;
  if (w.family() == WeightFamily::power && w.a() != 0.0) l.singular = {w.radial_center()};
  return l;
}

struct BoxMassOptions {
  /// Dyadic height levels integrated explicitly; r_floor = r(Delta) 2^{-octaves}.
  int octaves = 10;
  /// Angular trapezoid points for n = 2.
  int angles = 32;
  FkpKernel kernel = FkpKernel::gauss;
  ConvolveOptions heat{};
};

struct BoxMass {
  double mass = 0.0;        // integral over T_Delta, including the extrapolated tail
  double tail = 0.0;        // extrapolated contribution of heights below r_floor
  double quad_error = 0.0;  // Kronrod/Gauss difference plus tail model spread
  double r_floor = 0.0;
  bool tail_unbounded = false;  // density does not decay like t near the floor
};

namespace detail {

inline std::vector<double> y_edges_line(double lo, double hi, double t, const BoxLayout& l) {
  std::vector<double> e{lo, hi};
  for (const auto& b : l.breaks)
    if (b[0] > lo && b[0] < hi) e.push_back(b[0]);
  for (const auto& p : l.singular) {
    if (p[0] > lo && p[0] < hi) e.push_back(p[0]);
    for (double d = 0.5 * t; d < hi - lo; d *= 2.0) {
      if (p[0] - d > lo && p[0] - d < hi) e.push_back(p[0] - d);
      if (p[0] + d > lo && p[0] + d < hi) e.push_back(p[0] + d);
    }
  }
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  const double cap = std::min(0.5 * (hi - lo), l.max_panel);
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < e.size(); ++i) {
    const int pieces = std::max(1, static_cast<int>(std::ceil((e[i + 1] - e[i]) / cap)));
    for (int j = 0; j < pieces; ++j) out.push_back(e[i] + (e[i + 1] - e[i]) * j / pieces);
  }
  out.push_back(e.back());
  return out;
}

/// (Kronrod, embedded Gauss) integrals of rate(., t) over Delta.
template <class Rate>
std::pair<double, double> slice_integral(int n, const BallQuery& q, double t, const BoxLayout& l,
                                         int angles, Rate&& rate) {
  double k = 0.0, g = 0.0;
  if (n == 1) {
    const auto edges = y_edges_line(q.center[0] - q.radius, q.center[0] + q.radius, t, l);
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      quad::kronrod_panel(edges[i], edges[i + 1], [&](double y, double wk, double wg) {
        const double v = rate(Point{y, 0.0}, t);
        k += wk * v;
        g += wg * v;
      });
    return {k, g};
  }
  // polar about the centre; radial edges graded toward singular points
  BoxLayout radial;
  radial.max_panel = l.max_panel;
  for (const auto& p : l.singular) radial.singular.push_back({distance(p, q.center, 2), 0.0});
  const auto edges = y_edges_line(0.0, q.radius, t, radial);
  const double dt = 2.0 * std::numbers::pi / angles;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    quad::kronrod_panel(edges[i], edges[i + 1], [&](double rho, double wk, double wg) {
      double ring = 0.0;
      for (int j = 0; j < angles; ++j) {
        const double th = (j + 0.5) * dt;
        ring += rate(Point{q.center[0] + rho * std::cos(th), q.center[1] + rho * std::sin(th)}, t);
      }
      ring *= rho * dt;
      k += wk * ring;
      g += wg * ring;
    });
  return {k, g};
}

}  // namespace detail

/// int over Delta x (0, r(Delta)) of rate(y, t) dy dt. Heights are split into
/// dyadic octaves integrated with Kronrod rules in log t; below the floor the
/// slice integral m(t) is extrapolated from a quadratic fit at floor, 2 floor
/// and 4 floor.
template <class Rate>
BoxMass integrate_box(int n, const BallQuery& q, const BoxLayout& layout, int octaves, int angles, Rate&& rate) {
  q.validate();
  if (octaves < 1) throw std::invalid_argument("integrate_box: octaves must be >= 1");
  BoxMass out;
  const double R = q.radius;
  double K = 0.0, G = 0.0;
  for (int j = 0; j < octaves; ++j) {
    const double hi = std::log(R * std::pow(2.0, -j)), lo = hi - std::numbers::ln2;
    quad::kronrod_panel(lo, hi, [&](double tau, double wk, double wg) {
      const double t = std::exp(tau);
      const auto [mk, mg] = detail::slice_integral(n, q, t, layout, angles, rate);
      K += wk * t * mk;
      if (wg != 0.0) G += wg * t * mg;
    });
  }
  const double rf = R * std::pow(2.0, -octaves);
  out.r_floor = rf;
  const double m1 = detail::slice_integral(n, q, rf, layout, angles, rate).first;
  const double m2 = detail::slice_integral(n, q, 2.0 * rf, layout, angles, rate).first;
  const double m4 = detail::slice_integral(n, q, 4.0 * rf, layout, angles, rate).first;
  // quadratic through (rf, m1), (2rf, m2), (4rf, m4) in the variable s = t / rf
  const double c2 = (m4 - 3.0 * m2 + 2.0 * m1) / 6.0;
  const double c1 = (m2 - m1) - 3.0 * c2;
  const double c0 = m1 - c1 - c2;
  const double tail_quad = rf * (c0 + c1 / 2.0 + c2 / 3.0);
  const double b = m2 - m1, a = m1 - b;  // linear through the first two
  const double tail_lin = rf * (a + b / 2.0);
  out.tail = std::max(0.0, tail_quad);
  out.tail_unbounded = m1 > 0.75 * m2 && m1 > 1e-300;
  out.mass = K + out.tail;
  out.quad_error = std::abs(K - G) + std::abs(tail_quad - tail_lin);
  return out;
}

/// mu_w(T_Delta) (or mu~_w with options.kernel = reference_bump).
inline BoxMass box_mass(const WeightSpec& w, const CarlesonBox& box, const BoxMassOptions& opt = {}) {
  box.base.validate();
  if (w.is_constant()) {
    BoxMass z;
    z.r_floor = box.base.radius * std::pow(2.0, -opt.octaves);
    return z;
  }
  return integrate_box(w.dimension(), box.base, layout_for(w), opt.octaves, opt.angles,
                       [&](const Point& y, double t) { return mu_density(w, y, t, opt.kernel, opt.heat); });
}

struct CarlesonEstimate {
  double value = 0.0;       // max over the family of mu(T_Delta) / |Delta|
  BallQuery witness{};
  double quad_error = 0.0;  // at the witness, normalized by |Delta|
  double r_floor = 0.0;     // smallest height integrated explicitly
  std::size_t family_size = 0;
  std::size_t flagged = 0;  // boxes whose tail was not decaying
  std::vector<double> normalized;  // per-box mu(T_Delta)/|Delta|, family order
};

/// Lower estimate of ||mu||_C over the sampled boxes, with quadrature error.
template <class BoxFn>
CarlesonEstimate carleson_sup(int n, const std::vector<BallQuery>& family, BoxFn&& box_fn, int threads = 0) {
  if (family.empty()) throw std::invalid_argument("carleson_norm: family must be non-empty");
  const auto masses = parallel_map(family.size(), [&](std::size_t i) { return box_fn(family[i]); }, threads);
  CarlesonEstimate est;
  est.family_size = family.size();
  est.r_floor = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < masses.size(); ++i) {
    const double vol = family[i].volume(n);
    const double v = masses[i].mass / vol;
    est.normalized.push_back(v);
    est.r_floor = std::min(est.r_floor, masses[i].r_floor);
    if (masses[i].tail_unbounded) ++est.flagged;
    if (i == 0 || v > est.value) {
      est.value = v;
      est.witness = family[i];
      est.quad_error = masses[i].quad_error / vol;
    }
  }
  return est;
}

inline CarlesonEstimate carleson_norm(const WeightSpec& w, const std::vector<BallQuery>& family,
                                      const BoxMassOptions& opt = {}, int threads = 0) {
  return carleson_sup(w.dimension(), family, [&](const BallQuery& q) { return box_mass(w, {q}, opt); }, threads);
}

inline CarlesonEstimate carleson_norm_tilde(const WeightSpec& w, const std::vector<BallQuery>& family,
                                            BoxMassOptions opt = {}, int threads = 0) {
  opt.kernel = FkpKernel::reference_bump;
  return carleson_norm(w, family, opt, threads);
}

/// Dyadic centres and radii: radii 2^{-k}, k = 0..radii-1 (default 14, about
/// four decades), centres on a lattice of [-1, 1]^n.
inline SamplingFamily default_carleson_family(int n, int centers = 9, int radii = 14) {
  SamplingFamily f;
  f.n = n;
  f.centers = centers;
  f.radii = radii;
  f.r_max = 1.0;
  f.r_min = std::pow(2.0, -(radii - 1));
  return f;
}

}  // namespace fkplab
