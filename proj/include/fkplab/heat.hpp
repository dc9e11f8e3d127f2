#pragma once

// Heat extensions u(x, r^2) = (w * phi_r)(x), their gradients through
// psi = grad phi, and averages of w against the other radial kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "fkplab/kernels.hpp"
#include "fkplab/parallel.hpp"
#include "fkplab/quadrature.hpp"
#include "fkplab/types.hpp"
#include "fkplab/weight.hpp"

namespace fkplab {

struct ConvolveOptions {
  /// Relative tolerance for the quadrature and for the Gaussian tail bound.
  double tol = 1e-10;
  /// Gaussian truncation radius at unit scale.
  double kappa = 8.0;
  /// Use exact formulas for constant weights and |x|^2 under the Gaussian.
  bool closed_form = true;
  /// Doubling constant used in the tail bound; <= 0 selects the weight's analytic bound.
  double doubling = 0.0;
};

/// One evaluation of (w * K_r)(x) and (w * (grad K)_r)(x).
struct HeatSample {
  Point x{};
  double r = 1.0;
  double u = 0.0;      // (w * K_r)(x)
  Point grad{};        // (w * (grad K)_r)(x); for K = phi this is (w * psi_r)(x)
  double tail_error = 0.0;
  double quad_error = 0.0;
};

namespace detail {

/// Bound on the Gaussian mass beyond kappa, relative to u, from the doubling
/// geometric series. `gradient` adds the |psi| = 2|z| phi factor.
inline double gauss_tail_factor(double C, double kappa, int n, bool gradient) {
  const double m = std::ceil(std::log2(2.0 * kappa));
  double sum = 0.0;
  for (int k = 0; k < 8; ++k) {
    const double ring = std::pow(2.0, k) * kappa;
    const double term = std::pow(C, k + 1 + m) * std::exp(-ring * ring) *
                        (gradient ? 4.0 * ring : 1.0);
    sum += term;
    if (term < 1e-300) break;
  }
  (void)n;
  return std::exp(0.25) * sum;
}

inline std::array<quad::Estimate, 3> convolve_line(const WeightSpec& w, const RadialKernel& k,
                                                   double x, double r, double tol) {
  const double S = k.support();
  std::vector<double> breaks{0.0};
  for (double b : k.fine_breaks()) {
    breaks.push_back(b);
    breaks.push_back(-b);
  }
  for (double p : w.break_points()) breaks.push_back((x - p) / r);
  std::vector<double> sing;
  for (double p : w.singular_points()) sing.push_back((x - p) / r);
  quad::LayoutOptions opt;
  opt.max_length = k.truncates_tail() ? 2.0 : 0.5;
  opt.grade_floor = 1e-10;
  if (w.family() == WeightFamily::plateau) opt.max_length = std::min(opt.max_length, w.radius() / (4.0 * r));
  auto f = [&](double z) -> std::array<double, 3> {
    const double v = w(x - r * z);
    const double a = std::abs(z);
    const double s = z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
    return {k.value(a) * v, k.slope(a) * s * v, 0.0};
  };
  return quad::integrate_checked_n<3>(f, -S, S, breaks, sing, tol, opt);
}

/// Rays from the weight's centre c0: y = c0 + rho e_theta. Angular windows
/// keep |x - y| < support * r and split where the kernel profile has breaks.
inline std::array<quad::Estimate, 3> convolve_plane_radial(const WeightSpec& w, const RadialKernel& k,
                                                           const Point& x, double r, double tol) {
  const Point c0 = w.radial_center();
  const double px = x[0] - c0[0], py = x[1] - c0[1];
  const double d = std::hypot(px, py);
  const double R = k.support() * r;
  const double theta_x = std::atan2(py, px);
  const bool centred = d <= 1e-14 * r;

  auto angle_for = [&](double rho, double b) {  // half-width where |x' - rho e| = b r
    const double c = (d * d + rho * rho - b * b * r * r) / (2.0 * d * rho);
    if (c >= 1.0) return 0.0;
    if (c <= -1.0) return std::numbers::pi;
    return std::acos(c);
  };

  auto inner = [&](double rho) -> std::array<double, 3> {
    if (rho <= 0.0) return {0.0, 0.0, 0.0};
    const double weight = w.profile(rho) * rho / (r * r);
    if (centred) return {weight * 2.0 * std::numbers::pi * k.value(rho / r), 0.0, 0.0};
    std::vector<double> cuts{0.0, angle_for(rho, k.support())};
    for (double b : k.breaks()) cuts.push_back(angle_for(rho, b));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    auto visit = [&](double phi, double wt) {
      const double th = theta_x + phi;
      const double zx = (px - rho * std::cos(th)) / r, zy = (py - rho * std::sin(th)) / r;
      const double a = std::hypot(zx, zy);
      const double kv = k.value(a);
      const double ks = a > 0.0 ? k.slope(a) / a : 0.0;
      acc[0] += wt * kv;
      acc[1] += wt * ks * zx;
      acc[2] += wt * ks * zy;
    };
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double lo = cuts[i], hi = cuts[i + 1];
      if (hi <= lo) continue;
      const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / (std::numbers::pi / 8.0))));
      for (int p = 0; p < pieces; ++p) {
        const double a = lo + (hi - lo) * p / pieces, b = lo + (hi - lo) * (p + 1) / pieces;
        quad::gauss_panel<24>(a, b, visit);    // phi > 0 side
        quad::gauss_panel<24>(-b, -a, visit);  // mirror side
      }
    }
    return {weight * acc[0], weight * acc[1], weight * acc[2]};
  };

  const double lo = std::max(0.0, d - R), hi = d + R;
  std::vector<double> breaks;
  if (w.family() == WeightFamily::plateau) breaks.push_back(w.radius());
  // where an angular window opens or closes the ray integrand has a
  // square-root kink, so grade toward those radii
  std::vector<double> sing;
  auto add_kink = [&](double b) {
    sing.push_back(std::abs(d - b * r));
    sing.push_back(d + b * r);
  };
  add_kink(k.support());
  for (double b : k.breaks()) add_kink(b);
  if (w.singular_at_center() && lo == 0.0) sing.push_back(0.0);
  quad::LayoutOptions opt;
  opt.max_length = k.truncates_tail() ? r : 0.25 * r;
  if (w.family() == WeightFamily::plateau) opt.max_length = std::min(opt.max_length, w.radius() / 8.0);
  return quad::integrate_checked_n<3>(inner, lo, hi, breaks, sing, tol, opt);
}

/// Polar coordinates about x for sampled planar weights.
inline std::array<quad::Estimate, 3> convolve_plane_grid(const WeightSpec& w, const RadialKernel& k,
                                                         const Point& x, double r, double tol) {
  constexpr int angles = 128;
  auto inner = [&](double a) -> std::array<double, 3> {
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    for (int j = 0; j < angles; ++j) {
      const double t = 2.0 * std::numbers::pi * j / angles;
      const double ex = std::cos(t), ey = std::sin(t);
      const double v = w(Point{x[0] - r * a * ex, x[1] - r * a * ey});
      acc[0] += v;
      acc[1] += v * ex;
      acc[2] += v * ey;
    }
    const double dt = 2.0 * std::numbers::pi / angles;
    return {a * k.value(a) * acc[0] * dt, a * k.slope(a) * acc[1] * dt, a * k.slope(a) * acc[2] * dt};
  };
  quad::LayoutOptions opt;
  opt.max_length = 0.25;
  std::vector<double> none;
  return quad::integrate_checked_n<3>(inner, 0.0, k.support(), k.breaks(), none, tol, opt);
}

}  // namespace detail

/// (w * K_r)(x) and (w * (grad K)_r)(x) for a radial kernel K.
inline HeatSample convolve(const WeightSpec& w, const RadialKernel& k, const Point& x,
                           const ConvolveOptions& opt = {}) {
  const double r = k.scale();
  if (!(r > 0.0)) throw std::invalid_argument("convolve: r must be positive");
  const int n = w.dimension();
  if (k.dimension() != n) throw std::invalid_argument("convolve: kernel and weight dimensions differ");
  HeatSample s{x, r};
  if (opt.closed_form && w.is_constant()) {
    s.u = w.constant_value() * k.mass();
    return s;
  }
  const bool gauss = k.kind() == KernelKind::gauss || k.kind() == KernelKind::gauss_gradient;
  if (opt.closed_form && gauss && w.family() == WeightFamily::power && w.a() == 2.0) {
    const double x2 = x[0] * x[0] + (n == 2 ? x[1] * x[1] : 0.0);
    s.u = x2 + 0.5 * n * r * r;
    s.grad = {2.0 * x[0] * r, n == 2 ? 2.0 * x[1] * r : 0.0};
    return s;
  }
  std::array<quad::Estimate, 3> e;
  if (n == 1) e = detail::convolve_line(w, k, x[0], r, opt.tol);
  else if (w.is_radial()) e = detail::convolve_plane_radial(w, k, x, r, opt.tol);
  else e = detail::convolve_plane_grid(w, k, x, r, opt.tol);
  s.u = e[0].value;
  s.grad = {e[1].value, e[2].value};
  s.quad_error = std::max({e[0].error, e[1].error, e[2].error});
  if (k.truncates_tail()) {
    const double C = opt.doubling > 0.0 ? opt.doubling : w.doubling_bound();
    s.tail_error = std::abs(s.u) * detail::gauss_tail_factor(C, k.support(), n, true);
    if (s.tail_error > opt.tol * std::abs(s.u))
      throw ToleranceNotMet("Gaussian tail bound exceeds tolerance; raise kappa", s.u, s.tail_error);
  }
  return s;
}

/// u(x, r^2) = (w * phi_r)(x) together with (w * psi_r)(x).
inline HeatSample heat_sample(const WeightSpec& w, const Point& x, double r,
                              const ConvolveOptions& opt = {}) {
  KernelDescriptor d{KernelKind::gauss, r};
  d.kappa = opt.kappa;
  return convolve(w, RadialKernel(w.dimension(), d), x, opt);
}

inline double heat_value(const WeightSpec& w, const Point& x, double r, const ConvolveOptions& opt = {}) {
  return heat_sample(w, x, r, opt).u;
}

/// (w * psi_r)(x); grad_x u(x, r^2) is this divided by r.
inline Point heat_gradient(const WeightSpec& w, const Point& x, double r, const ConvolveOptions& opt = {}) {
  return heat_sample(w, x, r, opt).grad;
}

inline double norm(const Point& p, int n) { return n == 1 ? std::abs(p[0]) : std::hypot(p[0], p[1]); }

/// (K_r * w)(x) for the kernel in `kernel` (its scale is kernel.r).
inline double kernel_average(const WeightSpec& w, const KernelDescriptor& kernel, const Point& x,
                             const ConvolveOptions& opt = {}) {
  const int n = w.dimension();
  switch (kernel.kind) {
    case KernelKind::indicator:
      return ball_measure(w, {x, kernel.r}, opt.tol) / std::pow(kernel.r, n);
    case KernelKind::normalized_indicator:
      return ball_measure(w, {x, kernel.r}, opt.tol) / BallQuery{x, kernel.r}.volume(n);
    case KernelKind::gauss_gradient:
      throw std::invalid_argument("kernel_average: use heat_gradient for psi");
    default: return convolve(w, RadialKernel(n, kernel), x, opt).u;
  }
}

// ---------------------------------------------------------------------------
// Diagnostic sweeps

struct SupReport {
  double value = 0.0;
  BallQuery witness{};
};

/// sup over the family of |(w * psi_R)(x)| / (w * phi_R)(x).
inline SupReport psi_over_u_sup(const WeightSpec& w, const std::vector<BallQuery>& family,
                                const ConvolveOptions& opt = {}, int threads = 0) {
  const int n = w.dimension();
  const auto vals = parallel_map(family.size(), [&](std::size_t i) {
    const auto s = heat_sample(w, family[i].center, family[i].radius, opt);
    return norm(s.grad, n) / s.u;
  }, threads);
  SupReport rep;
  for (std::size_t i = 0; i < vals.size(); ++i)
    if (vals[i] > rep.value || i == 0) rep = {std::max(vals[i], 0.0), family[i]};
  return rep;
}

struct HeatComparisonReport {
  double worst = 0.0;  // max |log((phi_s * w)(y) / (chi~_s * w)(x))|
  Point x{};
  Point y{};
  double s = 0.0;
  double M = 0.0;
  std::size_t samples = 0;
};

/// Worst |log((phi_s * w)(y) / (chi~_s * w)(x))| over sampled (x, s) and
/// y = x + s u with u on a lattice inside the unit ball.
inline HeatComparisonReport good_doubling_heat_check(const WeightSpec& w, double M,
                                                     const std::vector<BallQuery>& family,
                                                     int lattice = 5, const ConvolveOptions& opt = {},
                                                     int threads = 0) {
  if (!(M > 1.0)) throw std::invalid_argument("good_doubling_heat_check: M must exceed 1");
  const int n = w.dimension();
  std::vector<Point> offsets;
  for (int i = 0; i < lattice; ++i) {
    const double u = 0.9 * (-1.0 + 2.0 * i / std::max(1, lattice - 1));
    if (n == 1) {
      offsets.push_back({u, 0.0});
      continue;
    }
    for (int j = 0; j < lattice; ++j) {
      const double v = 0.9 * (-1.0 + 2.0 * j / std::max(1, lattice - 1));
      if (u * u + v * v < 0.99) offsets.push_back({u, v});
    }
  }
  struct Local {
    double worst = 0.0;
    Point y{};
  };
  const auto locals = parallel_map(family.size(), [&](std::size_t i) {
    const auto& q = family[i];
    const double avg = ball_measure(w, q, opt.tol) / q.volume(n);
    Local best{0.0, q.center};
    for (const auto& o : offsets) {
      const Point y{q.center[0] + q.radius * o[0], q.center[1] + q.radius * o[1]};
      const double v = std::abs(std::log(heat_value(w, y, q.radius, opt) / avg));
      if (v > best.worst) best = {v, y};
    }
    return best;
  }, threads);
  HeatComparisonReport rep;
  rep.M = M;
  rep.samples = family.size() * offsets.size();
  for (std::size_t i = 0; i < locals.size(); ++i)
    if (locals[i].worst >= rep.worst) {
      rep.worst = locals[i].worst;
      rep.x = family[i].center;
      rep.y = locals[i].y;
      rep.s = family[i].radius;
    }
  return rep;
}

/// (phi~^eta_r * w)(x) / (chi_r * w)(x); at least 1, at most F(1 + eta).
inline double thin_approx_ratio(const WeightSpec& w, double eta, const BallQuery& q,
                                const ConvolveOptions& opt = {}) {
  KernelDescriptor d{KernelKind::eta_bump, q.radius, eta};
  const double top = kernel_average(w, d, q.center, opt);
  const double bottom = kernel_average(w, {KernelKind::indicator, q.radius}, q.center, opt);
  return top / bottom;
}

/// Range of u(x, s^2) s^n / w(Delta(x, s)) over the family.
inline std::pair<double, double> heat_ball_comparison(const WeightSpec& w,
                                                      const std::vector<BallQuery>& family,
                                                      const ConvolveOptions& opt = {}, int threads = 0) {
  const int n = w.dimension();
  const auto vals = parallel_map(family.size(), [&](std::size_t i) {
    const auto& q = family[i];
    return heat_value(w, q.center, q.radius, opt) * std::pow(q.radius, n) / ball_measure(w, q, opt.tol);
  }, threads);
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  return {*lo, *hi};
}

}  // namespace fkplab
