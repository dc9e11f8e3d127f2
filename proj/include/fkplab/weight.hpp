#pragma once

// Weights on R^n (n = 1, 2): densities, ball masses, doubling constants,
// thin-annulus moduli and M-good doubling deficits.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fkplab/parallel.hpp"
#include "fkplab/quadrature.hpp"
#include "fkplab/types.hpp"

namespace fkplab {

enum class WeightFamily { constant, power, polypower, plateau, grid };

inline const char* to_string(WeightFamily f) {
  switch (f) {
    case WeightFamily::constant: return "constant";
    case WeightFamily::power: return "power";
    case WeightFamily::polypower: return "polypower";
    case WeightFamily::plateau: return "plateau";
    case WeightFamily::grid: return "grid";
  }
  return "unknown";
}

/// Tensor (n = 2) or plain (n = 1) grid of strictly positive density samples.
struct GridData {
  std::vector<double> xs;
  std::vector<double> ys;       // empty for n = 1
  std::vector<double> density;  // n = 2: density[j * xs.size() + i] at (xs[i], ys[j])
};

/// Smooth bump exp(1 - 1/(1 - q)) with q = |y - c|^2 / rho^2; equals 1 at the
/// centre and vanishes with all derivatives at |y - c| = rho.
inline double unit_bump(double q) {
  if (q >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - q));
}

class WeightSpec {
 public:
  static constexpr double kDefaultFloor = 1e-300;

  static WeightSpec constant(int n, double c) {
    WeightSpec w(n, WeightFamily::constant);
    if (!(c > 0.0)) throw std::invalid_argument("constant weight must be positive");
    w.c_ = c;
    return w;
  }

  /// |x|^a, locally integrable iff a > -n.
  static WeightSpec power(int n, double a) {
    WeightSpec w(n, WeightFamily::power);
    if (!(a > -n)) throw std::invalid_argument("power weight needs a > -n");
    w.a_ = a;
    return w;
  }

  /// |x|^a (1 + |x|^2)^b.
  static WeightSpec polypower(int n, double a, double b) {
    WeightSpec w(n, WeightFamily::polypower);
    if (!(a > -n)) throw std::invalid_argument("polypower weight needs a > -n");
    w.a_ = a;
    w.b_ = b;
    return w;
  }

  /// 1 + eps * g(x) with g the unit bump of the given centre and radius.
  static WeightSpec plateau(int n, double eps, Point center = {0.0, 0.0}, double radius = 1.0) {
    WeightSpec w(n, WeightFamily::plateau);
    if (!(eps > -1.0 && eps < 1.0)) throw std::invalid_argument("plateau needs eps in (-1, 1)");
    if (!(radius > 0.0)) throw std::invalid_argument("plateau radius must be positive");
    w.eps_ = eps;
    w.center_ = center;
    w.radius_ = radius;
    return w;
  }

  /// Sampled weight, linear (n = 1) or bilinear (n = 2) interpolation.
  static WeightSpec grid(int n, GridData data, double floor = kDefaultFloor) {
    WeightSpec w(n, WeightFamily::grid);
    const std::size_t nx = data.xs.size();
    const std::size_t ny = n == 1 ? 1 : data.ys.size();
    if (nx < 2 || (n == 2 && ny < 2)) throw std::invalid_argument("grid weight needs >= 2 nodes per axis");
    if (data.density.size() != nx * ny) throw std::invalid_argument("grid weight: density size mismatch");
    auto increasing = [](const std::vector<double>& v) {
      return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
    };
    if (!increasing(data.xs) || (n == 2 && !increasing(data.ys)))
      throw std::invalid_argument("grid weight: coordinates must be strictly increasing");
    if (!(floor > 0.0)) throw std::invalid_argument("grid weight: floor must be positive");
    for (double& d : data.density) {
      if (!std::isfinite(d) || d < 0.0) throw std::invalid_argument("grid weight: densities must be >= 0");
      d = std::max(d, floor);
    }
    w.floor_ = floor;
    w.grid_ = std::make_shared<const GridData>(std::move(data));
    return w;
  }

  int dimension() const noexcept { return n_; }
  WeightFamily family() const noexcept { return family_; }
  double c() const noexcept { return c_; }
  double a() const noexcept { return a_; }
  double b() const noexcept { return b_; }
  double eps() const noexcept { return eps_; }
  const Point& center() const noexcept { return center_; }
  double radius() const noexcept { return radius_; }
  double floor() const noexcept { return floor_; }
  const GridData* grid_data() const noexcept { return grid_.get(); }

  /// True when the weight is a.e. a positive constant.
  bool is_constant() const noexcept {
    switch (family_) {
      case WeightFamily::constant: return true;
      case WeightFamily::power: return a_ == 0.0;
      case WeightFamily::polypower: return a_ == 0.0 && b_ == 0.0;
      case WeightFamily::plateau: return eps_ == 0.0;
      case WeightFamily::grid: return false;
    }
    return false;
  }

  /// Value of a constant weight (only meaningful when is_constant()).
  double constant_value() const noexcept { return family_ == WeightFamily::constant ? c_ : 1.0; }

  /// Radial families are functions of |y - radial_center()|.
  bool is_radial() const noexcept { return family_ != WeightFamily::grid; }
  Point radial_center() const noexcept {
    return family_ == WeightFamily::plateau ? center_ : Point{0.0, 0.0};
  }

  /// Radial profile: w(y) = profile(|y - radial_center()|).
  double profile(double rho) const {
    switch (family_) {
      case WeightFamily::constant: return c_;
      case WeightFamily::power: return std::pow(rho, a_);
      case WeightFamily::polypower: return std::pow(rho, a_) * std::pow(1.0 + rho * rho, b_);
      case WeightFamily::plateau: return 1.0 + eps_ * unit_bump(rho * rho / (radius_ * radius_));
      case WeightFamily::grid: break;
    }
    throw std::logic_error("profile() on a grid weight");
  }

  /// Radii (about radial_center()) where the profile has an integrable singularity.
  bool singular_at_center() const noexcept {
    return (family_ == WeightFamily::power || family_ == WeightFamily::polypower) && a_ != 0.0;
  }

  /// The density w(x). Exact for closed-form families.
  double operator()(const Point& x) const {
    if (family_ == WeightFamily::grid) return grid_value(x);
    const double rho = distance(x, radial_center(), n_);
    return profile(rho);
  }

  double operator()(double x) const { return (*this)(Point{x, 0.0}); }

  /// Points of R (n = 1) where the density is singular (integrably).
  std::vector<double> singular_points() const {
    if (singular_at_center()) return {0.0};
    if (family_ == WeightFamily::grid && grid_->ys.empty()) {
      // log w blows up at zero samples of a sampled line weight
      std::vector<double> out;
      for (std::size_t i = 0; i < grid_->xs.size(); ++i)
        if (grid_->density[i] <= floor_) out.push_back(grid_->xs[i]);
      return out;
    }
    return {};
  }

  /// Points of R (n = 1) where the density is only piecewise smooth.
  std::vector<double> break_points() const {
    switch (family_) {
      case WeightFamily::plateau:
        return {center_[0] - radius_, center_[0], center_[0] + radius_};
      case WeightFamily::grid: return grid_->xs;
      default: return {};
    }
  }

  /// Convex hull of a grid weight's nodes; unbounded otherwise.
  bool contains(const Point& x) const {
    if (family_ != WeightFamily::grid) return true;
    const auto& g = *grid_;
    const double tx = 1e-12 * (g.xs.back() - g.xs.front());
    if (x[0] < g.xs.front() - tx || x[0] > g.xs.back() + tx) return false;
    if (n_ == 2) {
      const double ty = 1e-12 * (g.ys.back() - g.ys.front());
      if (x[1] < g.ys.front() - ty || x[1] > g.ys.back() + ty) return false;
    }
    return true;
  }

  /// An upper bound for the doubling constant, used only for kernel tail bounds.
  double doubling_bound() const {
    const double base = std::pow(2.0, n_);
    switch (family_) {
      case WeightFamily::constant: return base;
      case WeightFamily::power: return base * std::pow(2.0, std::max(a_, 0.0));
      case WeightFamily::polypower:
        return base * std::pow(2.0, std::abs(a_) + 2.0 * std::abs(b_));
      case WeightFamily::plateau: return base * (1.0 + std::abs(eps_)) / (1.0 - std::abs(eps_));
      case WeightFamily::grid: {
        const auto [lo, hi] = std::minmax_element(grid_->density.begin(), grid_->density.end());
        return base * (*hi / *lo);
      }
    }
    return base;
  }

 private:
  WeightSpec(int n, WeightFamily f) : n_(n), family_(f) {
    if (n != 1 && n != 2) throw std::invalid_argument("weights are supported for n = 1, 2 only");
  }

  double grid_value(const Point& x) const {
    if (!contains(x)) throw OutOfDomain("point outside the sampled grid hull");
    const auto& g = *grid_;
    auto locate = [](const std::vector<double>& v, double t, double& frac) {
      auto it = std::upper_bound(v.begin(), v.end(), t);
      std::size_t i = it == v.begin() ? 0 : static_cast<std::size_t>(it - v.begin()) - 1;
      i = std::min(i, v.size() - 2);
      frac = std::clamp((t - v[i]) / (v[i + 1] - v[i]), 0.0, 1.0);
      return i;
    };
    double fx = 0.0;
    const std::size_t i = locate(g.xs, x[0], fx);
    if (n_ == 1) return std::max(floor_, (1.0 - fx) * g.density[i] + fx * g.density[i + 1]);
    double fy = 0.0;
    const std::size_t j = locate(g.ys, x[1], fy);
    const std::size_t nx = g.xs.size();
    const double v00 = g.density[j * nx + i], v10 = g.density[j * nx + i + 1];
    const double v01 = g.density[(j + 1) * nx + i], v11 = g.density[(j + 1) * nx + i + 1];
    const double v = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
    return std::max(floor_, v);
  }

  int n_;
  WeightFamily family_;
  double c_ = 1.0;
  double a_ = 0.0;
  double b_ = 0.0;
  double eps_ = 0.0;
  Point center_{0.0, 0.0};
  double radius_ = 1.0;
  double floor_ = kDefaultFloor;
  std::shared_ptr<const GridData> grid_;
};

inline double eval_weight(const WeightSpec& w, const Point& x) { return w(x); }

// ---------------------------------------------------------------------------
// Ball integrals

enum class BallIntegrand { mass, log_density };

namespace detail {

// Antiderivatives on the line for |t|^a and log|t|^a.
inline double power_mass_primitive(double t, double a) {
  return std::copysign(std::pow(std::abs(t), a + 1.0) / (a + 1.0), t);
}
inline double log_primitive(double t) {
  return t == 0.0 ? 0.0 : t * std::log(std::abs(t)) - t;
}

// F(R) = int_0^R g(profile(rho)) rho d rho for radial weights in the plane.
inline double radial_primitive_2d(const WeightSpec& w, BallIntegrand kind, double R, double tol) {
  if (R <= 0.0) return 0.0;
  if (w.family() == WeightFamily::power) {
    const double a = w.a();
    if (kind == BallIntegrand::mass) return std::pow(R, a + 2.0) / (a + 2.0);
    return a * (0.5 * R * R * std::log(R) - 0.25 * R * R);
  }
  if (w.family() == WeightFamily::constant) {
    const double v = kind == BallIntegrand::mass ? w.c() : std::log(w.c());
    return 0.5 * v * R * R;
  }
  std::vector<double> breaks;
  if (w.family() == WeightFamily::plateau) breaks.push_back(w.radius());
  std::vector<double> sing;
  if (w.singular_at_center()) sing.push_back(0.0);
  auto f = [&](double rho) {
    const double p = w.profile(rho);
    return (kind == BallIntegrand::mass ? p : std::log(std::max(p, w.floor()))) * rho;
  };
  quad::LayoutOptions opt;
  opt.max_length = 0.5;
  return quad::integrate_checked(f, 0.0, R, breaks, sing, tol, opt).value;
}

inline quad::Estimate radial_ball_integral_2d(const WeightSpec& w, const BallQuery& q,
                                              BallIntegrand kind, double tol) {
  const Point c0 = w.radial_center();
  const double dx = q.center[0] - c0[0], dy = q.center[1] - c0[1];
  const double d = std::hypot(dx, dy);
  const double r = q.radius;
  const double theta_c = std::atan2(dy, dx);
  auto F = [&](double R) { return radial_primitive_2d(w, kind, R, tol * 1e-2); };
  if (d < r) {
    // Rays from c0 leave the ball once, at rho_out(theta); integrand is smooth and periodic.
    auto sweep = [&](int m) {
      double acc = 0.0;
      for (int k = 0; k < m; ++k) {
        const double t = 2.0 * std::numbers::pi * k / m;
        const double cs = std::cos(t), sn = std::sin(t);
        const double rho = d * cs + std::sqrt(std::max(0.0, r * r - d * d * sn * sn));
        acc += F(rho);
      }
      return acc * 2.0 * std::numbers::pi / m;
    };
    const double fine = sweep(128), coarse = sweep(64);
    return {fine, std::abs(fine - coarse)};
  }
  // c0 outside the ball: rays within half-angle beta hit [rho_minus, rho_plus].
  const double beta = std::asin(std::min(1.0, r / d));
  auto integrand = [&](double phi) {
    const double t = beta * std::sin(phi);
    const double sn = std::sin(t), cs = std::cos(t);
    const double disc = std::sqrt(std::max(0.0, r * r - d * d * sn * sn));
    const double rp = d * cs + disc, rm = std::max(0.0, d * cs - disc);
    return (F(rp) - F(rm)) * beta * std::cos(phi);
  };
  const double h = 0.5 * std::numbers::pi;
  const double fine = quad::gauss<40>(integrand, -h, 0.0) + quad::gauss<40>(integrand, 0.0, h);
  const double coarse = quad::gauss<20>(integrand, -h, 0.0) + quad::gauss<20>(integrand, 0.0, h);
  (void)theta_c;
  return {fine, std::abs(fine - coarse)};
}

inline quad::Estimate grid_ball_integral_2d(const WeightSpec& w, const BallQuery& q,
                                            BallIntegrand kind) {
  // Polar coordinates about the centre: Gauss-Legendre in radius, trapezoid in angle.
  auto g = [&](const Point& p) {
    const double v = w(p);
    return kind == BallIntegrand::mass ? v : std::log(v);
  };
  auto sweep = [&](int radial_panels, int angles) {
    double acc = 0.0;
    const double r = q.radius;
    for (int pnl = 0; pnl < radial_panels; ++pnl) {
      const double lo = r * pnl / radial_panels, hi = r * (pnl + 1) / radial_panels;
      quad::gauss_panel<10>(lo, hi, [&](double rho, double wr) {
        double ring = 0.0;
        for (int k = 0; k < angles; ++k) {
          const double t = 2.0 * std::numbers::pi * k / angles;
          ring += g({q.center[0] + rho * std::cos(t), q.center[1] + rho * std::sin(t)});
        }
        acc += wr * rho * ring * 2.0 * std::numbers::pi / angles;
      });
    }
    return acc;
  };
  const double fine = sweep(16, 128), coarse = sweep(8, 64);
  return {fine, std::abs(fine - coarse)};
}

}  // namespace detail

/// int over Delta of w (mass) or of log w (log_density, with the grid floor
/// applied). Closed forms for constant and power weights on the line and for
/// radial weights in the plane; otherwise checked panel quadrature split at
/// the weight's break and singular points.
inline quad::Estimate ball_integral(const WeightSpec& w, const BallQuery& q, BallIntegrand kind,
                                    double tol = 1e-10) {
  q.validate();
  const int n = w.dimension();
  if (w.family() == WeightFamily::constant) {
    const double v = kind == BallIntegrand::mass ? w.c() : std::log(w.c());
    return {v * q.volume(n), 0.0};
  }
  if (n == 2) {
    if (w.family() == WeightFamily::grid) {
      if (!w.contains({q.center[0] - q.radius, q.center[1] - q.radius}) ||
          !w.contains({q.center[0] + q.radius, q.center[1] + q.radius}))
        throw OutOfDomain("ball leaves the sampled grid hull");
      return detail::grid_ball_integral_2d(w, q, kind);
    }
    return detail::radial_ball_integral_2d(w, q, kind, tol);
  }
  const double lo = q.center[0] - q.radius, hi = q.center[0] + q.radius;
  // Primitive differences cancel badly when the ball is tiny and far from 0;
  // the integrand is then smooth and a single Gauss panel is exact enough.
  const bool contains_origin = lo < 0.0 && hi > 0.0;
  if (w.family() == WeightFamily::power &&
      (contains_origin || std::min(std::abs(lo), std::abs(hi)) < 100.0 * q.radius)) {
    const double a = w.a();
    if (kind == BallIntegrand::mass)
      return {detail::power_mass_primitive(hi, a) - detail::power_mass_primitive(lo, a), 0.0};
    return {a * (detail::log_primitive(hi) - detail::log_primitive(lo)), 0.0};
  }
  if (w.family() == WeightFamily::power) {
    auto f = [&](double y) {
      return kind == BallIntegrand::mass ? std::pow(std::abs(y), w.a()) : w.a() * std::log(std::abs(y));
    };
    return {quad::gauss<20>(f, lo, hi), 0.0};
  }
  if (w.family() == WeightFamily::grid && (!w.contains({lo, 0.0}) || !w.contains({hi, 0.0})))
    throw OutOfDomain("ball leaves the sampled grid hull");
  const auto breaks = w.break_points();
  const auto sing = w.singular_points();
  auto f = [&](double y) {
    const double v = w(y);
    return kind == BallIntegrand::mass ? v : std::log(std::max(v, w.floor()));
  };
  quad::LayoutOptions opt;
  opt.max_length = std::max(q.radius / 4.0, 1e-300);
  if (w.family() == WeightFamily::plateau) opt.max_length = std::min(opt.max_length, w.radius() / 8.0);
  try {
    return quad::integrate_checked(f, lo, hi, breaks, sing, tol, opt);
  } catch (const ToleranceNotMet& e) {
    // an error in the mean of log w is absolute (a relative error of the
    // geometric mean); near-constant weights make the L1 scale vanish
    if (kind == BallIntegrand::log_density && e.error_bound() <= tol * (hi - lo))
      return {e.best_estimate(), e.error_bound()};
    throw;
  }
}

/// w(Delta(x, r)).
inline double ball_measure(const WeightSpec& w, const BallQuery& q, double tol = 1e-10) {
  return ball_integral(w, q, BallIntegrand::mass, tol).value;
}

// ---------------------------------------------------------------------------
// Sampling families

/// Lattice centres x log-spaced radii, optionally with seeded random centres.
struct SamplingFamily {
  int n = 1;
  Point lo{-1.0, -1.0};
  Point hi{1.0, 1.0};
  double r_min = 1.0 / 64.0;
  double r_max = 1.0;
  int radii = 33;
  int centers = 65;  // per axis
  int random_centers = 0;
  unsigned long long seed = 0;

  std::vector<double> radius_values() const {
    std::vector<double> out;
    if (radii <= 1) return {r_min};
    for (int k = 0; k < radii; ++k)
      out.push_back(r_min * std::pow(r_max / r_min, static_cast<double>(k) / (radii - 1)));
    return out;
  }

  std::vector<Point> center_points() const {
    auto axis = [&](int d) {
      std::vector<double> v;
      if (centers <= 1) return std::vector<double>{0.5 * (lo[d] + hi[d])};
      for (int k = 0; k < centers; ++k) v.push_back(lo[d] + (hi[d] - lo[d]) * k / (centers - 1));
      return v;
    };
    std::vector<Point> out;
    const auto xs = axis(0);
    if (n == 1) {
      for (double x : xs) out.push_back({x, 0.0});
    } else {
      const auto ys = axis(1);
      for (double y : ys)
        for (double x : xs) out.push_back({x, y});
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(lo[0], hi[0]), uy(lo[1], hi[1]);
    for (int k = 0; k < random_centers; ++k) {
      const double x = ux(rng);
      const double y = n == 2 ? uy(rng) : 0.0;
      out.push_back({x, y});
    }
    return out;
  }

  std::vector<BallQuery> balls() const {
    std::vector<BallQuery> out;
    const auto rs = radius_values();
    for (const auto& c : center_points())
      for (double r : rs) out.push_back({c, r});
    return out;
  }

  void validate() const {
    if (n != 1 && n != 2) throw std::invalid_argument("SamplingFamily: n must be 1 or 2");
    if (!(r_min > 0.0) || !(r_max >= r_min)) throw std::invalid_argument("SamplingFamily: need 0 < r_min <= r_max");
    if (radii < 1 || centers < 1) throw std::invalid_argument("SamplingFamily: counts must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Doubling

struct ModulusEstimate {
  double ratio = 1.0;  // a
  double value = 1.0;  // F(a) estimate
  BallQuery witness{};
};

/// Empirical sup of w(Delta(x, a s)) / w(Delta(x, s)) over the sampled (x, s).
inline ModulusEstimate annulus_modulus(const WeightSpec& w, double a,
                                       const std::vector<BallQuery>& family, int threads = 0) {
  if (!(a > 1.0 && a <= 2.0)) throw std::invalid_argument("annulus_modulus: ratio must lie in (1, 2]");
  if (family.empty()) throw std::invalid_argument("annulus_modulus: empty family");
  const auto ratios = parallel_map(family.size(), [&](std::size_t i) {
    const auto& q = family[i];
    return ball_measure(w, {q.center, a * q.radius}) / ball_measure(w, q);
  }, threads);
  ModulusEstimate best{a, 1.0, family.front()};
  for (std::size_t i = 0; i < ratios.size(); ++i)
    if (ratios[i] > best.value) best = {a, ratios[i], family[i]};
  return best;
}

struct DoublingProfile {
  double doubling_constant = 1.0;
  BallQuery witness{};
  std::vector<std::pair<double, double>> modulus_samples;  // (a, F(a))
  std::vector<BallQuery> sampling_family;
};

inline const std::vector<double>& default_modulus_ratios() {
  static const std::vector<double> r{1.01, 1.05, 1.1, 1.25, 1.5, 1.75, 2.0};
  return r;
}

/// Lower estimate of the doubling constant plus the thin-annulus modulus F on
/// the same family. F(2) is the doubling constant.
inline DoublingProfile doubling_constant(const WeightSpec& w, const std::vector<BallQuery>& family,
                                         const std::vector<double>& ratios = default_modulus_ratios(),
                                         int threads = 0) {
  if (family.empty()) throw std::invalid_argument("doubling_constant: empty family");
  DoublingProfile p;
  p.sampling_family = family;
  const auto masses = parallel_map(family.size(), [&](std::size_t i) {
    std::vector<double> m;
    m.push_back(ball_measure(w, family[i]));
    for (double a : ratios) m.push_back(ball_measure(w, {family[i].center, a * family[i].radius}));
    m.push_back(ball_measure(w, {family[i].center, 2.0 * family[i].radius}));
    return m;
  }, threads);
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    double sup = 1.0;
    for (const auto& m : masses) sup = std::max(sup, m[k + 1] / m[0]);
    p.modulus_samples.emplace_back(ratios[k], sup);
  }
  p.doubling_constant = 1.0;
  p.witness = family.front();
  for (std::size_t i = 0; i < masses.size(); ++i) {
    const double v = masses[i].back() / masses[i][0];
    if (v > p.doubling_constant) {
      p.doubling_constant = v;
      p.witness = family[i];
    }
  }
  return p;
}

inline DoublingProfile doubling_constant(const WeightSpec& w, const SamplingFamily& family,
                                         int threads = 0) {
  family.validate();
  return doubling_constant(w, family.balls(), default_modulus_ratios(), threads);
}

// ---------------------------------------------------------------------------
// M-good doubling

struct GoodDoublingWitness {
  Point x{};
  double R = 0.0;
  Point y{};
  double s = 0.0;
  double r = 0.0;
};

struct GoodDoublingReport {
  double M = 2.0;
  double deficit = 0.0;
  double threshold = 0.0;  // log(1 + 1/M)
  bool certified = true;
  GoodDoublingWitness witness{};
  std::size_t samples = 0;
};

/// max over sampled x, R, y in Delta(x, R) and s, r in [R/M, MR] of
/// |log(w(Delta(x,r)) s^n / (w(Delta(y,s)) r^n))|. `lattice` points per
/// parameter (y offsets, s and r each).
inline GoodDoublingReport good_doubling_deficit(const WeightSpec& w, double M,
                                                const std::vector<BallQuery>& family,
                                                int lattice = 5, int threads = 0) {
  if (!(M > 1.0)) throw std::invalid_argument("good_doubling_deficit: M must exceed 1");
  if (family.empty()) throw std::invalid_argument("good_doubling_deficit: empty family");
  if (lattice < 2) throw std::invalid_argument("good_doubling_deficit: lattice must be >= 2");
  const int n = w.dimension();
  std::vector<double> scale;  // multiples of R spanning [1/M, M]
  for (int k = 0; k < lattice; ++k) scale.push_back(std::pow(M, -1.0 + 2.0 * k / (lattice - 1)));
  std::vector<Point> offsets;  // inside the open unit ball
  for (int k = 0; k < lattice; ++k) {
    const double u = 0.8 * (-1.0 + 2.0 * k / (lattice - 1));
    if (n == 1) {
      offsets.push_back({u, 0.0});
    } else {
      for (int l = 0; l < lattice; ++l) {
        const double v = 0.8 * (-1.0 + 2.0 * l / (lattice - 1));
        if (u * u + v * v < 0.81) offsets.push_back({u, v});
      }
    }
  }

  struct Local {
    double deficit = 0.0;
    GoodDoublingWitness witness{};
  };
  const auto locals = parallel_map(family.size(), [&](std::size_t i) {
    const auto& q = family[i];
    const double R = q.radius;
    std::vector<double> norm_x;  // log of w(Delta(x, r)) / r^n
    for (double t : scale) {
      const double r = t * R;
      norm_x.push_back(std::log(ball_measure(w, {q.center, r}) / std::pow(r, n)));
    }
    Local best;
    for (const auto& o : offsets) {
      const Point y{q.center[0] + R * o[0], q.center[1] + R * o[1]};
      for (double ts : scale) {
        const double s = ts * R;
        const double norm_y = std::log(ball_measure(w, {y, s}) / std::pow(s, n));
        for (std::size_t k = 0; k < scale.size(); ++k) {
          const double d = std::abs(norm_x[k] - norm_y);
          if (d > best.deficit) best = {d, {q.center, R, y, s, scale[k] * R}};
        }
      }
    }
    return best;
  }, threads);

  GoodDoublingReport rep;
  rep.M = M;
  rep.threshold = std::log1p(1.0 / M);
  rep.samples = family.size() * offsets.size() * scale.size() * scale.size();
  rep.witness = {family.front().center, family.front().radius, family.front().center,
                 family.front().radius, family.front().radius};
  for (const auto& l : locals)
    if (l.deficit > rep.deficit) {
      rep.deficit = l.deficit;
      rep.witness = l.witness;
    }
  rep.certified = rep.deficit <= rep.threshold;
  return rep;
}

/// Largest M on the ladder 2, 4, 8, ... (up to max_M) certified on the family;
/// returns 1 when none is.
inline double largest_certified_M(const WeightSpec& w, const std::vector<BallQuery>& family,
                                  double max_M = 256.0, int lattice = 5, int threads = 0) {
  double best = 1.0;
  for (double M = 2.0; M <= max_M; M *= 2.0) {
    if (!good_doubling_deficit(w, M, family, lattice, threads).certified) break;
    best = M;
  }
  return best;
}

}  // namespace fkplab
