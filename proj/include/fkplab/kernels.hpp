#pragma once

// Radial convolution kernels on R^n (n = 1, 2) and their radial derivatives.
// Kernels are evaluated at unit scale; K_r(z) = r^{-n} K(z / r).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "fkplab/quadrature.hpp"
#include "fkplab/types.hpp"

namespace fkplab {

enum class KernelKind {
  gauss,                 // phi(z) = pi^{-n/2} exp(-|z|^2)
  gauss_gradient,        // psi = grad phi
  indicator,             // chi = 1 on the unit ball
  normalized_indicator,  // chi / gamma_n
  reference_bump,        // varphi: unit mass, flat on Delta(0,1), supported in Delta(0,2)
  eta_bump,              // 1 on Delta(0,1), supported in Delta(0,1+eta)
  truncated_gauss,       // 1_{Delta(0,kappa)} min(phi, pi^{-n/2} - 1/kappa)
};

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::gauss: return "gauss";
    case KernelKind::gauss_gradient: return "gauss_gradient";
    case KernelKind::indicator: return "indicator";
    case KernelKind::normalized_indicator: return "normalized_indicator";
    case KernelKind::reference_bump: return "reference_bump";
    case KernelKind::eta_bump: return "eta_bump";
    case KernelKind::truncated_gauss: return "truncated_gauss";
  }
  return "unknown";
}

struct KernelDescriptor {
  KernelKind kind = KernelKind::gauss;
  double r = 1.0;
  double eta = 0.5;    // eta_bump only, in (0, 1)
  double kappa = 8.0;  // truncated_gauss only, > pi^{n/2}
};

/// Radial profile that is constant on [0, edges.front()], given by piecewise
/// Chebyshev interpolants on the segments between consecutive `edges` and
/// zero beyond edges.back(). Degree 20 on 24 pieces per segment keeps the
/// interpolant smooth to near rounding level, which the checked panel
/// quadrature relies on.
class RadialTable {
 public:
  static constexpr int kPiecesPerSegment = 24;
  static constexpr int kNodes = 21;

  template <class F>
  RadialTable(const std::vector<double>& edges, F&& f) {
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()) || edges.front() < 0.0)
      throw std::invalid_argument("RadialTable: edges must be sorted and non-negative");
    edges_ = edges;
    flat_value_ = f(edges.front());
    for (std::size_t s = 0; s + 1 < edges.size(); ++s)
      for (int p = 0; p < kPiecesPerSegment; ++p)
        cuts_.push_back(edges[s] + (edges[s + 1] - edges[s]) * p / kPiecesPerSegment);
    cuts_.push_back(edges.back());
    const std::size_t pieces = cuts_.size() - 1;
    coef_.resize(pieces);
    dcoef_.resize(pieces);
    for (std::size_t p = 0; p < pieces; ++p) {
      const double a = cuts_[p], width = cuts_[p + 1] - cuts_[p];
      std::array<double, kNodes> fv{};
      for (int j = 0; j < kNodes; ++j) {
        const double t = std::cos(std::numbers::pi * (j + 0.5) / kNodes);
        fv[j] = f(a + 0.5 * width * (t + 1.0));
      }
      auto& c = coef_[p];
      for (int k = 0; k < kNodes; ++k) {
        double acc = 0.0;
        for (int j = 0; j < kNodes; ++j) acc += fv[j] * std::cos(std::numbers::pi * k * (j + 0.5) / kNodes);
        c[k] = acc * 2.0 / kNodes;
      }
      c[0] *= 0.5;
      // derivative series in the local variable t in [-1, 1]
      auto& d = dcoef_[p];
      d.fill(0.0);
      for (int k = kNodes - 1; k >= 1; --k) d[k - 1] = (k + 1 < kNodes ? d[k + 1] : 0.0) + 2.0 * k * c[k];
      d[0] *= 0.5;
    }
  }

  double flat_end() const noexcept { return cuts_.front(); }
  /// Segment edges; the profile is smooth between consecutive edges.
  const std::vector<double>& edges() const noexcept { return edges_; }
  /// Piece boundaries; the interpolant is one polynomial between consecutive cuts.
  const std::vector<double>& cuts() const noexcept { return cuts_; }
  double support() const noexcept { return cuts_.back(); }

  double value(double rho) const {
    if (rho < 0.0 || rho >= support()) return 0.0;
    if (rho <= flat_end()) return flat_value_;
    double t;
    const std::size_t p = locate(rho, t);
    // tabulated profiles are non-negative; interpolation noise near the edge is not
    return std::max(0.0, clenshaw(coef_[p], t));
  }

  double slope(double rho) const {
    if (rho <= flat_end() || rho >= support()) return 0.0;
    double t;
    const std::size_t p = locate(rho, t);
    return clenshaw(dcoef_[p], t) * 2.0 / (cuts_[p + 1] - cuts_[p]);
  }

  /// int_0^a value(t) dt.
  double integral(double a) const {
    a = std::clamp(a, 0.0, support());
    double acc = flat_value_ * std::min(a, flat_end());
    for (std::size_t p = 0; p + 1 < cuts_.size() && a > cuts_[p]; ++p)
      acc += quad::gauss<24>([&](double x) { return value(x); }, cuts_[p], std::min(a, cuts_[p + 1]));
    return acc;
  }

 private:
  std::size_t locate(double rho, double& t) const {
    auto it = std::upper_bound(cuts_.begin(), cuts_.end(), rho);
    const std::size_t p = std::min<std::size_t>(static_cast<std::size_t>(it - cuts_.begin()) - 1, coef_.size() - 1);
    t = 2.0 * (rho - cuts_[p]) / (cuts_[p + 1] - cuts_[p]) - 1.0;
    return p;
  }

  static double clenshaw(const std::array<double, kNodes>& c, double t) {
    double b1 = 0.0, b2 = 0.0;
    for (int k = kNodes - 1; k >= 1; --k) {
      const double b0 = 2.0 * t * b1 - b2 + c[k];
      b2 = b1;
      b1 = b0;
    }
    return t * b1 - b2 + c[0];
  }

  double flat_value_ = 0.0;
  std::vector<double> edges_;
  std::vector<double> cuts_;
  std::vector<std::array<double, kNodes>> coef_;
  std::vector<std::array<double, kNodes>> dcoef_;
};

namespace detail {

inline double mollifier_shape(double s) { return std::abs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0; }

/// Normalizing constant of the standard mollifier in R^n.
inline double mollifier_constant(int n) {
  auto f = [n](double s) { return mollifier_shape(s) * (n == 1 ? 2.0 : 2.0 * std::numbers::pi * s); };
  std::vector<double> none;
  return 1.0 / quad::integrate_checked(f, 0.0, 1.0, none, none, 1e-13).value;
}

/// Cumulative integral of the unit-mass 1-D mollifier.
inline double mollifier_cdf_1d(double s) {
  constexpr int cells = 4096;
  static const double c = mollifier_constant(1);
  static const std::vector<double> table = [] {
    std::vector<double> t(cells + 1, 0.0);
    for (int i = 1; i <= cells; ++i) {
      const double a = -1.0 + 2.0 * (i - 1) / cells, b = -1.0 + 2.0 * i / cells;
      t[i] = t[i - 1] + c * quad::gauss<20>(mollifier_shape, a, b);
    }
    return t;
  }();
  if (s <= -1.0) return 0.0;
  if (s >= 1.0) return 1.0;
  const int i = std::min(cells - 1, static_cast<int>((s + 1.0) / 2.0 * cells));
  const double a = -1.0 + 2.0 * i / cells;
  return table[i] + c * quad::gauss<20>([](double t) { return mollifier_shape(std::abs(t)); }, a, s);
}

/// Profile at radius rho of 1_{Delta(0,R)} * k_delta, with k a radial unit-mass
/// kernel (profile kp, supported in Delta(0, ks)). n = 1 uses the kernel's
/// cumulative integral kcdf; n = 2 integrates the circle-overlap angle.
template <class Profile, class Cdf>
double smoothed_indicator(int n, double R, double delta, double ks, double rho, const Profile& kp,
                          const Cdf& kcdf) {
  if (n == 1) return kcdf((rho + R) / delta) - kcdf((rho - R) / delta);
  const double reach = ks * delta;
  if (rho + reach <= R) return 1.0;
  if (rho - reach >= R) return 0.0;
  auto f = [&](double s) {
    if (s <= 0.0) return 0.0;
    double ang;
    if (rho <= 0.0) {
      ang = s < R ? 2.0 * std::numbers::pi : 0.0;
    } else {
      const double c = (rho * rho + s * s - R * R) / (2.0 * rho * s);
      ang = c >= 1.0 ? 0.0 : (c <= -1.0 ? 2.0 * std::numbers::pi : 2.0 * std::acos(c));
    }
    return kp(s / delta) / (delta * delta) * s * ang;
  };
  // the overlap angle has a square-root kink where the circles become tangent
  std::vector<double> kink{std::abs(R - rho)};
  std::vector<double> none;
  try {
    return quad::integrate_checked(f, 0.0, reach, none, kink, 1e-12).value;
  } catch (const ToleranceNotMet& e) {
    if (e.error_bound() <= 1e-12) return e.best_estimate();
    throw;
  }
}

}  // namespace detail

/// The reference bump varphi = (1_{Delta(0,3/2)} * m_{1/4}) / |Delta(0,3/2)|
/// with m the standard mollifier: unit mass, constant on Delta(0,5/4),
/// supported in Delta(0,7/4), radially non-increasing.
inline const RadialTable& reference_bump_table(int n) {
  static std::once_flag once[2];
  static std::unique_ptr<RadialTable> tables[2];
  const int k = n == 1 ? 0 : 1;
  std::call_once(once[k], [&] {
    const double c = detail::mollifier_constant(n);
    const double mass = unit_ball_volume(n) * std::pow(1.5, n);
    auto kp = [c](double t) { return c * detail::mollifier_shape(std::abs(t)); };
    tables[k] = std::make_unique<RadialTable>(std::vector<double>{1.25, 1.75}, [&](double rho) {
      return detail::smoothed_indicator(n, 1.5, 0.25, 1.0, rho, kp, detail::mollifier_cdf_1d) / mass;
    });
  });
  return *tables[k];
}

/// The eta-bump 1_{Delta(0,1+eta/2)} * varphi_{eta/4}: equal to 1 on
/// Delta(0,1), supported in Delta(0,1+eta), radially non-increasing.
inline std::shared_ptr<const RadialTable> eta_bump_table(int n, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta_bump: eta must lie in (0, 1)");
  static std::mutex mutex;
  static std::map<std::pair<int, double>, std::shared_ptr<const RadialTable>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{n, eta}];
  if (!slot) {
    const auto& vp = reference_bump_table(n);
    auto kp = [&vp](double t) { return vp.value(std::abs(t)); };
    auto cdf = [&vp](double s) {  // int_{-inf}^{s} varphi on the line
      const double half = vp.integral(std::abs(s));
      return s >= 0.0 ? 0.5 + half : 0.5 - half;
    };
    const double R = 1.0 + eta / 2.0, delta = eta / 4.0;
        // varphi_delta has its own transition bands at distance 1.25 delta .. 1.75 delta
    const std::vector<double> edges{R - 1.75 * delta, R - 1.25 * delta, R + 1.25 * delta, R + 1.75 * delta};
    slot = std::make_shared<const RadialTable>(edges, [&](double rho) {
      return detail::smoothed_indicator(n, R, delta, vp.support(), rho, kp, cdf);
    });
  }
  return slot;
}

/// A kernel as a radial profile k(|z|) with radial derivative k'(|z|), so that
/// grad K(z) = k'(|z|) z / |z|.
class RadialKernel {
 public:
  RadialKernel(int n, const KernelDescriptor& d) : n_(n), d_(d) {
    if (n != 1 && n != 2) throw std::invalid_argument("kernels are supported for n = 1, 2 only");
    if (!(d.r > 0.0)) throw std::invalid_argument("kernel scale must be positive");
    norm_ = std::pow(std::numbers::pi, -0.5 * n);
    switch (d.kind) {
      case KernelKind::gauss:
      case KernelKind::gauss_gradient:
        if (!(d.kappa > 1.0)) throw std::invalid_argument("kappa must exceed 1");
        support_ = d.kappa;
        break;
      case KernelKind::indicator:
      case KernelKind::normalized_indicator:
        support_ = 1.0;
        breaks_ = {1.0};
        break;
      case KernelKind::reference_bump:
        table_ = std::shared_ptr<const RadialTable>(&reference_bump_table(n), [](const RadialTable*) {});
        support_ = table_->support();
        breaks_.assign(table_->edges().begin(), table_->edges().end() - 1);
        break;
      case KernelKind::eta_bump:
        table_ = eta_bump_table(n, d.eta);
        support_ = table_->support();
        breaks_.assign(table_->edges().begin(), table_->edges().end() - 1);
        break;
      case KernelKind::truncated_gauss: {
        if (!(d.kappa > std::pow(std::numbers::pi, 0.5 * n)))
          throw std::invalid_argument("truncated_gauss needs kappa > pi^{n/2}");
        cap_ = norm_ - 1.0 / d.kappa;
        cap_radius_ = std::sqrt(-std::log(cap_ / norm_));
        support_ = d.kappa;
        breaks_ = {cap_radius_};
        break;
      }
    }
  }

  int dimension() const noexcept { return n_; }
  const KernelDescriptor& descriptor() const noexcept { return d_; }
  KernelKind kind() const noexcept { return d_.kind; }
  double scale() const noexcept { return d_.r; }
  /// Radius (unit scale) beyond which the kernel is zero or truncated.
  double support() const noexcept { return support_; }
  /// Radii (unit scale) where the profile is not smooth.
  const std::vector<double>& breaks() const noexcept { return breaks_; }
  /// breaks() refined to every interpolation piece, so that no panel straddles
  /// a piece boundary; used where extra panels are cheap (integrals on the line).
  std::vector<double> fine_breaks() const {
    if (!table_) return breaks_;
    return {table_->cuts().begin(), table_->cuts().end() - 1};
  }
  bool truncates_tail() const noexcept {
    return d_.kind == KernelKind::gauss || d_.kind == KernelKind::gauss_gradient;
  }

  double value(double rho) const {
    switch (d_.kind) {
      case KernelKind::gauss:
      case KernelKind::gauss_gradient: return norm_ * std::exp(-rho * rho);
      case KernelKind::indicator: return rho < 1.0 ? 1.0 : 0.0;
      case KernelKind::normalized_indicator: return rho < 1.0 ? 1.0 / unit_ball_volume(n_) : 0.0;
      case KernelKind::reference_bump:
      case KernelKind::eta_bump: return table_->value(rho);
      case KernelKind::truncated_gauss:
        return rho < d_.kappa ? std::min(norm_ * std::exp(-rho * rho), cap_) : 0.0;
    }
    return 0.0;
  }

  /// Radial derivative k'(rho); zero for the indicators (their gradient is singular).
  double slope(double rho) const {
    switch (d_.kind) {
      case KernelKind::gauss:
      case KernelKind::gauss_gradient: return -2.0 * rho * norm_ * std::exp(-rho * rho);
      case KernelKind::reference_bump:
      case KernelKind::eta_bump: return table_->slope(rho);
      case KernelKind::truncated_gauss:
        return rho > cap_radius_ && rho < d_.kappa ? -2.0 * rho * norm_ * std::exp(-rho * rho) : 0.0;
      default: return 0.0;
    }
  }

  /// L1 norm at unit scale (exact where known, quadrature otherwise).
  double mass() const {
    switch (d_.kind) {
      case KernelKind::gauss:
      case KernelKind::gauss_gradient:
      case KernelKind::normalized_indicator:
      case KernelKind::reference_bump: return 1.0;
      case KernelKind::indicator: return unit_ball_volume(n_);
      case KernelKind::eta_bump: return unit_ball_volume(n_) * std::pow(1.0 + d_.eta / 2.0, n_);
      case KernelKind::truncated_gauss: {
        auto f = [&](double rho) {
          return value(rho) * (n_ == 1 ? 2.0 : 2.0 * std::numbers::pi * rho);
        };
        std::vector<double> none;
        return quad::integrate_checked(f, 0.0, support_, breaks_, none, 1e-13).value;
      }
    }
    return 1.0;
  }

 private:
  int n_;
  KernelDescriptor d_;
  double norm_ = 1.0;
  double support_ = 1.0;
  double cap_ = 0.0;
  double cap_radius_ = 0.0;
  std::vector<double> breaks_;
  std::shared_ptr<const RadialTable> table_;
};

/// Writes "rho,value,slope" rows for a kernel at unit scale.
inline void export_kernel_csv(const RadialKernel& k, std::ostream& out, std::size_t rows = 512) {
  out << "rho,value,slope\n";
  const double top = std::min(k.support(), 4.0);
  out.precision(17);
  for (std::size_t i = 0; i <= rows; ++i) {
    const double rho = top * static_cast<double>(i) / static_cast<double>(rows);
    out << rho << ',' << k.value(rho) << ',' << k.slope(rho) << '\n';
  }
}

}  // namespace fkplab
