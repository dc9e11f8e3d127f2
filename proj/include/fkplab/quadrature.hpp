#pragma once

// Panel quadrature on the line: Gauss-Legendre panels, geometric grading
// toward integrable endpoint singularities, and a checked driver that
// compares two rule orders on the same panel layout.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "fkplab/types.hpp"

namespace fkplab::quad {

/// Calls visit(x, w) for every node of the N-point Gauss-Legendre rule on [a, b].
template <unsigned N, class Visit>
inline void gauss_panel(double a, double b, Visit&& visit) {
  using Rule = boost::math::quadrature::gauss<double, N>;
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  const auto& xs = Rule::abscissa();
  const auto& ws = Rule::weights();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] == 0.0) {
      visit(mid, half * ws[i]);
    } else {
      visit(mid - half * xs[i], half * ws[i]);
      visit(mid + half * xs[i], half * ws[i]);
    }
  }
}

/// Calls visit(x, wk, wg) for the 15 Kronrod nodes on [a, b]; wg is the
/// embedded 7-point Gauss weight (zero at Kronrod-only nodes).
template <class Visit>
inline void kronrod_panel(double a, double b, Visit&& visit) {
  using K = boost::math::quadrature::gauss_kronrod<double, 15>;
  using G = boost::math::quadrature::gauss<double, 7>;
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  const auto& xs = K::abscissa();
  const auto& wk = K::weights();
  const auto& wg = G::weights();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double g = i % 2 == 0 ? wg[i / 2] : 0.0;
    if (i == 0) {
      visit(mid, half * wk[0], half * g);
    } else {
      visit(mid - half * xs[i], half * wk[i], half * g);
      visit(mid + half * xs[i], half * wk[i], half * g);
    }
  }
}

template <unsigned N, class F>
inline double gauss(F&& f, double a, double b) {
  double acc = 0.0;
  gauss_panel<N>(a, b, [&](double x, double w) { acc += w * f(x); });
  return acc;
}

/// How to cut [a, b] into panels.
struct LayoutOptions {
  /// Longest allowed panel.
  double max_length = 0.25;
  /// Grading toward a singular point stops once a panel is shorter than this
  /// (absolute length).
  double grade_floor = 1e-12;
  /// Ratio between successive graded panel edges.
  double grade_ratio = 0.15;
};

/// Panel edges for [a, b]. `breaks` are points where the integrand is only
/// piecewise smooth; `singular` are points where it has an integrable
/// singularity and panels are graded geometrically toward them.
inline std::vector<double> panel_edges(double a, double b, std::span<const double> breaks,
                                       std::span<const double> singular,
                                       const LayoutOptions& opt = {}) {
  std::vector<double> edges{a, b};
  auto inside = [&](double p) { return p > a && p < b; };
  for (double p : breaks)
    if (inside(p)) edges.push_back(p);
  for (double p : singular)
    if (inside(p)) edges.push_back(p);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  // geometric mesh about each singular point, continued across other edges so
  // that no panel sits right next to a singularity it does not end at
  std::vector<double> graded;
  for (double p : singular) {
    const double reach = std::max(std::abs(p - a), std::abs(b - p));
    for (double step = reach * opt.grade_ratio; step > opt.grade_floor; step *= opt.grade_ratio) {
      if (inside(p - step)) graded.push_back(p - step);
      if (inside(p + step)) graded.push_back(p + step);
    }
  }
  edges.insert(edges.end(), graded.begin(), graded.end());
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  std::vector<double> out;
  out.reserve(edges.size() * 2);
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const double lo = edges[i], hi = edges[i + 1];
    const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / opt.max_length)));
    for (int j = 0; j < pieces; ++j) out.push_back(lo + (hi - lo) * j / pieces);
  }
  out.push_back(edges.back());
  return out;
}

/// Visits the nodes of an N-point rule on every panel.
template <unsigned N, class Visit>
inline void for_each_node(std::span<const double> edges, Visit&& visit) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    if (edges[i + 1] > edges[i]) gauss_panel<N>(edges[i], edges[i + 1], visit);
}

template <unsigned N, class F>
inline double integrate_edges(std::span<const double> edges, F&& f) {
  double acc = 0.0;
  for_each_node<N>(edges, [&](double x, double w) { acc += w * f(x); });
  return acc;
}

struct Estimate {
  double value = 0.0;
  double error = 0.0;
};

/// Integrates with 20- and 10-point rules on a common layout, halving the
/// panel length until they agree to `rel_tol` (relative to the L1 size).
/// Throws ToleranceNotMet with the best estimate after `max_refinements`.
template <class F>
inline Estimate integrate_checked(F&& f, double a, double b, std::span<const double> breaks,
                                  std::span<const double> singular, double rel_tol,
                                  LayoutOptions opt = {}, int max_refinements = 6) {
  if (a == b) return {0.0, 0.0};
  if (b < a) {
    auto e = integrate_checked(f, b, a, breaks, singular, rel_tol, opt, max_refinements);
    return {-e.value, e.error};
  }
  opt.max_length = std::min(opt.max_length, b - a);
  Estimate best{};
  for (int level = 0; level <= max_refinements; ++level) {
    const auto edges = panel_edges(a, b, breaks, singular, opt);
    double fine = 0.0, coarse = 0.0, l1 = 0.0;
    for_each_node<20>(edges, [&](double x, double w) {
      const double v = f(x);
      fine += w * v;
      l1 += w * std::abs(v);
    });
    for_each_node<10>(edges, [&](double x, double w) { coarse += w * f(x); });
    best = {fine, std::abs(fine - coarse)};
    if (!std::isfinite(fine)) break;
    if (best.error <= rel_tol * std::max(l1, 1e-300)) return best;
    opt.max_length *= 0.5;
    opt.grade_floor *= 1e-2;
    opt.grade_ratio = std::sqrt(opt.grade_ratio);  // graded panels must refine too
  }
  throw ToleranceNotMet("quadrature did not reach the requested tolerance", best.value,
                        best.error);
}

/// Vector-valued variant of integrate_checked: all K components share one
/// layout and must each meet the tolerance relative to their own L1 size.
template <std::size_t K, class F>
inline std::array<Estimate, K> integrate_checked_n(F&& f, double a, double b,
                                                   std::span<const double> breaks,
                                                   std::span<const double> singular,
                                                   double rel_tol, LayoutOptions opt = {},
                                                   int max_refinements = 6) {
  std::array<Estimate, K> best{};
  if (a == b) return best;
  if (b < a) {
    auto e = integrate_checked_n<K>(f, b, a, breaks, singular, rel_tol, opt, max_refinements);
    for (auto& c : e) c.value = -c.value;
    return e;
  }
  opt.max_length = std::min(opt.max_length, b - a);
  for (int level = 0; level <= max_refinements; ++level) {
    const auto edges = panel_edges(a, b, breaks, singular, opt);
    std::array<double, K> fine{}, coarse{}, l1{};
    for_each_node<20>(edges, [&](double x, double w) {
      const std::array<double, K> v = f(x);
      for (std::size_t k = 0; k < K; ++k) {
        fine[k] += w * v[k];
        l1[k] += w * std::abs(v[k]);
      }
    });
    for_each_node<10>(edges, [&](double x, double w) {
      const std::array<double, K> v = f(x);
      for (std::size_t k = 0; k < K; ++k) coarse[k] += w * v[k];
    });
    bool ok = true, finite = true;
    for (std::size_t k = 0; k < K; ++k) {
      best[k] = {fine[k], std::abs(fine[k] - coarse[k])};
      finite = finite && std::isfinite(fine[k]);
      ok = ok && best[k].error <= rel_tol * std::max(l1[k], 1e-300);
    }
    if (ok) return best;
    if (!finite) break;
    opt.max_length *= 0.5;
    opt.grade_floor *= 1e-2;
    opt.grade_ratio = std::sqrt(opt.grade_ratio);  // graded panels must refine too
  }
  throw ToleranceNotMet("quadrature did not reach the requested tolerance", best[0].value,
                        best[0].error);
}

}  // namespace fkplab::quad
