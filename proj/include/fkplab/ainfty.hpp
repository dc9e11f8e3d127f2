#pragma once

// The A-infinity characteristic sup_Delta (mean of w) / exp(mean of log w),
// Korey's level-set bounds, and the sweep relating ||mu_w||_C, [w]_Ainf and
// the error term E.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "fkplab/carleson.hpp"
#include "fkplab/fkp_identity.hpp"
#include "fkplab/parallel.hpp"
#include "fkplab/types.hpp"
#include "fkplab/weight.hpp"

namespace fkplab {

/// (mean of w on Delta) / exp(mean of log w on Delta) with its error estimate.
/// Infinite when log w is not integrable on the ball.
inline Term ball_ratio_estimate(const WeightSpec& w, const BallQuery& q, double tol = 1e-10) {
  q.validate();
  if (w.is_constant()) return {1.0, 0.0};
  const double vol = q.volume(w.dimension());
  const auto m = ball_integral(w, q, BallIntegrand::mass, tol);
  const auto l = ball_integral(w, q, BallIntegrand::log_density, tol);
  const double mean = m.value / vol, mean_log = l.value / vol;
  if (!std::isfinite(mean_log) || !std::isfinite(mean))
    return {std::numeric_limits<double>::infinity(), 0.0};
  const double v = std::exp(std::log(mean) - mean_log);
  // d(ratio) = ratio (dm / m + dl)
  return {v, v * (m.error / std::max(m.value, 1e-300) + l.error / vol)};
}

inline double ball_ratio(const WeightSpec& w, const BallQuery& q, double tol = 1e-10) {
  return ball_ratio_estimate(w, q, tol).value;
}

struct AInftyEstimate {
  double value = 1.0;
  BallQuery witness{};
  std::size_t family_size = 0;
  double quad_error = 0.0;  // at the witness
  bool infinite = false;
  std::vector<double> per_ball;  // family order
};

/// Lower estimate of [w]_Ainf: the sup of ball_ratio over the family.
inline AInftyEstimate ainfty_constant(const WeightSpec& w, const std::vector<BallQuery>& family,
                                      double tol = 1e-10, int threads = 0) {
  if (family.empty()) throw std::invalid_argument("ainfty_constant: family must be non-empty");
  const auto vals = parallel_map(family.size(), [&](std::size_t i) { return ball_ratio_estimate(w, family[i], tol); },
                                 threads);
  AInftyEstimate est;
  est.family_size = family.size();
  est.witness = family.front();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    est.per_ball.push_back(vals[i].value);
    if (vals[i].value > est.value || i == 0) {
      est.value = vals[i].value;
      est.witness = family[i];
      est.quad_error = vals[i].error;
    }
  }
  est.infinite = std::isinf(est.value);
  return est;
}

// ---------------------------------------------------------------------------
// Korey level-set bounds

struct KoreyReport {
  double alpha = 0.0;
  double lebesgue_ratio = 0.0;  // |E| / |Delta|
  double weight_ratio = 0.0;    // w(E) / w(Delta)
  double upper_bound = 0.0;     // (1 + alpha)(|E|/|Delta|)^{1 - alpha}
  double lower_bound = 0.0;     // 1 - (1 + alpha)(1 - |E|/|Delta|)^{1 - alpha}, with F = E
  bool upper_holds = false;
  bool lower_holds = false;
  bool pass() const noexcept { return upper_holds && lower_holds; }
};

/// Both Korey inequalities for E (a union of disjoint balls inside Delta)
/// playing the role of E in the upper bound and of F in the lower one.
inline KoreyReport korey_check(const WeightSpec& w, double alpha, const BallQuery& delta,
                               const std::vector<BallQuery>& E, double tol = 1e-10) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("korey_check: alpha must lie in (0, 1)");
  if (E.empty()) throw std::invalid_argument("korey_check: E must be non-empty");
  delta.validate();
  const int n = w.dimension();
  const double slack = 1e-12 * delta.radius;
  for (std::size_t i = 0; i < E.size(); ++i) {
    E[i].validate();
    if (distance(E[i].center, delta.center, n) + E[i].radius > delta.radius + slack)
      throw std::invalid_argument("korey_check: E must lie inside Delta");
    for (std::size_t j = 0; j < i; ++j)
      if (distance(E[i].center, E[j].center, n) < E[i].radius + E[j].radius - slack)
        throw std::invalid_argument("korey_check: the balls of E must be disjoint");
  }
  double wE = 0.0, lebE = 0.0;
  for (const auto& b : E) {
    wE += ball_measure(w, b, tol);
    lebE += b.volume(n);
  }
  KoreyReport rep;
  rep.alpha = alpha;
  rep.lebesgue_ratio = std::min(1.0, lebE / delta.volume(n));
  rep.weight_ratio = wE / ball_measure(w, delta, tol);
  rep.upper_bound = (1.0 + alpha) * std::pow(rep.lebesgue_ratio, 1.0 - alpha);
  rep.lower_bound = 1.0 - (1.0 + alpha) * std::pow(1.0 - rep.lebesgue_ratio, 1.0 - alpha);
  rep.upper_holds = rep.weight_ratio <= rep.upper_bound;
  rep.lower_holds = rep.weight_ratio >= rep.lower_bound;
  return rep;
}

struct KoreySweep {
  std::size_t checks = 0;
  std::size_t failures = 0;
  double min_upper_margin = std::numeric_limits<double>::infinity();  // upper_bound - ratio
  double min_lower_margin = std::numeric_limits<double>::infinity();  // ratio - lower_bound
};

/// Korey checks along the converse construction: for sampled x, R, y in
/// Delta(x, R) and s, r in [R/M, MR], Delta = Delta(x, 10 M R) with E =
/// Delta(x, r) and F = Delta(y, s).
inline KoreySweep korey_converse_sweep(const WeightSpec& w, double alpha, double M,
                                       const std::vector<BallQuery>& family, int lattice = 3,
                                       int threads = 0) {
  if (!(M > 1.0)) throw std::invalid_argument("korey_converse_sweep: M must exceed 1");
  if (lattice < 2) throw std::invalid_argument("korey_converse_sweep: lattice must be >= 2");
  std::vector<double> scale;
  for (int k = 0; k < lattice; ++k) scale.push_back(std::pow(M, -1.0 + 2.0 * k / (lattice - 1)));
  const auto parts = parallel_map(family.size(), [&](std::size_t i) {
    const auto& q = family[i];
    const double R = q.radius;
    const BallQuery big{q.center, 10.0 * M * R};
    KoreySweep s;
    auto account = [&](const KoreyReport& k) {
      ++s.checks;
      if (!k.pass()) ++s.failures;
      s.min_upper_margin = std::min(s.min_upper_margin, k.upper_bound - k.weight_ratio);
      s.min_lower_margin = std::min(s.min_lower_margin, k.weight_ratio - k.lower_bound);
    };
    for (double t : scale) account(korey_check(w, alpha, big, {{q.center, t * R}}));
    for (int k = 0; k < lattice; ++k) {
      const double u = 0.8 * (-1.0 + 2.0 * k / (lattice - 1));
      const Point y{q.center[0] + u * R, q.center[1]};
      for (double t : scale) account(korey_check(w, alpha, big, {{y, t * R}}));
    }
    return s;
  }, threads);
  KoreySweep out;
  for (const auto& p : parts) {
    out.checks += p.checks;
    out.failures += p.failures;
    out.min_upper_margin = std::min(out.min_upper_margin, p.min_upper_margin);
    out.min_lower_margin = std::min(out.min_lower_margin, p.min_lower_margin);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Theorem sweep

struct SweepInput {
  double t = 0.0;
  WeightSpec weight;
};

struct SweepRow {
  double t = 0.0;
  double carleson_norm = 0.0;
  double ainfty_minus_1 = 0.0;
  double error_term = 0.0;
  double quad_error = 0.0;  // Carleson + A-infinity + E errors at their witnesses
  std::size_t flagged = 0;  // boxes with a non-decaying tail
  /// log [w]_Ainf <= ||mu||_C + E + quad_error on this row.
  bool log_bound_holds = true;
};

struct SweepOptions {
  FkpOptions fkp{};
  double tol = 1e-10;
};

/// One row per weight: ||mu_w||_C, [w]_Ainf - 1 and E on the same ball
/// family, with the row-wise check log [w]_Ainf <= ||mu||_C + E. Rows run in
/// parallel; each row is computed single-threaded so results are
/// independent of the schedule.
inline std::vector<SweepRow> theorem_sweep(const std::vector<SweepInput>& inputs,
                                           const std::vector<BallQuery>& family,
                                           const SweepOptions& opt = {}, int threads = 0) {
  if (family.empty()) throw std::invalid_argument("theorem_sweep: family must be non-empty");
  return parallel_map(inputs.size(), [&](std::size_t i) {
    const auto& w = inputs[i].weight;
    SweepRow row;
    row.t = inputs[i].t;
    if (w.is_constant()) return row;
    BoxMassOptions bo = opt.fkp.box;
    bo.heat = opt.fkp.heat;
    const auto mu = carleson_norm(w, family, bo, 1);
    const auto ai = ainfty_constant(w, family, opt.tol, 1);
    const auto err = error_term(w, family, opt.fkp, 1);
    row.carleson_norm = mu.value;
    row.ainfty_minus_1 = ai.value - 1.0;
    row.error_term = err.value;
    row.flagged = mu.flagged;
    row.quad_error = mu.quad_error + ai.quad_error / ai.value + err.quad_error;
    row.log_bound_holds = std::log(ai.value) <= row.carleson_norm + row.error_term + row.quad_error;
    return row;
  }, threads);
}

inline constexpr const char* kSweepCsvHeader = "t,carleson_norm,ainfty_minus_1,error_term,quad_error";

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << kSweepCsvHeader << '\n';
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, r.carleson_norm, r.ainfty_minus_1,
                  r.error_term, r.quad_error);
    out << buf;
  }
}

}  // namespace fkplab
