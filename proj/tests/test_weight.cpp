#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fkplab/weight.hpp"
#include "support.hpp"

using namespace fkplab;
using fkplab::testing::Gen;

namespace {

/// Midpoint sum on a uniform grid; the independent oracle for ball masses.
template <class F>
double midpoint(F&& f, double a, double b, int cells) {
  const double h = (b - a) / cells;
  double acc = 0.0;
  for (int i = 0; i < cells; ++i) acc += f(a + (i + 0.5) * h);
  return acc * h;
}

GridData abs_grid(double spacing, double half) {
  GridData g;
  const int k = static_cast<int>(std::lround(half / spacing));
  for (int i = -k; i <= k; ++i) {
    g.xs.push_back(i * spacing);
    g.density.push_back(std::abs(i * spacing));
  }
  return g;
}

SamplingFamily unit_family(int n, int centers = 17, int radii = 9) {
  SamplingFamily f;
  f.n = n;
  f.centers = centers;
  f.radii = radii;
  return f;
}

}  // namespace

TEST(WeightEval, ClosedForms) {
  EXPECT_EQ(WeightSpec::constant(1, 1.0)(3.7), 1.0);
  EXPECT_DOUBLE_EQ(WeightSpec::power(1, 0.5)(4.0), 2.0);
  EXPECT_DOUBLE_EQ(WeightSpec::power(2, 2.0)(Point{3.0, 4.0}), 25.0);
  EXPECT_DOUBLE_EQ(WeightSpec::plateau(1, 0.1)(0.0), 1.1);
  EXPECT_DOUBLE_EQ(WeightSpec::plateau(1, 0.1)(1.5), 1.0);
}

TEST(WeightEval, GridInterpolatesAbsoluteValue) {
  const auto w = WeightSpec::grid(1, abs_grid(0.01, 2.0));
  // |x| is linear between nodes, so interpolation is exact up to rounding
  EXPECT_NEAR(w(0.505), 0.505, 1e-12);
  EXPECT_NEAR(w(-1.2345), 1.2345, 1e-12);
  EXPECT_THROW(w(2.5), OutOfDomain);
}

TEST(WeightEval, GridFloorKeepsLogsFinite) {
  const auto w = WeightSpec::grid(1, abs_grid(0.5, 1.0), 1e-300);
  EXPECT_EQ(w(0.0), 1e-300);
  EXPECT_TRUE(std::isfinite(std::log(w(0.0))));
}

TEST(WeightSpecValidation, RejectsBadParameters) {
  EXPECT_THROW(WeightSpec::constant(3, 1.0), std::invalid_argument);
  EXPECT_THROW(WeightSpec::constant(1, 0.0), std::invalid_argument);
  EXPECT_THROW(WeightSpec::power(1, -1.0), std::invalid_argument);
  EXPECT_THROW(WeightSpec::plateau(1, 1.0), std::invalid_argument);
  EXPECT_THROW(WeightSpec::grid(1, GridData{{0.0, 1.0}, {}, {1.0}}), std::invalid_argument);
  EXPECT_THROW(WeightSpec::grid(1, GridData{{1.0, 0.0}, {}, {1.0, 1.0}}), std::invalid_argument);
}

TEST(BallMeasure, ClosedForms) {
  EXPECT_DOUBLE_EQ(ball_measure(WeightSpec::constant(1, 1.0), {{0.0, 0.0}, 2.0}), 4.0);
  EXPECT_NEAR(ball_measure(WeightSpec::power(1, 2.0), {{0.0, 0.0}, 1.0}), 2.0 / 3.0, 1e-14);
  // centred power weight in the plane: 2 pi r^{a+2} / (a + 2)
  EXPECT_NEAR(ball_measure(WeightSpec::power(2, 0.5), {{0.0, 0.0}, 2.0}),
              2.0 * std::numbers::pi * std::pow(2.0, 2.5) / 2.5, 1e-12);
}

TEST(BallMeasure, SqrtWeightAgainstRiemannSum) {
  const auto w = WeightSpec::power(1, 0.5);
  const double oracle = midpoint([](double x) { return std::sqrt(std::abs(x)); }, 0.5, 1.5, 200000);
  EXPECT_NEAR(ball_measure(w, {{1.0, 0.0}, 0.5}), oracle, 1e-9);
}

TEST(BallMeasure, OffCentrePlanarPowerAgainstTensorSum) {
  const auto w = WeightSpec::power(2, 1.0);
  const BallQuery q{{0.7, -0.2}, 0.5};
  // polar midpoint sum about the ball centre
  const int nr = 800, nt = 800;
  double acc = 0.0;
  for (int i = 0; i < nr; ++i) {
    const double rho = (i + 0.5) * q.radius / nr;
    for (int j = 0; j < nt; ++j) {
      const double th = (j + 0.5) * 2.0 * std::numbers::pi / nt;
      acc += w(Point{q.center[0] + rho * std::cos(th), q.center[1] + rho * std::sin(th)}) * rho;
    }
  }
  acc *= (q.radius / nr) * (2.0 * std::numbers::pi / nt);
  EXPECT_NEAR(ball_measure(w, q), acc, 1e-5 * acc);
}

TEST(BallMeasure, GridWeightMatchesClosedFormOfInterpolant) {
  const auto w = WeightSpec::grid(1, abs_grid(0.25, 2.0));
  // |x| on [-1, 1.5] exactly, since the interpolant of |x| is |x|
  EXPECT_NEAR(ball_measure(w, {{0.25, 0.0}, 1.25}), 0.5 + 1.125, 1e-12);
}

TEST(BallMeasure, LogDensityOfPowerWeight) {
  // int_{-1}^{1} a log|x| dx = -2a
  const auto e = ball_integral(WeightSpec::power(1, 0.3), {{0.0, 0.0}, 1.0}, BallIntegrand::log_density);
  EXPECT_NEAR(e.value, -0.6, 1e-12);
}

TEST(BallMeasureProperty, ConstantWeightsAreExact) {
  Gen g(1);
  for (int n : {1, 2})
    for (int i = 0; i < 50; ++i) {
      const double c = g.log_uniform(1e-3, 1e3);
      const auto q = g.ball(n, -5.0, 5.0, 1e-3, 10.0);
      EXPECT_NEAR(ball_measure(WeightSpec::constant(n, c), q), unit_ball_volume(n) * c * std::pow(q.radius, n),
                  1e-14 * c * std::pow(q.radius, n));
    }
}

TEST(BallMeasureProperty, MonotoneInRadius) {
  Gen g(2);
  const WeightSpec ws[] = {WeightSpec::power(1, 0.7), WeightSpec::plateau(1, -0.5), WeightSpec::power(2, 0.4),
                           WeightSpec::polypower(1, 0.3, -0.4)};
  for (const auto& w : ws)
    for (int i = 0; i < 40; ++i) {
      const auto q = g.ball(w.dimension(), -2.0, 2.0, 0.01, 2.0);
      const double grow = g.uniform(1.0001, 2.0);
      EXPECT_LT(ball_measure(w, q), ball_measure(w, {q.center, grow * q.radius}));
    }
}

TEST(BallMeasureProperty, AdditiveOverSplitIntervals) {
  Gen g(3);
  const WeightSpec ws[] = {WeightSpec::power(1, 0.25), WeightSpec::plateau(1, 0.3), WeightSpec::grid(1, abs_grid(0.1, 3.0))};
  for (const auto& w : ws)
    for (int i = 0; i < 40; ++i) {
      // [a, b] = [a, m] u [m, b], each an interval = ball on the line
      const double a = g.uniform(-2.5, 0.0), b = g.uniform(0.05, 2.5), m = g.uniform(a, b);
      const double whole = ball_measure(w, {{0.5 * (a + b), 0.0}, 0.5 * (b - a)});
      const double left = ball_measure(w, {{0.5 * (a + m), 0.0}, 0.5 * (m - a)});
      const double right = ball_measure(w, {{0.5 * (m + b), 0.0}, 0.5 * (b - m)});
      EXPECT_NEAR(left + right, whole, 1e-10 * whole);
    }
}

TEST(Doubling, ConstantIsTwoToTheN) {
  EXPECT_NEAR(doubling_constant(WeightSpec::constant(1, 1.0), unit_family(1)).doubling_constant, 2.0, 1e-14);
  EXPECT_NEAR(doubling_constant(WeightSpec::constant(2, 1.0), unit_family(2, 3, 3)).doubling_constant, 4.0, 1e-14);
}

TEST(Doubling, AbsoluteValueWitnessAtOrigin) {
  const auto p = doubling_constant(WeightSpec::power(1, 1.0), unit_family(1));
  EXPECT_NEAR(p.doubling_constant, 4.0, 1e-12);
  EXPECT_NEAR(p.witness.center[0], 0.0, 1e-15);
  // brute force: no sampled ball exceeds the centred one
  for (const auto& q : unit_family(1).balls()) {
    const auto w = WeightSpec::power(1, 1.0);
    EXPECT_LE(ball_measure(w, {q.center, 2.0 * q.radius}) / ball_measure(w, q), 4.0 + 1e-12);
  }
}

TEST(AnnulusModulus, ClosedForms) {
  const auto fam = unit_family(1).balls();
  EXPECT_NEAR(annulus_modulus(WeightSpec::constant(1, 1.0), 1.5, fam).value, 1.5, 1e-14);
  const auto m = annulus_modulus(WeightSpec::power(1, 1.0), 1.1, fam);
  EXPECT_NEAR(m.value, 1.21, 1e-12);
  EXPECT_NEAR(m.witness.center[0], 0.0, 1e-15);
  EXPECT_NEAR(annulus_modulus(WeightSpec::constant(1, 1.0), 1.0 + 1e-9, fam).value, 1.0, 1e-8);
  EXPECT_THROW(annulus_modulus(WeightSpec::constant(1, 1.0), 2.5, fam), std::invalid_argument);
}

TEST(AnnulusModulusProperty, NonDecreasingInRatio) {
  const auto fam = unit_family(1, 9, 5).balls();
  for (const auto& w : {WeightSpec::power(1, 0.6), WeightSpec::plateau(1, 0.4), WeightSpec::power(1, 3.0)}) {
    const auto p = doubling_constant(w, fam);
    for (std::size_t k = 1; k < p.modulus_samples.size(); ++k)
      EXPECT_GE(p.modulus_samples[k].second, p.modulus_samples[k - 1].second);
    EXPECT_GE(p.doubling_constant, 1.0);
  }
}

TEST(GoodDoubling, ConstantHasZeroDeficit) {
  const auto r = good_doubling_deficit(WeightSpec::constant(1, 2.0), 10.0, unit_family(1, 5, 3).balls());
  EXPECT_NEAR(r.deficit, 0.0, 1e-14);
  EXPECT_TRUE(r.certified);
  EXPECT_NEAR(r.threshold, std::log(1.1), 1e-15);
}

TEST(GoodDoubling, SmallPlateauIsCertified) {
  const auto r = good_doubling_deficit(WeightSpec::plateau(1, 0.01), 10.0, unit_family(1, 9, 5).balls());
  EXPECT_TRUE(r.certified);
  EXPECT_LE(r.deficit, std::log(1.1));
}

TEST(GoodDoubling, AbsoluteValueFailsNearOrigin) {
  const auto r = good_doubling_deficit(WeightSpec::power(1, 1.0), 10.0, unit_family(1, 9, 5).balls());
  EXPECT_FALSE(r.certified);
  EXPECT_GT(r.deficit, std::log(1.1));
  // the witness balls straddle the origin
  EXPECT_LE(std::abs(r.witness.x[0]), r.witness.r);
  // direct evaluation at the witness reproduces the deficit
  const auto w = WeightSpec::power(1, 1.0);
  const double direct = std::abs(std::log(ball_measure(w, {r.witness.x, r.witness.r}) * r.witness.s /
                                          (ball_measure(w, {r.witness.y, r.witness.s}) * r.witness.r)));
  EXPECT_NEAR(direct, r.deficit, 1e-12);
}

TEST(GoodDoublingProperty, DeficitGrowsWithFamily) {
  Gen g(4);
  const auto w = WeightSpec::plateau(1, 0.3);
  std::vector<BallQuery> fam;
  double last = 0.0;
  for (int step = 0; step < 6; ++step) {
    for (int i = 0; i < 3; ++i) fam.push_back(g.ball(1, -2.0, 2.0, 0.05, 1.0));
    const double d = good_doubling_deficit(w, 4.0, fam, 3).deficit;
    EXPECT_GE(d, last);
    last = d;
  }
}

TEST(GoodDoubling, LargestCertifiedMShrinksWithAmplitude) {
  const auto fam = unit_family(1, 9, 5).balls();
  const double m1 = largest_certified_M(WeightSpec::plateau(1, 0.01), fam);
  const double m2 = largest_certified_M(WeightSpec::plateau(1, 0.1), fam);
  EXPECT_GT(m1, m2);
  EXPECT_EQ(largest_certified_M(WeightSpec::constant(1, 1.0), fam, 64.0), 64.0);
}

TEST(SamplingFamily, LayoutAndSeededCentres) {
  SamplingFamily f;
  f.centers = 3;
  f.radii = 2;
  f.random_centers = 4;
  f.seed = 9;
  const auto a = f.balls(), b = f.balls();
  ASSERT_EQ(a.size(), (3u + 4u) * 2u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].center, b[i].center);
  EXPECT_DOUBLE_EQ(a.front().radius, 1.0 / 64.0);
  EXPECT_DOUBLE_EQ(a[1].radius, 1.0);
  f.r_min = 0.0;
  EXPECT_THROW(f.validate(), std::invalid_argument);
}
