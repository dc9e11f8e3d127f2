#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/hypergeometric_1F1.hpp>
#include <cmath>
#include <numbers>

#include "fkplab/carleson.hpp"
#include "support.hpp"

using namespace fkplab;
using fkplab::testing::Gen;

namespace {

double quadratic_density(double x, double r) {
  const double u = x * x + 0.5 * r * r;
  return 4.0 * x * x * r / (u * u);
}

/// |Delta|^{-1} mu(T_Delta) for |x|^a and Delta centred at 0. Scale
/// invariance gives mu = f(y / t) dy dt / t with f the unit-scale density, so
/// the box mass per unit length is int f(xi) min(1, 1/|xi|) dxi.
double centred_power_box_oracle(double a) {
  using boost::math::hypergeometric_1F1;
  auto f = [a](double xi) {
    const double u = hypergeometric_1F1(-0.5 * a, 0.5, -xi * xi);
    const double g = 2.0 * a * xi * hypergeometric_1F1(1.0 - 0.5 * a, 1.5, -xi * xi);
    return g * g / (u * u);
  };
  const double inner = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-14);
  boost::math::quadrature::exp_sinh<double> tail;
  const double outer = tail.integrate([&](double s) { return f(1.0 + s) / (1.0 + s); }, 1e-13);
  return inner + outer;  // both half-lines, divided by |Delta| = 2
}

std::vector<BallQuery> small_family() { return default_carleson_family(1, 3, 3).balls(); }

}  // namespace

TEST(MuDensity, ConstantAndEvenCentre) {
  EXPECT_EQ(mu_density(WeightSpec::constant(1, 1.0), {0.3, 0.0}, 0.5), 0.0);
  EXPECT_LE(mu_density(WeightSpec::power(1, 0.4), {0.0, 0.0}, 0.5), 1e-18);
  EXPECT_LE(mu_density(WeightSpec::plateau(2, 0.4), {0.0, 0.0}, 0.5), 1e-18);
}

TEST(MuDensityProperty, QuadraticClosedFormAgreesWithQuadrature) {
  Gen g(31);
  ConvolveOptions quad;
  quad.closed_form = false;
  for (int i = 0; i < 20; ++i) {
    const double x = g.uniform(-2.0, 2.0), r = g.log_uniform(0.01, 2.0);
    const double exact = quadratic_density(x, r);
    EXPECT_NEAR(mu_density(WeightSpec::power(1, 2.0), {x, 0.0}, r), exact, 1e-12 * (exact + 1e-300));
    EXPECT_NEAR(mu_density(WeightSpec::power(1, 2.0), {x, 0.0}, r, FkpKernel::gauss, quad), exact, 1e-8 * exact);
  }
}

TEST(BoxMass, QuadraticAgainstTensorRiemannSum) {
  const CarlesonBox box{{{1.0, 0.0}, 0.5}};
  const auto m = box_mass(WeightSpec::power(1, 2.0), box);
  // midpoint sum on a 4000 x 4000 grid of the closed-form density
  const int cells = 4000;
  const double hy = 1.0 / cells, ht = 0.5 / cells;
  double acc = 0.0;
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < cells; ++j) acc += quadratic_density(0.5 + (i + 0.5) * hy, (j + 0.5) * ht);
  acc *= hy * ht;
  EXPECT_NEAR(m.mass, acc, 1e-6 * acc);
  EXPECT_LE(m.quad_error, 1e-6 * acc);
  EXPECT_FALSE(m.tail_unbounded);
}

TEST(BoxMass, PlanarQuadraticAgainstPolarSum) {
  const CarlesonBox box{{{0.6, 0.3}, 0.4}};
  const auto m = box_mass(WeightSpec::power(2, 2.0), box);
  // density |2 x r|^2 / (|x|^2 + r^2)^2 / r in the plane
  auto dens = [](double y0, double y1, double r) {
    const double u = y0 * y0 + y1 * y1 + r * r;
    return 4.0 * (y0 * y0 + y1 * y1) * r / (u * u);
  };
  const int nr = 200, nth = 200, nt = 400;
  double acc = 0.0;
  for (int i = 0; i < nr; ++i) {
    const double rho = (i + 0.5) * 0.4 / nr;
    for (int k = 0; k < nth; ++k) {
      const double th = (k + 0.5) * 2.0 * std::numbers::pi / nth;
      const double y0 = 0.6 + rho * std::cos(th), y1 = 0.3 + rho * std::sin(th);
      for (int j = 0; j < nt; ++j) acc += dens(y0, y1, (j + 0.5) * 0.4 / nt) * rho;
    }
  }
  acc *= (0.4 / nr) * (2.0 * std::numbers::pi / nth) * (0.4 / nt);
  EXPECT_NEAR(m.mass, acc, 1e-4 * acc);
}

TEST(BoxMass, ConstantIsZero) {
  for (int n : {1, 2}) {
    const auto m = box_mass(WeightSpec::constant(n, 5.0), {{{0.0, 0.0}, 1.0}});
    EXPECT_EQ(m.mass, 0.0);
    EXPECT_EQ(m.quad_error, 0.0);
  }
}

TEST(BoxMass, PowerWeightSelfSimilarity) {
  const auto w = WeightSpec::power(1, 0.1);
  const auto base = box_mass(w, {{{0.0, 0.0}, 1.0}});
  EXPECT_TRUE(std::isfinite(base.mass));
  EXPECT_GT(base.mass, 0.0);
  for (double lambda : {2.0, 4.0}) {
    const auto scaled = box_mass(w, {{{0.0, 0.0}, lambda}});
    EXPECT_NEAR(scaled.mass / lambda, base.mass, 1e-8 * base.mass) << "lambda " << lambda;
  }
  EXPECT_NEAR(base.mass / 2.0, centred_power_box_oracle(0.1), 1e-9 * base.mass);
  EXPECT_TRUE(base.tail_unbounded);
}

TEST(Carleson, ConstantIsZeroAndNonConstantPositive) {
  const auto fam = small_family();
  EXPECT_EQ(carleson_norm(WeightSpec::constant(1, 1.0), fam).value, 0.0);
  EXPECT_EQ(carleson_norm_tilde(WeightSpec::constant(1, 1.0), fam).value, 0.0);
  for (const auto& w : {WeightSpec::plateau(1, 0.05), WeightSpec::power(1, 2.0), WeightSpec::polypower(1, 0.0, 0.2)})
    EXPECT_GT(carleson_norm(w, fam).value, 0.0) << to_string(w.family());
}

TEST(Carleson, PowerNormsIncreaseWithExponent) {
  const std::vector<BallQuery> fam{{{0.0, 0.0}, 1.0}, {{0.5, 0.0}, 0.5}};
  double prev = 0.0;
  for (double a : {0.05, 0.1, 0.2, 0.4}) {
    const double v = carleson_norm(WeightSpec::power(1, a), fam).value;
    EXPECT_GT(v, prev) << "a " << a;
    prev = v;
  }
}

TEST(Carleson, PlateauDecaysQuadratically) {
  const auto fam = small_family();
  std::vector<double> scaled;
  for (double eps : {0.1, 0.05, 0.025}) scaled.push_back(carleson_norm(WeightSpec::plateau(1, eps), fam).value / (eps * eps));
  EXPECT_LT(std::abs(scaled[2] - scaled[1]), std::abs(scaled[1] - scaled[0]));
  EXPECT_NEAR(scaled[2] / scaled[1], 1.0, 0.05);
}

TEST(CarlesonProperty, EstimateMonotoneInFamily) {
  Gen g(32);
  const auto w = WeightSpec::plateau(1, 0.3);
  std::vector<BallQuery> fam;
  double prev = 0.0;
  for (int step = 0; step < 4; ++step) {
    fam.push_back(g.ball(1, -1.5, 1.5, 0.1, 1.0));
    const auto e = carleson_norm(w, fam);
    EXPECT_GE(e.value, prev);
    EXPECT_EQ(e.normalized.size(), fam.size());
    prev = e.value;
  }
}

TEST(Carleson, KernelChangeIsComparableForQuadratic) {
  const auto fam = small_family();
  const double mu = carleson_norm(WeightSpec::power(1, 2.0), fam).value;
  const double mt = carleson_norm_tilde(WeightSpec::power(1, 2.0), fam).value;
  EXPECT_GT(mt, 0.0);
  EXPECT_GT(mt / mu, 0.1);
  EXPECT_LT(mt / mu, 10.0);
}

TEST(Carleson, WitnessAndFlags) {
  const auto fam = default_carleson_family(1, 3, 2).balls();
  const auto e = carleson_norm(WeightSpec::power(1, 2.0), fam);
  ASSERT_EQ(e.family_size, fam.size());
  const auto it = std::max_element(e.normalized.begin(), e.normalized.end());
  EXPECT_EQ(e.witness.center, fam[it - e.normalized.begin()].center);
  // x^2 is scale invariant about 0, so the centred boxes keep a non-decaying slice mass
  EXPECT_GE(e.flagged, 1u);
  EXPECT_FALSE(box_mass(WeightSpec::power(1, 2.0), {{{1.0, 0.0}, 0.5}}).tail_unbounded);
  EXPECT_DOUBLE_EQ(e.r_floor, 0.5 * std::ldexp(1.0, -10));
}
