#pragma once

// Divergence-form elliptic operators -div(A grad u) on the box
// [-L, L] x [0, H] of the upper half-plane, discretized with bilinear (Q1)
// finite elements on a uniform node grid with A constant on each cell. From
// the solver: the Green function with pole at infinity U (solving
// L^T U = 0), the elliptic measure at infinity as the conormal derivative of
// U, the oscillation coefficients alpha_2 and the weak-DKP Carleson norm.

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "fkplab/ainfty.hpp"
#include "fkplab/carleson.hpp"
#include "fkplab/parallel.hpp"
#include "fkplab/types.hpp"
#include "fkplab/weight.hpp"

namespace fkplab {

/// Row-major 2x2 matrix {a11, a12, a21, a22}.
using Matrix2 = std::array<double, 4>;

inline constexpr Matrix2 kIdentity2{1.0, 0.0, 0.0, 1.0};

inline Matrix2 transpose(const Matrix2& m) { return {m[0], m[2], m[1], m[3]}; }

inline double frobenius2(const Matrix2& a, const Matrix2& b) {
  double s = 0.0;
  for (int k = 0; k < 4; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// Smallest eigenvalue of the symmetric part and largest singular value.
inline std::pair<double, double> ellipticity_bounds(const Matrix2& m) {
  const double p = m[0], q = 0.5 * (m[1] + m[2]), r = m[3];
  const double lo = 0.5 * (p + r) - std::hypot(0.5 * (p - r), q);
  Eigen::Matrix2d e;
  e << m[0], m[1], m[2], m[3];
  const double hi = Eigen::JacobiSVD<Eigen::Matrix2d>(e).singularValues()(0);
  return {lo, hi};
}

/// <A xi, xi> >= |xi|^2 / Lambda and |A| <= Lambda (operator norm).
inline bool is_elliptic(const Matrix2& m, double Lambda, double slack = 1e-12) {
  const auto [lo, hi] = ellipticity_bounds(m);
  return lo >= 1.0 / Lambda - slack && hi <= Lambda + slack;
}

/// Cell-constant coefficients on [-L, L] x [0, H]; cell (i, j) covers
/// [-L + i hy, -L + (i+1) hy] x [j hs, (j+1) hs].
class CoefficientField {
 public:
  using Function = std::function<Matrix2(double y, double s)>;

  CoefficientField(double L, double H, int nx, int ns, double Lambda, std::vector<Matrix2> cells,
                   double identity_beyond_y = std::numeric_limits<double>::infinity(),
                   double identity_above_s = std::numeric_limits<double>::infinity())
      : L_(L), H_(H), nx_(nx), ns_(ns), Lambda_(Lambda), L0_(identity_beyond_y), H0_(identity_above_s),
        cells_(std::move(cells)) {
    if (!(L > 0.0) || !(H > 0.0)) throw std::invalid_argument("CoefficientField: L and H must be positive");
    if (nx < 2 || ns < 2) throw std::invalid_argument("CoefficientField: need at least 2 cells per axis");
    if (!(Lambda >= 1.0)) throw std::invalid_argument("CoefficientField: Lambda must be >= 1");
    if (cells_.size() != static_cast<std::size_t>(nx) * ns)
      throw std::invalid_argument("CoefficientField: cell count mismatch");
  }

  /// Samples f at cell centres.
  static CoefficientField from_function(double L, double H, int nx, int ns, double Lambda, const Function& f,
                                        double identity_beyond_y = std::numeric_limits<double>::infinity(),
                                        double identity_above_s = std::numeric_limits<double>::infinity()) {
    std::vector<Matrix2> cells(static_cast<std::size_t>(nx) * ns);
    const double hy = 2.0 * L / nx, hs = H / ns;
    for (int j = 0; j < ns; ++j)
      for (int i = 0; i < nx; ++i) cells[static_cast<std::size_t>(j) * nx + i] = f(-L + (i + 0.5) * hy, (j + 0.5) * hs);
    return CoefficientField(L, H, nx, ns, Lambda, std::move(cells), identity_beyond_y, identity_above_s);
  }

  double L() const noexcept { return L_; }
  double H() const noexcept { return H_; }
  int nx() const noexcept { return nx_; }
  int ns() const noexcept { return ns_; }
  double Lambda() const noexcept { return Lambda_; }
  double hy() const noexcept { return 2.0 * L_ / nx_; }
  double hs() const noexcept { return H_ / ns_; }
  double identity_beyond_y() const noexcept { return L0_; }
  double identity_above_s() const noexcept { return H0_; }
  const std::vector<Matrix2>& cells() const noexcept { return cells_; }

  const Matrix2& cell(int i, int j) const { return cells_[static_cast<std::size_t>(j) * nx_ + i]; }

  /// Coefficient at a point of the box (cell lookup; edges belong to the upper cell).
  const Matrix2& at(double y, double s) const {
    const int i = std::clamp(static_cast<int>(std::floor((y + L_) / hy())), 0, nx_ - 1);
    const int j = std::clamp(static_cast<int>(std::floor(s / hs())), 0, ns_ - 1);
    return cell(i, j);
  }

  CoefficientField transposed() const {
    std::vector<Matrix2> t(cells_.size());
    std::transform(cells_.begin(), cells_.end(), t.begin(), [](const Matrix2& m) { return transpose(m); });
    return CoefficientField(L_, H_, nx_, ns_, Lambda_, std::move(t), L0_, H0_);
  }

  /// Throws unless every sample is Lambda-elliptic and every cell centred
  /// outside the declared compact set is the identity.
  void validate() const {
    for (int j = 0; j < ns_; ++j)
      for (int i = 0; i < nx_; ++i) {
        const auto& m = cell(i, j);
        for (double v : m)
          if (!std::isfinite(v)) throw std::invalid_argument("CoefficientField: non-finite sample");
        if (!is_elliptic(m, Lambda_))
          throw std::invalid_argument("CoefficientField: sample at cell (" + std::to_string(i) + ", " +
                                      std::to_string(j) + ") is not Lambda-elliptic");
        const double y = -L_ + (i + 0.5) * hy(), s = (j + 0.5) * hs();
        if ((std::abs(y) > L0_ || s > H0_) && frobenius2(m, kIdentity2) > 1e-24)
          throw std::invalid_argument("CoefficientField: not the identity outside the declared compact set");
      }
  }

 private:
  double L_, H_;
  int nx_, ns_;
  double Lambda_;
  double L0_, H0_;
  std::vector<Matrix2> cells_;
};

struct GridSpec {
  double L = 8.0;
  double H = 16.0;
  int nx = 256;
  int ns = 256;
};

/// Smooth bump eps * b((y, s)) added to the identity: A = (1 + sum eps_k b_k) I.
struct ScalarBump {
  double eps = 0.1;
  double y = 0.0;
  double s = 0.75;
  double radius = 0.5;
};

inline CoefficientField identity_field(const GridSpec& g = {}) {
  return CoefficientField::from_function(g.L, g.H, g.nx, g.ns, 1.0, [](double, double) { return kIdentity2; },
                                         0.0, 0.0);
}

inline CoefficientField bump_field(const std::vector<ScalarBump>& bumps, const GridSpec& g = {}) {
  double L0 = 0.0, H0 = 0.0, lo = 1.0, hi = 1.0;
  for (const auto& b : bumps) {
    if (!(b.radius > 0.0)) throw std::invalid_argument("bump radius must be positive");
    if (b.s - b.radius < 0.0) throw std::invalid_argument("bump must stay inside the upper half-plane");
    L0 = std::max(L0, std::abs(b.y) + b.radius);
    H0 = std::max(H0, b.s + b.radius);
    (b.eps < 0.0 ? lo : hi) += b.eps;
  }
  if (!(lo > 0.0)) throw std::invalid_argument("bump amplitudes make A non-positive");
  const double Lambda = std::max(hi, 1.0 / lo);
  return CoefficientField::from_function(
      g.L, g.H, g.nx, g.ns, Lambda,
      [bumps](double y, double s) {
        double a = 1.0;
        for (const auto& b : bumps)
          a += b.eps * unit_bump(((y - b.y) * (y - b.y) + (s - b.s) * (s - b.s)) / (b.radius * b.radius));
        return Matrix2{a, 0.0, 0.0, a};
      },
      L0, H0);
}

/// A = a(s) I with a = lower below the interface and upper above it.
inline CoefficientField layered_field(double interface_s, double lower, double upper, const GridSpec& g = {}) {
  if (!(lower > 0.0 && upper > 0.0)) throw std::invalid_argument("layer coefficients must be positive");
  const double Lambda = std::max({lower, upper, 1.0 / lower, 1.0 / upper});
  return CoefficientField::from_function(g.L, g.H, g.nx, g.ns, Lambda, [=](double, double s) {
    const double a = s < interface_s ? lower : upper;
    return Matrix2{a, 0.0, 0.0, a};
  });
}

/// Nodal values on the (nx+1) x (ns+1) grid of a CoefficientField.
struct NodeField {
  double L = 0.0, H = 0.0;
  int nx = 0, ns = 0;
  std::vector<double> values;  // values[j * (nx + 1) + i] at (-L + i hy, j hs)

  double hy() const noexcept { return 2.0 * L / nx; }
  double hs() const noexcept { return H / ns; }
  double& operator()(int i, int j) { return values[static_cast<std::size_t>(j) * (nx + 1) + i]; }
  double operator()(int i, int j) const { return values[static_cast<std::size_t>(j) * (nx + 1) + i]; }
  double y(int i) const { return -L + i * hy(); }
  double s(int j) const { return j * hs(); }

  /// Bilinear interpolation.
  double at(double yy, double ss) const {
    const double fx = std::clamp((yy + L) / hy(), 0.0, static_cast<double>(nx));
    const double fs = std::clamp(ss / hs(), 0.0, static_cast<double>(ns));
    const int i = std::min(static_cast<int>(fx), nx - 1), j = std::min(static_cast<int>(fs), ns - 1);
    const double a = fx - i, b = fs - j;
    return (1 - a) * (1 - b) * (*this)(i, j) + a * (1 - b) * (*this)(i + 1, j) + a * b * (*this)(i + 1, j + 1) +
           (1 - a) * b * (*this)(i, j + 1);
  }
};

/// Q1 discretization of -div(A grad u) = f with Dirichlet data on the whole
/// box boundary. The interior matrix is factorized once; several right-hand
/// sides may be solved against it.
class EllipticSystem {
 public:
  explicit EllipticSystem(const CoefficientField& A) : A_(A) {
    const int nx = A.nx(), ns = A.ns();
    const int N = (nx + 1) * (ns + 1);
    index_.assign(N, -1);
    int m = 0;
    for (int j = 1; j < ns; ++j)
      for (int i = 1; i < nx; ++i) index_[node(i, j)] = m++;
    interior_ = m;
    std::vector<Eigen::Triplet<double>> tri_ii, tri_all;
    tri_all.reserve(static_cast<std::size_t>(nx) * ns * 16);
    for (int j = 0; j < ns; ++j)
      for (int i = 0; i < nx; ++i) {
        const auto K = element_matrix(A.cell(i, j), A.hy(), A.hs());
        const int nodes[4] = {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            tri_all.emplace_back(nodes[a], nodes[b], K[a][b]);
            if (index_[nodes[a]] >= 0 && index_[nodes[b]] >= 0)
              tri_ii.emplace_back(index_[nodes[a]], index_[nodes[b]], K[a][b]);
          }
      }
    full_.resize(N, N);
    full_.setFromTriplets(tri_all.begin(), tri_all.end());
    Eigen::SparseMatrix<double> Kii(interior_, interior_);
    Kii.setFromTriplets(tri_ii.begin(), tri_ii.end());
    Kii.makeCompressed();
    Kii_ = std::move(Kii);
    lu_.analyzePattern(Kii_);
    lu_.factorize(Kii_);
    if (lu_.info() != Eigen::Success) throw SolverError("sparse LU factorization failed", -1.0);
  }

  const CoefficientField& field() const noexcept { return A_; }

  /// Solves with nodal loads `load` (already integrated against the basis,
  /// size (nx+1)(ns+1)) and Dirichlet values taken from `boundary` on
  /// boundary nodes.
  NodeField solve(const std::vector<double>& load, const std::vector<double>& boundary) const {
    const int nx = A_.nx(), ns = A_.ns();
    const int N = (nx + 1) * (ns + 1);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(N);
    for (int k = 0; k < N; ++k)
      if (index_[k] < 0) g[k] = boundary[k];
    const Eigen::VectorXd Kg = full_ * g;
    Eigen::VectorXd rhs(interior_);
    for (int k = 0; k < N; ++k)
      if (index_[k] >= 0) rhs[index_[k]] = load[k] - Kg[k];
    const Eigen::VectorXd x = lu_.solve(rhs);
    if (lu_.info() != Eigen::Success) throw SolverError("sparse LU solve failed", -1.0);
    const double res = (Kii_ * x - rhs).norm();
    const double scale = std::max(rhs.norm(), 1e-300);
    if (!(res <= 1e-8 * scale)) throw SolverError("linear solve residual too large", res / scale);
    NodeField u{A_.L(), A_.H(), nx, ns, std::vector<double>(N, 0.0)};
    for (int k = 0; k < N; ++k) u.values[k] = index_[k] >= 0 ? x[index_[k]] : g[k];
    return u;
  }

  /// Nodal loads int f phi_k for a pointwise source (lumped).
  std::vector<double> lumped_load(const std::function<double(double, double)>& f) const {
    const int nx = A_.nx(), ns = A_.ns();
    std::vector<double> load((nx + 1) * (ns + 1), 0.0);
    const double area = A_.hy() * A_.hs();
    for (int j = 1; j < ns; ++j)
      for (int i = 1; i < nx; ++i) load[node(i, j)] = area * f(-A_.L() + i * A_.hy(), j * A_.hs());
    return load;
  }

  /// Boundary values g(y, s) on all boundary nodes (interior entries unused).
  std::vector<double> boundary_values(const std::function<double(double, double)>& g) const {
    const int nx = A_.nx(), ns = A_.ns();
    std::vector<double> b((nx + 1) * (ns + 1), 0.0);
    for (int j = 0; j <= ns; ++j)
      for (int i = 0; i <= nx; ++i)
        if (index_[node(i, j)] < 0) b[node(i, j)] = g(-A_.L() + i * A_.hy(), j * A_.hs());
    return b;
  }

  int node(int i, int j) const noexcept { return j * (A_.nx() + 1) + i; }

  /// Q1 element matrix for constant A, rows = test function, columns = trial.
  static std::array<std::array<double, 4>, 4> element_matrix(const Matrix2& A, double hy, double hs) {
    std::array<std::array<double, 4>, 4> K{};
    const double g = 0.5 / std::sqrt(3.0);
    const double pts[2] = {0.5 - g, 0.5 + g};
    for (double xi : pts)
      for (double eta : pts) {
        // gradients of (1-xi)(1-eta), xi(1-eta), xi eta, (1-xi) eta
        const double gy[4] = {-(1 - eta) / hy, (1 - eta) / hy, eta / hy, -eta / hy};
        const double gs[4] = {-(1 - xi) / hs, -xi / hs, xi / hs, (1 - xi) / hs};
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            const double fy = A[0] * gy[b] + A[1] * gs[b];
            const double fs = A[2] * gy[b] + A[3] * gs[b];
            K[a][b] += 0.25 * hy * hs * (fy * gy[a] + fs * gs[a]);
          }
      }
    return K;
  }

 private:
  const CoefficientField& A_;
  std::vector<int> index_;
  int interior_ = 0;
  Eigen::SparseMatrix<double> full_;
  Eigen::SparseMatrix<double> Kii_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
};

/// Solves -div(A grad u) = f in the box with u = g on its boundary.
inline NodeField assemble_and_solve(const CoefficientField& A, const std::function<double(double, double)>& f,
                                    const std::function<double(double, double)>& g) {
  A.validate();
  EllipticSystem sys(A);
  return sys.solve(sys.lumped_load(f), sys.boundary_values(g));
}

// ---------------------------------------------------------------------------
// Green function with pole at infinity

struct GreenOptions {
  int k0 = 1;  // pole heights 2^k0 .. 2^k1 for the ratio diagnostics
  int k1 = 3;
  double window_y = 2.0;  // observation window |y| <= window_y, 0 < s <= window_s
  double window_s = 1.0;
};

struct GreenAtInfinity {
  NodeField U;                            // L^T U = 0, U = 0 on s = 0, U(0, 1) = 1
  double normalization = 1.0;             // raw U(0, 1) before scaling
  std::vector<double> ratio_discrepancy;  // max |u_k - u_{k-1}| on the window, k = k0+1..k1
  double profile_gap = 0.0;               // max |u_k1 - U| on the window
  bool boundary_zero = true;
  bool positive = true;
};

/// U solves L^T U = 0 with U = 0 on the boundary row and U = s on the
/// artificial sides and top (A is the identity there), normalized so that
/// U(0, 1) = 1. The ratios u_k = G(pole_k, .) / G(pole_k, (0, 1)) of box
/// Green functions with poles (0, 2^k) are reported alongside.
inline GreenAtInfinity green_at_infinity(const CoefficientField& A, const GreenOptions& opt = {}) {
  A.validate();
  if (std::ldexp(1.0, opt.k1) > 0.75 * A.H()) throw std::invalid_argument("green_at_infinity: pole above the box");
  if (opt.k1 < opt.k0) throw std::invalid_argument("green_at_infinity: need k0 <= k1");
  const auto At = A.transposed();
  EllipticSystem sys(At);
  const int N = (A.nx() + 1) * (A.ns() + 1);
  GreenAtInfinity out;
  out.U = sys.solve(std::vector<double>(N, 0.0), sys.boundary_values([](double, double s) { return s; }));
  out.normalization = out.U.at(0.0, 1.0);
  if (!(out.normalization > 0.0)) throw SolverError("green_at_infinity: U(0, 1) is not positive", out.normalization);
  for (double& v : out.U.values) v /= out.normalization;

  std::vector<NodeField> ratios;
  for (int k = opt.k0; k <= opt.k1; ++k) {
    std::vector<double> load(N, 0.0);
    const int i = static_cast<int>(std::lround(A.L() / A.hy()));
    const int j = static_cast<int>(std::lround(std::ldexp(1.0, k) / A.hs()));
    load[sys.node(i, j)] = 1.0;
    auto G = sys.solve(load, std::vector<double>(N, 0.0));
    const double ref = G.at(0.0, 1.0);
    for (double& v : G.values) v /= ref;
    ratios.push_back(std::move(G));
  }
  auto window_max = [&](const NodeField& a, const NodeField& b) {
    double m = 0.0;
    for (int j = 1; j <= a.ns; ++j) {
      if (a.s(j) > opt.window_s) break;
      for (int i = 0; i <= a.nx; ++i)
        if (std::abs(a.y(i)) <= opt.window_y) m = std::max(m, std::abs(a(i, j) - b(i, j)));
    }
    return m;
  };
  for (std::size_t k = 1; k < ratios.size(); ++k) out.ratio_discrepancy.push_back(window_max(ratios[k], ratios[k - 1]));
  out.profile_gap = window_max(ratios.back(), out.U);
  for (int i = 0; i <= out.U.nx; ++i) out.boundary_zero = out.boundary_zero && out.U(i, 0) == 0.0;
  for (int j = 1; j <= out.U.ns; ++j)
    for (int i = 0; i <= out.U.nx; ++i) out.positive = out.positive && out.U(i, j) > 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Elliptic measure at infinity

struct BoundaryDensity {
  std::vector<double> ys;
  std::vector<double> density;

  /// The density as a sampled weight on the line.
  WeightSpec as_weight(double floor = WeightSpec::kDefaultFloor) const {
    return WeightSpec::grid(1, GridData{ys, {}, density}, floor);
  }
};

/// d omega / dy = (A^T grad U) . e_s on the boundary row, one-sided in s.
inline BoundaryDensity elliptic_measure_infinity(const CoefficientField& A, const GreenAtInfinity& g) {
  const auto& U = g.U;
  BoundaryDensity d;
  const double hy = U.hy(), hs = U.hs();
  for (int i = 0; i <= U.nx; ++i) {
    // A^T averaged over the boundary cells touching node i
    Matrix2 At{};
    int cnt = 0;
    for (int c : {i - 1, i})
      if (c >= 0 && c < A.nx()) {
        const auto m = transpose(A.cell(c, 0));
        for (int k = 0; k < 4; ++k) At[k] += m[k];
        ++cnt;
      }
    for (double& v : At) v /= cnt;
    const double dUds = U(i, 1) / hs;
    const int il = std::max(i - 1, 0), ir = std::min(i + 1, U.nx);
    // d_y U at height hs / 2: half the row-1 difference (U vanishes on row 0)
    const double dUdy = 0.5 * (U(ir, 1) - U(il, 1)) / ((ir - il) * hy);
    d.ys.push_back(U.y(i));
    d.density.push_back(At[2] * dUdy + At[3] * dUds);
  }
  return d;
}

struct RieszCheck {
  double center = 0.0;
  double radius = 0.0;
  double conormal = 0.0;  // int f d omega from the density
  double pairing = 0.0;   // -int int A^T grad U . grad F
  double relative_gap = 0.0;
};

struct RieszReport {
  std::vector<RieszCheck> checks;
  double worst = 0.0;
  bool flagged = false;  // worst relative gap above the tolerance
};

/// Test function f(y) = b((y - c) / rho) with extension F(y, s) = f(y) b(s / sigma),
/// b the unit bump.
inline RieszReport riesz_validation(const CoefficientField& A, const GreenAtInfinity& g, const BoundaryDensity& d,
                                    const std::vector<std::pair<double, double>>& tests, double sigma = 1.0,
                                    double tolerance = 0.02) {
  const auto& U = g.U;
  const double hy = U.hy(), hs = U.hs();
  auto bump = [](double t) { return unit_bump(t * t); };
  auto dbump = [](double t) {  // d/dt exp(1 - 1/(1 - t^2))
    if (std::abs(t) >= 1.0) return 0.0;
    const double q = 1.0 - t * t;
    return unit_bump(t * t) * (-2.0 * t / (q * q));
  };
  RieszReport rep;
  for (const auto& [c, rho] : tests) {
    RieszCheck chk{c, rho};
    // conormal route: trapezoid on the boundary nodes
    for (std::size_t i = 0; i < d.ys.size(); ++i) {
      const double wgt = (i == 0 || i + 1 == d.ys.size()) ? 0.5 : 1.0;
      chk.conormal += wgt * hy * bump((d.ys[i] - c) / rho) * d.density[i];
    }
    // pairing route: 3x3 Gauss on every cell meeting supp F
    static const double gp[3] = {0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
    static const double gw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    const int i0 = std::max(0, static_cast<int>(std::floor((c - rho + A.L()) / hy)));
    const int i1 = std::min(A.nx() - 1, static_cast<int>(std::ceil((c + rho + A.L()) / hy)));
    const int j1 = std::min(A.ns() - 1, static_cast<int>(std::ceil(sigma / hs)));
    double pair = 0.0;
    for (int j = 0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) {
        const auto At = transpose(A.cell(i, j));
        const double u00 = U(i, j), u10 = U(i + 1, j), u11 = U(i + 1, j + 1), u01 = U(i, j + 1);
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) {
            const double xi = gp[a], eta = gp[b];
            const double y = U.y(i) + xi * hy, s = U.s(j) + eta * hs;
            const double Uy = ((1 - eta) * (u10 - u00) + eta * (u11 - u01)) / hy;
            const double Us = ((1 - xi) * (u01 - u00) + xi * (u11 - u10)) / hs;
            const double Fy = dbump((y - c) / rho) / rho * bump(s / sigma);
            const double Fs = bump((y - c) / rho) * dbump(s / sigma) / sigma;
            const double fy = At[0] * Uy + At[1] * Us, fs = At[2] * Uy + At[3] * Us;
            pair += gw[a] * gw[b] * hy * hs * (fy * Fy + fs * Fs);
          }
      }
    chk.pairing = -pair;
    chk.relative_gap = std::abs(chk.conormal - chk.pairing) / std::max(std::abs(chk.pairing), 1e-300);
    rep.worst = std::max(rep.worst, chk.relative_gap);
    rep.checks.push_back(chk);
  }
  rep.flagged = rep.worst > tolerance;
  return rep;
}

inline std::vector<std::pair<double, double>> default_riesz_battery() {
  return {{-1.0, 0.5}, {0.0, 0.5}, {1.0, 0.5}, {0.0, 1.0}, {2.0, 1.0}, {-3.0, 1.0}};
}

// ---------------------------------------------------------------------------
// Oscillation coefficients

/// W(x, r) = [x - half_width r, x + half_width r] x [lower r, upper r].
struct WhitneyRegion {
  double half_width = 1.0;
  double lower = 0.5;
  double upper = 1.0;
};

namespace detail {

/// Frobenius projection onto {sym part >= 1/Lambda} and onto {|A| <= Lambda}.
inline Matrix2 project_coercive(const Matrix2& m, double Lambda) {
  Eigen::Matrix2d M;
  M << m[0], m[1], m[2], m[3];
  const Eigen::Matrix2d S = 0.5 * (M + M.transpose()), K = 0.5 * (M - M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(S);
  Eigen::Vector2d ev = es.eigenvalues().cwiseMax(1.0 / Lambda);
  const Eigen::Matrix2d P = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose() + K;
  return {P(0, 0), P(0, 1), P(1, 0), P(1, 1)};
}

inline Matrix2 project_bounded(const Matrix2& m, double Lambda) {
  Eigen::Matrix2d M;
  M << m[0], m[1], m[2], m[3];
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector2d sv = svd.singularValues().cwiseMin(Lambda);
  const Eigen::Matrix2d P = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  return {P(0, 0), P(0, 1), P(1, 0), P(1, 1)};
}

}  // namespace detail

/// Frobenius-nearest Lambda-elliptic constant matrix, by Dykstra's
/// alternating projections onto the two convex constraint sets.
inline Matrix2 nearest_elliptic(const Matrix2& m, double Lambda, int iterations = 500) {
  if (is_elliptic(m, Lambda, 0.0)) return m;
  Matrix2 x = m, p{}, q{};
  for (int it = 0; it < iterations; ++it) {
    Matrix2 xp, yq;
    for (int k = 0; k < 4; ++k) xp[k] = x[k] + p[k];
    const Matrix2 y = detail::project_coercive(xp, Lambda);
    for (int k = 0; k < 4; ++k) p[k] = xp[k] - y[k];
    for (int k = 0; k < 4; ++k) yq[k] = y[k] + q[k];
    const Matrix2 xn = detail::project_bounded(yq, Lambda);
    for (int k = 0; k < 4; ++k) q[k] = yq[k] - xn[k];
    const double change = frobenius2(xn, x);
    x = xn;
    if (change < 1e-30) break;
  }
  return x;
}

/// alpha_2(x, r): RMS Frobenius distance of A from the best constant
/// Lambda-elliptic matrix over W(x, r). Cell overlaps are integrated
/// exactly, so the value is exact for the cell-constant field.
inline double alpha2(const CoefficientField& A, double x, double r, const WhitneyRegion& W = {}) {
  if (!(r > 0.0)) throw std::invalid_argument("alpha2: r must be positive");
  const double y0 = x - W.half_width * r, y1 = x + W.half_width * r;
  const double s0 = W.lower * r, s1 = W.upper * r;
  if (y0 < -A.L() || y1 > A.L() || s1 > A.H()) throw OutOfDomain("alpha2: Whitney region leaves the grid");
  const double hy = A.hy(), hs = A.hs();
  const int i0 = std::max(0, static_cast<int>(std::floor((y0 + A.L()) / hy)));
  const int i1 = std::min(A.nx() - 1, static_cast<int>(std::floor((y1 + A.L()) / hy)));
  const int j0 = std::max(0, static_cast<int>(std::floor(s0 / hs)));
  const int j1 = std::min(A.ns() - 1, static_cast<int>(std::floor(s1 / hs)));
  struct Piece {
    double weight;
    const Matrix2* m;
  };
  std::vector<Piece> pieces;
  Matrix2 mean{};
  double total = 0.0;
  for (int j = j0; j <= j1; ++j) {
    const double ds = std::min(s1, (j + 1) * hs) - std::max(s0, j * hs);
    if (ds <= 0.0) continue;
    for (int i = i0; i <= i1; ++i) {
      const double dy = std::min(y1, -A.L() + (i + 1) * hy) - std::max(y0, -A.L() + i * hy);
      if (dy <= 0.0) continue;
      const double wgt = dy * ds;
      pieces.push_back({wgt, &A.cell(i, j)});
      for (int k = 0; k < 4; ++k) mean[k] += wgt * A.cell(i, j)[k];
      total += wgt;
    }
  }
  for (double& v : mean) v /= total;
  double var = 0.0;
  for (const auto& p : pieces) var += p.weight * frobenius2(*p.m, mean);
  var /= total;
  // |A - A0|^2 averages to var + |mean - A0|^2, so the infimum sits at the
  // projection of the mean
  const Matrix2 best = nearest_elliptic(mean, A.Lambda());
  return std::sqrt(std::max(0.0, var + frobenius2(mean, best)));
}

struct WeakDkpOptions {
  int octaves = 8;
  WhitneyRegion whitney{};
};

/// sup over the family of |Delta|^{-1} int int_{T_Delta} alpha_2(y, t)^2 dy dt / t.
inline CarlesonEstimate weak_dkp_norm(const CoefficientField& A, const std::vector<BallQuery>& family,
                                      const WeakDkpOptions& opt = {}, int threads = 0) {
  BoxLayout layout;
  layout.max_panel = 0.25;
  return carleson_sup(1, family, [&](const BallQuery& q) {
    return integrate_box(1, q, layout, opt.octaves, 1, [&](const Point& y, double t) {
      const double a = alpha2(A, y[0], t, opt.whitney);
      return a * a / t;
    });
  }, threads);
}

// ---------------------------------------------------------------------------
// Experiment

struct DkpInput {
  double eps = 0.0;
  CoefficientField field;
};

struct DkpRow {
  double eps = 0.0;
  double nu_norm = 0.0;
  double mu_tilde_norm = 0.0;
  double ainfty_minus_1 = 0.0;
  double ratio = 0.0;  // mu_tilde_norm / nu_norm, 0 when nu_norm = 0
  double density_spread = 0.0;  // max |omega - 1| on the density window
  double riesz_worst = 0.0;
  bool flagged = false;
};

struct DkpOptions {
  GreenOptions green{};
  WeakDkpOptions weak{};
  BoxMassOptions box{};
  std::vector<BallQuery> family;  // boxes for all three Carleson/A-infinity sups
  double density_window = 2.0;   // |y| <= this for density_spread
  double tol = 1e-10;
};

/// The default box family: 9 centres in [-2, 2] and radii 1, 1/2, 1/4.
inline std::vector<BallQuery> default_dkp_family() {
  std::vector<BallQuery> f;
  for (int k = 0; k < 9; ++k)
    for (double r : {1.0, 0.5, 0.25}) f.push_back({{-2.0 + 0.5 * k, 0.0}, r});
  return f;
}

inline DkpRow dkp_row(const DkpInput& in, const DkpOptions& opt) {
  const auto& A = in.field;
  const auto family = opt.family.empty() ? default_dkp_family() : opt.family;
  DkpRow row;
  row.eps = in.eps;
  const auto green = green_at_infinity(A, opt.green);
  const auto dens = elliptic_measure_infinity(A, green);
  const auto riesz = riesz_validation(A, green, dens, default_riesz_battery());
  row.riesz_worst = riesz.worst;
  row.flagged = riesz.flagged;
  for (std::size_t i = 0; i < dens.ys.size(); ++i)
    if (std::abs(dens.ys[i]) <= opt.density_window)
      row.density_spread = std::max(row.density_spread, std::abs(dens.density[i] - 1.0));
  const auto omega = dens.as_weight();
  row.nu_norm = weak_dkp_norm(A, family, opt.weak, 1).value;
  BoxMassOptions bo = opt.box;
  bo.kernel = FkpKernel::reference_bump;
  const auto mu = carleson_norm(omega, family, bo, 1);
  row.mu_tilde_norm = mu.value;
  row.ainfty_minus_1 = ainfty_constant(omega, family, opt.tol, 1).value - 1.0;
  row.ratio = row.nu_norm > 0.0 ? row.mu_tilde_norm / row.nu_norm : 0.0;
  return row;
}

/// One row per coefficient field; rows run in parallel.
inline std::vector<DkpRow> dkp_experiment(const std::vector<DkpInput>& inputs, const DkpOptions& opt = {},
                                          int threads = 0) {
  return parallel_map(inputs.size(), [&](std::size_t i) { return dkp_row(inputs[i], opt); }, threads);
}

inline constexpr const char* kDkpCsvHeader = "eps,nu_norm,mu_tilde_norm,ainfty_minus_1,ratio";

inline void write_dkp_csv(const std::vector<DkpRow>& rows, std::ostream& out) {
  out << kDkpCsvHeader << '\n';
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.eps, r.nu_norm, r.mu_tilde_norm,
                  r.ainfty_minus_1, r.ratio);
    out << buf;
  }
}

inline void write_density_csv(const BoundaryDensity& d, std::ostream& out) {
  out << "y,density\n";
  char buf[96];
  for (std::size_t i = 0; i < d.ys.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", d.ys[i], d.density[i]);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Binary grid dump: "FKPA", u32 version, u32 nx, u32 ns, f64 L, H, Lambda,
// identity_beyond_y, identity_above_s, then nx*ns*4 f64 cell entries
// (row-major cells, row-major matrices). Little-endian host order.

inline void write_field(const CoefficientField& A, std::ostream& out) {
  const char magic[4] = {'F', 'K', 'P', 'A'};
  out.write(magic, 4);
  const std::uint32_t head[3] = {1u, static_cast<std::uint32_t>(A.nx()), static_cast<std::uint32_t>(A.ns())};
  out.write(reinterpret_cast<const char*>(head), sizeof head);
  const double dims[5] = {A.L(), A.H(), A.Lambda(), A.identity_beyond_y(), A.identity_above_s()};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(A.cells().data()),
            static_cast<std::streamsize>(A.cells().size() * sizeof(Matrix2)));
  if (!out) throw std::runtime_error("write_field: stream error");
}

inline CoefficientField read_field(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FKPA", 4) != 0) throw ConfigError("coefficients", "not an FKPA grid dump");
  std::uint32_t head[3];
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (!in || head[0] != 1u) throw ConfigError("coefficients", "unsupported FKPA version");
  double dims[5];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (head[1] > 8192 || head[2] > 8192) throw ConfigError("coefficients", "grid dimensions too large");
  std::vector<Matrix2> cells(static_cast<std::size_t>(head[1]) * head[2]);
  in.read(reinterpret_cast<char*>(cells.data()), static_cast<std::streamsize>(cells.size() * sizeof(Matrix2)));
  if (!in) throw ConfigError("coefficients", "truncated FKPA grid dump");
  return CoefficientField(dims[0], dims[1], static_cast<int>(head[1]), static_cast<int>(head[2]), dims[2],
                          std::move(cells), dims[3], dims[4]);
}

}  // namespace fkplab
