#pragma once

/// \file lattice.hpp
/// \brief Sparse finite-difference horizontal fields on a uniform grid, the
/// Poisson solver for the sub-Laplacian and the Hessian/Laplacian Rayleigh probe.
///
/// Unknowns live on interior nodes; the exterior is Dirichlet zero. Fields
/// are ordered row-major by (x_1..x_n, y_1..y_n, t), t fastest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <unsupported/Eigen/KroneckerProduct>

#include "hsharp/core.hpp"
#include "hsharp/expr.hpp"
#include "hsharp/heisenberg.hpp"
#include "hsharp/quadrature.hpp"

namespace hsharp {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

struct Grid {
  int n = 1;
  Box box;
  int m_axis = 8;         // nodes per axis including the two boundary nodes
  std::vector<double> h;  // spacing per axis

  static Grid make(int n, Box box, int m_axis) {
    if (n < 1 || n > 3) throw ConfigError("grid: n must be 1, 2 or 3");
    if (box.dim() != 2 * n + 1) throw ConfigError("grid: box dimension must be 2n+1");
    if (m_axis < 8) throw ConfigError("grid: m_axis must be >= 8");
    if (n >= 2 && m_axis > 17) throw ConfigError("grid: n >= 2 lattices are limited to m_axis <= 17");
    Grid g;
    g.n = n;
    g.box = std::move(box);
    g.m_axis = m_axis;
    for (int k = 0; k < g.dim(); ++k) g.h.push_back((g.box.hi[k] - g.box.lo[k]) / (m_axis - 1));
    return g;
  }

  int dim() const noexcept { return 2 * n + 1; }
  int inner() const noexcept { return m_axis - 2; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int k = 0; k < dim(); ++k) s *= static_cast<std::size_t>(inner());
    return s;
  }
  double cell_volume() const {
    double v = 1.0;
    for (double x : h) v *= x;
    return v;
  }
  /// Coordinate of interior index i (0-based) along axis k.
  double coord(int k, int i) const { return box.lo[k] + (i + 1) * h[k]; }
  std::size_t stride(int k) const {
    std::size_t s = 1;
    for (int j = dim() - 1; j > k; --j) s *= static_cast<std::size_t>(inner());
    return s;
  }
  void multi_index(std::size_t idx, int* out) const {
    for (int k = dim() - 1; k >= 0; --k) {
      out[k] = static_cast<int>(idx % inner());
      idx /= inner();
    }
  }
  void node(std::size_t idx, double* x) const {
    std::vector<int> mi(dim());
    multi_index(idx, mi.data());
    for (int k = 0; k < dim(); ++k) x[k] = coord(k, mi[k]);
  }
  /// Distance (in nodes) to the nearest boundary node.
  int depth(std::size_t idx) const {
    std::vector<int> mi(dim());
    multi_index(idx, mi.data());
    int d = m_axis;
    for (int k = 0; k < dim(); ++k) d = std::min({d, mi[k] + 1, inner() - mi[k]});
    return d;
  }
  double h_max() const { return *std::max_element(h.begin(), h.end()); }
  bool same_as(const Grid& o) const {
    return n == o.n && m_axis == o.m_axis && box.lo == o.box.lo && box.hi == o.box.hi;
  }
};

struct GridField {
  Grid grid;
  Vec values;

  GridField() = default;
  GridField(Grid g, Vec v) : grid(std::move(g)), values(std::move(v)) {
    if (static_cast<std::size_t>(values.size()) != grid.size()) throw PreconditionError("grid field: size mismatch");
    if (!values.allFinite()) throw PreconditionError("grid field: non-finite values");
  }
  static GridField zeros(const Grid& g) { return GridField(g, Vec::Zero(static_cast<Eigen::Index>(g.size()))); }
  /// Samples f at interior nodes.
  static GridField sample(const Grid& g, const ScalarExpr& f) {
    if (f.dim() != g.dim()) throw PreconditionError("grid field: expression dimension mismatch");
    Vec v(static_cast<Eigen::Index>(g.size()));
    std::vector<double> x(g.dim()), scratch;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.node(i, x.data());
      v[static_cast<Eigen::Index>(i)] = evaluate<double>(f, x.data(), scratch);
    }
    return GridField(g, std::move(v));
  }
  /// Grid-weighted l2 norm h^{d/2} |v|.
  double norm() const { return std::sqrt(grid.cell_volume()) * values.norm(); }
};

struct GridOperators {
  Grid grid;
  Frame frame;
  std::vector<SpMat> X;  // X_1..X_2n
  SpMat L;               // sum_i X_i X_i = -sum_i X_i^T X_i
  std::vector<SpMat> H;  // block (i, j) at i * 2n + j is X_i X_j

  int fields() const { return 2 * grid.n; }
  const SpMat& block(int i, int j) const { return H[static_cast<std::size_t>(i) * fields() + j]; }

  /// Stacked Hessian as one sparse matrix.
  SpMat hstack() const {
    const Eigen::Index N = L.rows();
    SpMat S(N * static_cast<Eigen::Index>(H.size()), N);
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t b = 0; b < H.size(); ++b)
      for (int c = 0; c < H[b].outerSize(); ++c)
        for (SpMat::InnerIterator it(H[b], c); it; ++it)
          trip.emplace_back(static_cast<Eigen::Index>(b) * N + it.row(), it.col(), it.value());
    S.setFromTriplets(trip.begin(), trip.end());
    return S;
  }
  /// |Hstack u|^2 (plain l2, without grid weights).
  double hess_sq(const Vec& u) const {
    double s = 0.0;
    std::vector<Vec> xu;
    for (const auto& Xi : X) xu.push_back(Xi * u);
    for (int i = 0; i < fields(); ++i)
      for (int j = 0; j < fields(); ++j) s += (X[i] * xu[j]).squaredNorm();
    return s;
  }
  /// Hstack^T Hstack u.
  Vec hess_normal(const Vec& u) const {
    Vec out = Vec::Zero(u.size());
    std::vector<Vec> xu;
    for (const auto& Xi : X) xu.push_back(Xi * u);
    for (int i = 0; i < fields(); ++i)
      for (int j = 0; j < fields(); ++j) {
        const Vec hij = X[i] * xu[j];
        out += block(i, j).transpose() * hij;
      }
    return out;
  }
  std::size_t nnz() const {
    std::size_t s = static_cast<std::size_t>(L.nonZeros());
    for (const auto& m : X) s += static_cast<std::size_t>(m.nonZeros());
    for (const auto& m : H) s += static_cast<std::size_t>(m.nonZeros());
    return s;
  }
};

/// Memory estimate (bytes) of the assembled operators.
inline std::size_t assembly_estimate(const Grid& g) {
  const std::size_t N = g.size();
  const std::size_t f = 2 * static_cast<std::size_t>(g.n);
  // 4 entries per X row, up to 16 per Hessian block row, up to 4f+1 per L row.
  const std::size_t nnz = N * (4 * f + 16 * f * f + (4 * f + 1));
  return nnz * (sizeof(double) + sizeof(int)) + N * sizeof(int) * (2 * f + f * f + 1);
}

namespace detail {

/// Visits the entries of row r of 1/2 (D_k a_k + a_k D_k) for field V. fn(k, s, q, value)
/// receives the axis, the direction, the neighbour's interior index along k
/// (-1 or inner() denote a boundary node), and the entry.
template <class Fn>
void stencil_row(const Grid& grid, const AffineField& V, const int* mi, const double* x, Fn&& fn) {
  const int d = grid.dim();
  std::vector<double> xq(x, x + d);
  for (int k = 0; k < d; ++k) {
    const double ap = V.coefficient(k, x).real();
    bool any = ap != 0.0;
    for (int j = 0; j < d && !any; ++j) any = V.linear(k, j).real() != 0.0;
    if (!any) continue;
    for (int s = -1; s <= 1; s += 2) {
      const int q = mi[k] + s;
      xq[k] = grid.coord(k, q);
      const double aq = V.coefficient(k, xq.data()).real();
      const double v = 0.5 * (ap + aq) * s / (2.0 * grid.h[k]);
      if (v != 0.0) fn(k, s, q, v);
    }
    xq[k] = x[k];
  }
}

}  // namespace detail

inline GridOperators assemble(const Grid& grid, const Frame& frame,
                              std::size_t memory_cap = std::size_t{3} << 30) {
  if (frame.n != grid.n) throw PreconditionError("assemble: frame and grid dimensions disagree");
  const std::size_t est = assembly_estimate(grid);
  if (est > memory_cap)
    throw ConfigError("assemble: estimated " + std::to_string(est >> 20) + " MiB exceeds the cap of " +
                      std::to_string(memory_cap >> 20) + " MiB");
  const int d = grid.dim();
  const std::size_t N = grid.size();
  GridOperators ops;
  ops.grid = grid;
  ops.frame = frame;
  std::vector<int> mi(d);
  std::vector<double> x(d);
  for (int i = 0; i < 2 * grid.n; ++i) {
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t r = 0; r < N; ++r) {
      grid.multi_index(r, mi.data());
      grid.node(r, x.data());
      detail::stencil_row(grid, frame.X[i], mi.data(), x.data(), [&](int k, int s, int q, double v) {
        if (q < 0 || q >= grid.inner()) return;
        trip.emplace_back(static_cast<Eigen::Index>(r),
                          static_cast<Eigen::Index>(static_cast<long>(r) + s * static_cast<long>(grid.stride(k))), v);
      });
    }
    SpMat Xi(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    Xi.setFromTriplets(trip.begin(), trip.end());
    ops.X.push_back(std::move(Xi));
  }
  ops.L = SpMat(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (int i = 0; i < 2 * grid.n; ++i)
    for (int j = 0; j < 2 * grid.n; ++j) {
      SpMat b = (ops.X[i] * ops.X[j]).pruned();
      if (i == j) ops.L += b;
      ops.H.push_back(std::move(b));
    }
  ops.L.makeCompressed();
  return ops;
}

/// Contribution of Dirichlet data g on the boundary nodes to X_i at interior
/// nodes: the full-grid X_i applied to (u on the interior, g on the boundary)
/// equals X[i] * u + lift[i].
inline std::vector<Vec> boundary_lift(const GridOperators& ops, const ScalarExpr& g) {
  const Grid& grid = ops.grid;
  if (g.dim() != grid.dim()) throw PreconditionError("boundary_lift: expression dimension mismatch");
  const int d = grid.dim();
  std::vector<int> mi(d);
  std::vector<double> x(d), xb(d), scratch;
  std::vector<Vec> out;
  for (int i = 0; i < 2 * grid.n; ++i) {
    Vec b = Vec::Zero(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t r = 0; r < grid.size(); ++r) {
      if (grid.depth(r) > 1) continue;
      grid.multi_index(r, mi.data());
      grid.node(r, x.data());
      detail::stencil_row(grid, ops.frame.X[i], mi.data(), x.data(), [&](int k, int, int q, double v) {
        if (q >= 0 && q < grid.inner()) return;
        xb = x;
        xb[k] = grid.coord(k, q);
        b[static_cast<Eigen::Index>(r)] += v * evaluate<double>(g, xb.data(), scratch);
      });
    }
    out.push_back(std::move(b));
  }
  return out;
}

struct CgResult {
  Vec u;
  int iterations = 0;
  std::vector<double> residuals;  // relative residual |b - A u| / |b| per iteration
  std::vector<double> energy;     // 1/2 u^T A u - b^T u per iteration (nonincreasing)
  bool converged = false;
};

/// Conjugate gradients for (-L) u = b with a Jacobi preconditioner.
inline CgResult poisson_cg(const SpMat& L, const Vec& b, double tol, int max_iter = 20000,
                           const Vec* x0 = nullptr) {
  if (!(tol > 0.0)) throw PreconditionError("poisson_solve: tol must be positive");
  CgResult res;
  const Eigen::Index N = b.size();
  res.u = x0 ? *x0 : Vec::Zero(N);
  const double bn = b.norm();
  if (bn == 0.0) {
    res.u.setZero();
    res.converged = true;
    res.residuals.push_back(0.0);
    res.energy.push_back(0.0);
    return res;
  }
  Vec dinv(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double dii = -L.coeff(i, i);
    dinv[i] = dii > 0.0 ? 1.0 / dii : 1.0;
  }
  auto A = [&](const Vec& v) -> Vec { return -(L * v); };
  Vec r = b - A(res.u);
  Vec z = dinv.cwiseProduct(r);
  Vec p = z;
  double rz = r.dot(z);
  auto energy = [&](const Vec& u) { return 0.5 * u.dot(A(u)) - b.dot(u); };
  res.residuals.push_back(r.norm() / bn);
  res.energy.push_back(energy(res.u));
  for (int it = 0; it < max_iter; ++it) {
    if (res.residuals.back() <= tol) {
      res.converged = true;
      break;
    }
    const Vec Ap = A(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) break;
    const double alpha = rz / pAp;
    res.u += alpha * p;
    r -= alpha * Ap;
    z = dinv.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
    res.iterations = it + 1;
    res.residuals.push_back(r.norm() / bn);
    // Energy via the recurrence-free identity E(u) = -1/2 (b^T u + r^T u).
    res.energy.push_back(-0.5 * (b.dot(res.u) + r.dot(res.u)));
  }
  if (res.residuals.back() <= tol) res.converged = true;
  return res;
}

/// Solves (-L) u = rhs to relative residual tol; throws with the history otherwise.
inline GridField poisson_solve(const GridOperators& ops, const GridField& rhs, double tol, int max_iter = 20000,
                               CgResult* info = nullptr) {
  if (!rhs.grid.same_as(ops.grid)) throw PreconditionError("poisson_solve: grid mismatch");
  CgResult r = poisson_cg(ops.L, rhs.values, tol, max_iter);
  if (!r.converged)
    throw ConvergenceError("poisson_solve: no convergence in " + std::to_string(r.iterations) + " iterations",
                           r.residuals);
  if (info) *info = r;
  return GridField(ops.grid, std::move(r.u));
}

/// Discrete quotient |Hstack u|^2 / |L u|^2.
inline double rayleigh_quotient(const GridOperators& ops, const Vec& u) {
  const double den = (ops.L * u).squaredNorm();
  if (den == 0.0) throw PreconditionError("rayleigh_quotient: L u = 0");
  return ops.hess_sq(u) / den;
}

enum class TrialSpace {
  spline,  // cubic B-splines on a coarser lattice, prolonged to the grid
  nodal,   // every interior node value is free
};

struct RayleighOptions {
  double tol = 1e-6;  // outer stop: relative change of lambda
  int max_iter = 3000;
  std::uint64_t seed = 1;
  TrialSpace space = TrialSpace::spline;
  int spline_ratio = 2;    // coarse spacing in grid cells
  double inner_tol = 1e-8; // nodal mode inner CG tolerance
  bool accelerate = true;  // three-term Ritz step instead of plain power iteration
  std::size_t memory_cap = std::size_t{3} << 30;
};

struct RayleighResult {
  double lambda = 0.0;
  GridField maximizer;
  std::vector<double> trace;  // lambda per outer iteration
  int iterations = 0;
  long inner_solves = 0;
  long inner_iterations = 0;
  std::size_t dofs = 0;
  bool converged = false;
};

namespace detail {

inline double cubic_bspline(double s) {
  s = std::abs(s);
  if (s < 1.0) return 2.0 / 3.0 - s * s + 0.5 * s * s * s;
  if (s < 2.0) return (2.0 - s) * (2.0 - s) * (2.0 - s) / 6.0;
  return 0.0;
}

/// 1D prolongation from B-spline coefficients (spacing r h, supports inside
/// the axis interval) to the interior nodes of one axis.
inline SpMat spline_prolongation_1d(const Grid& g, int axis, int ratio) {
  const double lo = g.box.lo[axis], hi = g.box.hi[axis];
  const double hc = ratio * g.h[axis];
  std::vector<double> centers;
  for (double c = lo + 2.0 * hc; c < hi - 2.0 * hc + 1e-9 * hc; c += hc) centers.push_back(c);
  if (centers.empty()) throw ConfigError("spline trial space: grid too coarse for the spline ratio");
  const double shift = 0.5 * (lo + hi) - 0.5 * (centers.front() + centers.back());
  for (double& c : centers) c += shift;
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < g.inner(); ++i) {
    const double x = g.coord(axis, i);
    for (std::size_t j = 0; j < centers.size(); ++j) {
      const double v = cubic_bspline((x - centers[j]) / hc);
      if (v != 0.0) trip.emplace_back(i, static_cast<Eigen::Index>(j), v);
    }
  }
  SpMat P(g.inner(), static_cast<Eigen::Index>(centers.size()));
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

inline Vec seeded_vector(Eigen::Index n, std::uint64_t seed) {
  Vec v(n);
  std::uint64_t s = seed;
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 2.0 * unit_double(splitmix64(s)) - 1.0;
  return v;
}

}  // namespace detail

/// Prolongation from the spline trial space to interior nodes (Kronecker product of axes).
inline SpMat spline_prolongation(const Grid& g, int ratio) {
  SpMat P = detail::spline_prolongation_1d(g, 0, ratio);
  for (int k = 1; k < g.dim(); ++k) {
    SpMat Pk = detail::spline_prolongation_1d(g, k, ratio);
    SpMat next = Eigen::kroneckerProduct(P, Pk).eval();
    P = std::move(next);
  }
  P.makeCompressed();
  return P;
}

namespace detail {

/// Dominant pair of A x = lambda B x. Each step does a Ritz projection on
/// span{x, B^{-1} r, p}; with accelerate = false the span is {x, B^{-1} A x}
/// (plain power iteration).
template <class ApplyA, class ApplyB, class SolveB>
Vec dominant_pair(Vec x, ApplyA&& A, ApplyB&& B, SolveB&& Binv, const RayleighOptions& opt,
                  RayleighResult& res) {
  auto degenerate = [] {
    throw ConvergenceError("degenerate pencil: L u = 0 for a nonzero iterate (grid too coarse)", {});
  };
  Vec Bx = B(x);
  double bn = std::sqrt(x.dot(Bx));
  if (!(bn > 0.0)) degenerate();
  x /= bn;
  Bx /= bn;
  Vec Ax = A(x);
  Vec p, Ap, Bp;
  double lam_prev = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    const double lam = x.dot(Ax);
    res.trace.push_back(lam);
    res.iterations = it + 1;
    if (it > 0 && std::abs(lam - lam_prev) <= opt.tol * std::abs(lam)) {
      res.converged = true;
      return x;
    }
    lam_prev = lam;
    Vec w = Binv(opt.accelerate ? Vec(Ax - lam * Bx) : Ax);
    Vec Bw = B(w);
    const double wn = std::sqrt(std::max(w.dot(Bw), 0.0));
    if (!(wn > 0.0)) {
      res.converged = true;
      return x;
    }
    w /= wn;
    Bw /= wn;
    Vec Aw = A(w);
    if (!opt.accelerate) {
      x = w, Ax = Aw, Bx = Bw;
      continue;
    }
    for (int use_p = p.size() ? 1 : 0; use_p >= 0; --use_p) {
      const int k = 2 + use_p;
      const Vec* S[3] = {&x, &w, &p};
      const Vec* AS[3] = {&Ax, &Aw, &Ap};
      const Vec* BS[3] = {&Bx, &Bw, &Bp};
      Eigen::MatrixXd GA(k, k), GB(k, k);
      for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) {
          GA(a, b) = S[a]->dot(*AS[b]);
          GB(a, b) = S[a]->dot(*BS[b]);
        }
      GA = 0.5 * (GA + GA.transpose()).eval();
      GB = 0.5 * (GB + GB.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gb(GB);
      if (gb.eigenvalues()(0) < 1e-12 * gb.eigenvalues()(k - 1)) {
        if (use_p) continue;
        degenerate();
      }
      Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(GA, GB);
      Eigen::VectorXd y = ges.eigenvectors().col(k - 1);
      Vec np = y(1) * w, nAp = y(1) * Aw, nBp = y(1) * Bw;
      if (use_p) np += y(2) * p, nAp += y(2) * Ap, nBp += y(2) * Bp;
      x = y(0) * x + np;
      Ax = y(0) * Ax + nAp;
      Bx = y(0) * Bx + nBp;
      p = std::move(np), Ap = std::move(nAp), Bp = std::move(nBp);
      const double pn = std::sqrt(std::max(p.dot(Bp), 0.0));
      if (pn > 0.0) p /= pn, Ap /= pn, Bp /= pn;
      break;
    }
    bn = std::sqrt(x.dot(Bx));
    if (!(bn > 0.0)) degenerate();
    x /= bn, Ax /= bn, Bx /= bn;
    if ((it + 1) % 20 == 0) Ax = A(x), Bx = B(x);  // limit drift of the recurrences
  }
  throw ConvergenceError("rayleigh_maximize: no convergence in " + std::to_string(opt.max_iter) + " iterations",
                         res.trace);
}

}  // namespace detail

/// Dominant value of the pencil (Hstack^T Hstack, L^T L) and its maximizer.
inline RayleighResult rayleigh_maximize(const GridOperators& ops, const RayleighOptions& opt = {}) {
  if (ops.grid.size() == 0) throw PreconditionError("rayleigh_maximize: empty interior");
  RayleighResult res;

  if (opt.space == TrialSpace::spline) {
    const SpMat P = spline_prolongation(ops.grid, opt.spline_ratio);
    res.dofs = static_cast<std::size_t>(P.cols());
    const SpMat LP = (ops.L * P).pruned();
    const SpMat B = (SpMat(LP.transpose()) * LP).pruned();
    const std::size_t est = static_cast<std::size_t>(B.nonZeros()) * 8 * sizeof(double);
    if (est > opt.memory_cap)
      throw ConfigError("rayleigh_maximize: estimated factor size " + std::to_string(est >> 20) +
                        " MiB exceeds the cap");
    Eigen::SimplicialLLT<SpMat> chol;
    chol.compute(B);
    if (chol.info() != Eigen::Success)
      throw ConvergenceError("degenerate pencil: L P is rank deficient (grid too coarse)", {});
    auto A = [&](const Vec& c) -> Vec { return P.transpose() * ops.hess_normal(P * c); };
    auto Bm = [&](const Vec& c) -> Vec { return B * c; };
    auto Binv = [&](const Vec& r) -> Vec {
      ++res.inner_solves;
      return chol.solve(r);
    };
    const Vec c = detail::dominant_pair(detail::seeded_vector(P.cols(), opt.seed), A, Bm, Binv, opt, res);
    res.lambda = res.trace.back();
    const Vec u = P * c;
    res.maximizer = GridField(ops.grid, u / u.norm());
    return res;
  }

  // Nodal: (L^T L)^{-1} = L^{-2}, two inner CG solves with -L.
  res.dofs = ops.grid.size();
  auto A = [&](const Vec& u) -> Vec { return ops.hess_normal(u); };
  auto Bm = [&](const Vec& u) -> Vec { return ops.L.transpose() * (ops.L * u); };
  auto Binv = [&](const Vec& r) -> Vec {
    CgResult s1 = poisson_cg(ops.L, r, opt.inner_tol);
    CgResult s2 = poisson_cg(ops.L, s1.u, opt.inner_tol);
    if (!s1.converged || !s2.converged)
      throw ConvergenceError("rayleigh_maximize: inner solve failed", s1.converged ? s2.residuals : s1.residuals);
    res.inner_solves += 2;
    res.inner_iterations += s1.iterations + s2.iterations;
    return s2.u;
  };
  const Vec u = detail::dominant_pair(
      detail::seeded_vector(static_cast<Eigen::Index>(ops.grid.size()), opt.seed), A, Bm, Binv, opt, res);
  res.lambda = res.trace.back();
  res.maximizer = GridField(ops.grid, u / u.norm());
  return res;
}

struct RefinementRow {
  int m_axis = 0;
  double h = 0.0;
  std::string box;
  double lambda = 0.0;
  double richardson = 0.0;  // O(h^2) extrapolation from this and the previous row
  int iterations = 0;
  long inner_solves = 0;
  std::size_t dofs = 0;
};

struct RefinementTable {
  std::vector<RefinementRow> rows;
  bool nondecreasing = true;  // within the stated noise level
  double noise = 0.02;
};

inline RefinementTable refinement_study(
    const std::vector<Grid>& grids, const Frame& frame, const RayleighOptions& opt = {}, double noise = 0.02,
    const std::function<void(const Grid&, const RayleighResult&)>& on_grid = {}) {
  if (grids.size() < 3) throw PreconditionError("refinement_study: need at least 3 grids");
  for (std::size_t i = 1; i < grids.size(); ++i)
    if (!(grids[i].h_max() < grids[i - 1].h_max()))
      throw PreconditionError("refinement_study: grids must have decreasing h");
  RefinementTable t;
  t.noise = noise;
  for (const auto& g : grids) {
    const GridOperators ops = assemble(g, frame, opt.memory_cap);
    const RayleighResult r = rayleigh_maximize(ops, opt);
    if (on_grid) on_grid(g, r);
    RefinementRow row;
    row.m_axis = g.m_axis;
    row.h = g.h_max();
    row.box = g.box.str();
    row.lambda = r.lambda;
    row.iterations = r.iterations;
    row.inner_solves = r.inner_solves;
    row.dofs = r.dofs;
    if (!t.rows.empty()) {
      const auto& prev = t.rows.back();
      const double q = (prev.h / row.h) * (prev.h / row.h);
      row.richardson = row.lambda + (row.lambda - prev.lambda) / (q - 1.0);
      if (row.lambda < prev.lambda * (1.0 - noise)) t.nondecreasing = false;
    } else {
      row.richardson = row.lambda;
    }
    t.rows.push_back(row);
  }
  return t;
}

}  // namespace hsharp
