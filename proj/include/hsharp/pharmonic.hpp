#pragma once

/// \file pharmonic.hpp
/// \brief Regularized p-Laplacian on a lattice: coefficient matrices, the
/// Cordes-admissible range of p, a damped Newton solver and the
/// uniform-in-m second-derivative study.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>

#include "hsharp/cordes.hpp"
#include "hsharp/core.hpp"
#include "hsharp/expr.hpp"
#include "hsharp/lattice.hpp"

namespace hsharp {

struct PRangeResult {
  int n = 1;
  double q_lo = 0.0, q_hi = 0.0;  // open interval for p - 2
  double p_lo = 0.0, p_hi = 0.0;
  bool contains(double p) const { return p > p_lo && p < p_hi; }
};

inline PRangeResult admissible_range(int n) {
  if (n < 1) throw PreconditionError("admissible_range: n must be >= 1");
  const double nn = n;
  const double root = std::sqrt(4.0 * nn * nn + 4.0 * nn - 3.0);
  const double den = 2.0 * nn * nn + 2.0 * nn - 2.0;
  PRangeResult r;
  r.n = n;
  r.q_lo = (nn - nn * root) / den;
  r.q_hi = (nn + nn * root) / den;
  r.p_lo = 2.0 + r.q_lo;
  r.p_hi = 2.0 + r.q_hi;
  return r;
}

/// Closed-form epsilon of I + q nu nu^T for a unit vector nu in R^{2n}.
inline double rank_one_epsilon(double q, int n) {
  const double m = 2.0 * n;
  return (m + q) * (m + q) / ((m - 1.0) + (1.0 + q) * (1.0 + q)) - (m - 1.0);
}

/// Roots of gamma(epsilon(q), n) = 1 on either side of q = 0, by bisection.
inline std::pair<double, double> gamma_one_roots(int n) {
  auto g = [n](double q) { return gamma_of(std::min(1.0, rank_one_epsilon(q, n)), n) - 1.0; };
  auto bisect = [&](double a, double b) {
    // g(a) > 0 > g(b) or the reverse
    const bool up = g(a) < 0.0;
    for (int it = 0; it < 200; ++it) {
      const double m = 0.5 * (a + b);
      if (m == a || m == b) break;
      if ((g(m) < 0.0) == up) a = m; else b = m;
    }
    return 0.5 * (a + b);
  };
  double hi = 1.0;
  while (g(hi) < 0.0) hi *= 2.0;
  return {bisect(-1.0, 0.0), bisect(0.0, hi)};
}

class SingularGradient : public Error {
 public:
  using Error::Error;
};

/// a_ij = delta_ij + (p - 2) g_i g_j / |g|^2.
inline Eigen::MatrixXd coefficient_matrix(const std::vector<double>& grad, double p) {
  const int s = static_cast<int>(grad.size());
  if (s < 2 || s % 2) throw PreconditionError("coefficient_matrix: gradient must have length 2n");
  double g2 = 0.0;
  for (double v : grad) g2 += v * v;
  if (!(g2 > 0.0)) throw SingularGradient("coefficient_matrix: zero horizontal gradient");
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) a(i, j) += (p - 2.0) * grad[i] * grad[j] / g2;
  return a;
}

struct PHarmonicProblem {
  double p = 2.0;
  double m = 100.0;  // regularization 1/m
  Grid grid;
  ScalarExpr boundary;
  double tol = 1e-10;  // relative Euler-Lagrange residual
  int max_newton = 60;
  double armijo = 1e-4;
  double min_step = 1e-10;
  double linear_tol = 1e-12;

  void validate() const {
    if (!(p > 1.0)) throw PreconditionError("p-harmonic: p must exceed 1");
    if (!(m >= 1.0)) throw PreconditionError("p-harmonic: m must be >= 1");
    if (!(tol > 0.0)) throw PreconditionError("p-harmonic: tol must be positive");
  }
};

struct PHarmonicResult {
  GridField u;
  bool converged = false;
  std::string failure;
  int newton_iterations = 0;
  long linear_iterations = 0;
  std::vector<double> energy;    // nonincreasing
  std::vector<double> residual;  // relative Euler-Lagrange residual
  std::vector<double> steps;     // accepted line-search step lengths
  double weak_residual = 0.0;
  double grad_norm = 0.0;  // |X u| (grid-weighted)
  double hess_norm = 0.0;  // |X^2 u| over nodes at depth >= 2
};

namespace detail {

struct PLapState {
  std::vector<Vec> G;  // X_i u + lift_i
  Vec rho;             // 1/m + |G|^2
};

inline void plap_state(const GridOperators& ops, const std::vector<Vec>& lift, double m, const Vec& u,
                       PLapState& st) {
  const int s = ops.fields();
  st.G.resize(s);
  st.rho = Vec::Constant(u.size(), 1.0 / m);
  for (int i = 0; i < s; ++i) {
    st.G[i] = ops.X[i] * u + lift[i];
    st.rho += st.G[i].cwiseAbs2();
  }
}

inline double plap_energy(const PLapState& st, double p, double cell) {
  CompensatedSum e;
  for (Eigen::Index k = 0; k < st.rho.size(); ++k) e.add(std::pow(st.rho[k], 0.5 * p) / p);
  return cell * e.value();
}

/// Euler-Lagrange residual sum X_i^T (w G_i) and its magnitude scale.
inline Vec plap_residual(const GridOperators& ops, const PLapState& st, double p, double* scale) {
  const Vec w = st.rho.array().pow(0.5 * (p - 2.0)).matrix();
  Vec r = Vec::Zero(w.size());
  Vec mag = Vec::Zero(w.size());
  for (int i = 0; i < ops.fields(); ++i) {
    const Vec wg = w.cwiseProduct(st.G[i]);
    r += ops.X[i].transpose() * wg;
    mag += ops.X[i].cwiseAbs().transpose() * wg.cwiseAbs();
  }
  if (scale) *scale = mag.norm();
  return r;
}

inline SpMat plap_hessian(const GridOperators& ops, const PLapState& st, double p) {
  const int s = ops.fields();
  const Vec w = st.rho.array().pow(0.5 * (p - 2.0)).matrix();
  const Vec w2 = (p - 2.0) * st.rho.array().pow(0.5 * (p - 4.0)).matrix();
  SpMat H(w.size(), w.size());
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      Vec d = w2.cwiseProduct(st.G[i]).cwiseProduct(st.G[j]);
      if (i == j) d += w;
      SpMat t = SpMat(ops.X[i].transpose()) * d.asDiagonal() * ops.X[j];
      H += t;
    }
  H.makeCompressed();
  return H;
}

/// Hessian norm of (u on the interior, boundary data outside) over nodes at depth >= 2.
inline double interior_hess_norm(const GridOperators& ops, const std::vector<Vec>& G) {
  const Grid& g = ops.grid;
  CompensatedSum s;
  for (int i = 0; i < ops.fields(); ++i)
    for (int j = 0; j < ops.fields(); ++j) {
      const Vec h = ops.X[i] * G[j];
      for (std::size_t k = 0; k < g.size(); ++k)
        if (g.depth(k) >= 2) s.add(h[static_cast<Eigen::Index>(k)] * h[static_cast<Eigen::Index>(k)]);
    }
  return std::sqrt(g.cell_volume() * s.value());
}

/// Discrete test basket: bumps at a few centres plus two low sine modes.
inline std::vector<Vec> weak_basket(const Grid& g) {
  std::vector<Vec> out;
  const int d = g.dim();
  std::vector<double> x(d);
  const double offs[3] = {-0.3, 0.0, 0.35};
  for (int c = 0; c < 3; ++c) {
    Vec v(static_cast<Eigen::Index>(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) {
      g.node(k, x.data());
      double q = 0.0;
      for (int a = 0; a < d; ++a) {
        const double mid = 0.5 * (g.box.lo[a] + g.box.hi[a]), half = 0.5 * (g.box.hi[a] - g.box.lo[a]);
        const double u = (x[a] - mid - offs[c] * half) / (0.6 * half);
        q += u * u;
      }
      v[static_cast<Eigen::Index>(k)] = q < 1.0 ? std::exp(-1.0 / (1.0 - q)) : 0.0;
    }
    out.push_back(std::move(v));
  }
  for (int mode = 1; mode <= 2; ++mode) {
    Vec v(static_cast<Eigen::Index>(g.size()));
    for (std::size_t k = 0; k < g.size(); ++k) {
      g.node(k, x.data());
      double prod = 1.0;
      for (int a = 0; a < d; ++a)
        prod *= std::sin(mode * M_PI * (x[a] - g.box.lo[a]) / (g.box.hi[a] - g.box.lo[a]));
      v[static_cast<Eigen::Index>(k)] = prod;
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

/// Harmonic extension of the boundary data for sum X_i X_i.
inline Vec harmonic_extension(const GridOperators& ops, const std::vector<Vec>& lift, double tol = 1e-13) {
  Vec rhs = Vec::Zero(static_cast<Eigen::Index>(ops.grid.size()));
  for (int i = 0; i < ops.fields(); ++i) rhs += ops.X[i] * lift[i];  // -X_i^T lift_i
  CgResult r = poisson_cg(ops.L, rhs, tol, 50000);
  if (!r.converged) throw ConvergenceError("harmonic_extension: CG failed", r.residuals);
  return r.u;
}

/// Damped Newton for the regularized energy h^d sum (1/p)(1/m + |X_h u|^2)^{p/2}.
inline PHarmonicResult solve_regularized(const PHarmonicProblem& prob, const GridOperators& ops,
                                         const Vec* initial = nullptr) {
  prob.validate();
  if (!prob.grid.same_as(ops.grid)) throw PreconditionError("solve_regularized: grid mismatch");
  const std::vector<Vec> lift = boundary_lift(ops, prob.boundary);
  for (const auto& b : lift)
    if (!b.allFinite()) throw PreconditionError("solve_regularized: boundary trace not finite");
  const double cell = ops.grid.cell_volume();
  PHarmonicResult res;
  Vec u = initial ? *initial : harmonic_extension(ops, lift);
  detail::PLapState st;
  detail::plap_state(ops, lift, prob.m, u, st);
  double E = detail::plap_energy(st, prob.p, cell);
  for (int it = 0;; ++it) {
    double scale = 0.0;
    const Vec r = detail::plap_residual(ops, st, prob.p, &scale);
    const double rel = scale > 0.0 ? r.norm() / scale : 0.0;
    res.energy.push_back(E);
    res.residual.push_back(rel);
    if (rel <= prob.tol) {
      res.converged = true;
      break;
    }
    if (it >= prob.max_newton) {
      res.failure = "Newton: no convergence in " + std::to_string(prob.max_newton) + " steps";
      break;
    }
    const SpMat H = detail::plap_hessian(ops, st, prob.p);
    Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper, Eigen::IncompleteCholesky<double>> cg;
    cg.setTolerance(prob.linear_tol);
    cg.setMaxIterations(20000);
    cg.compute(H);
    if (cg.info() != Eigen::Success) {
      res.failure = "Newton: preconditioner setup failed";
      break;
    }
    const Vec dir = cg.solve(-r);
    res.linear_iterations += cg.iterations();
    const double slope = r.dot(dir) * cell;  // directional derivative of E
    if (!(slope < 0.0)) {
      if (rel <= 1e3 * prob.tol) {
        res.converged = true;
        break;
      }
      res.failure = "Newton: not a descent direction";
      break;
    }
    double t = 1.0;
    bool accepted = false;
    detail::PLapState trial;
    double Et = E;
    while (t >= prob.min_step) {
      detail::plap_state(ops, lift, prob.m, u + t * dir, trial);
      Et = detail::plap_energy(trial, prob.p, cell);
      if (Et <= E + prob.armijo * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Roundoff floor: Armijo cannot resolve the decrease any more.
      if (rel <= 1e3 * prob.tol) {
        res.converged = true;
        break;
      }
      res.failure = "Newton stagnation: line search failed at step " + std::to_string(it + 1);
      break;
    }
    u += t * dir;
    st = std::move(trial);
    E = Et;
    res.steps.push_back(t);
    res.newton_iterations = it + 1;
  }
  // Weak form against the basket, normalized by the magnitude of its terms.
  const Vec w = st.rho.array().pow(0.5 * (prob.p - 2.0)).matrix();
  double worst = 0.0;
  for (const Vec& phi : detail::weak_basket(ops.grid)) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < ops.fields(); ++i) {
      const Vec xphi = ops.X[i] * phi;
      num += w.cwiseProduct(st.G[i]).dot(xphi);
      den += w.cwiseProduct(st.G[i]).cwiseAbs().dot(xphi.cwiseAbs());
    }
    if (den > 0.0) worst = std::max(worst, std::abs(num) / den);
  }
  res.weak_residual = worst;
  double g2 = 0.0;
  for (const auto& Gi : st.G) g2 += Gi.squaredNorm();
  res.grad_norm = std::sqrt(cell * g2);
  res.hess_norm = detail::interior_hess_norm(ops, st.G);
  res.u = GridField(ops.grid, std::move(u));
  return res;
}

/// Coefficient field of the p-Laplacian linearization at u (identity where the gradient vanishes).
inline MatrixField p_laplacian_field(const GridOperators& ops, const std::vector<Vec>& lift, const Vec& u, double p) {
  MatrixField A = MatrixField::identity(ops.grid, FieldOrigin::p_laplacian);
  const int s = ops.fields();
  std::vector<Vec> G;
  for (int i = 0; i < s; ++i) G.push_back(ops.X[i] * u + lift[i]);
  std::vector<double> g(s);
  for (std::size_t k = 0; k < ops.grid.size(); ++k) {
    for (int i = 0; i < s; ++i) g[i] = G[i][static_cast<Eigen::Index>(k)];
    double g2 = 0.0;
    for (double v : g) g2 += v * v;
    if (!(g2 > 0.0)) continue;
    const Eigen::MatrixXd a = coefficient_matrix(g, p);
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) A.at(k, i, j) = a(i, j);
  }
  return A;
}

struct W22Row {
  double p = 0.0;
  double m = 0.0;
  double h = 0.0;
  double grad_norm = 0.0;
  double hess_norm = 0.0;
  int newton_iterations = 0;
  double weak_residual = 0.0;
  bool converged = false;
  std::string failure;
};

struct W22Table {
  double p = 0.0;
  std::vector<W22Row> rows;
  double ratio = 0.0;  // max/min of hess_norm over converged rows
  bool admissible = true;   // p inside the Cordes range
  bool exploratory = false; // p < 2
  bool partial = false;     // some solve failed
};

inline W22Table w22_study(double p, const std::vector<double>& ms, const GridOperators& ops, const ScalarExpr& boundary,
                          int workers = 1, double tol = 1e-10) {
  if (ms.empty()) throw PreconditionError("w22_study: empty m list");
  W22Table t;
  t.p = p;
  t.admissible = admissible_range(ops.grid.n).contains(p);
  t.exploratory = p < 2.0;
  const std::vector<Vec> lift = boundary_lift(ops, boundary);
  const Vec u0 = harmonic_extension(ops, lift);
  t.rows.resize(ms.size());
  parallel_chunks(ms.size(), workers, [&](std::size_t c) {
    PHarmonicProblem prob;
    prob.p = p;
    prob.m = ms[c];
    prob.grid = ops.grid;
    prob.boundary = boundary;
    prob.tol = tol;
    W22Row& row = t.rows[c];
    row.p = p;
    row.m = ms[c];
    row.h = ops.grid.h_max();
    try {
      const PHarmonicResult r = solve_regularized(prob, ops, &u0);
      row.grad_norm = r.grad_norm;
      row.hess_norm = r.hess_norm;
      row.newton_iterations = r.newton_iterations;
      row.weak_residual = r.weak_residual;
      row.converged = r.converged;
      row.failure = r.failure;
    } catch (const Error& e) {
      row.converged = false;
      row.failure = e.what();
    }
  });
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& row : t.rows) {
    if (!row.converged) {
      t.partial = true;
      continue;
    }
    lo = std::min(lo, row.hess_norm);
    hi = std::max(hi, row.hess_norm);
  }
  t.ratio = hi > 0.0 && std::isfinite(lo) ? hi / lo : std::numeric_limits<double>::quiet_NaN();
  return t;
}

}  // namespace hsharp
