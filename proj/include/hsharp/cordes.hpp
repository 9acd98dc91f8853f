#pragma once

/// \file cordes.hpp
/// \brief Cordes condition for measurable coefficient fields and the
/// perturbation solver for sum a_ij X_i X_j u = f with zero boundary values.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hsharp/core.hpp"
#include "hsharp/lattice.hpp"

namespace hsharp {

/// Constant in the Hessian bound: 3 on H^1, (n+2)/n otherwise.
inline double cordes_constant(int n) { return n == 1 ? 3.0 : (n + 2.0) / n; }

enum class FieldOrigin { manufactured, p_laplacian, user };

inline const char* origin_name(FieldOrigin o) {
  switch (o) {
    case FieldOrigin::manufactured: return "manufactured";
    case FieldOrigin::p_laplacian: return "p-laplacian-derived";
    case FieldOrigin::user: return "user";
  }
  return "?";
}

/// One symmetric 2n x 2n matrix per interior grid node, stored row-major.
struct MatrixField {
  Grid grid;
  std::vector<double> a;
  FieldOrigin origin = FieldOrigin::user;

  int size() const { return 2 * grid.n; }
  std::size_t nodes() const { return grid.size(); }
  double& at(std::size_t node, int i, int j) {
    return a[(node * size() + static_cast<std::size_t>(i)) * size() + j];
  }
  double at(std::size_t node, int i, int j) const {
    return a[(node * size() + static_cast<std::size_t>(i)) * size() + j];
  }
  const double* node(std::size_t k) const { return a.data() + k * size() * size(); }

  static MatrixField identity(const Grid& g, FieldOrigin o = FieldOrigin::manufactured) {
    MatrixField m;
    m.grid = g;
    m.origin = o;
    const int s = 2 * g.n;
    m.a.assign(g.size() * s * s, 0.0);
    for (std::size_t k = 0; k < g.size(); ++k)
      for (int i = 0; i < s; ++i) m.at(k, i, i) = 1.0;
    return m;
  }

  void validate() const {
    const int s = size();
    if (a.size() != nodes() * s * s) throw PreconditionError("matrix field: size mismatch");
    for (std::size_t k = 0; k < nodes(); ++k)
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
          const double v = at(k, i, j);
          if (!std::isfinite(v)) throw PreconditionError("matrix field: non-finite entry at node " + std::to_string(k));
          const double w = at(k, j, i);
          if (std::abs(v - w) > 1e-13 * std::max({1.0, std::abs(v), std::abs(w)}))
            throw PreconditionError("matrix field: not symmetric at node " + std::to_string(k));
        }
  }
};

struct CordesReport {
  int n = 1;
  double epsilon = 0.0;     // min over nodes, capped at 1
  double epsilon_raw = 0.0; // uncapped minimum
  double sigma = 0.0;       // 1 / min s
  double gamma = 0.0;
  double alpha_inf = 0.0;
  std::size_t witness = 0;  // node attaining the epsilon minimum
  std::vector<double> witness_point;
  bool capped = false;
  std::string note;
};

class NotCordesError : public Error {
 public:
  NotCordesError(const std::string& what, std::size_t node, std::vector<double> point)
      : Error(what), node_(node), point_(std::move(point)) {}
  std::size_t node() const noexcept { return node_; }
  const std::vector<double>& point() const noexcept { return point_; }

 private:
  std::size_t node_;
  std::vector<double> point_;
};

/// Per-matrix quantities s = sum a_ij^2, tr = sum a_ii.
inline void cordes_sums(const double* a, int s, double& sum_sq, double& tr) {
  sum_sq = 0.0, tr = 0.0;
  for (int i = 0; i < s; ++i) {
    tr += a[i * s + i];
    for (int j = 0; j < s; ++j) sum_sq += a[i * s + j] * a[i * s + j];
  }
}

inline double cordes_epsilon(const double* a, int n) {
  double sum_sq, tr;
  cordes_sums(a, 2 * n, sum_sq, tr);
  return tr * tr / sum_sq - (2 * n - 1);
}

inline double gamma_of(double epsilon, int n) {
  return std::sqrt(std::max(0.0, 1.0 - epsilon) * cordes_constant(n));
}

/// Does the condition hold at matrix a for the pair (epsilon, sigma)?
inline bool cordes_holds(const double* a, int n, double epsilon, double sigma) {
  double sum_sq, tr;
  cordes_sums(a, 2 * n, sum_sq, tr);
  return 1.0 / sigma <= sum_sq && sum_sq <= tr * tr / (2 * n - 1 + epsilon);
}

inline CordesReport cordes_check(const MatrixField& A, int workers = 1) {
  A.validate();
  const int n = A.grid.n, s = A.size();
  const std::size_t N = A.nodes();
  if (N == 0) throw PreconditionError("cordes_check: empty field");
  const std::size_t chunk = 4096, nchunks = (N + chunk - 1) / chunk;
  struct Part {
    double eps = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    double smin = std::numeric_limits<double>::infinity();
    double amax = 0.0;
    std::size_t bad_tr = std::numeric_limits<std::size_t>::max();
  };
  std::vector<Part> parts(nchunks);
  parallel_chunks(nchunks, workers, [&](std::size_t c) {
    Part& p = parts[c];
    for (std::size_t k = c * chunk; k < std::min(N, (c + 1) * chunk); ++k) {
      double sum_sq, tr;
      cordes_sums(A.node(k), s, sum_sq, tr);
      if (!(tr > 0.0)) {
        if (p.bad_tr == std::numeric_limits<std::size_t>::max()) p.bad_tr = k;
        continue;
      }
      const double e = tr * tr / sum_sq - (2 * n - 1);
      if (e < p.eps) p.eps = e, p.arg = k;
      p.smin = std::min(p.smin, sum_sq);
      p.amax = std::max(p.amax, tr / sum_sq);
    }
  });
  Part all;
  for (const auto& p : parts) {
    if (p.bad_tr < all.bad_tr) all.bad_tr = p.bad_tr;
    if (p.eps < all.eps) all.eps = p.eps, all.arg = p.arg;
    all.smin = std::min(all.smin, p.smin);
    all.amax = std::max(all.amax, p.amax);
  }
  auto point = [&](std::size_t k) {
    std::vector<double> x(A.grid.dim());
    A.grid.node(k, x.data());
    return x;
  };
  if (all.bad_tr != std::numeric_limits<std::size_t>::max())
    throw NotCordesError("cordes_check: trace <= 0 (wrong ellipticity orientation) at node " +
                             std::to_string(all.bad_tr),
                         all.bad_tr, point(all.bad_tr));
  if (!(all.eps > 0.0))
    throw NotCordesError("cordes_check: condition fails (epsilon = " + std::to_string(all.eps) + ") at node " +
                             std::to_string(all.arg),
                         all.arg, point(all.arg));
  CordesReport r;
  r.n = n;
  r.epsilon_raw = all.eps;
  r.epsilon = std::min(1.0, all.eps);
  r.capped = all.eps > 1.0;
  if (r.capped) r.note = "epsilon capped at 1";
  r.sigma = 1.0 / all.smin;
  r.gamma = gamma_of(r.epsilon, n);
  r.alpha_inf = all.amax;
  r.witness = all.arg;
  r.witness_point = point(all.arg);
  return r;
}

/// (A_h u)(x) = sum_ij a_ij(x) (X_i X_j u)(x).
inline Vec apply_nondivergence(const MatrixField& A, const GridOperators& ops, const Vec& u) {
  const int s = A.size();
  std::vector<Vec> xu;
  for (const auto& Xi : ops.X) xu.push_back(Xi * u);
  Vec out = Vec::Zero(u.size());
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const Vec hij = ops.X[i] * xu[j];
      for (Eigen::Index k = 0; k < u.size(); ++k) out[k] += A.at(static_cast<std::size_t>(k), i, j) * hij[k];
    }
  return out;
}

inline Vec alpha_field(const MatrixField& A) {
  Vec al(static_cast<Eigen::Index>(A.nodes()));
  for (std::size_t k = 0; k < A.nodes(); ++k) {
    double sum_sq, tr;
    cordes_sums(A.node(k), A.size(), sum_sq, tr);
    al[static_cast<Eigen::Index>(k)] = tr / sum_sq;
  }
  return al;
}

/// Grid-weighted |X^2 u|.
inline double hess_norm(const GridOperators& ops, const Vec& u) {
  return std::sqrt(ops.grid.cell_volume() * ops.hess_sq(u));
}

inline double grid_norm(const Grid& g, const Vec& v) { return std::sqrt(g.cell_volume()) * v.norm(); }

struct SolveOptions {
  double tol = 1e-8;        // stop when |A u - f| <= tol |f|
  int max_iter = 500;
  double inner_tol = 1e-11;
  double relaxation = 1.0;  // 1 is the pure scheme
  bool require_cordes = true;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  std::string failure;
  std::vector<double> residuals;    // |A u_k - f| (grid-weighted)
  std::vector<double> contraction;  // |X^2(u_{k+1}-u_k)| / |X^2(u_k-u_{k-1})|, from the second step on
  double gamma = 0.0;
  double alpha_inf = 0.0;
  double epsilon = 0.0;
  double apriori_ratio = 0.0;
  long inner_iterations = 0;
};

struct NondivergenceResult {
  GridField u;
  SolveReport report;
};

inline double apriori_audit(const GridField& u, const MatrixField& A, const GridOperators& ops,
                            const SolveReport& report) {
  const double lhs = hess_norm(ops, u.values);
  const double Au = grid_norm(ops.grid, apply_nondivergence(A, ops, u.values));
  const double n = ops.grid.n;
  const double bound = std::sqrt(1.0 + 2.0 / n) / (1.0 - report.gamma) * report.alpha_inf * Au;
  if (lhs == 0.0) return 0.0;
  if (!(bound > 0.0)) return std::numeric_limits<double>::infinity();
  return lhs / bound;
}

/// Fixed point  L u_{k+1} = L u_k - alpha (A_h u_k - f).
inline NondivergenceResult nondivergence_solve(const MatrixField& A, const GridField& f, const GridOperators& ops,
                                               const SolveOptions& opt = {}, int workers = 1) {
  if (!A.grid.same_as(ops.grid) || !f.grid.same_as(ops.grid))
    throw PreconditionError("nondivergence_solve: grid mismatch");
  if (!(opt.tol > 0.0)) throw PreconditionError("nondivergence_solve: tol must be positive");
  NondivergenceResult res;
  SolveReport& rep = res.report;
  if (opt.require_cordes) {
    const CordesReport c = cordes_check(A, workers);
    if (!(c.gamma < 1.0))
      throw PreconditionError("nondivergence_solve: gamma = " + std::to_string(c.gamma) + " is not below 1");
    rep.gamma = c.gamma, rep.alpha_inf = c.alpha_inf, rep.epsilon = c.epsilon;
  } else {
    A.validate();
  }
  const Vec alpha = alpha_field(A);
  const double fnorm = grid_norm(ops.grid, f.values);
  Vec u = Vec::Zero(f.values.size());
  if (fnorm == 0.0) {
    rep.converged = true;
    rep.residuals.push_back(0.0);
    res.u = GridField(ops.grid, u);
    return res;
  }
  double prev_step = 0.0;
  int growth = 0;
  for (int k = 0;; ++k) {
    const Vec r = apply_nondivergence(A, ops, u) - f.values;
    const double rn = grid_norm(ops.grid, r);
    if (!std::isfinite(rn)) {
      rep.failure = "non-finite residual";
      break;
    }
    if (!rep.residuals.empty() && rn > rep.residuals.back()) {
      if (++growth >= 3) {
        rep.failure = "divergence: residual grew for 3 consecutive steps (gamma = " + std::to_string(rep.gamma) +
                      ", last ratio = " +
                      std::to_string(rep.contraction.empty() ? 0.0 : rep.contraction.back()) + ")";
        rep.residuals.push_back(rn);
        break;
      }
    } else {
      growth = 0;
    }
    rep.residuals.push_back(rn);
    if (rn <= opt.tol * fnorm) {
      rep.converged = true;
      break;
    }
    if (k >= opt.max_iter) {
      rep.failure = "no convergence in " + std::to_string(opt.max_iter) + " iterations";
      break;
    }
    CgResult s = poisson_cg(ops.L, Vec(opt.relaxation * alpha.cwiseProduct(r)), opt.inner_tol);
    if (!s.converged) throw ConvergenceError("nondivergence_solve: inner Poisson solve failed", s.residuals);
    rep.inner_iterations += s.iterations;
    // (-L) v = alpha r, so L(u + v) = L u - alpha r.
    u += s.u;
    const double step = hess_norm(ops, s.u);
    if (k > 0 && prev_step > 0.0) rep.contraction.push_back(step / prev_step);
    prev_step = step;
    rep.iterations = k + 1;
  }
  res.u = GridField(ops.grid, u);
  rep.apriori_ratio = apriori_audit(res.u, A, ops, rep);
  return res;
}

/// Manufactured coefficient field a = s (I + q nu nu^T) with per-node random
/// unit nu, q in [q_lo, q_hi] and scale s in [s_lo, s_hi]; nodes are independent
/// so the field is merely measurable.
struct ManufacturedFieldParams {
  double q_lo = 0.0, q_hi = 1.0;
  double s_lo = 0.5, s_hi = 2.0;
};

inline MatrixField manufactured_field(const Grid& g, std::uint64_t seed, const ManufacturedFieldParams& prm = {}) {
  if (!(prm.q_lo <= prm.q_hi) || !(prm.q_lo > -1.0)) throw ConfigError("manufactured field: need -1 < q_lo <= q_hi");
  if (!(prm.s_lo > 0.0) || !(prm.s_lo <= prm.s_hi)) throw ConfigError("manufactured field: need 0 < s_lo <= s_hi");
  MatrixField A = MatrixField::identity(g, FieldOrigin::manufactured);
  const int s = A.size();
  std::uint64_t st = seed ^ 0x9E3779B97F4A7C15ull;
  auto U = [&](double lo, double hi) { return lo + (hi - lo) * detail::unit_double(detail::splitmix64(st)); };
  std::vector<double> nu(s);
  for (std::size_t k = 0; k < g.size(); ++k) {
    double nn = 0.0;
    do {
      nn = 0.0;
      for (double& v : nu) v = U(-1.0, 1.0), nn += v * v;
    } while (nn < 1e-4 || nn > 1.0);
    nn = std::sqrt(nn);
    const double q = U(prm.q_lo, prm.q_hi), sc = U(prm.s_lo, prm.s_hi);
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) A.at(k, i, j) = sc * ((i == j ? 1.0 : 0.0) + q * nu[i] * nu[j] / (nn * nn));
  }
  return A;
}

}  // namespace hsharp
