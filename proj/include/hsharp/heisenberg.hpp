#pragma once

/// \file heisenberg.hpp
/// \brief The Heisenberg group H^n, its CR frame and exact frame derivatives.
///
/// Coordinates are ordered (x_1..x_n, y_1..y_n, t). Every frame field has
/// coefficients that are affine in the coordinates, which keeps field
/// application on jets exact: multiplying by an affine coefficient only needs
/// the base value and the coordinate deltas.

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "hsharp/core.hpp"
#include "hsharp/expr.hpp"
#include "hsharp/jet.hpp"

namespace hsharp {

using cplx = std::complex<double>;

struct HPoint {
  std::vector<double> x;
  std::vector<double> y;
  double t = 0.0;

  HPoint() = default;
  HPoint(std::vector<double> xs, std::vector<double> ys, double tt)
      : x(std::move(xs)), y(std::move(ys)), t(tt) {
    if (x.empty() || x.size() != y.size()) throw ConfigError("HPoint: need n >= 1 and |x| == |y|");
    for (double v : x)
      if (!std::isfinite(v)) throw ConfigError("HPoint: non-finite coordinate");
    for (double v : y)
      if (!std::isfinite(v)) throw ConfigError("HPoint: non-finite coordinate");
    if (!std::isfinite(t)) throw ConfigError("HPoint: non-finite coordinate");
  }
  static HPoint from_coords(const std::vector<double>& c) {
    if (c.size() < 3 || c.size() % 2 == 0) throw ConfigError("HPoint: coordinate count must be 2n+1");
    const std::size_t n = (c.size() - 1) / 2;
    return HPoint({c.begin(), c.begin() + n}, {c.begin() + n, c.begin() + 2 * n}, c.back());
  }

  int n() const noexcept { return static_cast<int>(x.size()); }
  std::vector<double> coords() const {
    std::vector<double> c(x);
    c.insert(c.end(), y.begin(), y.end());
    c.push_back(t);
    return c;
  }
};

/// Complex vector field sum_k c_k(p) d/dp_k with c_k(p) = c0[k] + sum_j lin[k][j] p_j.
struct AffineField {
  int dim = 0;
  std::vector<cplx> c0;
  std::vector<cplx> lin;  // row-major dim x dim

  AffineField() = default;
  explicit AffineField(int d) : dim(d), c0(d), lin(static_cast<std::size_t>(d) * d) {}

  cplx& linear(int k, int j) { return lin[static_cast<std::size_t>(k) * dim + j]; }
  cplx linear(int k, int j) const { return lin[static_cast<std::size_t>(k) * dim + j]; }

  cplx coefficient(int k, const double* p) const {
    cplx c = c0[k];
    for (int j = 0; j < dim; ++j) c += linear(k, j) * p[j];
    return c;
  }

  AffineField conj() const {
    AffineField r(*this);
    for (auto& c : r.c0) c = std::conj(c);
    for (auto& c : r.lin) c = std::conj(c);
    return r;
  }
  AffineField real_part() const {
    AffineField r(*this);
    for (auto& c : r.c0) c = c.real();
    for (auto& c : r.lin) c = c.real();
    return r;
  }
  AffineField imag_part() const {
    AffineField r(*this);
    for (auto& c : r.c0) c = c.imag();
    for (auto& c : r.lin) c = c.imag();
    return r;
  }
};

/// Which application order the second frame index denotes.
enum class Ordering {
  outer_later,  // f_{a b} = W_b(V_a f): later subscripts are outer derivatives
  outer_first,  // f_{a b} = V_a(W_b f)
};

struct Frame {
  int n = 1;
  std::vector<AffineField> Z;     // Z_alpha
  std::vector<AffineField> Zbar;  // conjugate fields
  std::vector<AffineField> X;     // real fields X_1..X_2n
  AffineField T;
  Ordering ordering = Ordering::outer_later;

  int dim() const noexcept { return 2 * n + 1; }
  int ix(int a) const noexcept { return a; }
  int iy(int a) const noexcept { return n + a; }
  int it() const noexcept { return 2 * n; }

  /// Levi matrix h_{a bbar}; the identity in this frame.
  double levi(int a, int b) const noexcept { return a == b ? 1.0 : 0.0; }
  /// Webster Ricci and torsion forms evaluated on (V, V); both vanish on H^n.
  double ric(const std::vector<cplx>&) const noexcept { return 0.0; }
  double tor(const std::vector<cplx>&) const noexcept { return 0.0; }

  /// Z_a = d/dz_a + (i zbar_a / 2) d/dt, T = d/dt.
  static Frame standard(int n) { return build(n, true); }
  /// Z_a without the vertical term; fails the commutator relations.
  static Frame untwisted(int n) { return build(n, false); }

  /// theta(V) at p for theta = dt + sum_j (x_j dy_j - y_j dx_j).
  cplx theta(const AffineField& V, const double* p) const {
    cplx r = V.coefficient(it(), p);
    for (int j = 0; j < n; ++j)
      r += p[ix(j)] * V.coefficient(iy(j), p) - p[iy(j)] * V.coefficient(ix(j), p);
    return r;
  }
  /// d theta(V, W) = 2 sum_j (V^x W^y - V^y W^x).
  cplx dtheta(const AffineField& V, const AffineField& W, const double* p) const {
    cplx r = 0.0;
    for (int j = 0; j < n; ++j)
      r += 2.0 * (V.coefficient(ix(j), p) * W.coefficient(iy(j), p) -
                  V.coefficient(iy(j), p) * W.coefficient(ix(j), p));
    return r;
  }

 private:
  static Frame build(int n, bool twisted) {
    if (n < 1) throw ConfigError("frame: n must be >= 1");
    Frame f;
    f.n = n;
    const int d = 2 * n + 1;
    const cplx I(0.0, 1.0);
    for (int a = 0; a < n; ++a) {
      AffineField z(d);
      z.c0[f.ix(a)] = 0.5;
      z.c0[f.iy(a)] = -0.5 * I;
      if (twisted) {
        // (i/2) zbar_a = (y_a + i x_a) / 2
        z.linear(f.it(), f.ix(a)) = 0.5 * I;
        z.linear(f.it(), f.iy(a)) = 0.5;
      }
      f.Z.push_back(z);
      f.Zbar.push_back(z.conj());
    }
    for (int a = 0; a < n; ++a) f.X.push_back(f.Z[a].real_part());
    for (int a = 0; a < n; ++a) f.X.push_back(f.Z[a].imag_part());
    f.T = AffineField(d);
    f.T.c0[f.it()] = 1.0;
    return f;
  }
};

/// Complex-valued jet as a pair of real jets.
template <int D, int K>
struct CJet {
  using J = Jet<D, K>;
  J re, im;

  CJet() = default;
  explicit CJet(const J& r) : re(r), im() { im.set_valid_order(r.valid_order()); }
  CJet(const J& r, const J& i) : re(r), im(i) {}

  cplx value() const { return {re.value(), im.value()}; }
  int valid_order() const { return std::min(re.valid_order(), im.valid_order()); }

  CJet& operator+=(const CJet& o) {
    re += o.re;
    im += o.im;
    return *this;
  }
  CJet& operator-=(const CJet& o) {
    re -= o.re;
    im -= o.im;
    return *this;
  }
  friend CJet operator+(CJet a, const CJet& b) { return a += b; }
  friend CJet operator-(CJet a, const CJet& b) { return a -= b; }
  friend CJet operator*(cplx c, const CJet& a) {
    return {a.re * c.real() - a.im * c.imag(), a.im * c.real() + a.re * c.imag()};
  }
  friend CJet operator*(const CJet& a, const CJet& b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
  }
  CJet conj() const { return {re, -im}; }
};

/// Applies an affine field to a complex jet expanded around p.
template <int D, int K>
CJet<D, K> apply_field(const AffineField& V, const CJet<D, K>& F, const double* p) {
  CJet<D, K> r;
  r.re.set_valid_order(F.valid_order() - 1);
  r.im.set_valid_order(F.valid_order() - 1);
  for (int k = 0; k < D; ++k) {
    const cplx c = V.coefficient(k, p);
    bool any = c != 0.0;
    for (int j = 0; j < D && !any; ++j) any = V.linear(k, j) != 0.0;
    if (!any) continue;
    const Jet<D, K> dre = F.re.derivative(k), dim = F.im.derivative(k);
    // (a + ib)(R + iI) = (aR - bI) + i(aI + bR)
    r.re.axpy(c.real(), dre);
    r.re.axpy(-c.imag(), dim);
    r.im.axpy(c.real(), dim);
    r.im.axpy(c.imag(), dre);
    for (int j = 0; j < D; ++j) {
      const cplx l = V.linear(k, j);
      if (l == 0.0) continue;
      r.re.axpy_delta(l.real(), dre, j);
      r.re.axpy_delta(-l.imag(), dim, j);
      r.im.axpy_delta(l.real(), dim, j);
      r.im.axpy_delta(l.imag(), dre, j);
    }
  }
  return r;
}

/// Frame derivatives of f packaged with the field-application helpers.
template <int D, int K>
class FrameCalculus {
 public:
  using CJ = CJet<D, K>;
  static constexpr int kN = (D - 1) / 2;

  FrameCalculus(const Frame& frame, const double* p) : frame_(frame), p_(p) {
    if (frame.dim() != D) throw PreconditionError("frame calculus: dimension mismatch");
  }

  CJ Z(int a, const CJ& F) const { return apply_field(frame_.Z[a], F, p_); }
  CJ Zbar(int a, const CJ& F) const { return apply_field(frame_.Zbar[a], F, p_); }
  CJ T(const CJ& F) const { return apply_field(frame_.T, F, p_); }
  CJ X(int i, const CJ& F) const { return apply_field(frame_.X[i], F, p_); }

  /// Second frame derivative with the frame's ordering convention:
  /// `first` carries the earlier subscript, `second` the later one.
  template <class A, class B>
  CJ second(A first, B second_field, const CJ& F) const {
    if (frame_.ordering == Ordering::outer_later) return second_field(first(F));
    return first(second_field(F));
  }

  /// Sub-Laplacian sum_a (f_{a abar} + f_{abar a}); symmetric in the ordering.
  CJ laplace_b(const CJ& F) const {
    CJ r;
    r.re.set_valid_order(F.valid_order() - 2);
    r.im.set_valid_order(F.valid_order() - 2);
    for (int a = 0; a < kN; ++a) {
      r += Zbar(a, Z(a, F));
      r += Z(a, Zbar(a, F));
    }
    return r;
  }
  CJ laplace_X(const CJ& F) const {
    CJ r;
    r.re.set_valid_order(F.valid_order() - 2);
    r.im.set_valid_order(F.valid_order() - 2);
    for (int i = 0; i < 2 * kN; ++i) r += X(i, X(i, F));
    return r;
  }
  /// Kohn Laplacian and its conjugate: Delta_b + i T, Delta_b - i T.
  CJ kohn(const CJ& F) const { return laplace_b(F) + cplx(0.0, 1.0) * T(F); }
  CJ kohn_bar(const CJ& F) const { return laplace_b(F) - cplx(0.0, 1.0) * T(F); }

  const Frame& frame() const noexcept { return frame_; }
  const double* point() const noexcept { return p_; }

 private:
  const Frame& frame_;
  const double* p_;
};

struct FrameJet {
  int n = 1;
  double f = 0.0;
  std::vector<cplx> f_alpha;          // Z_a f
  std::vector<cplx> f_alphabar;       // Zbar_a f
  double f_0 = 0.0;                   // T f
  std::vector<cplx> f_alphabeta;      // n x n, f_{ab}
  std::vector<cplx> f_alphabarbeta;   // n x n, f_{a bbar}
  std::vector<cplx> f_alpha0;         // f_{a0}
  std::vector<double> grad_X;         // X_i f
  std::vector<double> hess_X;         // 2n x 2n, X_i X_j f
  cplx laplace_b = 0.0;
  double laplace_X = 0.0;

  cplx ab(int a, int b) const { return f_alphabeta[static_cast<std::size_t>(a) * n + b]; }
  cplx abbar(int a, int b) const { return f_alphabarbeta[static_cast<std::size_t>(a) * n + b]; }
  double hess(int i, int j) const { return hess_X[static_cast<std::size_t>(i) * 2 * n + j]; }
};

/// FrameJet from a stored jet of f.
template <int D, int K>
FrameJet frame_jet_from(const FrameCalculus<D, K>& fc, const Jet<D, K>& fj) {
  static_assert(K >= 2, "frame jets need second derivatives");
  constexpr int n = (D - 1) / 2;
  using CJ = CJet<D, K>;
  const CJ F(fj);
  FrameJet out;
  out.n = n;
  out.f = fj.value();
  out.f_0 = fc.T(F).value().real();
  std::array<CJ, n> Za;
  for (int a = 0; a < n; ++a) {
    Za[a] = fc.Z(a, F);
    out.f_alpha.push_back(Za[a].value());
    out.f_alphabar.push_back(fc.Zbar(a, F).value());
  }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      out.f_alphabeta.push_back(
          fc.second([&](const CJ& g) { return fc.Z(a, g); }, [&](const CJ& g) { return fc.Z(b, g); }, F)
              .value());
      out.f_alphabarbeta.push_back(
          fc.second([&](const CJ& g) { return fc.Z(a, g); }, [&](const CJ& g) { return fc.Zbar(b, g); }, F)
              .value());
    }
  for (int a = 0; a < n; ++a)
    out.f_alpha0.push_back(
        fc.second([&](const CJ& g) { return fc.Z(a, g); }, [&](const CJ& g) { return fc.T(g); }, F).value());
  std::array<CJ, 2 * n> Xf;
  for (int i = 0; i < 2 * n; ++i) {
    Xf[i] = fc.X(i, F);
    out.grad_X.push_back(Xf[i].value().real());
  }
  for (int i = 0; i < 2 * n; ++i)
    for (int j = 0; j < 2 * n; ++j) out.hess_X.push_back(fc.X(i, Xf[j]).value().real());
  out.laplace_b = fc.laplace_b(F).value();
  double lx = 0.0;
  for (int i = 0; i < 2 * n; ++i) lx += out.hess(i, i);
  out.laplace_X = lx;
  return out;
}

template <int D>
FrameJet eval_jet_fixed(const ScalarExpr& f, const double* p, const Frame& frame) {
  std::vector<Jet<D, 2>> scratch;
  const Jet<D, 2> fj = taylor_jet<D, 2>(f, p, scratch);
  FrameCalculus<D, 2> fc(frame, p);
  return frame_jet_from(fc, fj);
}

/// All first and second frame derivatives of f at p, by exact differentiation.
inline FrameJet eval_jet(const ScalarExpr& f, const HPoint& p, const Frame& frame) {
  if (p.n() != frame.n || f.dim() != frame.dim())
    throw PreconditionError("eval_jet: point, frame and expression dimensions disagree");
  const auto c = p.coords();
  switch (frame.n) {
    case 1: return eval_jet_fixed<3>(f, c.data(), frame);
    case 2: return eval_jet_fixed<5>(f, c.data(), frame);
    case 3: return eval_jet_fixed<7>(f, c.data(), frame);
    default: throw PreconditionError("eval_jet: supported n are 1, 2, 3");
  }
}

/// Calls fn.template operator()<D>() for the compile-time dimension D = 2n+1.
template <class Fn>
decltype(auto) dispatch_n(int n, Fn&& fn) {
  switch (n) {
    case 1: return fn.template operator()<3>();
    case 2: return fn.template operator()<5>();
    case 3: return fn.template operator()<7>();
    default: throw PreconditionError("supported n are 1, 2, 3; got " + std::to_string(n));
  }
}

namespace detail {

template <int D>
double frame_selfcheck_fixed(const Frame& frame, const std::vector<HPoint>& probes) {
  constexpr int n = (D - 1) / 2;
  using CJ = CJet<D, 2>;
  std::vector<ScalarExpr> basket;
  basket.push_back(ScalarExpr::constant(D, 1.0));
  for (int i = 0; i < D; ++i) basket.push_back(ScalarExpr::coord(D, i));
  for (int i = 0; i < D; ++i)
    for (int j = i; j < D; ++j) basket.push_back(ScalarExpr::coord(D, i) * ScalarExpr::coord(D, j));
  const cplx I(0.0, 1.0);
  double worst = 0.0;
  std::vector<Jet<D, 2>> scratch;
  for (const auto& probe : probes) {
    const auto c = probe.coords();
    const double* p = c.data();
    FrameCalculus<D, 2> fc(frame, p);
    for (const auto& q : basket) {
      const CJ F(taylor_jet<D, 2>(q, p, scratch));
      const cplx Tq = fc.T(F).value();
      for (int a = 0; a < n; ++a) {
        const CJ Za = fc.Z(a, F);
        worst = std::max(worst, std::abs(fc.T(Za).value() - fc.Z(a, fc.T(F)).value()));
        for (int b = 0; b < n; ++b) {
          const cplx comm = fc.Z(a, fc.Zbar(b, F)).value() - fc.Zbar(b, Za).value();
          worst = std::max(worst, std::abs(comm + (a == b ? I * Tq : 0.0)));
          const cplx holo = fc.Z(a, fc.Z(b, F)).value() - fc.Z(b, Za).value();
          worst = std::max(worst, std::abs(holo));
        }
      }
    }
    for (int a = 0; a < n; ++a) {
      worst = std::max(worst, std::abs(frame.theta(frame.Z[a], p)));
      worst = std::max(worst, std::abs(frame.theta(frame.Zbar[a], p)));
      worst = std::max(worst, std::abs(frame.dtheta(frame.T, frame.Z[a], p)));
      for (int b = 0; b < n; ++b) {
        const cplx levi = -I * frame.dtheta(frame.Z[a], frame.Zbar[b], p);
        worst = std::max(worst, std::abs(levi - frame.levi(a, b)));
      }
    }
    worst = std::max(worst, std::abs(frame.theta(frame.T, p) - 1.0));
  }
  return worst;
}

}  // namespace detail

/// Max over probes of the commutator and contact-form duality defects.
inline double frame_selfcheck(const Frame& frame, const std::vector<HPoint>& probes) {
  if (probes.empty()) throw PreconditionError("frame_selfcheck: probes must be nonempty");
  for (const auto& p : probes)
    if (p.n() != frame.n) throw PreconditionError("frame_selfcheck: probe dimension mismatch");
  return dispatch_n(frame.n, [&]<int D>() { return detail::frame_selfcheck_fixed<D>(frame, probes); });
}

}  // namespace hsharp
