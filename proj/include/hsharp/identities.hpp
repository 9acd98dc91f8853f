#pragma once

/// \file identities.hpp
/// \brief Integral identities and inequalities for the Hessian bound on H^n.
///
/// Each check reduces to a handful of integrated densities computed in one
/// quadrature pass: frame derivatives come from exact jets, integrals from a
/// rule restricted to the support box of f. Curvature terms (Ric, Tor) are
/// evaluated through the frame and are identically zero on H^n.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "hsharp/core.hpp"
#include "hsharp/expr.hpp"
#include "hsharp/heisenberg.hpp"
#include "hsharp/quadrature.hpp"

namespace hsharp {

enum class IdentityKind {
  EUCLID_L2,
  BOCHNER_POINTWISE,
  IBP_RHS,
  INTEGRATED_BOCHNER,
  LEMMA4,
  LEMMA5,
  CS_BOUND,
  CONVEX_COMBO,
  THEOREM1,
  LILUK38,
  LILUK36,
  N1_INTERMEDIATE,
  CHIU34,
  N1_FINAL,
  THEOREM2,
};

inline constexpr std::array<IdentityKind, 15> kAllIdentityKinds = {
    IdentityKind::EUCLID_L2,        IdentityKind::BOCHNER_POINTWISE, IdentityKind::IBP_RHS,
    IdentityKind::INTEGRATED_BOCHNER, IdentityKind::LEMMA4,          IdentityKind::LEMMA5,
    IdentityKind::CS_BOUND,         IdentityKind::CONVEX_COMBO,      IdentityKind::THEOREM1,
    IdentityKind::LILUK38,          IdentityKind::LILUK36,           IdentityKind::N1_INTERMEDIATE,
    IdentityKind::CHIU34,           IdentityKind::N1_FINAL,          IdentityKind::THEOREM2};

inline const char* kind_name(IdentityKind k) {
  switch (k) {
    case IdentityKind::EUCLID_L2: return "EUCLID_L2";
    case IdentityKind::BOCHNER_POINTWISE: return "BOCHNER_POINTWISE";
    case IdentityKind::IBP_RHS: return "IBP_RHS";
    case IdentityKind::INTEGRATED_BOCHNER: return "INTEGRATED_BOCHNER";
    case IdentityKind::LEMMA4: return "LEMMA4";
    case IdentityKind::LEMMA5: return "LEMMA5";
    case IdentityKind::CS_BOUND: return "CS_BOUND";
    case IdentityKind::CONVEX_COMBO: return "CONVEX_COMBO";
    case IdentityKind::THEOREM1: return "THEOREM1";
    case IdentityKind::LILUK38: return "LILUK38";
    case IdentityKind::LILUK36: return "LILUK36";
    case IdentityKind::N1_INTERMEDIATE: return "N1_INTERMEDIATE";
    case IdentityKind::CHIU34: return "CHIU34";
    case IdentityKind::N1_FINAL: return "N1_FINAL";
    case IdentityKind::THEOREM2: return "THEOREM2";
  }
  return "?";
}

inline IdentityKind kind_from_name(const std::string& s) {
  for (auto k : kAllIdentityKinds)
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown identity kind '" + s + "'");
}

/// Which kinds need H^1.
inline bool kind_requires_n1(IdentityKind k) {
  return k == IdentityKind::LILUK38 || k == IdentityKind::LILUK36 || k == IdentityKind::N1_INTERMEDIATE ||
         k == IdentityKind::CHIU34 || k == IdentityKind::N1_FINAL;
}

enum class Status { pass, pass_with_roundoff, fail, inconclusive };

inline const char* status_name(Status s) {
  switch (s) {
    case Status::pass: return "pass";
    case Status::pass_with_roundoff: return "pass-with-roundoff";
    case Status::fail: return "fail";
    case Status::inconclusive: return "inconclusive";
  }
  return "?";
}

struct IdentityReport {
  IdentityKind kind = IdentityKind::EUCLID_L2;
  std::string variant;  // e.g. "c=0.5" for CONVEX_COMBO, "pointwise-cs"
  std::optional<std::uint64_t> seed;
  bool inequality = false;  // lhs <= rhs, or lhs >= rhs for CS_BOUND/CONVEX_COMBO
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  double quad_err = 0.0;  // propagated quadrature error estimate of lhs - rhs
  double slack = 0.0;     // amount by which an inequality holds (never clamped)
  double tol = 0.0;
  Status status = Status::fail;
  bool pass = false;
  std::string note;
};

struct VerifyOptions {
  double tol_pointwise = 1e-10;    // absolute, pointwise checks
  std::optional<double> tol_integrated;  // default 1e-6 (n = 1) or 5e-3 (n >= 2)
  double roundoff = 1e-10;         // relative slack floor for inequalities
  int probes = 200;                // BOCHNER_POINTWISE probe count
  std::uint64_t probe_seed = 17;
  std::vector<double> convex_c;    // defaults: 1/(n+1), 0.25, 0.75
  int workers = 1;
};

/// Integrated densities. Indices into Functionals::v.
enum Density : int {
  kFSq,        // f^2
  kGradXSq,    // |X f|^2
  kHessXSq,    // sum_ij (X_i X_j f)^2
  kLapXSq,     // (Delta_X f)^2
  kHol,        // sum_ab |f_ab|^2
  kMixed,      // sum_ab |f_a bbar|^2
  kCross,      // i sum_a (f_abar f_a0 - f_a f_abar0)
  kCrossSwap,  // i sum_a (f_0a f_abar - f_0abar f_a)
  kLapbSq,     // |Delta_b f|^2
  kTraceSq,    // |sum_a f_a abar|^2
  kF0Sq,       // f_0^2
  kIbp,        // Re (grad_b f, grad_b Delta_b f)
  kPaneitz,    // (P_0 f) f on H^1
  kRic,        // Ric(grad_b f, grad_b f)
  kTor,        // Tor(grad_b f, grad_b f)
  kNumDensities
};

struct Functionals {
  std::array<Integral, kNumDensities> v{};
  int n = 1;
  bool has_ibp = false;
  bool has_paneitz = false;
  double operator[](int i) const { return v[i].value; }
  double err(int i) const { return v[i].err; }
};

namespace detail {

template <int D, int K>
void densities_at(const ScalarExpr& f, const Frame& frame, const double* p, double* out,
                  std::vector<Jet<D, K>>& scratch) {
  constexpr int n = (D - 1) / 2;
  using CJ = CJet<D, K>;
  const cplx I(0.0, 1.0);
  const Jet<D, K> fj = taylor_jet<D, K>(f, p, scratch);
  FrameCalculus<D, K> fc(frame, p);
  const CJ F(fj);

  std::array<CJ, n> Za, Zba;
  std::array<cplx, n> fa, fab;
  for (int a = 0; a < n; ++a) {
    Za[a] = fc.Z(a, F);
    Zba[a] = fc.Zbar(a, F);
    fa[a] = Za[a].value();
    fab[a] = Zba[a].value();
  }
  const CJ TF = fc.T(F);
  const double f0 = TF.value().real();

  double hol = 0.0, mixed = 0.0;
  cplx cross = 0.0, cross_swap = 0.0, trace = 0.0, lapb = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      cplx f_ab, f_abb;
      if (frame.ordering == Ordering::outer_later) {
        f_ab = fc.Z(b, Za[a]).value();
        f_abb = fc.Zbar(b, Za[a]).value();
      } else {
        f_ab = fc.Z(a, Za[b]).value();
        f_abb = fc.Z(a, Zba[b]).value();
      }
      hol += std::norm(f_ab);
      mixed += std::norm(f_abb);
    }
  }
  for (int a = 0; a < n; ++a) {
    // f_{a0} (index a first, then 0) and f_{0a} (index 0 first).
    const cplx fa0 = fc.second([&](const CJ& g) { return fc.Z(a, g); }, [&](const CJ& g) { return fc.T(g); }, F).value();
    const cplx fab0 =
        fc.second([&](const CJ& g) { return fc.Zbar(a, g); }, [&](const CJ& g) { return fc.T(g); }, F).value();
    const cplx f0a = fc.second([&](const CJ& g) { return fc.T(g); }, [&](const CJ& g) { return fc.Z(a, g); }, F).value();
    const cplx f0ab =
        fc.second([&](const CJ& g) { return fc.T(g); }, [&](const CJ& g) { return fc.Zbar(a, g); }, F).value();
    cross += I * (fab[a] * fa0 - fa[a] * fab0);
    cross_swap += I * (f0a * fab[a] - f0ab * fa[a]);
    const cplx faab = fc.second([&](const CJ& g) { return fc.Z(a, g); }, [&](const CJ& g) { return fc.Zbar(a, g); }, F)
                          .value();
    const cplx fbaa = fc.second([&](const CJ& g) { return fc.Zbar(a, g); }, [&](const CJ& g) { return fc.Z(a, g); }, F)
                          .value();
    trace += faab;
    lapb += faab + fbaa;
  }

  // Real frame.
  std::array<double, 2 * n> gx{};
  double hx = 0.0, lx = 0.0, gsq = 0.0;
  for (int i = 0; i < 2 * n; ++i) {
    const CJ Xi = fc.X(i, F);
    gx[i] = Xi.value().real();
    gsq += gx[i] * gx[i];
    for (int j = 0; j < 2 * n; ++j) {
      const double h = fc.X(j, Xi).value().real();  // X_j X_i f
      hx += h * h;
      if (i == j) lx += h;
    }
  }

  out[kFSq] = fj.value() * fj.value();
  out[kGradXSq] = gsq;
  out[kHessXSq] = hx;
  out[kLapXSq] = lx * lx;
  out[kHol] = hol;
  out[kMixed] = mixed;
  out[kCross] = cross.real();
  out[kCrossSwap] = cross_swap.real();
  out[kLapbSq] = std::norm(lapb);
  out[kTraceSq] = std::norm(trace);
  out[kF0Sq] = f0 * f0;
  std::vector<cplx> grad_b(fab.begin(), fab.end());
  out[kRic] = frame.ric(grad_b);
  out[kTor] = frame.tor(grad_b);
  out[kIbp] = 0.0;
  out[kPaneitz] = 0.0;
  if constexpr (K >= 3) {
    const CJ L = fc.laplace_b(F);
    cplx ibp = 0.0;
    for (int a = 0; a < n; ++a) ibp += fab[a] * fc.Z(a, L).value();
    out[kIbp] = ibp.real();
  }
  if constexpr (K >= 4 && D == 3) {
    const CJ P = fc.kohn_bar(fc.kohn(F)) + fc.kohn(fc.kohn_bar(F));
    // Q = 2i (A^{11} f_1)_1 with A^{11} = 0 on H^1.
    out[kPaneitz] = P.value().real() * fj.value();
  }
}

template <int D>
Functionals compute_functionals_fixed(const ScalarExpr& f, const Frame& frame, const QuadratureRule& rule,
                                      int order, int workers) {
  Functionals out;
  out.n = (D - 1) / 2;
  auto run = [&]<int K>() {
    MultiIntegrand g = [&](const double* x, double* o) {
      thread_local std::vector<Jet<D, K>> scratch;
      densities_at<D, K>(f, frame, x, o, scratch);
    };
    const auto res = integrate_many(g, kNumDensities, rule, workers);
    for (int i = 0; i < kNumDensities; ++i) out.v[i] = res[i];
    out.has_ibp = K >= 3;
    out.has_paneitz = K >= 4 && D == 3;
  };
  if (order <= 2) run.template operator()<2>();
  else if (order == 3) run.template operator()<3>();
  else if (order == 4) run.template operator()<4>();
  else throw PreconditionError("derivative order above 4 requested");
  return out;
}

}  // namespace detail

/// Quadrature rule restricted to the support box of f.
inline QuadratureRule support_rule(const ScalarExpr& f, const QuadratureRule& rule) {
  if (!f.support()) throw PreconditionError("identity checks need a compactly supported f (no support box)");
  if (rule.box.dim() != f.dim()) throw PreconditionError("quadrature box dimension does not match f");
  if (!rule.box.contains(*f.support(), 0.0))
    throw ConfigError("support " + f.support()->str() + " is not inside the quadrature box " + rule.box.str());
  QuadratureRule r = rule;
  r.box = *f.support();
  return r;
}

/// Integrates every density with jets of the given order (2, 3 or 4).
inline Functionals compute_functionals(const ScalarExpr& f, const Frame& frame, const QuadratureRule& rule,
                                       int order, int workers = 1) {
  if (f.dim() != frame.dim()) throw PreconditionError("f and frame dimensions disagree");
  const QuadratureRule r = support_rule(f, rule);
  return dispatch_n(frame.n, [&]<int D>() { return detail::compute_functionals_fixed<D>(f, frame, r, order, workers); });
}

/// Integrand values at one point (for boundary-vanishing checks).
inline std::array<double, kNumDensities> densities(const ScalarExpr& f, const Frame& frame, const HPoint& p,
                                                   int order = 3) {
  std::array<double, kNumDensities> out{};
  const auto c = p.coords();
  dispatch_n(frame.n, [&]<int D>() {
    if (order <= 2) {
      std::vector<Jet<D, 2>> s;
      detail::densities_at<D, 2>(f, frame, c.data(), out.data(), s);
    } else if (order == 3) {
      std::vector<Jet<D, 3>> s;
      detail::densities_at<D, 3>(f, frame, c.data(), out.data(), s);
    } else {
      std::vector<Jet<D, 4>> s;
      detail::densities_at<D, 4>(f, frame, c.data(), out.data(), s);
    }
    return 0;
  });
  return out;
}

/// (bar-box_b box_b + box_b bar-box_b) f at p on H^1, realified.
inline double paneitz_apply(const ScalarExpr& f, const HPoint& p, const Frame& frame, double* imag_residue = nullptr) {
  if (frame.n != 1 || p.n() != 1 || f.dim() != 3)
    throw PreconditionError("paneitz_apply: unsupported dimension (needs n = 1)");
  const auto c = p.coords();
  std::vector<Jet<3, 4>> scratch;
  const CJet<3, 4> F(taylor_jet<3, 4>(f, c.data(), scratch));
  FrameCalculus<3, 4> fc(frame, c.data());
  const cplx v = (fc.kohn_bar(fc.kohn(F)) + fc.kohn(fc.kohn_bar(F))).value();
  if (imag_residue) *imag_residue = std::abs(v.imag()) / (1.0 + std::abs(v.real()));
  return v.real();
}

/// Integral of P_0 f . f over the support of f.
inline Integral paneitz_quadratic_form(const ScalarExpr& f, const QuadratureRule& rule, const Frame& frame,
                                       int workers = 1) {
  if (frame.n != 1) throw PreconditionError("paneitz_quadratic_form: unsupported dimension (needs n = 1)");
  return compute_functionals(f, frame, rule, 4, workers).v[kPaneitz];
}

/// Horizontal W-norm squared: integral of f^2 + |X f|^2 + |X^2 f|^2.
inline double w_norm_sq(const Functionals& F) { return F[kFSq] + F[kGradXSq] + F[kHessXSq]; }

namespace detail {

struct Term {
  double coef;
  int density;
};

inline double combo(const Functionals& F, std::initializer_list<Term> terms) {
  double s = 0.0;
  for (const auto& t : terms) s += t.coef * F[t.density];
  return s;
}
inline double combo_err(const Functionals& F, std::initializer_list<Term> terms) {
  double s = 0.0;
  for (const auto& t : terms) s += std::abs(t.coef) * F.err(t.density);
  return s;
}

inline void classify_equality(IdentityReport& r, double tol) {
  r.inequality = false;
  r.tol = tol;
  r.abs_err = std::abs(r.lhs - r.rhs);
  const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
  r.rel_err = scale > 0.0 ? r.abs_err / scale : 0.0;
  const double budget = scale > 0.0 ? r.quad_err / scale : 0.0;
  r.pass = r.abs_err == 0.0 || r.rel_err <= tol + budget;
  r.status = r.pass ? Status::pass : Status::fail;
  r.slack = 0.0;
}

/// slack = larger - smaller side as stated; negative slack down to
/// -(roundoff * scale + quad_err) passes with roundoff.
inline void classify_inequality(IdentityReport& r, double slack, double roundoff) {
  r.inequality = true;
  r.slack = slack;
  r.abs_err = slack < 0.0 ? -slack : 0.0;
  const double scale = std::max(std::abs(r.lhs), std::abs(r.rhs));
  r.rel_err = scale > 0.0 ? r.abs_err / scale : 0.0;
  r.tol = roundoff;
  if (slack >= 0.0) {
    r.status = Status::pass;
  } else if (-slack <= roundoff * scale + r.quad_err) {
    r.status = Status::pass_with_roundoff;
  } else {
    r.status = Status::fail;
  }
  r.pass = r.status != Status::fail;
}

}  // namespace detail

inline int order_for(IdentityKind k) {
  switch (k) {
    case IdentityKind::IBP_RHS: return 3;
    case IdentityKind::CHIU34:
    case IdentityKind::N1_FINAL: return 4;
    default: return 2;
  }
}

/// Real-form constant: 3 for n = 1, (n+2)/n for n >= 2.
inline double real_form_constant(int n) { return n == 1 ? 3.0 : (n + 2.0) / n; }
/// Complex-form constant: 3/2 for n = 1 (given P_0 >= 0), (n+2)/(2n) for n >= 2.
inline double complex_form_constant(int n) { return n == 1 ? 1.5 : (n + 2.0) / (2.0 * n); }

/// Reports for one kind built from precomputed functionals (integrated kinds only).
inline std::vector<IdentityReport> assemble_reports(IdentityKind kind, const Functionals& F,
                                                    const VerifyOptions& opt) {
  using detail::Term;
  const int n = F.n;
  const double nd = n;
  const double tol = opt.tol_integrated.value_or(n == 1 ? 1e-6 : 5e-3);
  std::vector<IdentityReport> out;
  auto eq = [&](std::string variant, std::initializer_list<Term> lhs, std::initializer_list<Term> rhs) {
    IdentityReport r;
    r.kind = kind;
    r.variant = std::move(variant);
    r.lhs = detail::combo(F, lhs);
    r.rhs = detail::combo(F, rhs);
    r.quad_err = detail::combo_err(F, lhs) + detail::combo_err(F, rhs);
    detail::classify_equality(r, tol);
    out.push_back(r);
  };
  // Inequality "small <= big".
  auto le = [&](std::string variant, std::initializer_list<Term> small, std::initializer_list<Term> big,
                bool big_on_left = false) {
    IdentityReport r;
    r.kind = kind;
    r.variant = std::move(variant);
    const double s = detail::combo(F, small), b = detail::combo(F, big);
    r.lhs = big_on_left ? b : s;
    r.rhs = big_on_left ? s : b;
    r.quad_err = detail::combo_err(F, small) + detail::combo_err(F, big);
    detail::classify_inequality(r, b - s, opt.roundoff);
    out.push_back(r);
  };

  switch (kind) {
    case IdentityKind::IBP_RHS:
      if (!F.has_ibp) throw PreconditionError("IBP_RHS needs third-order functionals");
      eq("", {{-1.0, kIbp}}, {{0.5, kLapbSq}});
      break;
    case IdentityKind::INTEGRATED_BOCHNER:
      eq("", {{1.0, kHol}, {1.0, kMixed}, {1.0, kRic}, {(nd - 2.0) / 2.0, kTor}, {1.0, kCross}}, {{0.5, kLapbSq}});
      if (n == 1)
        eq("n1-start", {{1.0, kMixed}, {1.0, kHol}, {1.0, kRic}, {-0.5, kTor}, {1.0, kCross}}, {{0.5, kLapbSq}});
      break;
    case IdentityKind::LEMMA4:
      eq("", {{1.0, kCross}}, {{2.0 / nd, kMixed}, {-2.0 / nd, kHol}, {-2.0 / nd, kRic}});
      break;
    case IdentityKind::LEMMA5:
      eq("", {{1.0, kCross}}, {{-4.0 / nd, kTraceSq}, {1.0 / nd, kLapbSq}, {1.0, kTor}});
      break;
    case IdentityKind::CS_BOUND:
      le("", {{-4.0, kMixed}, {1.0 / nd, kLapbSq}, {1.0, kTor}}, {{1.0, kCross}}, true);
      le("integrated-cs", {{1.0, kTraceSq}}, {{nd, kMixed}});
      break;
    case IdentityKind::CONVEX_COMBO: {
      std::vector<double> cs = opt.convex_c;
      if (cs.empty()) cs = {1.0 / (nd + 1.0), 0.25, 0.75};
      for (double c : cs) {
        if (!(c > 0.0 && c < 1.0)) throw ConfigError("CONVEX_COMBO: c must lie in (0, 1)");
        const double k = 2.0 * (1.0 - c) / nd;
        char tag[64];
        std::snprintf(tag, sizeof tag, "c=%.6g", c);
        // Lower bound on the cross term, then the simplified combination.
        le(std::string(tag) + ":bound",
           {{k, kMixed}, {-k, kHol}, {-k, kRic}, {-4.0 * c, kMixed}, {c / nd, kLapbSq}, {c, kTor}}, {{1.0, kCross}},
           true);
        le(std::string(tag) + ":combined",
           {{1.0 - k, kRic}, {(nd - 2.0) / 2.0 + c, kTor}, {1.0 + k - 4.0 * c, kMixed}, {1.0 - k, kHol}},
           {{0.5 - c / nd, kLapbSq}});
      }
      const double w = (nd - 1.0) / (nd + 1.0);
      le("conclusion", {{w, kHol}, {w, kMixed}, {w, kRic}, {w * nd / 2.0, kTor}},
         {{w * (nd + 2.0) / (2.0 * nd), kLapbSq}});
      break;
    }
    case IdentityKind::THEOREM1:
      if (n >= 2)
        le("", {{1.0, kHol}, {1.0, kMixed}, {1.0, kRic}, {nd / 2.0, kTor}}, {{(nd + 2.0) / (2.0 * nd), kLapbSq}});
      else
        le("", {{1.0, kHol}, {1.0, kMixed}, {1.0, kRic}, {-1.5, kTor}}, {{1.5, kLapbSq}});
      break;
    case IdentityKind::THEOREM2:
      if (n >= 2)
        le("", {{1.0, kHessXSq}, {0.5, kRic}, {nd / 4.0, kTor}}, {{real_form_constant(n), kLapXSq}});
      else
        le("", {{1.0, kHessXSq}, {0.5, kRic}, {-0.75, kTor}}, {{real_form_constant(n), kLapXSq}});
      eq("dictionary-laplacian", {{1.0, kLapbSq}}, {{4.0, kLapXSq}});
      eq("dictionary-hessian", {{1.0, kHol}, {1.0, kMixed}}, {{2.0, kHessXSq}});
      break;
    case IdentityKind::LILUK38:
      eq("", {{1.0, kCrossSwap}}, {{-1.0, kF0Sq}});
      break;
    case IdentityKind::LILUK36:
      eq("", {{1.0, kCross}}, {{1.0, kCrossSwap}, {1.0, kTor}});
      eq("combined", {{1.0, kCross}}, {{-1.0, kF0Sq}, {1.0, kTor}});
      break;
    case IdentityKind::N1_INTERMEDIATE:
      eq("", {{1.0, kMixed}, {1.0, kHol}, {1.0, kRic}, {0.5, kTor}, {-1.0, kF0Sq}}, {{0.5, kLapbSq}});
      break;
    case IdentityKind::CHIU34:
      if (!F.has_paneitz) throw PreconditionError("CHIU34 needs fourth-order functionals");
      eq("", {{1.0, kF0Sq}}, {{1.0, kLapbSq}, {2.0, kTor}, {-0.5, kPaneitz}});
      break;
    case IdentityKind::N1_FINAL:
      if (!F.has_paneitz) throw PreconditionError("N1_FINAL needs fourth-order functionals");
      eq("", {{1.0, kMixed}, {1.0, kHol}, {1.0, kRic}, {-1.5, kTor}, {0.5, kPaneitz}}, {{1.5, kLapbSq}});
      {
        // 0 <= int P_0 f f, relative to the W^{2,2}-type norm of f.
        IdentityReport r;
        r.kind = kind;
        r.variant = "paneitz-nonneg";
        r.inequality = true;
        r.lhs = 0.0;
        r.rhs = F[kPaneitz];
        r.slack = r.rhs;
        r.quad_err = F.err(kPaneitz);
        r.tol = 1e-8;
        const double w = w_norm_sq(F);
        r.abs_err = r.slack < 0.0 ? -r.slack : 0.0;
        r.rel_err = w > 0.0 ? r.abs_err / w : 0.0;
        if (r.slack >= 0.0)
          r.status = Status::pass;
        else if (r.abs_err <= r.tol * w + r.quad_err)
          r.status = Status::pass_with_roundoff;
        else
          r.status = Status::fail;
        r.pass = r.status != Status::fail;
        out.push_back(r);
      }
      break;
    case IdentityKind::EUCLID_L2:
    case IdentityKind::BOCHNER_POINTWISE:
      throw PreconditionError(std::string(kind_name(kind)) + " is not an integrated H^n functional");
  }
  return out;
}

/// Direct THEOREM1 slack next to the slack rebuilt from the proof steps.
struct ProofChain {
  double direct = 0.0;
  double assembled = 0.0;
  double quad_err = 0.0;
  double scale = 0.0;
  bool match = false;
};

/// n >= 2: the Cauchy-Schwarz slack scaled by (n+1)c/(n-1), c = 1/(n+1); n = 1: half the
/// Paneitz form. Identities along the way are taken as exact.
inline ProofChain proof_chain(const Functionals& F, double tol) {
  using detail::Term;
  const double nd = F.n;
  ProofChain pc;
  pc.direct = detail::combo(F, {{complex_form_constant(F.n), kLapbSq}, {-1.0, kHol}, {-1.0, kMixed}});
  double err = detail::combo_err(F, {{complex_form_constant(F.n), kLapbSq}, {-1.0, kHol}, {-1.0, kMixed}});
  if (F.n >= 2) {
    const double c = 1.0 / (nd + 1.0);
    const double cs_slack = detail::combo(F, {{1.0, kCross}, {4.0, kMixed}, {-1.0 / nd, kLapbSq}, {-1.0, kTor}});
    pc.assembled = (nd + 1.0) / (nd - 1.0) * c * cs_slack;
    err += (nd + 1.0) / (nd - 1.0) * c * detail::combo_err(F, {{1.0, kCross}, {4.0, kMixed}, {1.0 / nd, kLapbSq}});
  } else {
    if (!F.has_paneitz) throw PreconditionError("n = 1 proof chain needs fourth-order functionals");
    pc.assembled = 0.5 * F[kPaneitz];
    err += 0.5 * F.err(kPaneitz);
  }
  pc.quad_err = err;
  pc.scale = F[kLapbSq];
  pc.match = std::abs(pc.direct - pc.assembled) <= tol * pc.scale + err;
  return pc;
}

/// Pointwise Bochner identity on probe points inside the support of f.
inline IdentityReport verify_bochner_pointwise(const ScalarExpr& f, const Frame& frame, const VerifyOptions& opt) {
  if (!f.support()) throw PreconditionError("BOCHNER_POINTWISE needs a support box to place probes");
  if (f.dim() != frame.dim()) throw PreconditionError("f and frame dimensions disagree");
  const Box& box = *f.support();
  std::uint64_t s = opt.probe_seed;
  double worst = 0.0, worst_lhs = 0.0, worst_rhs = 0.0, scale = 0.0;
  dispatch_n(frame.n, [&]<int D>() {
    constexpr int n = (D - 1) / 2;
    using CJ = CJet<D, 3>;
    std::vector<Jet<D, 3>> scratch;
    std::vector<double> p(D);
    for (int k = 0; k < opt.probes; ++k) {
      for (int i = 0; i < D; ++i)
        p[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * detail::unit_double(detail::splitmix64(s));
      const CJ F(taylor_jet<D, 3>(f, p.data(), scratch));
      FrameCalculus<D, 3> fc(frame, p.data());
      CJ grad_sq;
      grad_sq.re.set_valid_order(2);
      grad_sq.im.set_valid_order(2);
      for (int a = 0; a < n; ++a) grad_sq += fc.Z(a, F) * fc.Zbar(a, F);
      const double lhs = 0.5 * fc.laplace_b(grad_sq).value().real();
      double out[kNumDensities];
      std::vector<Jet<D, 3>> s2;
      detail::densities_at<D, 3>(f, frame, p.data(), out, s2);
      const double rhs = out[kHol] + out[kMixed] + out[kIbp] + out[kRic] + (n - 2.0) / 2.0 * out[kTor] + out[kCross];
      const double r = std::abs(lhs - rhs);
      scale = std::max(scale, std::abs(lhs));
      if (r >= worst) worst = r, worst_lhs = lhs, worst_rhs = rhs;
    }
    return 0;
  });
  IdentityReport r;
  r.kind = IdentityKind::BOCHNER_POINTWISE;
  r.variant = "max over " + std::to_string(opt.probes) + " probes";
  r.lhs = worst_lhs;
  r.rhs = worst_rhs;
  r.abs_err = worst;
  r.rel_err = scale > 0.0 ? worst / scale : 0.0;
  r.tol = opt.tol_pointwise;
  r.pass = worst <= opt.tol_pointwise;
  r.status = r.pass ? Status::pass : Status::fail;
  return r;
}

/// Pointwise |sum_a f_{a abar}|^2 <= n sum_ab |f_{a bbar}|^2 on the same probes.
inline IdentityReport verify_pointwise_cs(const ScalarExpr& f, const Frame& frame, const VerifyOptions& opt) {
  if (!f.support()) throw PreconditionError("pointwise checks need a support box to place probes");
  const Box& box = *f.support();
  std::uint64_t s = opt.probe_seed;
  double min_slack = 0.0, at_lhs = 0.0, at_rhs = 0.0, scale = 0.0;
  bool first = true;
  dispatch_n(frame.n, [&]<int D>() {
    std::vector<Jet<D, 2>> scratch;
    std::vector<double> p(D);
    double out[kNumDensities];
    for (int k = 0; k < opt.probes; ++k) {
      for (int i = 0; i < D; ++i)
        p[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * detail::unit_double(detail::splitmix64(s));
      detail::densities_at<D, 2>(f, frame, p.data(), out, scratch);
      const double small = out[kTraceSq], big = frame.n * out[kMixed];
      scale = std::max(scale, big);
      if (first || big - small < min_slack) min_slack = big - small, at_lhs = small, at_rhs = big;
      first = false;
    }
    return 0;
  });
  IdentityReport r;
  r.kind = IdentityKind::CS_BOUND;
  r.variant = "pointwise-cs";
  r.lhs = at_lhs;
  r.rhs = at_rhs;
  detail::classify_inequality(r, min_slack, opt.roundoff);
  // Pointwise: roundoff relative to the largest value seen on the probes.
  if (r.status == Status::fail && -min_slack <= opt.roundoff * std::max(scale, 1.0)) {
    r.status = Status::pass_with_roundoff;
    r.pass = true;
  }
  return r;
}

/// Sum_ij ||d_ij f||^2 = ||Delta f||^2 on R^m.
inline IdentityReport euclidean_sanity(const ScalarExpr& f, const QuadratureRule& rule, double tol = 1e-6,
                                       int workers = 1) {
  const int m = f.dim();
  if (rule.box.dim() != m) throw PreconditionError("euclidean_sanity: box dimension mismatch");
  QuadratureRule r = rule;
  bool tail_ok = true;
  double tail = 0.0, peak = 0.0;
  auto run = [&]<int M>() {
    auto dens = [&](const double* x, double* o) {
      thread_local std::vector<Jet<M, 2>> scratch;
      std::array<Jet<M, 2>, M> vars;
      for (int v = 0; v < M; ++v) vars[v] = Jet<M, 2>::variable(v, x[v]);
      const Jet<M, 2> j = evaluate<Jet<M, 2>>(f, vars.data(), scratch);
      double hs = 0.0, lap = 0.0;
      for (int a = 0; a < M; ++a)
        for (int b = 0; b < M; ++b) {
          std::array<std::uint8_t, M> e{};
          e[a] += 1;
          e[b] += 1;
          const double h = j.partial(e);
          hs += h * h;
          if (a == b) lap += h;
        }
      o[0] = hs;
      o[1] = lap * lap;
      o[2] = j.value() * j.value();
    };
    if (f.support()) {
      if (!rule.box.contains(*f.support(), 0.0))
        throw ConfigError("euclidean_sanity: support is not inside the quadrature box");
      r.box = *f.support();
    } else {
      // Tail probe on the box faces: a 9-point lattice per free axis.
      std::vector<double> x(M), o(3);
      const int kSide = 9;
      std::size_t total = 1;
      for (int i = 0; i < M - 1; ++i) total *= kSide;
      for (int axis = 0; axis < M; ++axis)
        for (int side = 0; side < 2; ++side)
          for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rem = idx;
            for (int i = 0; i < M; ++i) {
              if (i == axis) {
                x[i] = side ? rule.box.hi[i] : rule.box.lo[i];
                continue;
              }
              const int q = static_cast<int>(rem % kSide);
              rem /= kSide;
              x[i] = rule.box.lo[i] + (rule.box.hi[i] - rule.box.lo[i]) * q / (kSide - 1.0);
            }
            dens(x.data(), o.data());
            tail = std::max({tail, o[0], o[1], o[2]});
          }
      for (int i = 0; i < M; ++i) x[i] = 0.5 * (rule.box.lo[i] + rule.box.hi[i]);
      dens(x.data(), o.data());
      peak = std::max({o[0], o[1], o[2]});
      tail_ok = tail <= 1e-14 * std::max(peak, 1e-300) || tail == 0.0;
    }
    return integrate_many(dens, 3, r, workers);
  };
  std::vector<Integral> res;
  switch (m) {
    case 1: res = run.template operator()<1>(); break;
    case 2: res = run.template operator()<2>(); break;
    case 3: res = run.template operator()<3>(); break;
    case 4: res = run.template operator()<4>(); break;
    case 5: res = run.template operator()<5>(); break;
    default: throw PreconditionError("euclidean_sanity: supported dimensions are 1..5");
  }
  IdentityReport rep;
  rep.kind = IdentityKind::EUCLID_L2;
  rep.lhs = res[0].value;
  rep.rhs = res[1].value;
  rep.quad_err = res[0].err + res[1].err;
  detail::classify_equality(rep, tol);
  if (!tail_ok) {
    rep.status = Status::inconclusive;
    rep.pass = false;
    rep.note = "integrand does not vanish on the box boundary (tail " + std::to_string(tail) + ")";
  }
  return rep;
}

/// Runs the requested H^n kinds for one f with a single quadrature pass.
inline std::vector<IdentityReport> verify_all(const std::vector<IdentityKind>& kinds, const ScalarExpr& f,
                                              const Frame& frame, const QuadratureRule& rule,
                                              const VerifyOptions& opt = {}) {
  int order = 0;
  for (auto k : kinds) {
    if (k == IdentityKind::EUCLID_L2) throw PreconditionError("EUCLID_L2 runs through euclidean_sanity");
    if (kind_requires_n1(k) && frame.n != 1)
      throw PreconditionError(std::string(kind_name(k)) + " requires n = 1");
    if (k != IdentityKind::BOCHNER_POINTWISE) order = std::max(order, order_for(k));
  }
  std::vector<IdentityReport> out;
  std::optional<Functionals> F;
  if (order > 0) F = compute_functionals(f, frame, rule, order, opt.workers);
  for (auto k : kinds) {
    std::vector<IdentityReport> reps;
    if (k == IdentityKind::BOCHNER_POINTWISE)
      reps.push_back(verify_bochner_pointwise(f, frame, opt));
    else
      reps = assemble_reports(k, *F, opt);
    if (k == IdentityKind::CS_BOUND) reps.push_back(verify_pointwise_cs(f, frame, opt));
    if (k == IdentityKind::THEOREM1 && (frame.n >= 2 || F->has_paneitz)) {
      const ProofChain pc = proof_chain(*F, opt.tol_integrated.value_or(frame.n == 1 ? 1e-6 : 5e-3));
      IdentityReport r;
      r.kind = k;
      r.variant = "proof-chain";
      r.lhs = pc.direct;
      r.rhs = pc.assembled;
      r.quad_err = pc.quad_err;
      r.tol = opt.tol_integrated.value_or(frame.n == 1 ? 1e-6 : 5e-3);
      r.abs_err = std::abs(pc.direct - pc.assembled);
      r.rel_err = pc.scale > 0.0 ? r.abs_err / pc.scale : 0.0;
      r.pass = pc.match;
      r.status = pc.match ? Status::pass : Status::fail;
      r.note = "slack relative to int |Delta_b f|^2";
      reps.push_back(r);
    }
    for (auto& r : reps) {
      r.seed = f.seed();
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// Single-kind entry point.
inline std::vector<IdentityReport> verify(IdentityKind kind, const ScalarExpr& f, const Frame& frame,
                                          const QuadratureRule& rule, const VerifyOptions& opt = {}) {
  return verify_all({kind}, f, frame, rule, opt);
}

}  // namespace hsharp
