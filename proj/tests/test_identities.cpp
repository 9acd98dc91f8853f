#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hsharp/identities.hpp"
#include "hsharp/test_functions.hpp"
#include "poly_oracle.hpp"

using namespace hsharp;

namespace {

const Box kBox3 = Box::cube(3, -1.5, 1.5);

ScalarExpr random_f(std::uint64_t seed, int dim = 3) {
  TestFunctionParams p;
  p.dim = dim;
  p.quadrature_box = Box::cube(dim, -1.5, 1.5);
  return make_test_function(TestKind::random, p, seed);
}

const IdentityReport& find(const std::vector<IdentityReport>& v, IdentityKind k, const std::string& variant = "") {
  for (const auto& r : v)
    if (r.kind == k && r.variant == variant) return r;
  throw std::runtime_error("report not found");
}

}  // namespace

TEST(Densities, MatchPolynomialOracle) {
  const oracle::HFields H{1};
  const Frame fr = Frame::standard(1);
  const auto f = oracle::random_poly(3, 4, 5);
  const HPoint p({0.3}, {-0.6}, 0.45);
  const auto x = p.coords();
  const auto d = densities(f.expr(), fr, p, 3);
  const auto Zf = H.Z(0, f), Zbf = H.Zbar(0, f);
  const cplx I(0.0, 1.0);
  EXPECT_NEAR(d[kLapbSq], std::norm(H.laplace_b(f).at(x)), 1e-10);
  EXPECT_NEAR(d[kF0Sq], std::norm(H.T(f).at(x)), 1e-10);
  EXPECT_NEAR(d[kHol], std::norm(H.Z(0, Zf).at(x)), 1e-10);
  EXPECT_NEAR(d[kMixed], std::norm(H.Zbar(0, Zf).at(x)), 1e-10);
  const cplx cross = I * (Zbf.at(x) * H.T(Zf).at(x) - Zf.at(x) * H.T(Zbf).at(x));
  EXPECT_NEAR(d[kCross], cross.real(), 1e-10);
  const cplx ibp = Zbf.at(x) * H.Z(0, H.laplace_b(f)).at(x);
  EXPECT_NEAR(d[kIbp], ibp.real(), 1e-10);
  double hx = 0.0, lx = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double h = H.X(j, H.X(i, f)).at(x).real();
      hx += h * h;
      if (i == j) lx += h;
    }
  EXPECT_NEAR(d[kHessXSq], hx, 1e-10);
  EXPECT_NEAR(d[kLapXSq], lx * lx, 1e-10);
}

class SuiteH1 : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(SuiteH1, EveryKindPasses) {
  const auto f = random_f(GetParam());
  std::vector<IdentityKind> kinds;
  for (auto k : kAllIdentityKinds)
    if (k != IdentityKind::EUCLID_L2) kinds.push_back(k);
  VerifyOptions opt;
  opt.probes = 40;
  const auto reps = verify_all(kinds, f, Frame::standard(1), QuadratureRule::tensor(kBox3, 40), opt);
  for (const auto& r : reps) {
    EXPECT_TRUE(r.pass) << kind_name(r.kind) << " " << r.variant << " rel " << r.rel_err;
    if (!r.inequality && r.kind != IdentityKind::BOCHNER_POINTWISE) {
      EXPECT_LE(r.rel_err, 1e-6) << kind_name(r.kind);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, SuiteH1, ::testing::Values(1u, 2u, 3u));

TEST(Identities, HeisenbergDilationLeavesH1FourthOrderFunctionalsInvariant) {
  // f_2(x, y, t) = f(2x, 2y, 4t) has the same int |Delta_b f|^2 and int f_0^2 on H^1.
  TestFunctionParams a, b;
  a.radius = {1.0, 1.0, 1.0};
  b.radius = {0.5, 0.5, 0.25};
  a.wave = b.wave = {1.5, -1.0, 2.0};
  const auto f = make_test_function(TestKind::oscillating_bump, a);
  const auto g = make_test_function(TestKind::oscillating_bump, b);
  const Frame fr = Frame::standard(1);
  const auto Ff = compute_functionals(f, fr, QuadratureRule::tensor(kBox3, 40), 2);
  const auto Fg = compute_functionals(g, fr, QuadratureRule::tensor(kBox3, 40), 2);
  for (int k : {kLapbSq, kF0Sq, kHol, kMixed, kHessXSq})
    EXPECT_NEAR(Fg[k], Ff[k], 1e-7 * Ff[k]) << k;
  // f^2 scales with the homogeneous volume 2^-4
  EXPECT_NEAR(Fg[kFSq], Ff[kFSq] / 16.0, 1e-9 * Ff[kFSq]);
}

TEST(Identities, ZeroFunctionGivesZeroEverywhere) {
  const auto z = ScalarExpr::constant(3, 0.0).with_support(Box::cube(3, -1.0, 1.0));
  const auto reps = verify_all({IdentityKind::INTEGRATED_BOCHNER, IdentityKind::THEOREM1, IdentityKind::CHIU34},
                               z, Frame::standard(1), QuadratureRule::tensor(kBox3, 8));
  for (const auto& r : reps) {
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_EQ(r.rhs, 0.0);
    EXPECT_TRUE(r.pass);
  }
}

TEST(Identities, EuclideanGaussianClosedForm) {
  // g = exp(-|x|^2): int |Hess g|^2 = int (Delta g)^2 = (pi/2)^{d/2} (d^2 + 2d)
  for (int d : {2, 3}) {
    auto q = ScalarExpr::constant(d, 0.0);
    for (int i = 0; i < d; ++i) q = q + ScalarExpr::coord(d, i) * ScalarExpr::coord(d, i);
    const auto g = exp(-q);
    const auto r = euclidean_sanity(g, QuadratureRule::tensor(Box::cube(d, -7.0, 7.0), 64), 1e-8);
    const double ex = std::pow(std::numbers::pi / 2.0, d / 2.0) * (d * d + 2.0 * d);
    EXPECT_TRUE(r.pass) << r.note;
    EXPECT_NEAR(r.lhs, ex, 1e-8 * ex);
    EXPECT_NEAR(r.rhs, ex, 1e-8 * ex);
  }
}

TEST(Identities, EuclideanTailIsInconclusive) {
  const auto g = exp(-(ScalarExpr::coord(2, 0) * ScalarExpr::coord(2, 0)));
  const auto r = euclidean_sanity(g, QuadratureRule::tensor(Box::cube(2, -1.0, 1.0), 16));
  EXPECT_EQ(r.status, Status::inconclusive);
  EXPECT_FALSE(r.pass);
}

TEST(Identities, OrderingSwitchLeavesRealFunctionalsUnchanged) {
  // For real f the swapped mixed derivative is the conjugate, and T commutes with Z on H^n.
  const auto f = random_f(4);
  Frame first = Frame::standard(1);
  first.ordering = Ordering::outer_first;
  const auto rule = QuadratureRule::tensor(kBox3, 32);
  const auto A = compute_functionals(f, Frame::standard(1), rule, 2);
  const auto B = compute_functionals(f, first, rule, 2);
  for (int k = 0; k < kNumDensities; ++k) EXPECT_NEAR(A[k], B[k], 1e-11 * (1.0 + std::abs(A[kLapbSq]))) << k;
  EXPECT_TRUE(assemble_reports(IdentityKind::INTEGRATED_BOCHNER, B, {})[0].pass);
}

TEST(Identities, InequalitySlacksAndProofChainOnH1) {
  const auto f = random_f(7);
  const auto F = compute_functionals(f, Frame::standard(1), QuadratureRule::tensor(kBox3, 40), 4);
  const auto pc = proof_chain(F, 1e-6);
  EXPECT_TRUE(pc.match);
  EXPECT_GE(pc.direct, -1e-10 * pc.scale);
  EXPECT_GE(F[kPaneitz], 0.0);
  const auto t2 = assemble_reports(IdentityKind::THEOREM2, F, {});
  EXPECT_GE(t2[0].slack, 0.0);
  EXPECT_TRUE(find(t2, IdentityKind::THEOREM2, "dictionary-laplacian").pass);
}

TEST(Identities, PointwiseBochnerHolds) {
  VerifyOptions opt;
  opt.probes = 50;
  for (int n : {1, 2}) {
    const auto r = verify_bochner_pointwise(random_f(3, 2 * n + 1), Frame::standard(n), opt);
    EXPECT_TRUE(r.pass) << n << " " << r.abs_err;
    EXPECT_LE(r.abs_err, 1e-10);
  }
}

TEST(Identities, H2QmcSmoke) {
  const auto f = random_f(1, 5);
  const auto reps = verify_all({IdentityKind::LEMMA5, IdentityKind::THEOREM1, IdentityKind::THEOREM2}, f,
                               Frame::standard(2), QuadratureRule::qmc(Box::cube(5, -1.5, 1.5), 1u << 14));
  EXPECT_LE(find(reps, IdentityKind::LEMMA5).rel_err, 5e-2);
  EXPECT_GE(find(reps, IdentityKind::THEOREM1).slack, 0.0);
  EXPECT_LE(find(reps, IdentityKind::THEOREM2, "dictionary-laplacian").rel_err, 1e-12);
}

TEST(Identities, Errors) {
  const auto f = random_f(1);
  const auto rule = QuadratureRule::tensor(kBox3, 8);
  EXPECT_THROW(verify(IdentityKind::LILUK38, random_f(1, 5), Frame::standard(2),
                      QuadratureRule::tensor(Box::cube(5, -1.5, 1.5), 4)),
               PreconditionError);
  EXPECT_THROW(verify(IdentityKind::EUCLID_L2, f, Frame::standard(1), rule), PreconditionError);
  EXPECT_THROW(verify(IdentityKind::LEMMA4, ScalarExpr::coord(3, 0), Frame::standard(1), rule), PreconditionError);
  EXPECT_THROW(verify(IdentityKind::LEMMA4, f, Frame::standard(1), QuadratureRule::tensor(Box::cube(3, -0.5, 0.5), 8)),
               ConfigError);
  const auto F2 = compute_functionals(f, Frame::standard(1), rule, 2);
  EXPECT_THROW(assemble_reports(IdentityKind::CHIU34, F2, {}), PreconditionError);
  EXPECT_THROW(kind_from_name("LEMMA9"), ConfigError);
  VerifyOptions bad;
  bad.convex_c = {1.5};
  EXPECT_THROW(assemble_reports(IdentityKind::CONVEX_COMBO, F2, bad), ConfigError);
}

TEST(Identities, ConstantsAgreeAtNEqualsOne) {
  EXPECT_EQ(real_form_constant(1), 3.0);
  EXPECT_EQ(real_form_constant(2), 2.0);
  EXPECT_EQ(complex_form_constant(1), 1.5);
  EXPECT_EQ(complex_form_constant(3), 5.0 / 6.0);
}
