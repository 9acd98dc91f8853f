#include <gtest/gtest.h>

#include <cmath>

#include "hsharp/heisenberg.hpp"
#include "hsharp/identities.hpp"
#include "poly_oracle.hpp"

using namespace hsharp;
using oracle::Poly;

namespace {

std::vector<HPoint> probes(int n, int count, std::uint64_t seed) {
  std::vector<HPoint> out;
  std::uint64_t s = seed;
  for (int k = 0; k < count; ++k) {
    std::vector<double> c(2 * n + 1);
    for (auto& v : c) v = 4.0 * detail::unit_double(detail::splitmix64(s)) - 2.0;
    out.push_back(HPoint::from_coords(c));
  }
  return out;
}

}  // namespace

TEST(Frame, SelfcheckHoldsOnH1AndH2) {
  for (int n : {1, 2}) EXPECT_LE(frame_selfcheck(Frame::standard(n), probes(n, 50, 3)), 1e-12) << n;
}

TEST(Frame, UntwistedFieldsFailSelfcheck) {
  EXPECT_GT(frame_selfcheck(Frame::untwisted(1), probes(1, 5, 3)), 0.1);
}

TEST(Frame, SelfcheckRejectsEmptyAndMismatchedProbes) {
  EXPECT_THROW(frame_selfcheck(Frame::standard(1), {}), PreconditionError);
  EXPECT_THROW(frame_selfcheck(Frame::standard(1), probes(2, 1, 1)), PreconditionError);
}

TEST(Frame, RealFieldsAreComplexParts) {
  const Frame fr = Frame::standard(1);
  const double p[3] = {0.4, -1.2, 0.7};
  // X_1 = (d_x + y d_t)/2, X_2 = (-d_y + x d_t)/2
  EXPECT_NEAR(fr.X[0].coefficient(0, p).real(), 0.5, 0);
  EXPECT_NEAR(fr.X[0].coefficient(2, p).real(), 0.5 * -1.2, 1e-16);
  EXPECT_NEAR(fr.X[1].coefficient(1, p).real(), -0.5, 0);
  EXPECT_NEAR(fr.X[1].coefficient(2, p).real(), 0.5 * 0.4, 1e-16);
}

class JetOracle : public ::testing::TestWithParam<int> {};

TEST_P(JetOracle, FrameJetMatchesPolynomialOracle) {
  const int n = GetParam();
  const int d = 2 * n + 1;
  const Frame fr = Frame::standard(n);
  const oracle::HFields H{n};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Poly f = oracle::random_poly(d, 4, seed);
    const auto e = f.expr();
    for (const auto& hp : probes(n, 4, seed + 10)) {
      const auto x = hp.coords();
      const FrameJet J = eval_jet(e, hp, fr);
      const double scale = 1.0 + std::abs(f.at(x));
      EXPECT_NEAR(J.f, f.at(x).real(), 1e-12 * scale);
      EXPECT_NEAR(J.f_0, H.T(f).at(x).real(), 1e-11 * scale);
      for (int a = 0; a < n; ++a) {
        EXPECT_LE(std::abs(J.f_alpha[a] - H.Z(a, f).at(x)), 1e-11 * scale);
        EXPECT_LE(std::abs(J.f_alphabar[a] - H.Zbar(a, f).at(x)), 1e-11 * scale);
        EXPECT_LE(std::abs(J.f_alpha0[a] - H.T(H.Z(a, f)).at(x)), 1e-10 * scale);
        for (int b = 0; b < n; ++b) {
          EXPECT_LE(std::abs(J.ab(a, b) - H.Z(b, H.Z(a, f)).at(x)), 1e-10 * scale);
          EXPECT_LE(std::abs(J.abbar(a, b) - H.Zbar(b, H.Z(a, f)).at(x)), 1e-10 * scale);
        }
      }
      for (int i = 0; i < 2 * n; ++i) {
        EXPECT_NEAR(J.grad_X[i], H.X(i, f).at(x).real(), 1e-11 * scale);
        for (int j = 0; j < 2 * n; ++j) EXPECT_NEAR(J.hess(i, j), H.X(i, H.X(j, f)).at(x).real(), 1e-10 * scale);
      }
      EXPECT_LE(std::abs(J.laplace_b - H.laplace_b(f).at(x)), 1e-10 * scale);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(N, JetOracle, ::testing::Values(1, 2));

TEST(Frame, OrderingSwitchTransposesMixedSecondDerivatives) {
  Frame later = Frame::standard(1), first = Frame::standard(1);
  first.ordering = Ordering::outer_first;
  const oracle::HFields H{1};
  const Poly f = oracle::random_poly(3, 3, 9);
  const HPoint p({0.3}, {-0.7}, 0.2);
  const auto x = p.coords();
  const auto a = eval_jet(f.expr(), p, later), b = eval_jet(f.expr(), p, first);
  // outer-first: f_{1 1bar} = Z(Zbar f)
  EXPECT_LE(std::abs(b.abbar(0, 0) - H.Z(0, H.Zbar(0, f)).at(x)), 1e-11);
  EXPECT_LE(std::abs(a.abbar(0, 0) - H.Zbar(0, H.Z(0, f)).at(x)), 1e-11);
  // the two differ by i T f
  EXPECT_LE(std::abs(a.abbar(0, 0) - b.abbar(0, 0) - cplx(0.0, 1.0) * H.T(f).at(x)), 1e-11);
  // Delta_b is symmetric in the convention
  EXPECT_LE(std::abs(a.laplace_b - b.laplace_b), 1e-12);
}

TEST(Frame, PaneitzMatchesPolynomialOracle) {
  const Frame fr = Frame::standard(1);
  const oracle::HFields H{1};
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const Poly f = oracle::random_poly(3, 5, seed);
    const Poly P = H.paneitz(f);
    for (const auto& hp : probes(1, 5, 40 + seed)) {
      const auto x = hp.coords();
      double imag = 1.0;
      const double v = paneitz_apply(f.expr(), hp, fr, &imag);
      EXPECT_NEAR(v, P.at(x).real(), 1e-9 * (1.0 + std::abs(P.at(x))));
      EXPECT_LE(std::abs(P.at(x).imag()), 1e-9 * (1.0 + std::abs(P.at(x))));
      EXPECT_LE(imag, 1e-10);
    }
  }
}

TEST(Frame, PaneitzAnnihilatesCRPluriharmonicPieces) {
  // Re z and the Heisenberg-harmonic t are killed by P_0 on H^1.
  const Frame fr = Frame::standard(1);
  const HPoint p({0.5}, {0.25}, -0.4);
  EXPECT_NEAR(paneitz_apply(ScalarExpr::coord(3, 0), p, fr), 0.0, 1e-14);
  EXPECT_NEAR(paneitz_apply(ScalarExpr::coord(3, 2), p, fr), 0.0, 1e-14);
  EXPECT_THROW(paneitz_apply(ScalarExpr::coord(5, 0), HPoint({0, 0}, {0, 0}, 0), Frame::standard(2)),
               PreconditionError);
}

TEST(Frame, EvalJetDimensionMismatch) {
  EXPECT_THROW(eval_jet(ScalarExpr::coord(5, 0), HPoint({0.0}, {0.0}, 0.0), Frame::standard(1)),
               PreconditionError);
  EXPECT_THROW(HPoint({0.0}, {0.0, 1.0}, 0.0), ConfigError);
}
