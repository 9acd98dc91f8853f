#include <gtest/gtest.h>

#include <cmath>

#include "hsharp/pharmonic.hpp"

using namespace hsharp;

namespace {

ScalarExpr boundary3() {
  const auto x = ScalarExpr::coord(3, 0), y = ScalarExpr::coord(3, 1), t = ScalarExpr::coord(3, 2);
  return x + 0.25 * (x * x - y * y) + 0.1 * t;
}

std::vector<double> unit(int s, std::uint64_t seed) {
  std::vector<double> v(s);
  double nn = 0.0;
  for (auto& x : v) x = 2.0 * detail::unit_double(detail::splitmix64(seed)) - 1.0, nn += x * x;
  for (auto& x : v) x /= std::sqrt(nn);
  return v;
}

}  // namespace

TEST(PHarmonic, AdmissibleRangeClosedForms) {
  const auto r1 = admissible_range(1);
  EXPECT_NEAR(r1.q_lo, (1.0 - std::sqrt(5.0)) / 2.0, 1e-15);
  EXPECT_NEAR(r1.q_hi, (1.0 + std::sqrt(5.0)) / 2.0, 1e-15);
  const auto r2 = admissible_range(2);
  EXPECT_NEAR(r2.q_lo, (2.0 - 2.0 * std::sqrt(21.0)) / 10.0, 1e-15);
  EXPECT_NEAR(r2.q_hi, (2.0 + 2.0 * std::sqrt(21.0)) / 10.0, 1e-15);
  EXPECT_TRUE(r1.contains(3.0));
  EXPECT_FALSE(r1.contains(3.8));
  EXPECT_FALSE(r1.contains(r1.p_hi));
}

TEST(PHarmonic, GammaOneRootsMatchRangeEndpoints) {
  for (int n : {1, 2, 3}) {
    const auto [lo, hi] = gamma_one_roots(n);
    const auto r = admissible_range(n);
    EXPECT_NEAR(lo, r.q_lo, 1e-10) << n;
    EXPECT_NEAR(hi, r.q_hi, 1e-10) << n;
    EXPECT_NEAR(rank_one_epsilon(hi, n), 1.0 - 1.0 / cordes_constant(n), 1e-10);
  }
}

TEST(PHarmonic, RankOneEpsilonMatchesMatrixOnRandomDirections) {
  for (int n : {1, 2}) {
    const int s = 2 * n;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto nu = unit(s, seed);
      const double q = -0.9 + 0.17 * static_cast<double>(seed);
      std::vector<double> a(s * s);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) a[i * s + j] = (i == j) + q * nu[i] * nu[j];
      EXPECT_NEAR(cordes_epsilon(a.data(), n), rank_one_epsilon(q, n), 1e-12);
    }
  }
}

TEST(PHarmonic, CoefficientMatrixSpectrum) {
  for (double p : {1.5, 3.0, 4.2}) {
    const std::vector<double> g = {0.3, -1.1, 0.7, 0.2};
    const Eigen::MatrixXd a = coefficient_matrix(g, p);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    auto ev = es.eigenvalues();
    std::vector<double> v(ev.data(), ev.data() + ev.size());
    std::sort(v.begin(), v.end());
    const double lo = std::min(1.0, p - 1.0), hi = std::max(1.0, p - 1.0);
    EXPECT_NEAR(v.front(), lo, 1e-14);
    EXPECT_NEAR(v.back(), hi, 1e-14);
    EXPECT_NEAR(a.trace(), 4.0 + p - 2.0, 1e-14);
    EXPECT_NEAR(a.squaredNorm(), 3.0 + (p - 1.0) * (p - 1.0), 1e-13);
  }
  EXPECT_THROW(coefficient_matrix({0.0, 0.0}, 3.0), SingularGradient);
  EXPECT_THROW(coefficient_matrix({1.0, 0.0, 2.0}, 3.0), PreconditionError);
}

TEST(PHarmonic, PEqualsTwoIsHarmonicExtension) {
  const Grid g = Grid::make(1, Box::cube(3, -1.0, 1.0), 14);
  const auto ops = assemble(g, Frame::standard(1));
  PHarmonicProblem prob;
  prob.p = 2.0;
  prob.grid = g;
  prob.boundary = boundary3();
  const auto r = solve_regularized(prob, ops);
  ASSERT_TRUE(r.converged) << r.failure;
  const Vec h = harmonic_extension(ops, boundary_lift(ops, boundary3()));
  EXPECT_LE((r.u.values - h).norm(), 1e-9 * h.norm());
  prob.m = 1e4;
  EXPECT_EQ(solve_regularized(prob, ops).hess_norm, r.hess_norm);
}

TEST(PHarmonic, PEqualsThreeConvergesMonotonically) {
  const Grid g = Grid::make(1, Box::cube(3, -1.0, 1.0), 14);
  const auto ops = assemble(g, Frame::standard(1));
  PHarmonicProblem prob;
  prob.p = 3.0;
  prob.m = 100.0;
  prob.grid = g;
  prob.boundary = boundary3();
  const auto r = solve_regularized(prob, ops);
  ASSERT_TRUE(r.converged) << r.failure;
  EXPECT_LE(r.weak_residual, 1e-8);
  EXPECT_LE(r.newton_iterations, 20);
  for (std::size_t i = 1; i < r.energy.size(); ++i) EXPECT_LE(r.energy[i], r.energy[i - 1] + 1e-13 * std::abs(r.energy[0]));
  EXPECT_GT(r.hess_norm, 0.0);
}

TEST(PHarmonic, StudyFlagsRangeAndBoundsRatio) {
  const Grid g = Grid::make(1, Box::cube(3, -1.0, 1.0), 12);
  const auto ops = assemble(g, Frame::standard(1));
  const auto t = w22_study(3.0, {10.0, 1000.0}, ops, boundary3(), 2);
  EXPECT_TRUE(t.admissible);
  EXPECT_FALSE(t.partial);
  EXPECT_GE(t.ratio, 1.0);
  EXPECT_LE(t.ratio, 2.0);
  const auto out = w22_study(3.8, {100.0}, ops, boundary3());
  EXPECT_FALSE(out.admissible);
  // worker count does not change the table
  const auto t1 = w22_study(3.0, {10.0, 1000.0}, ops, boundary3(), 1);
  EXPECT_EQ(t1.rows[1].hess_norm, t.rows[1].hess_norm);
}

TEST(PHarmonic, RejectsBadParameters) {
  const Grid g = Grid::make(1, Box::cube(3, -1.0, 1.0), 10);
  const auto ops = assemble(g, Frame::standard(1));
  PHarmonicProblem prob;
  prob.grid = g;
  prob.boundary = boundary3();
  prob.p = 1.0;
  EXPECT_THROW(solve_regularized(prob, ops), PreconditionError);
  prob.p = 3.0;
  prob.m = 0.5;
  EXPECT_THROW(solve_regularized(prob, ops), PreconditionError);
  EXPECT_THROW(w22_study(3.0, {}, ops, boundary3()), PreconditionError);
}
