#pragma once

/// \file test_functions.hpp
/// \brief Compactly supported smooth inputs for the identity suite.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hsharp/core.hpp"
#include "hsharp/expr.hpp"
#include "hsharp/quadrature.hpp"

namespace hsharp {

enum class TestKind { bump, gaussian_bump, oscillating_bump, random };

inline TestKind test_kind_from_name(const std::string& s) {
  if (s == "bump") return TestKind::bump;
  if (s == "gaussian-bump") return TestKind::gaussian_bump;
  if (s == "oscillating-bump") return TestKind::oscillating_bump;
  if (s == "random") return TestKind::random;
  throw ConfigError("unknown test function kind '" + s + "'");
}

inline const char* test_kind_name(TestKind k) {
  switch (k) {
    case TestKind::bump: return "bump";
    case TestKind::gaussian_bump: return "gaussian-bump";
    case TestKind::oscillating_bump: return "oscillating-bump";
    case TestKind::random: return "random";
  }
  return "?";
}

struct TestFunctionParams {
  int dim = 3;
  std::vector<double> center;  // defaults to the origin
  std::vector<double> radius;  // per-axis semi-axes; one value broadcasts
  double sharpness = 4.0;
  double width = 0.5;           // gaussian-bump, relative to the radius
  std::vector<double> wave;     // oscillating-bump wave vector in scaled coordinates
  double amplitude = 0.5;
  double phase = 0.3;
  std::optional<Box> quadrature_box;  // random kind draws its support inside this box
};

namespace detail {

struct SeededUniform {
  std::uint64_t state;
  explicit SeededUniform(std::uint64_t seed) : state(seed ^ 0xD1B54A32D192ED03ull) {}
  double operator()(double lo, double hi) { return lo + (hi - lo) * unit_double(splitmix64(state)); }
};

inline std::vector<double> broadcast(const std::vector<double>& v, int dim, double dflt, const char* what) {
  if (v.empty()) return std::vector<double>(dim, dflt);
  if (v.size() == 1) return std::vector<double>(dim, v[0]);
  if (static_cast<int>(v.size()) != dim)
    throw ConfigError(std::string("test function: ") + what + " has the wrong length");
  return v;
}

}  // namespace detail

/// Ellipsoidal bump exp(-a q/(1-q)), q = sum ((x_k - c_k)/r_k)^2, times a kind-specific factor.
inline ScalarExpr make_test_function(TestKind kind, const TestFunctionParams& params, std::uint64_t seed = 0) {
  const int d = params.dim;
  if (d < 1) throw ConfigError("test function: dim must be >= 1");
  auto center = detail::broadcast(params.center, d, 0.0, "center");
  auto radius = detail::broadcast(params.radius, d, 1.0, "radius");
  double sharpness = params.sharpness;
  detail::SeededUniform rng(seed);

  if (kind == TestKind::random) {
    if (!params.quadrature_box || params.quadrature_box->dim() != d)
      throw ConfigError("random test function needs a quadrature box of matching dimension");
    const Box& qb = *params.quadrature_box;
    for (int k = 0; k < d; ++k) {
      const double half = 0.5 * (qb.hi[k] - qb.lo[k]);
      const double mid = 0.5 * (qb.hi[k] + qb.lo[k]);
      radius[k] = half * rng(0.45, 0.9);
      center[k] = mid + (half - radius[k]) * rng(-1.0, 1.0);
    }
    sharpness = rng(4.0, 6.0);
  }
  for (double r : radius)
    if (!(r > 0.0)) throw ConfigError("test function: radii must be positive");
  if (!(sharpness >= 1.0)) throw ConfigError("test function: sharpness must be >= 1");

  std::vector<ScalarExpr> u;
  for (int k = 0; k < d; ++k)
    u.push_back((ScalarExpr::coord(d, k) - center[k]) * ScalarExpr::constant(d, 1.0 / radius[k]));
  ScalarExpr q = u[0] * u[0];
  for (int k = 1; k < d; ++k) q = q + u[k] * u[k];
  ScalarExpr f = bump(q, sharpness);

  switch (kind) {
    case TestKind::bump: break;
    case TestKind::gaussian_bump: {
      if (!(params.width > 0.0)) throw ConfigError("test function: width must be positive");
      f = f * exp(q * ScalarExpr::constant(d, -0.5 / (params.width * params.width)));
      break;
    }
    case TestKind::oscillating_bump: {
      const auto wave = detail::broadcast(params.wave, d, 2.0, "wave");
      ScalarExpr arg = ScalarExpr::constant(d, params.phase);
      for (int k = 0; k < d; ++k) arg = arg + wave[k] * u[k];
      f = f * (1.0 + params.amplitude * sin(arg));
      break;
    }
    case TestKind::random: {
      // Quadratic polynomial plus one travelling wave, all in scaled coordinates.
      ScalarExpr poly = ScalarExpr::constant(d, rng(0.5, 1.5));
      for (int k = 0; k < d; ++k) poly = poly + rng(-1.0, 1.0) * u[k];
      for (int k = 0; k < d; ++k)
        for (int l = k; l < d; ++l) poly = poly + rng(-0.6, 0.6) * (u[k] * u[l]);
      ScalarExpr arg = ScalarExpr::constant(d, rng(0.0, 6.283185307179586));
      for (int k = 0; k < d; ++k) arg = arg + rng(-3.0, 3.0) * u[k];
      f = f * (poly + rng(-0.5, 0.5) * sin(arg));
      break;
    }
  }

  std::vector<double> lo(d), hi(d);
  for (int k = 0; k < d; ++k) lo[k] = center[k] - radius[k], hi[k] = center[k] + radius[k];
  Box support(lo, hi);
  if (params.quadrature_box && !params.quadrature_box->contains(support, 0.0))
    throw ConfigError("test function support " + support.str() + " is not inside the quadrature box " +
                      params.quadrature_box->str());
  f = f.with_support(support);
  if (kind == TestKind::random) f = f.with_seed(seed);
  return f;
}

}  // namespace hsharp
