#pragma once

/// \file quadrature.hpp
/// \brief Deterministic tensor Gauss-Legendre and rank-1 lattice rules on boxes.
///
/// Every integral carries an error estimate: the tensor rule compares N and
/// N/2 nodes per axis, the lattice rule compares the full lattice with its
/// embedded half lattice (even indices). Sums are accumulated per chunk with
/// compensation and combined in a fixed pairwise tree, so results are
/// bit-identical for any worker count.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hsharp/core.hpp"

namespace hsharp {

struct GaussLegendre {
  std::vector<double> nodes;  // on [-1, 1], ascending
  std::vector<double> weights;

  /// Cached N-point rule; nodes by Newton iteration on P_N.
  static const GaussLegendre& get(int N) {
    static std::mutex mu;
    static std::map<int, GaussLegendre> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(N);
    if (it != cache.end()) return it->second;
    return cache.emplace(N, compute(N)).first->second;
  }

 private:
  static GaussLegendre compute(int N) {
    if (N < 1) throw ConfigError("gauss-legendre: need N >= 1");
    GaussLegendre g;
    g.nodes.resize(N);
    g.weights.resize(N);
    for (int i = 0; i < (N + 1) / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= N; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = N * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      const double w = 2.0 / ((1.0 - x * x) * dp * dp);
      g.nodes[N - 1 - i] = x;
      g.nodes[i] = -x;
      g.weights[i] = g.weights[N - 1 - i] = w;
    }
    if (N % 2 == 1) g.nodes[N / 2] = 0.0;
    return g;
  }
};

enum class RuleKind { tensor_gauss, quasi_monte_carlo };
enum class QmcSequence { korobov, halton };

struct QuadratureRule {
  RuleKind kind = RuleKind::tensor_gauss;
  Box box;
  int nodes_per_axis = 48;       // tensor rule
  std::uint64_t samples = 1u << 20;  // lattice rule; a power of two
  std::uint64_t seed = 0;        // 0 = unshifted lattice
  QmcSequence sequence = QmcSequence::korobov;

  static QuadratureRule tensor(Box b, int nodes) {
    QuadratureRule r;
    r.kind = RuleKind::tensor_gauss;
    r.box = std::move(b);
    r.nodes_per_axis = nodes;
    r.validate();
    return r;
  }
  static QuadratureRule qmc(Box b, std::uint64_t samples, std::uint64_t seed = 0,
                            QmcSequence seq = QmcSequence::korobov) {
    QuadratureRule r;
    r.kind = RuleKind::quasi_monte_carlo;
    r.box = std::move(b);
    r.samples = samples;
    r.seed = seed;
    r.sequence = seq;
    r.validate();
    return r;
  }

  void validate() const {
    if (box.dim() < 1) throw ConfigError("quadrature: empty box");
    if (kind == RuleKind::tensor_gauss && (nodes_per_axis < 2 || nodes_per_axis > 512))
      throw ConfigError("quadrature: nodes per axis must be in [2, 512]");
    if (kind == RuleKind::quasi_monte_carlo &&
        (samples < 16 || (samples & (samples - 1)) != 0 || samples > (std::uint64_t{1} << 26)))
      throw ConfigError("quadrature: sample count must be a power of two in [16, 2^26]");
  }

  std::string describe() const {
    if (kind == RuleKind::tensor_gauss)
      return "tensor-gauss(" + std::to_string(nodes_per_axis) + ") on " + box.str();
    return std::string(sequence == QmcSequence::korobov ? "korobov" : "halton") + "(" +
           std::to_string(samples) + ", seed " + std::to_string(seed) + ") on " + box.str();
  }
};

struct Integral {
  double value = 0.0;
  double err = 0.0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// P_2 figure of merit of the Korobov lattice with generator z.
inline double korobov_p2(std::uint64_t N, std::uint64_t z, int d) {
  CompensatedSum s;
  for (std::uint64_t k = 0; k < N; ++k) {
    double prod = 1.0;
    std::uint64_t g = 1;
    for (int j = 0; j < d; ++j) {
      const double x = static_cast<double>((k * g) % N) / static_cast<double>(N);
      prod *= 1.0 + 2.0 * std::numbers::pi * std::numbers::pi * (x * x - x + 1.0 / 6.0);
      g = (g * z) % N;
    }
    s.add(prod);
  }
  return s.value() / static_cast<double>(N) - 1.0;
}

/// Korobov generator for N points in d dimensions. Tabulated values come from
/// a 600-candidate P_2 search; other shapes run a 64-candidate search once.
inline std::uint64_t korobov_generator(std::uint64_t N, int d) {
  static const std::map<std::pair<int, std::uint64_t>, std::uint64_t> table = {
      {{5, 1u << 12}, 2501}, {{5, 1u << 14}, 2485}, {{5, 1u << 16}, 4963},
      {{5, 1u << 18}, 96119}, {{5, 1u << 20}, 564721}};
  static std::mutex mu;
  static std::map<std::pair<int, std::uint64_t>, std::uint64_t> cache;
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = table.find({d, N}); it != table.end()) return it->second;
  if (auto it = cache.find({d, N}); it != cache.end()) return it->second;
  std::uint64_t state = N * 1315423911ull + static_cast<std::uint64_t>(d);
  std::uint64_t best_z = 1;
  double best = 0.0;
  for (int c = 0; c < 64; ++c) {
    const std::uint64_t z = 2 * (splitmix64(state) % (N / 2)) + 1;
    const double v = korobov_p2(N, z, d);
    if (c == 0 || v < best) best = v, best_z = z;
  }
  cache[{d, N}] = best_z;
  return best_z;
}

inline double radical_inverse(std::uint64_t k, int base) {
  double inv = 1.0 / base, r = 0.0, f = inv;
  while (k > 0) {
    r += static_cast<double>(k % base) * f;
    k /= base;
    f *= inv;
  }
  return r;
}

inline int nth_prime(int i) {
  static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (i < 0 || i >= 16) throw ConfigError("halton: dimension too large");
  return primes[i];
}

}  // namespace detail

/// Integrand writing `nfun` values at one point.
using MultiIntegrand = std::function<void(const double* x, double* out)>;

/// Integrates several functions at once over the rule's box.
inline std::vector<Integral> integrate_many(const MultiIntegrand& g, int nfun, const QuadratureRule& rule,
                                            int workers = 1) {
  rule.validate();
  const int d = rule.box.dim();
  const Box& box = rule.box;
  const std::size_t F = static_cast<std::size_t>(nfun);

  // Per chunk: full-rule sums then reference-rule sums.
  std::size_t chunks = 0;
  std::function<void(std::size_t, double*, double*)> run_chunk;
  double full_scale = 0.0, ref_scale = 0.0;

  auto poison_check = [&](const double* out, const double* x) {
    for (std::size_t f = 0; f < F; ++f)
      if (!std::isfinite(out[f]))
        throw PoisonedIntegral("integrand is not finite at a quadrature node", std::vector<double>(x, x + d));
  };

  if (rule.kind == RuleKind::tensor_gauss) {
    const int N = rule.nodes_per_axis;
    const int Nh = std::max(1, N / 2);
    const auto& gf = GaussLegendre::get(N);
    const auto& gh = GaussLegendre::get(Nh);
    full_scale = ref_scale = box.volume() / std::pow(2.0, d);
    std::size_t total_full = 1, total_ref = 1;
    for (int i = 0; i < d; ++i) total_full *= N, total_ref *= Nh;
    // Chunks are slices along the first axis of the full rule, then of the reference rule.
    chunks = static_cast<std::size_t>(N + Nh);
    run_chunk = [&, N, Nh, total_full, total_ref](std::size_t c, double* full, double* ref) {
      const bool is_ref = c >= static_cast<std::size_t>(N);
      const auto& gl = is_ref ? gh : gf;
      const int M = is_ref ? Nh : N;
      const int first = static_cast<int>(is_ref ? c - N : c);
      const std::size_t per_slice = (is_ref ? total_ref : total_full) / M;
      std::vector<double> x(d), out(F);
      std::vector<CompensatedSum> acc(F);
      std::vector<int> idx(d, 0);
      idx[0] = first;
      for (std::size_t s = 0; s < per_slice; ++s) {
        double w = 1.0;
        for (int i = 0; i < d; ++i) {
          const double mid = 0.5 * (box.lo[i] + box.hi[i]), half = 0.5 * (box.hi[i] - box.lo[i]);
          x[i] = mid + half * gl.nodes[idx[i]];
          w *= gl.weights[idx[i]];
        }
        g(x.data(), out.data());
        poison_check(out.data(), x.data());
        for (std::size_t f = 0; f < F; ++f) acc[f].add(w * out[f]);
        for (int i = d - 1; i >= 1; --i) {
          if (++idx[i] < M) break;
          idx[i] = 0;
        }
      }
      double* dst = is_ref ? ref : full;
      for (std::size_t f = 0; f < F; ++f) dst[f] = acc[f].value();
    };
  } else {
    const std::uint64_t N = rule.samples;
    constexpr std::uint64_t kChunk = 4096;
    chunks = static_cast<std::size_t>((N + kChunk - 1) / kChunk);
    full_scale = box.volume() / static_cast<double>(N);
    ref_scale = box.volume() / static_cast<double>(N / 2);
    std::vector<std::uint64_t> gen(d, 1);
    if (rule.sequence == QmcSequence::korobov) {
      const std::uint64_t z = detail::korobov_generator(N, d);
      for (int j = 1; j < d; ++j) gen[j] = (gen[j - 1] * z) % N;
    }
    std::vector<double> shift(d, 0.0);
    if (rule.seed != 0) {
      std::uint64_t s = rule.seed;
      for (int j = 0; j < d; ++j) shift[j] = detail::unit_double(detail::splitmix64(s));
    }
    run_chunk = [&, N, gen, shift](std::size_t c, double* full, double* ref) {
      std::vector<double> x(d), out(F);
      std::vector<CompensatedSum> acc(F), acc_even(F);
      const std::uint64_t k0 = c * kChunk, k1 = std::min(N, k0 + kChunk);
      for (std::uint64_t k = k0; k < k1; ++k) {
        for (int j = 0; j < d; ++j) {
          double u;
          if (rule.sequence == QmcSequence::korobov)
            u = static_cast<double>((k * gen[j]) % N) / static_cast<double>(N);
          else
            u = detail::radical_inverse(k, detail::nth_prime(j));
          u += shift[j];
          u -= std::floor(u);
          x[j] = box.lo[j] + (box.hi[j] - box.lo[j]) * u;
        }
        g(x.data(), out.data());
        poison_check(out.data(), x.data());
        for (std::size_t f = 0; f < F; ++f) {
          acc[f].add(out[f]);
          if (k % 2 == 0) acc_even[f].add(out[f]);
        }
      }
      for (std::size_t f = 0; f < F; ++f) {
        full[f] = acc[f].value();
        ref[f] = acc_even[f].value();
      }
    };
  }

  std::vector<double> full(chunks * F, 0.0), ref(chunks * F, 0.0);
  std::vector<std::optional<PoisonedIntegral>> poisoned(chunks);
  parallel_chunks(chunks, workers, [&](std::size_t c) {
    try {
      run_chunk(c, &full[c * F], &ref[c * F]);
    } catch (const PoisonedIntegral& e) {
      poisoned[c] = e;
    }
  });
  // Report the first poisoned chunk in index order, independent of scheduling.
  for (auto& p : poisoned)
    if (p) throw *p;

  std::vector<Integral> result(F);
  std::vector<double> col(chunks);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t c = 0; c < chunks; ++c) col[c] = full[c * F + f];
    const double vf = full_scale * pairwise_sum(col.data(), chunks);
    for (std::size_t c = 0; c < chunks; ++c) col[c] = ref[c * F + f];
    const double vr = ref_scale * pairwise_sum(col.data(), chunks);
    result[f] = {vf, std::abs(vf - vr)};
  }
  return result;
}

/// Single-function convenience wrapper.
inline Integral integrate(const std::function<double(const double*)>& g, const QuadratureRule& rule,
                          int workers = 1) {
  return integrate_many([&](const double* x, double* out) { out[0] = g(x); }, 1, rule, workers)[0];
}

}  // namespace hsharp
