#pragma once

/// \file jet.hpp
/// \brief Truncated multivariate Taylor polynomials ("jets").
///
/// A `Jet<D, K>` stores the Taylor coefficients of a function of D variables
/// around a base point, up to total degree K. Arithmetic is exact on the
/// stored coefficients, so derivatives up to order K come out of an
/// expression evaluation without finite differencing. Each jet also carries
/// the degree up to which its coefficients are valid: applying a first-order
/// differential operator to a jet lowers that degree by one.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "hsharp/core.hpp"

namespace hsharp {

inline constexpr int kMaxJetOrder = 4;

constexpr int binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return static_cast<int>(r);
}

/// Graded monomial basis of degree <= K in D variables with the lookup
/// tables jet arithmetic needs. Degree-d monomials occupy a contiguous block
/// after all monomials of lower degree, so truncation is a prefix.
template <int D, int K>
struct MonomialBasis {
  static_assert(D >= 1 && K >= 0 && K <= kMaxJetOrder, "unsupported jet shape");
  static constexpr int kSize = binomial(D + K, K);

  struct Triple {
    std::uint16_t a, b, out;
  };

  std::array<std::array<std::uint8_t, D>, kSize> exps{};
  std::array<std::uint8_t, kSize> degree{};
  std::array<double, kSize> factorial_weight{};  // prod_v exps[v]!
  std::array<int, K + 2> degree_begin{};
  std::vector<Triple> products;  // pairs whose degree sum stays <= K, sorted by output degree
  std::array<int, K + 1> products_end{};  // products[0, products_end[d]) produce degree <= d
  // up[v][k]: index of monomial k + e_v, or -1 when the degree would exceed K.
  std::array<std::array<int, kSize>, D> up{};
  // down[v][k]: index of k - e_v, or -1 when exps[k][v] == 0.
  std::array<std::array<int, kSize>, D> down{};

  static const MonomialBasis& get() {
    static const MonomialBasis basis;
    return basis;
  }

  int index_of(const std::array<std::uint8_t, D>& e) const {
    const auto it = lookup_.find(encode(e));
    return it == lookup_.end() ? -1 : it->second;
  }

 private:
  std::map<std::uint32_t, int> lookup_;

  static std::uint32_t encode(const std::array<std::uint8_t, D>& e) {
    std::uint32_t code = 0;
    for (int v = 0; v < D; ++v) code = code * (K + 1) + e[v];
    return code;
  }

  MonomialBasis() {
    int idx = 0;
    std::array<std::uint8_t, D> e{};
    for (int d = 0; d <= K; ++d) {
      degree_begin[d] = idx;
      enumerate(e, 0, d, idx);
    }
    degree_begin[K + 1] = idx;
    for (int k = 0; k < kSize; ++k) {
      double w = 1.0;
      for (int v = 0; v < D; ++v)
        for (int q = 2; q <= exps[k][v]; ++q) w *= q;
      factorial_weight[k] = w;
      lookup_[encode(exps[k])] = k;
    }
    for (int v = 0; v < D; ++v) {
      for (int k = 0; k < kSize; ++k) {
        auto e2 = exps[k];
        if (degree[k] < K) {
          e2[v] += 1;
          up[v][k] = lookup_.at(encode(e2));
        } else {
          up[v][k] = -1;
        }
        e2 = exps[k];
        if (e2[v] > 0) {
          e2[v] -= 1;
          down[v][k] = lookup_.at(encode(e2));
        } else {
          down[v][k] = -1;
        }
      }
    }
    for (int a = 0; a < kSize; ++a)
      for (int b = 0; b < kSize; ++b) {
        if (degree[a] + degree[b] > K) continue;
        std::array<std::uint8_t, D> s{};
        for (int v = 0; v < D; ++v) s[v] = exps[a][v] + exps[b][v];
        products.push_back({static_cast<std::uint16_t>(a), static_cast<std::uint16_t>(b),
                            static_cast<std::uint16_t>(lookup_.at(encode(s)))});
      }
    std::stable_sort(products.begin(), products.end(),
                     [&](const Triple& x, const Triple& y) { return degree[x.out] < degree[y.out]; });
    for (int d = 0; d <= K; ++d) {
      int cnt = 0;
      for (const auto& t : products)
        if (degree[t.out] <= d) ++cnt;
      products_end[d] = cnt;
    }
  }

  void enumerate(std::array<std::uint8_t, D>& e, int var, int remaining, int& idx) {
    if (var == D - 1) {
      e[var] = static_cast<std::uint8_t>(remaining);
      exps[idx] = e;
      degree[idx] = 0;
      for (int v = 0; v < D; ++v) degree[idx] += e[v];
      ++idx;
      return;
    }
    for (int q = remaining; q >= 0; --q) {
      e[var] = static_cast<std::uint8_t>(q);
      enumerate(e, var + 1, remaining - q, idx);
    }
    e[var] = 0;
  }
};

template <int D, int K>
class Jet {
 public:
  using Basis = MonomialBasis<D, K>;
  static constexpr int kSize = Basis::kSize;
  static constexpr int kDim = D;
  static constexpr int kOrder = K;

  Jet() { c_.fill(0.0); }
  explicit Jet(double value) {
    c_.fill(0.0);
    c_[0] = value;
  }

  /// The coordinate function x_v expanded around a base value.
  static Jet variable(int v, double base) {
    Jet j(base);
    j.c_[1 + v] = 1.0;
    return j;
  }

  double value() const {
    if (valid_ < 0) throw PreconditionError("jet: derivative order exhausted");
    return c_[0];
  }
  int valid_order() const noexcept { return valid_; }
  void set_valid_order(int q) noexcept { valid_ = q; }

  double coeff(int k) const noexcept { return c_[k]; }
  double& coeff(int k) noexcept { return c_[k]; }
  const std::array<double, kSize>& coeffs() const noexcept { return c_; }

  /// Partial derivative with the given multi-index, evaluated at the base point.
  double partial(const std::array<std::uint8_t, D>& e) const {
    int deg = 0;
    for (auto q : e) deg += q;
    if (deg > valid_) throw PreconditionError("jet: requested derivative beyond valid order");
    const auto& b = Basis::get();
    const int k = b.index_of(e);
    return c_[k] * b.factorial_weight[k];
  }

  Jet& operator+=(const Jet& o) {
    valid_ = std::min(valid_, o.valid_);
    const int end = live();
    for (int k = 0; k < end; ++k) c_[k] += o.c_[k];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    valid_ = std::min(valid_, o.valid_);
    const int end = live();
    for (int k = 0; k < end; ++k) c_[k] -= o.c_[k];
    return *this;
  }
  Jet& operator*=(double s) {
    const int end = live();
    for (int k = 0; k < end; ++k) c_[k] *= s;
    return *this;
  }
  Jet& operator+=(double s) {
    c_[0] += s;
    return *this;
  }

  /// this += s * x
  void axpy(double s, const Jet& x) {
    valid_ = std::min(valid_, x.valid_);
    if (s == 0.0) return;
    const int end = live();
    for (int k = 0; k < end; ++k) c_[k] += s * x.c_[k];
  }
  /// this += s * delta_v * x
  void axpy_delta(double s, const Jet& x, int v) {
    valid_ = std::min(valid_, x.valid_);
    if (s == 0.0) return;
    const auto& b = Basis::get();
    const int end = live();
    for (int k = 1; k < end; ++k) {
      const int d = b.down[v][k];
      if (d >= 0) c_[k] += s * x.c_[d];
    }
  }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator-(Jet a) { return a *= -1.0; }
  friend Jet operator*(Jet a, double s) { return a *= s; }
  friend Jet operator*(double s, Jet a) { return a *= s; }
  friend Jet operator+(Jet a, double s) { return a += s; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet r;
    r.valid_ = std::min(a.valid_, b.valid_);
    if (r.valid_ < 0) return r;
    const auto& basis = Basis::get();
    const auto* t = basis.products.data();
    const int end = basis.products_end[r.valid_];
    for (int i = 0; i < end; ++i) r.c_[t[i].out] += a.c_[t[i].a] * b.c_[t[i].b];
    return r;
  }

  /// g(this) given taylor[k] = g^{(k)}(value)/k!, k = 0..K.
  Jet compose(const std::array<double, K + 1>& taylor) const {
    Jet h = *this;
    h.c_[0] = 0.0;
    Jet r(taylor[K]);
    r.valid_ = valid_;
    for (int k = K - 1; k >= 0; --k) {
      r = r * h;
      r.c_[0] += taylor[k];
    }
    return r;
  }

  /// d/dx_v of the polynomial; the result is valid one degree lower.
  Jet derivative(int v) const {
    const auto& b = Basis::get();
    Jet r;
    r.valid_ = valid_ - 1;
    const int end = r.live();
    for (int k = 0; k < end; ++k) r.c_[k] = c_[b.up[v][k]] * (b.exps[k][v] + 1);
    return r;
  }

  /// Multiplies by the base-point-relative coordinate delta_v.
  Jet times_delta(int v) const {
    const auto& b = Basis::get();
    Jet r;
    r.valid_ = valid_;
    const int end = r.live();
    for (int k = 1; k < end; ++k) {
      const int d = b.down[v][k];
      if (d >= 0) r.c_[k] = c_[d];
    }
    return r;
  }

  /// Number of coefficients that carry information (degree <= valid order).
  int live() const noexcept { return valid_ < 0 ? 0 : Basis::get().degree_begin[std::min(valid_, K) + 1]; }

 private:
  std::array<double, kSize> c_;
  int valid_ = K;
};

/// Taylor coefficients g^{(k)}(a)/k! of common univariate functions.
template <int K>
struct Univariate {
  using Coeffs = std::array<double, K + 1>;

  static Coeffs exp(double a) {
    Coeffs t{};
    const double e = std::exp(a);
    double f = 1.0;
    for (int k = 0; k <= K; ++k) {
      if (k > 0) f *= k;
      t[k] = e / f;
    }
    return t;
  }
  static Coeffs sin(double a) {
    Coeffs t{};
    const double s = std::sin(a), c = std::cos(a);
    const double cyc[4] = {s, c, -s, -c};
    double f = 1.0;
    for (int k = 0; k <= K; ++k) {
      if (k > 0) f *= k;
      t[k] = cyc[k % 4] / f;
    }
    return t;
  }
  static Coeffs cos(double a) {
    Coeffs t{};
    const double s = std::sin(a), c = std::cos(a);
    const double cyc[4] = {c, -s, -c, s};
    double f = 1.0;
    for (int k = 0; k <= K; ++k) {
      if (k > 0) f *= k;
      t[k] = cyc[k % 4] / f;
    }
    return t;
  }
  /// 1/x; caller guarantees a != 0.
  static Coeffs reciprocal(double a) {
    Coeffs t{};
    double p = 1.0 / a;
    for (int k = 0; k <= K; ++k) {
      t[k] = (k % 2 ? -p : p);
      p /= a;
    }
    return t;
  }
  /// x^r for real r; caller guarantees a > 0.
  static Coeffs power(double a, double r) {
    Coeffs t{};
    double binom = 1.0;
    for (int k = 0; k <= K; ++k) {
      if (k > 0) binom *= (r - (k - 1)) / k;
      t[k] = binom * std::pow(a, r - k);
    }
    return t;
  }
  /// Cutoff in the squared variable: exp(-a q / (1 - q)) for q < 1, zero otherwise.
  /// For q = s^2 this is a C-infinity profile supported on |s| <= 1.
  static Coeffs bump(double q, double sharpness) {
    Coeffs t{};
    if (!(q < 1.0)) return t;
    if (std::exp(-sharpness * q / (1.0 - q)) == 0.0) return t;
    // -a q/(1-q) = a - a/(1-q)
    using J1 = Jet<1, K>;
    const J1 x = J1::variable(0, q);
    const J1 one_minus = -x + 1.0;
    const J1 arg = one_minus.compose(reciprocal(one_minus.coeff(0))) * (-sharpness) + sharpness;
    const J1 e = arg.compose(exp(arg.coeff(0)));
    for (int k = 0; k <= K; ++k) t[k] = e.coeff(k);
    return t;
  }
};

}  // namespace hsharp
