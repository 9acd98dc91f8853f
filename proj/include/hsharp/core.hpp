#pragma once

/// \file core.hpp
/// \brief Error types, boxes and deterministic reductions shared by every module.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hsharp {

inline constexpr const char* kVersion = "0.3.0";

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-differentiable or undefined primitive hit during evaluation.
class DomainError : public Error {
 public:
  DomainError(const std::string& what, int node) : Error(what), node_(node) {}
  int node() const noexcept { return node_; }

 private:
  int node_;
};

/// Invalid configuration (bad manifest field, support outside a box, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation was called outside its precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity reached a quadrature sum.
class PoisonedIntegral : public Error {
 public:
  PoisonedIntegral(const std::string& what, std::vector<double> node)
      : Error(what), node_(std::move(node)) {}
  const std::vector<double>& node() const noexcept { return node_; }

 private:
  std::vector<double> node_;
};

/// Iterative method failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// Axis-aligned box [lo, hi] in R^d.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  Box() = default;
  Box(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw ConfigError("box: lo/hi dimension mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
        throw ConfigError("box: need finite lo < hi on every axis");
  }

  static Box cube(int dim, double lo, double hi) {
    return Box(std::vector<double>(dim, lo), std::vector<double>(dim, hi));
  }

  int dim() const noexcept { return static_cast<int>(lo.size()); }

  double volume() const {
    double v = 1.0;
    for (int i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
    return v;
  }

  bool contains(const Box& other, double slack = 1e-12) const {
    if (other.dim() != dim()) return false;
    for (int i = 0; i < dim(); ++i)
      if (other.lo[i] < lo[i] - slack || other.hi[i] > hi[i] + slack) return false;
    return true;
  }

  bool contains_point(const double* p) const {
    for (int i = 0; i < dim(); ++i)
      if (p[i] < lo[i] || p[i] > hi[i]) return false;
    return true;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < dim(); ++i) os << (i ? "x[" : "[") << lo[i] << ',' << hi[i] << ']';
    os << ']';
    return os.str();
  }
};

/// Neumaier-compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double x) noexcept {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  double value() const noexcept { return sum + comp; }
};

/// Sums `parts` in a fixed pairwise tree so the result depends only on the values.
inline double pairwise_sum(const double* v, std::size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) s.add(v[i]);
    return s.value();
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

/// Runs fn(chunk) for chunk in [0, chunks) on up to `workers` threads. Chunk
/// boundaries never depend on the worker count; callers store per-chunk
/// results and combine them in index order.
inline void parallel_chunks(std::size_t chunks, int workers,
                            const std::function<void(std::size_t)>& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const auto nw = static_cast<std::size_t>(std::min<std::size_t>(workers, chunks));
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += nw) fn(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace hsharp
