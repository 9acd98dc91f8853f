#pragma once

/// \file expr.hpp
/// \brief Closed-form real functions on R^d as immutable expression DAGs.
///
/// A ScalarExpr is evaluated generically: with `double` for values and with
/// `Jet<D, K>` for exact partial derivatives up to order K. Nodes are stored
/// in topological order (children before parents); the root is the last node.

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsharp/core.hpp"
#include "hsharp/jet.hpp"

namespace hsharp {

enum class Op { coord, constant, add, sub, mul, div, neg, pow, exp, sin, cos, bump };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::coord: return "coord";
    case Op::constant: return "const";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::pow: return "pow";
    case Op::exp: return "exp";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::bump: return "bump";
  }
  return "?";
}

inline Op op_from_name(const std::string& s) {
  static const std::pair<const char*, Op> table[] = {
      {"coord", Op::coord}, {"const", Op::constant}, {"add", Op::add}, {"sub", Op::sub},
      {"mul", Op::mul},     {"div", Op::div},        {"neg", Op::neg}, {"pow", Op::pow},
      {"exp", Op::exp},     {"sin", Op::sin},        {"cos", Op::cos}, {"bump", Op::bump}};
  for (const auto& [name, op] : table)
    if (s == name) return op;
  throw ConfigError("expression: unknown node tag '" + s + "'");
}

struct ExprNode {
  Op op = Op::constant;
  int a = -1;          // first child
  int b = -1;          // second child
  int index = 0;       // coordinate index for Op::coord
  double value = 0.0;  // literal, exponent (pow) or sharpness (bump)
};

class ScalarExpr {
 public:
  ScalarExpr() : ScalarExpr(constant(1, 0.0)) {}

  static ScalarExpr coord(int dim, int i) {
    if (i < 0 || i >= dim) throw ConfigError("expression: coordinate index out of range");
    ExprNode n;
    n.op = Op::coord;
    n.index = i;
    return ScalarExpr(dim, {n});
  }
  static ScalarExpr constant(int dim, double v) {
    ExprNode n;
    n.op = Op::constant;
    n.value = v;
    return ScalarExpr(dim, {n});
  }

  int dim() const noexcept { return dim_; }
  const std::vector<ExprNode>& nodes() const noexcept { return *nodes_; }
  const std::optional<Box>& support() const noexcept { return support_; }
  const std::optional<std::uint64_t>& seed() const noexcept { return seed_; }

  /// Declares that f and all its derivatives vanish outside `box`.
  ScalarExpr with_support(Box box) const {
    if (box.dim() != dim_) throw ConfigError("expression: support box dimension mismatch");
    ScalarExpr e = *this;
    e.support_ = std::move(box);
    return e;
  }
  ScalarExpr with_seed(std::uint64_t seed) const {
    ScalarExpr e = *this;
    e.seed_ = seed;
    return e;
  }

  friend ScalarExpr operator+(const ScalarExpr& a, const ScalarExpr& b) { return binary(Op::add, a, b); }
  friend ScalarExpr operator-(const ScalarExpr& a, const ScalarExpr& b) { return binary(Op::sub, a, b); }
  friend ScalarExpr operator*(const ScalarExpr& a, const ScalarExpr& b) { return binary(Op::mul, a, b); }
  friend ScalarExpr operator/(const ScalarExpr& a, const ScalarExpr& b) { return binary(Op::div, a, b); }
  friend ScalarExpr operator-(const ScalarExpr& a) { return unary(Op::neg, a); }

  friend ScalarExpr operator*(double s, const ScalarExpr& a) { return constant(a.dim(), s) * a; }
  friend ScalarExpr operator+(const ScalarExpr& a, double s) { return a + constant(a.dim(), s); }
  friend ScalarExpr operator+(double s, const ScalarExpr& a) { return constant(a.dim(), s) + a; }
  friend ScalarExpr operator-(const ScalarExpr& a, double s) { return a - constant(a.dim(), s); }

  friend ScalarExpr pow(const ScalarExpr& a, double r) { return unary(Op::pow, a, r); }
  friend ScalarExpr exp(const ScalarExpr& a) { return unary(Op::exp, a); }
  friend ScalarExpr sin(const ScalarExpr& a) { return unary(Op::sin, a); }
  friend ScalarExpr cos(const ScalarExpr& a) { return unary(Op::cos, a); }
  /// Smooth cutoff exp(-a q/(1-q)) for q < 1, zero otherwise. Pass q = |x - c|^2 / r^2.
  friend ScalarExpr bump(const ScalarExpr& q, double sharpness) {
    if (!(sharpness > 0.0)) throw ConfigError("expression: bump sharpness must be positive");
    return unary(Op::bump, q, sharpness);
  }

  /// Human-readable rendering of the subexpression rooted at `node`.
  std::string render(int node = -1) const {
    if (node < 0) node = static_cast<int>(nodes_->size()) - 1;
    const ExprNode& n = (*nodes_)[node];
    std::ostringstream os;
    os.precision(17);
    switch (n.op) {
      case Op::coord: os << "x" << n.index; break;
      case Op::constant: os << n.value; break;
      case Op::add: os << "(" << render(n.a) << " + " << render(n.b) << ")"; break;
      case Op::sub: os << "(" << render(n.a) << " - " << render(n.b) << ")"; break;
      case Op::mul: os << "(" << render(n.a) << " * " << render(n.b) << ")"; break;
      case Op::div: os << "(" << render(n.a) << " / " << render(n.b) << ")"; break;
      case Op::neg: os << "-" << render(n.a); break;
      case Op::pow: os << "pow(" << render(n.a) << ", " << n.value << ")"; break;
      case Op::bump: os << "bump(" << render(n.a) << ", " << n.value << ")"; break;
      default: os << op_name(n.op) << "(" << render(n.a) << ")"; break;
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : *nodes_) {
      nlohmann::json j;
      j["op"] = op_name(n.op);
      switch (n.op) {
        case Op::coord: j["index"] = n.index; break;
        case Op::constant: j["value"] = n.value; break;
        case Op::pow: j["args"] = {n.a}; j["exponent"] = n.value; break;
        case Op::bump: j["args"] = {n.a}; j["sharpness"] = n.value; break;
        case Op::add: case Op::sub: case Op::mul: case Op::div: j["args"] = {n.a, n.b}; break;
        default: j["args"] = {n.a}; break;
      }
      nodes.push_back(std::move(j));
    }
    nlohmann::json out{{"dim", dim_}, {"nodes", std::move(nodes)}};
    if (support_) out["support"] = {{"lo", support_->lo}, {"hi", support_->hi}};
    if (seed_) out["seed"] = *seed_;
    return out;
  }

  static ScalarExpr from_json(const nlohmann::json& j) {
    try {
      const int dim = j.at("dim").get<int>();
      if (dim < 1) throw ConfigError("expression: dim must be >= 1");
      std::vector<ExprNode> nodes;
      for (const auto& jn : j.at("nodes")) {
        ExprNode n;
        n.op = op_from_name(jn.at("op").get<std::string>());
        if (n.op == Op::coord) {
          n.index = jn.at("index").get<int>();
          if (n.index < 0 || n.index >= dim) throw ConfigError("expression: coordinate index out of range");
        } else if (n.op == Op::constant) {
          n.value = jn.at("value").get<double>();
        } else {
          const auto& args = jn.at("args");
          const int arity = (n.op == Op::add || n.op == Op::sub || n.op == Op::mul || n.op == Op::div) ? 2 : 1;
          if (static_cast<int>(args.size()) != arity) throw ConfigError("expression: wrong arity");
          n.a = args[0].get<int>();
          if (arity == 2) n.b = args[1].get<int>();
          const int here = static_cast<int>(nodes.size());
          if (n.a < 0 || n.a >= here || (arity == 2 && (n.b < 0 || n.b >= here)))
            throw ConfigError("expression: child index must refer to an earlier node");
          if (n.op == Op::pow) n.value = jn.at("exponent").get<double>();
          if (n.op == Op::bump) n.value = jn.at("sharpness").get<double>();
        }
        nodes.push_back(n);
      }
      if (nodes.empty()) throw ConfigError("expression: no nodes");
      ScalarExpr e(dim, std::move(nodes));
      if (j.contains("support"))
        e.support_ = Box(j["support"].at("lo").get<std::vector<double>>(),
                         j["support"].at("hi").get<std::vector<double>>());
      if (j.contains("seed")) e.seed_ = j["seed"].get<std::uint64_t>();
      return e;
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(std::string("expression: malformed JSON: ") + ex.what());
    }
  }

 private:
  ScalarExpr(int dim, std::vector<ExprNode> nodes)
      : dim_(dim), nodes_(std::make_shared<const std::vector<ExprNode>>(std::move(nodes))) {}

  static void append(std::vector<ExprNode>& out, const std::vector<ExprNode>& src, int offset) {
    for (ExprNode n : src) {
      if (n.a >= 0) n.a += offset;
      if (n.b >= 0) n.b += offset;
      out.push_back(n);
    }
  }

  static ScalarExpr binary(Op op, const ScalarExpr& a, const ScalarExpr& b) {
    if (a.dim_ != b.dim_) throw ConfigError("expression: dimension mismatch");
    std::vector<ExprNode> nodes;
    nodes.reserve(a.nodes_->size() + b.nodes_->size() + 1);
    append(nodes, *a.nodes_, 0);
    const int ra = static_cast<int>(nodes.size()) - 1;
    append(nodes, *b.nodes_, static_cast<int>(nodes.size()));
    const int rb = static_cast<int>(nodes.size()) - 1;
    ExprNode n;
    n.op = op;
    n.a = ra;
    n.b = rb;
    nodes.push_back(n);
    return ScalarExpr(a.dim_, std::move(nodes));
  }

  static ScalarExpr unary(Op op, const ScalarExpr& a, double value = 0.0) {
    std::vector<ExprNode> nodes(*a.nodes_);
    ExprNode n;
    n.op = op;
    n.a = static_cast<int>(nodes.size()) - 1;
    n.value = value;
    nodes.push_back(n);
    return ScalarExpr(a.dim_, std::move(nodes));
  }

  int dim_ = 1;
  std::shared_ptr<const std::vector<ExprNode>> nodes_;
  std::optional<Box> support_;
  std::optional<std::uint64_t> seed_;
};

namespace detail {

inline bool is_integer(double r) { return std::floor(r) == r && std::abs(r) <= 64; }

[[noreturn]] inline void domain_fail(const ScalarExpr& e, int node, const std::string& why) {
  throw DomainError("expression domain error (" + why + ") at node " + std::to_string(node) +
                        ": " + e.render(node),
                    node);
}

// Scalar-type adapters: doubles and jets share the evaluation loop.
inline double lift(double v, const double&) { return v; }
template <int D, int K>
Jet<D, K> lift(double v, const Jet<D, K>&) { return Jet<D, K>(v); }

inline double base_value(double v) { return v; }
template <int D, int K>
double base_value(const Jet<D, K>& j) { return j.coeff(0); }

inline double times(double a, double b) { return a * b; }
template <int D, int K>
Jet<D, K> times(const Jet<D, K>& a, const Jet<D, K>& b) { return a * b; }

template <int KK>
using Taylor = std::array<double, KK + 1>;

inline double apply_taylor(double, const Taylor<0>& t) { return t[0]; }
template <int D, int K>
Jet<D, K> apply_taylor(const Jet<D, K>& x, const Taylor<K>& t) { return x.compose(t); }

template <class S>
constexpr int order_of() {
  if constexpr (std::is_same_v<S, double>) return 0;
  else return S::kOrder;
}

}  // namespace detail

/// Evaluates `e` on the scalar type S (double or Jet). `vars` holds the
/// coordinate values (or coordinate jets). `scratch` is resized as needed.
template <class S>
S evaluate(const ScalarExpr& e, const S* vars, std::vector<S>& scratch) {
  using namespace detail;
  constexpr int K = order_of<S>();
  using U = Univariate<K>;
  const auto& nodes = e.nodes();
  scratch.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const ExprNode& n = nodes[i];
    const int node = static_cast<int>(i);
    S r{};
    switch (n.op) {
      case Op::coord: r = vars[n.index]; break;
      case Op::constant: r = lift(n.value, vars[0]); break;
      case Op::add: r = scratch[n.a] + scratch[n.b]; break;
      case Op::sub: r = scratch[n.a] - scratch[n.b]; break;
      case Op::neg: r = -scratch[n.a]; break;
      case Op::mul: r = times(scratch[n.a], scratch[n.b]); break;
      case Op::div: {
        const double d = base_value(scratch[n.b]);
        if (d == 0.0 || !std::isfinite(d)) domain_fail(e, node, "division by zero");
        r = times(scratch[n.a], apply_taylor(scratch[n.b], U::reciprocal(d)));
        break;
      }
      case Op::pow: {
        const S& x = scratch[n.a];
        const double a = base_value(x);
        if (is_integer(n.value)) {
          const int q = static_cast<int>(n.value);
          S acc = lift(1.0, vars[0]);
          S base = x;
          if (q < 0) {
            if (a == 0.0) domain_fail(e, node, "negative power of zero");
            base = apply_taylor(x, U::reciprocal(a));
          }
          for (int k = 0; k < std::abs(q); ++k) acc = times(acc, base);
          r = acc;
        } else {
          if (!(a > 0.0)) domain_fail(e, node, "non-integer power of non-positive base");
          r = apply_taylor(x, U::power(a, n.value));
        }
        break;
      }
      case Op::exp: r = apply_taylor(scratch[n.a], U::exp(base_value(scratch[n.a]))); break;
      case Op::sin: r = apply_taylor(scratch[n.a], U::sin(base_value(scratch[n.a]))); break;
      case Op::cos: r = apply_taylor(scratch[n.a], U::cos(base_value(scratch[n.a]))); break;
      case Op::bump:
        r = apply_taylor(scratch[n.a], U::bump(base_value(scratch[n.a]), n.value));
        break;
    }
    if (!std::isfinite(base_value(r))) domain_fail(e, node, "non-finite value");
    scratch[i] = std::move(r);
  }
  return scratch.back();
}

/// Point value f(p).
inline double evaluate(const ScalarExpr& e, const double* p) {
  std::vector<double> scratch;
  return evaluate<double>(e, p, scratch);
}

/// Taylor jet of f around p, exact to order K.
template <int D, int K>
Jet<D, K> taylor_jet(const ScalarExpr& e, const double* p, std::vector<Jet<D, K>>& scratch) {
  if (e.dim() != D) throw PreconditionError("taylor_jet: expression dimension mismatch");
  std::array<Jet<D, K>, D> vars;
  for (int v = 0; v < D; ++v) vars[v] = Jet<D, K>::variable(v, p[v]);
  return evaluate<Jet<D, K>>(e, vars.data(), scratch);
}

}  // namespace hsharp
