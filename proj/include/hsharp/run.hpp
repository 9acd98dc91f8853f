#pragma once

/// \file run.hpp
/// \brief Manifest-driven experiment runner behind the command-line tool.
///
/// A manifest is validated completely before anything is written; results go
/// to CSV (header row, body, trailing `# manifest_hash=` comment) and JSON,
/// and `run_summary.json` is written last.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "hsharp/cordes.hpp"
#include "hsharp/core.hpp"
#include "hsharp/expr.hpp"
#include "hsharp/heisenberg.hpp"
#include "hsharp/identities.hpp"
#include "hsharp/lattice.hpp"
#include "hsharp/pharmonic.hpp"
#include "hsharp/quadrature.hpp"
#include "hsharp/test_functions.hpp"

namespace hsharp::cli {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

/// Typed access to one JSON object; every key must be consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(where(key) + ": missing required field");
    used_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T req(const std::string& key) {
    return convert<T>(raw(key), where(key));
  }

  template <class T>
  T get(const std::string& key, T dflt) {
    if (!has(key)) return dflt;
    return req<T>(key);
  }

  template <class T>
  std::optional<T> opt(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return req<T>(key);
  }

  Fields sub(const std::string& key) { return Fields(raw(key), where(key)); }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown field");
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  template <class T>
  static T convert(const json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw ConfigError(at + ": expected a nonnegative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw ConfigError(at + ": expected a finite number");
      return static_cast<T>(d);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      return v.get<std::string>();
    } else {
      // std::vector<U>
      using U = typename T::value_type;
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<U>(v[i], at + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

struct Manifest {
  int schema_version = kSchemaVersion;
  std::string command;
  std::optional<std::string> output_dir;
  json params = json::object();
  std::string hash;
};

inline Manifest parse_manifest(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') ++line, col = 1;
      else ++col;
    }
    throw ConfigError(fmt::format("manifest: JSON syntax error at line {}, column {}", line, col));
  }
  Fields f(j, "");
  Manifest m;
  m.schema_version = f.req<int>("schema_version");
  if (m.schema_version != kSchemaVersion)
    throw ConfigError(fmt::format("schema_version: expected {}, got {}", kSchemaVersion, m.schema_version));
  m.command = f.req<std::string>("command");
  m.output_dir = f.opt<std::string>("output_dir");
  if (f.has("params")) {
    m.params = f.raw("params");
    if (!m.params.is_object()) throw ConfigError("params: expected an object");
  }
  f.done();
  m.hash = sha256_hex(text);
  return m;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("manifest: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

struct RunSummary {
  std::string command;
  double wall_time_s = 0.0;
  std::string started_at;
  int checks = 0;
  int passed = 0;
  int failed = 0;
  std::vector<std::string> artifacts;
  std::string version = kVersion;
  std::string manifest_hash;
  int workers = 1;
  int exit_code = 0;
  std::vector<std::string> errors;

  json to_json() const {
    return json{{"command", command},     {"wall_time_s", wall_time_s}, {"started_at", started_at},
                {"checks", checks},       {"passed", passed},           {"failed", failed},
                {"artifacts", artifacts}, {"version", version},         {"manifest_hash", manifest_hash},
                {"workers", workers},     {"exit_code", exit_code},     {"errors", errors}};
  }
};

struct RunOptions {
  int workers = 1;
  std::optional<std::string> out_dir;  // overrides the manifest's output_dir
};

// ---------------------------------------------------------------- parsing

namespace detail {

inline std::string num(double v) { return fmt::format("{:.17g}", v); }

inline Box parse_box(const json& v, int dim, const std::string& at) {
  if (v.is_number()) {
    const double hw = Fields::convert<double>(v, at);
    if (!(hw > 0.0)) throw ConfigError(at + ": half width must be positive");
    return Box::cube(dim, -hw, hw);
  }
  Fields f(v, at);
  auto lo = f.req<std::vector<double>>("lo");
  auto hi = f.req<std::vector<double>>("hi");
  f.done();
  if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim)
    throw ConfigError(at + fmt::format(": expected {} coordinates", dim));
  try {
    return Box(lo, hi);
  } catch (const ConfigError& e) {
    throw ConfigError(at + ": " + e.what());
  }
}

inline QuadratureRule parse_rule(Fields f, int dim) {
  const std::string type = f.get<std::string>("type", "tensor");
  const Box box = parse_box(f.raw("box"), dim, f.where("box"));
  QuadratureRule r;
  try {
    if (type == "tensor") {
      r = QuadratureRule::tensor(box, f.get<int>("nodes", 48));
    } else if (type == "qmc") {
      const std::string seq = f.get<std::string>("sequence", "korobov");
      if (seq != "korobov" && seq != "halton") throw ConfigError("sequence must be korobov or halton");
      r = QuadratureRule::qmc(box, f.get<std::uint64_t>("samples", 1u << 16), f.get<std::uint64_t>("seed", 0),
                              seq == "korobov" ? QmcSequence::korobov : QmcSequence::halton);
    } else {
      throw ConfigError("type must be tensor or qmc");
    }
  } catch (const ConfigError& e) {
    throw ConfigError(f.where() + ": " + e.what());
  }
  f.done();
  return r;
}

inline std::vector<std::uint64_t> parse_seeds(Fields& f) {
  if (f.has("seeds")) return f.req<std::vector<std::uint64_t>>("seeds");
  if (f.has("seed_count")) {
    const auto start = f.get<std::uint64_t>("seed_start", 1);
    const auto count = f.req<std::uint64_t>("seed_count");
    if (count > 100000) throw ConfigError(f.where("seed_count") + ": too many seeds");
    std::vector<std::uint64_t> v;
    for (std::uint64_t i = 0; i < count; ++i) v.push_back(start + i);
    return v;
  }
  return {f.get<std::uint64_t>("seed", 0)};
}

/// Test functions from a description: {kind, seeds|seed_start+seed_count|seed, center, radius, ...}
/// or {kind: "expr", expr: <expression JSON>}.
inline std::vector<ScalarExpr> parse_functions(const json& v, int dim, const std::optional<Box>& qbox,
                                               const std::string& at) {
  std::vector<ScalarExpr> out;
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto part = parse_functions(v[i], dim, qbox, at + "[" + std::to_string(i) + "]");
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  Fields f(v, at);
  const std::string kind = f.req<std::string>("kind");
  try {
    if (kind == "expr") {
      ScalarExpr e = ScalarExpr::from_json(f.raw("expr"));
      if (e.dim() != dim) throw ConfigError(fmt::format("expression dimension {} does not match {}", e.dim(), dim));
      if (e.support() && qbox && !qbox->contains(*e.support(), 0.0))
        throw ConfigError("expression support is not inside the quadrature box");
      out.push_back(e);
    } else {
      const TestKind tk = test_kind_from_name(kind);
      TestFunctionParams p;
      p.dim = dim;
      p.center = f.get<std::vector<double>>("center", {});
      p.radius = f.get<std::vector<double>>("radius", {});
      p.sharpness = f.get<double>("sharpness", p.sharpness);
      p.width = f.get<double>("width", p.width);
      p.wave = f.get<std::vector<double>>("wave", {});
      p.amplitude = f.get<double>("amplitude", p.amplitude);
      p.phase = f.get<double>("phase", p.phase);
      p.quadrature_box = qbox;
      for (auto s : parse_seeds(f)) out.push_back(make_test_function(tk, p, s));
    }
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(at, 0) == 0) throw;
    throw ConfigError(at + ": " + msg);
  }
  f.done();
  return out;
}

inline ScalarExpr default_boundary(int dim) {
  const auto x = ScalarExpr::coord(dim, 0), y = ScalarExpr::coord(dim, dim / 2), t = ScalarExpr::coord(dim, dim - 1);
  return x + 0.25 * (x * x - y * y) + 0.1 * t;
}

inline Ordering parse_ordering(const std::string& s, const std::string& at) {
  if (s == "outer-later") return Ordering::outer_later;
  if (s == "outer-first") return Ordering::outer_first;
  throw ConfigError(at + ": ordering must be outer-later or outer-first");
}

inline int parse_n(Fields& f, int lo = 1, int hi = 3) {
  const int n = f.get<int>("n", 1);
  if (n < lo || n > hi) throw ConfigError(f.where("n") + fmt::format(": must be in [{}, {}]", lo, hi));
  return n;
}

// ---------------------------------------------------------------- plans

struct VerifyPlan {
  Frame frame;
  std::vector<IdentityKind> kinds;
  std::vector<ScalarExpr> functions;
  QuadratureRule rule;
  VerifyOptions opt;
};

struct EuclidPlan {
  std::vector<ScalarExpr> functions;
  std::vector<QuadratureRule> rules;  // one per function
  double tol = 1e-6;
};

struct SharpPlan {
  int n = 1;
  Frame frame;
  std::vector<Grid> grids;
  RayleighOptions opt;
  double noise = 0.02;
  double lambda_min = 0.0, lambda_max = 0.0;
  bool dump = false;
};

struct CordesProblem {
  std::uint64_t seed = 0;
  std::string field;  // generator name
};

struct CordesPlan {
  Grid grid;
  Frame frame;
  std::string field = "manufactured";
  ManufacturedFieldParams mprm;
  double p = 3.0;                          // p-laplacian field
  std::optional<ScalarExpr> field_source;  // p-laplacian field gradient source
  std::vector<double> file_entries;        // user field
  std::string rhs = "manufactured";
  std::optional<ScalarExpr> solution;      // manufactured u*
  std::optional<ScalarExpr> rhs_expr;
  std::vector<std::uint64_t> seeds;
  SolveOptions sopt;
  double contraction_slack = 0.1;
  double audit_max = 1.1;
  double recovery_factor = 10.0;
};

struct PHarmonicPlan {
  Grid grid;
  Frame frame;
  std::vector<double> ps;
  std::vector<double> ms;
  ScalarExpr boundary;
  double tol = 1e-10;
  double max_ratio = 2.0;
};

using Plan = std::variant<VerifyPlan, EuclidPlan, SharpPlan, CordesPlan, PHarmonicPlan>;

inline VerifyPlan plan_verify(Fields f) {
  VerifyPlan p;
  const int n = parse_n(f);
  p.frame = Frame::standard(n);
  p.frame.ordering = parse_ordering(f.get<std::string>("ordering", "outer-later"), f.where("ordering"));
  for (const auto& name : f.get<std::vector<std::string>>("kinds", {})) {
    if (name == "all") {
      for (auto k : kAllIdentityKinds)
        if (k != IdentityKind::EUCLID_L2 && (n == 1 || !kind_requires_n1(k))) p.kinds.push_back(k);
      continue;
    }
    IdentityKind k;
    try {
      k = kind_from_name(name);
    } catch (const ConfigError& e) {
      throw ConfigError(f.where("kinds") + ": " + e.what());
    }
    if (k == IdentityKind::EUCLID_L2) throw ConfigError(f.where("kinds") + ": EUCLID_L2 belongs to euclidean-sanity");
    if (kind_requires_n1(k) && n != 1) throw ConfigError(f.where("kinds") + ": " + name + " requires n = 1");
    p.kinds.push_back(k);
  }
  if (f.has("rule") || !p.kinds.empty()) p.rule = parse_rule(f.sub("rule"), 2 * n + 1);
  if (f.has("functions")) p.functions = parse_functions(f.raw("functions"), 2 * n + 1, p.rule.box, f.where("functions"));
  if (!p.kinds.empty() && p.functions.empty()) throw ConfigError(f.where("functions") + ": no test functions");
  if (f.has("tolerances")) {
    Fields t = f.sub("tolerances");
    p.opt.tol_integrated = t.opt<double>("integrated");
    p.opt.tol_pointwise = t.get<double>("pointwise", p.opt.tol_pointwise);
    p.opt.roundoff = t.get<double>("roundoff", p.opt.roundoff);
    t.done();
    if ((p.opt.tol_integrated && !(*p.opt.tol_integrated > 0.0)) || !(p.opt.tol_pointwise > 0.0) ||
        !(p.opt.roundoff >= 0.0))
      throw ConfigError(f.where("tolerances") + ": tolerances must be positive");
  }
  p.opt.probes = f.get<int>("probes", p.opt.probes);
  if (p.opt.probes < 1) throw ConfigError(f.where("probes") + ": must be >= 1");
  p.opt.probe_seed = f.get<std::uint64_t>("probe_seed", p.opt.probe_seed);
  p.opt.convex_c = f.get<std::vector<double>>("convex_c", {});
  for (double c : p.opt.convex_c)
    if (!(c > 0.0 && c < 1.0)) throw ConfigError(f.where("convex_c") + ": values must lie in (0, 1)");
  f.done();
  return p;
}

inline EuclidPlan plan_euclid(Fields f) {
  EuclidPlan p;
  const auto dims = f.get<std::vector<int>>("dims", {2, 3});
  p.tol = f.get<double>("tol", p.tol);
  if (!(p.tol > 0.0)) throw ConfigError(f.where("tol") + ": must be positive");
  const json& rule_j = f.raw("rule");
  const json& fun_j = f.raw("functions");
  for (int d : dims) {
    if (d < 1 || d > 5) throw ConfigError(f.where("dims") + ": dimensions must be in [1, 5]");
    const QuadratureRule r = parse_rule(Fields(rule_j, f.where("rule")), d);
    for (auto& e : parse_functions(fun_j, d, r.box, f.where("functions"))) {
      p.functions.push_back(e);
      p.rules.push_back(r);
    }
  }
  f.done();
  return p;
}

inline SharpPlan plan_sharp(Fields f) {
  SharpPlan p;
  p.n = parse_n(f, 1, 2);
  p.frame = Frame::standard(p.n);
  const int d = 2 * p.n + 1;
  const Box box = f.has("box") ? parse_box(f.raw("box"), d, f.where("box")) : Box::cube(d, -3.0, 3.0);
  for (int m : f.get<std::vector<int>>("grids", p.n == 1 ? std::vector<int>{24, 36, 48} : std::vector<int>{11, 13, 15})) {
    try {
      p.grids.push_back(Grid::make(p.n, box, m));
    } catch (const ConfigError& e) {
      throw ConfigError(f.where("grids") + ": " + e.what());
    }
  }
  if (p.grids.size() < 3) throw ConfigError(f.where("grids") + ": need at least 3 grids");
  for (std::size_t i = 1; i < p.grids.size(); ++i)
    if (!(p.grids[i].h_max() < p.grids[i - 1].h_max()))
      throw ConfigError(f.where("grids") + ": grids must refine (increasing m_axis)");
  p.opt.tol = f.get<double>("tol", p.opt.tol);
  p.opt.max_iter = f.get<int>("max_iter", p.opt.max_iter);
  p.opt.seed = f.get<std::uint64_t>("seed", p.opt.seed);
  const std::string space = f.get<std::string>("trial_space", "spline");
  if (space == "spline") p.opt.space = TrialSpace::spline;
  else if (space == "nodal") p.opt.space = TrialSpace::nodal;
  else throw ConfigError(f.where("trial_space") + ": must be spline or nodal");
  p.opt.spline_ratio = f.get<int>("spline_ratio", p.opt.spline_ratio);
  p.opt.inner_tol = f.get<double>("inner_tol", p.opt.inner_tol);
  p.opt.accelerate = f.get<bool>("accelerate", p.opt.accelerate);
  p.opt.memory_cap = static_cast<std::size_t>(f.get<double>("memory_cap_mib", 3072.0) * 1048576.0);
  p.noise = f.get<double>("noise", p.noise);
  const double c = real_form_constant(p.n);
  p.lambda_min = f.get<double>("lambda_min", 0.5 * c);
  p.lambda_max = f.get<double>("lambda_max", c * (p.n == 1 ? 1.02 : 1.05));
  p.dump = f.get<bool>("dump_maximizer", false);
  if (!(p.opt.tol > 0.0) || p.opt.max_iter < 1 || p.opt.spline_ratio < 1 || !(p.opt.inner_tol > 0.0))
    throw ConfigError(f.where() + ": tol, max_iter, spline_ratio and inner_tol must be positive");
  f.done();
  return p;
}

inline CordesPlan plan_cordes(Fields f) {
  CordesPlan p;
  const int n = parse_n(f, 1, 2);
  const int d = 2 * n + 1;
  p.frame = Frame::standard(n);
  const Box box = f.has("box") ? parse_box(f.raw("box"), d, f.where("box")) : Box::cube(d, -1.0, 1.0);
  try {
    p.grid = Grid::make(n, box, f.get<int>("m_axis", 24));
  } catch (const ConfigError& e) {
    throw ConfigError(f.where("m_axis") + ": " + e.what());
  }
  {
    Fields a = f.sub("field");
    p.field = a.req<std::string>("generator");
    if (p.field == "manufactured") {
      p.mprm.q_lo = a.get<double>("q_lo", p.mprm.q_lo);
      p.mprm.q_hi = a.get<double>("q_hi", p.mprm.q_hi);
      p.mprm.s_lo = a.get<double>("s_lo", p.mprm.s_lo);
      p.mprm.s_hi = a.get<double>("s_hi", p.mprm.s_hi);
      if (!(p.mprm.q_lo <= p.mprm.q_hi) || !(p.mprm.q_lo > -1.0) || !(p.mprm.s_lo > 0.0) ||
          !(p.mprm.s_lo <= p.mprm.s_hi))
        throw ConfigError(a.where() + ": need -1 < q_lo <= q_hi and 0 < s_lo <= s_hi");
    } else if (p.field == "p-laplacian") {
      p.p = a.get<double>("p", p.p);
      if (!(p.p > 1.0)) throw ConfigError(a.where("p") + ": must exceed 1");
      p.field_source = a.has("source") ? ScalarExpr::from_json(a.raw("source")) : default_boundary(d);
      if (p.field_source->dim() != d) throw ConfigError(a.where("source") + ": dimension mismatch");
    } else if (p.field == "file") {
      const std::string path = a.req<std::string>("path");
      std::ifstream in(path);
      if (!in) throw ConfigError(a.where("path") + ": cannot open '" + path + "'");
      json fj;
      try {
        in >> fj;
      } catch (const json::exception&) {
        throw ConfigError(a.where("path") + ": not valid JSON");
      }
      Fields ff(fj, path);
      p.file_entries = ff.req<std::vector<double>>("matrices");
      ff.done();
      const std::size_t want = p.grid.size() * 4 * n * n;
      if (p.file_entries.size() != want)
        throw ConfigError(a.where("path") + fmt::format(": expected {} entries, got {}", want, p.file_entries.size()));
    } else if (p.field != "identity") {
      throw ConfigError(a.where("generator") + ": must be identity, manufactured, p-laplacian or file");
    }
    a.done();
  }
  {
    Fields r = f.sub("rhs");
    p.rhs = r.req<std::string>("generator");
    if (p.rhs == "manufactured") {
      if (r.has("solution")) {
        auto fs = parse_functions(r.raw("solution"), d, box, r.where("solution"));
        if (fs.size() != 1) throw ConfigError(r.where("solution") + ": expected exactly one function");
        p.solution = fs[0];
      } else {
        TestFunctionParams tp;
        tp.dim = d;
        std::vector<double> rad(d);
        for (int k = 0; k < d; ++k) rad[k] = 0.45 * (box.hi[k] - box.lo[k]);
        tp.radius = rad;
        std::vector<double> c(d);
        for (int k = 0; k < d; ++k) c[k] = 0.5 * (box.lo[k] + box.hi[k]);
        tp.center = c;
        p.solution = make_test_function(TestKind::oscillating_bump, tp);
      }
    } else if (p.rhs == "expr") {
      p.rhs_expr = ScalarExpr::from_json(r.raw("expr"));
      if (p.rhs_expr->dim() != d) throw ConfigError(r.where("expr") + ": dimension mismatch");
    } else {
      throw ConfigError(r.where("generator") + ": must be manufactured or expr");
    }
    r.done();
  }
  p.seeds = parse_seeds(f);
  p.sopt.tol = f.get<double>("tol", p.sopt.tol);
  p.sopt.max_iter = f.get<int>("max_iter", p.sopt.max_iter);
  p.sopt.inner_tol = f.get<double>("inner_tol", p.sopt.inner_tol);
  p.sopt.relaxation = f.get<double>("relaxation", p.sopt.relaxation);
  p.contraction_slack = f.get<double>("contraction_slack", p.contraction_slack);
  p.audit_max = f.get<double>("audit_max", p.audit_max);
  p.recovery_factor = f.get<double>("recovery_factor", p.recovery_factor);
  if (!(p.sopt.tol > 0.0) || !(p.sopt.inner_tol > 0.0) || p.sopt.max_iter < 1 || !(p.sopt.relaxation > 0.0))
    throw ConfigError(f.where() + ": tol, inner_tol, max_iter and relaxation must be positive");
  f.done();
  return p;
}

inline PHarmonicPlan plan_pharmonic(Fields f) {
  PHarmonicPlan p;
  const int n = parse_n(f, 1, 2);
  const int d = 2 * n + 1;
  p.frame = Frame::standard(n);
  const Box box = f.has("box") ? parse_box(f.raw("box"), d, f.where("box")) : Box::cube(d, -1.0, 1.0);
  try {
    p.grid = Grid::make(n, box, f.get<int>("m_axis", n == 1 ? 32 : 11));
  } catch (const ConfigError& e) {
    throw ConfigError(f.where("m_axis") + ": " + e.what());
  }
  if (f.has("p") && f.raw("p").is_number()) p.ps = {f.req<double>("p")};
  else p.ps = f.get<std::vector<double>>("p", {2.0, 3.0});
  for (double v : p.ps)
    if (!(v > 1.0)) throw ConfigError(f.where("p") + ": values must exceed 1");
  p.ms = f.get<std::vector<double>>("ms", {10.0, 100.0, 1000.0, 10000.0});
  if (p.ms.empty()) throw ConfigError(f.where("ms") + ": empty list");
  for (double v : p.ms)
    if (!(v >= 1.0)) throw ConfigError(f.where("ms") + ": values must be >= 1");
  p.boundary = f.has("boundary") ? ScalarExpr::from_json(f.raw("boundary")) : default_boundary(d);
  if (p.boundary.dim() != d) throw ConfigError(f.where("boundary") + ": dimension mismatch");
  p.tol = f.get<double>("tol", p.tol);
  p.max_ratio = f.get<double>("max_ratio", p.max_ratio);
  if (!(p.tol > 0.0) || !(p.max_ratio >= 1.0)) throw ConfigError(f.where() + ": need tol > 0 and max_ratio >= 1");
  f.done();
  return p;
}

inline Plan make_plan(const Manifest& m) {
  Fields f(m.params, "params");
  if (m.command == "verify-identities") return plan_verify(std::move(f));
  if (m.command == "euclidean-sanity") return plan_euclid(std::move(f));
  if (m.command == "sharp-constant") return plan_sharp(std::move(f));
  if (m.command == "cordes-solve") return plan_cordes(std::move(f));
  if (m.command == "p-harmonic") return plan_pharmonic(std::move(f));
  throw ConfigError("command: unknown command '" + m.command +
                    "' (verify-identities, sharp-constant, cordes-solve, p-harmonic, euclidean-sanity)");
}

// ---------------------------------------------------------------- output

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}
  void row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw Error("csv: row width mismatch");
    rows_.push_back(std::move(cells));
  }
  std::string body() const {
    std::string s = join(header_);
    for (const auto& r : rows_) s += join(r);
    return s;
  }
  void write(const std::filesystem::path& path, const std::string& hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << body() << "# manifest_hash=" << hash << "\n";
  }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      s += cells[i];
    }
    return s + "\n";
  }
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct Tally {
  int checks = 0, passed = 0;
  void add(bool ok) {
    ++checks;
    passed += ok ? 1 : 0;
  }
};

class Output {
 public:
  Output(std::filesystem::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {
    std::filesystem::create_directories(dir_);
  }
  void csv(const std::string& name, const Csv& c) {
    c.write(dir_ / name, hash_);
    files_.push_back((dir_ / name).string());
  }
  void json_file(const std::string& name, const json& j) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    out << j.dump(2) << "\n";
    files_.push_back((dir_ / name).string());
  }
  void binary(const std::string& name, const Vec& v) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir_ / name).string());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    files_.push_back((dir_ / name).string());
  }
  const std::vector<std::string>& files() const { return files_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::string hash_;
  std::vector<std::string> files_;
};

inline std::string seed_str(const std::optional<std::uint64_t>& s) { return s ? std::to_string(*s) : ""; }

// ---------------------------------------------------------------- execution

inline void execute(const VerifyPlan& p, Output& out, Tally& t, int workers) {
  const std::size_t nf = p.functions.size();
  std::vector<std::vector<IdentityReport>> reps(nf);
  std::vector<std::string> errors(nf);
  VerifyOptions opt = p.opt;
  opt.workers = nf > 1 ? 1 : workers;
  parallel_chunks(nf, nf > 1 ? workers : 1, [&](std::size_t i) {
    try {
      reps[i] = verify_all(p.kinds, p.functions[i], p.frame, p.rule, opt);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  Csv csv({"function", "kind", "variant", "seed", "lhs", "rhs", "abs_err", "rel_err", "quad_err", "slack", "tol",
           "status", "pass"});
  for (std::size_t i = 0; i < nf; ++i) {
    if (!errors[i].empty()) {
      spdlog::error("function {}: {}", i, errors[i]);
      csv.row({std::to_string(i), "ERROR", "", seed_str(p.functions[i].seed()), "", "", "", "", "", "", "", "error",
               "false"});
      t.add(false);
      continue;
    }
    for (const auto& r : reps[i]) {
      csv.row({std::to_string(i), kind_name(r.kind), r.variant, seed_str(r.seed), num(r.lhs), num(r.rhs),
               num(r.abs_err), num(r.rel_err), num(r.quad_err), num(r.slack), num(r.tol), status_name(r.status),
               r.pass ? "true" : "false"});
      t.add(r.pass);
    }
  }
  spdlog::info("verify-identities: {} reports over {} functions", t.checks, nf);
  out.csv("identities.csv", csv);
}

inline void execute(const EuclidPlan& p, Output& out, Tally& t, int workers) {
  const std::size_t nf = p.functions.size();
  std::vector<IdentityReport> reps(nf);
  std::vector<std::string> errors(nf);
  parallel_chunks(nf, nf > 1 ? workers : 1, [&](std::size_t i) {
    try {
      reps[i] = euclidean_sanity(p.functions[i], p.rules[i], p.tol, nf > 1 ? 1 : workers);
      reps[i].seed = p.functions[i].seed();
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  Csv csv({"function", "dim", "seed", "lhs", "rhs", "rel_err", "quad_err", "tol", "status", "pass"});
  for (std::size_t i = 0; i < nf; ++i) {
    if (!errors[i].empty()) {
      spdlog::error("function {}: {}", i, errors[i]);
      csv.row({std::to_string(i), std::to_string(p.functions[i].dim()), seed_str(p.functions[i].seed()), "", "", "",
               "", "", "error", "false"});
      t.add(false);
      continue;
    }
    const auto& r = reps[i];
    csv.row({std::to_string(i), std::to_string(p.functions[i].dim()), seed_str(r.seed), num(r.lhs), num(r.rhs),
             num(r.rel_err), num(r.quad_err), num(r.tol), status_name(r.status), r.pass ? "true" : "false"});
    t.add(r.pass);
  }
  out.csv("euclidean_sanity.csv", csv);
}

inline void execute(const SharpPlan& p, Output& out, Tally& t, int) {
  auto dump = [&](const Grid& g, const RayleighResult& r) {
    spdlog::info("sharp-constant: m_axis {} lambda {:.6f} after {} iterations", g.m_axis, r.lambda, r.iterations);
    if (!p.dump) return;
    const std::string base = fmt::format("maximizer_m{}", g.m_axis);
    json hdr{{"dims", std::vector<int>(g.dim(), g.inner())},
             {"spacing", g.h},
             {"first_node", [&] {
                std::vector<double> x(g.dim());
                for (int k = 0; k < g.dim(); ++k) x[k] = g.coord(k, 0);
                return x;
              }()},
             {"ordering", "row-major over (x_1..x_n, y_1..y_n, t), t fastest"},
             {"dtype", "float64-le"},
             {"normalization", "unit l2"},
             {"lambda", r.lambda},
             {"data", base + ".bin"}};
    out.binary(base + ".bin", r.maximizer.values);
    out.json_file(base + ".json", hdr);
  };
  RefinementTable tab = refinement_study(p.grids, p.frame, p.opt, p.noise, dump);
  Csv csv({"m_axis", "h", "box", "lambda_max", "richardson", "iterations", "inner_solves", "dofs"});
  for (const auto& r : tab.rows)
    csv.row({std::to_string(r.m_axis), num(r.h), "\"" + r.box + "\"", num(r.lambda), num(r.richardson),
             std::to_string(r.iterations), std::to_string(r.inner_solves), std::to_string(r.dofs)});
  out.csv("sharp_constant.csv", csv);
  t.add(tab.nondecreasing);
  const double last = tab.rows.back().lambda;
  t.add(last >= p.lambda_min && last <= p.lambda_max);
  if (!tab.nondecreasing) spdlog::warn("sharp-constant: lambda column decreases beyond the noise level");
  if (!(last >= p.lambda_min && last <= p.lambda_max))
    spdlog::warn("sharp-constant: final lambda {} outside [{}, {}]", last, p.lambda_min, p.lambda_max);
}

inline MatrixField build_field(const CordesPlan& p, const GridOperators& ops, std::uint64_t seed) {
  if (p.field == "identity") return MatrixField::identity(p.grid);
  if (p.field == "manufactured") return manufactured_field(p.grid, seed, p.mprm);
  if (p.field == "p-laplacian") {
    const auto lift = boundary_lift(ops, *p.field_source);
    const Vec u = harmonic_extension(ops, lift);
    return p_laplacian_field(ops, lift, u, p.p);
  }
  MatrixField A;
  A.grid = p.grid;
  A.origin = FieldOrigin::user;
  A.a = p.file_entries;
  return A;
}

inline void execute(const CordesPlan& p, Output& out, Tally& t, int workers) {
  const GridOperators ops = assemble(p.grid, p.frame);
  json reports = json::array();
  Csv hist({"problem", "seed", "iteration", "residual", "contraction"});
  std::optional<GridField> ustar;
  if (p.solution) ustar = GridField::sample(p.grid, *p.solution);
  for (std::size_t k = 0; k < p.seeds.size(); ++k) {
    const std::uint64_t seed = p.seeds[k];
    json rep{{"problem", k}, {"seed", seed}, {"field", p.field}};
    try {
      const MatrixField A = build_field(p, ops, seed);
      const CordesReport c = cordes_check(A, workers);
      rep["cordes"] = {{"epsilon", c.epsilon}, {"epsilon_raw", c.epsilon_raw}, {"sigma", c.sigma},
                       {"gamma", c.gamma},     {"alpha_inf", c.alpha_inf},     {"witness", c.witness},
                       {"witness_point", c.witness_point}, {"note", c.note}};
      const GridField f = ustar ? GridField(p.grid, apply_nondivergence(A, ops, ustar->values))
                                : GridField::sample(p.grid, *p.rhs_expr);
      const NondivergenceResult r = nondivergence_solve(A, f, ops, p.sopt, workers);
      const SolveReport& s = r.report;
      double cmax = 0.0;
      for (std::size_t i = 1; i < s.contraction.size(); ++i) cmax = std::max(cmax, s.contraction[i]);
      rep["solve"] = {{"iterations", s.iterations},   {"converged", s.converged},
                      {"failure", s.failure},         {"residuals", s.residuals},
                      {"contraction", s.contraction}, {"max_contraction_after_second", cmax},
                      {"apriori_ratio", s.apriori_ratio}, {"inner_iterations", s.inner_iterations}};
      const bool contracts = cmax <= c.gamma + p.contraction_slack;
      const bool audit = s.apriori_ratio <= p.audit_max;
      bool recovered = true;
      if (ustar) {
        const double nu = ustar->values.norm();
        const double err = nu > 0.0 ? (r.u.values - ustar->values).norm() / nu : r.u.values.norm();
        rep["solve"]["recovery_error"] = err;
        recovered = err <= p.recovery_factor * p.sopt.tol;
        t.add(recovered);
      }
      t.add(s.converged);
      t.add(contracts);
      t.add(audit);
      rep["pass"] = s.converged && contracts && audit && recovered;
      for (std::size_t i = 0; i < s.residuals.size(); ++i)
        hist.row({std::to_string(k), std::to_string(seed), std::to_string(i), num(s.residuals[i]),
                  i >= 1 && i - 1 < s.contraction.size() ? num(s.contraction[i - 1]) : ""});
      spdlog::info("cordes-solve: problem {} gamma {:.4f} iterations {} converged {}", k, c.gamma, s.iterations,
                   s.converged);
    } catch (const NotCordesError& e) {
      rep["error"] = e.what();
      rep["witness"] = e.node();
      rep["pass"] = false;
      t.add(false);
    } catch (const PreconditionError& e) {
      rep["error"] = e.what();
      rep["pass"] = false;
      t.add(false);
    } catch (const ConvergenceError& e) {
      rep["error"] = e.what();
      rep["pass"] = false;
      t.add(false);
    }
    reports.push_back(rep);
  }
  out.json_file("solve_report.json", reports);
  out.csv("residual_history.csv", hist);
}

inline void execute(const PHarmonicPlan& p, Output& out, Tally& t, int workers) {
  const GridOperators ops = assemble(p.grid, p.frame);
  const PRangeResult range = admissible_range(p.grid.n);
  Csv csv({"p", "m", "h", "grad_norm", "hess_norm", "newton_iterations", "weak_residual", "converged", "admissible"});
  json studies = json::array();
  for (double pv : p.ps) {
    const W22Table tab = w22_study(pv, p.ms, ops, p.boundary, workers, p.tol);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& r : tab.rows) {
      csv.row({num(r.p), num(r.m), num(r.h), num(r.grad_norm), num(r.hess_norm), std::to_string(r.newton_iterations),
               num(r.weak_residual), r.converged ? "true" : "false", tab.admissible ? "true" : "false"});
      t.add(r.converged);
      if (r.converged) lo = std::min(lo, r.hess_norm), hi = std::max(hi, r.hess_norm);
    }
    const bool in_regime = tab.admissible && pv >= 2.0;
    bool uniform = true;
    if (in_regime) {
      uniform = !tab.partial && tab.ratio <= p.max_ratio;
      if (pv == 2.0) uniform = uniform && hi == lo;
      t.add(uniform);
    }
    studies.push_back({{"p", pv},
                       {"ratio", std::isfinite(tab.ratio) ? json(tab.ratio) : json(nullptr)},
                       {"admissible", tab.admissible},
                       {"exploratory", tab.exploratory},
                       {"partial", tab.partial},
                       {"uniform", uniform},
                       {"range_p", {range.p_lo, range.p_hi}}});
    spdlog::info("p-harmonic: p {} ratio {:.4f}{}", pv, tab.ratio, tab.admissible ? "" : " (outside Cordes range)");
  }
  out.csv("p_harmonic.csv", csv);
  out.json_file("p_harmonic_study.json", studies);
}

inline std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Validates the manifest fully, then runs it. ConfigError escapes before any file is written.
inline RunSummary run(const Manifest& m, const RunOptions& ro = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary s;
  s.command = m.command;
  s.manifest_hash = m.hash;
  s.workers = std::max(1, ro.workers);
  s.started_at = detail::utc_now();
  const detail::Plan plan = detail::make_plan(m);
  const std::string dir = ro.out_dir ? *ro.out_dir : m.output_dir.value_or("out");
  detail::Output out(dir, m.hash);
  detail::Tally t;
  try {
    std::visit([&](const auto& p) { detail::execute(p, out, t, s.workers); }, plan);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    s.errors.push_back(e.what());
    t.add(false);
  }
  s.checks = t.checks;
  s.passed = t.passed;
  s.failed = t.checks - t.passed;
  s.exit_code = s.failed == 0 ? 0 : 2;
  s.artifacts = out.files();
  const std::string summary_path = (out.dir() / "run_summary.json").string();
  s.artifacts.push_back(summary_path);
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream f(summary_path, std::ios::binary);
  f << s.to_json().dump(2) << "\n";
  return s;
}

}  // namespace hsharp::cli
