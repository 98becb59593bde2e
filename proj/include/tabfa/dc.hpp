#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabfa/common.hpp"
#include "tabfa/dataset.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

enum class CmpOp { kEq = 0, kNe, kLt, kGt, kLe, kGe };

inline const char* op_name(CmpOp op) {
  switch (op) {
    case CmpOp::kEq: return "==";
    case CmpOp::kNe: return "!=";
    case CmpOp::kLt: return "<";
    case CmpOp::kGt: return ">";
    case CmpOp::kLe: return "<=";
    case CmpOp::kGe: return ">=";
  }
  throw ConfigError("bad comparison op");
}

inline CmpOp op_from_name(const std::string& s) {
  if (s == "==") return CmpOp::kEq;
  if (s == "!=") return CmpOp::kNe;
  if (s == "<") return CmpOp::kLt;
  if (s == ">") return CmpOp::kGt;
  if (s == "<=") return CmpOp::kLe;
  if (s == ">=") return CmpOp::kGe;
  throw ConfigError("unknown comparison op '" + s + "'");
}

inline CmpOp negate_op(CmpOp op) {
  switch (op) {
    case CmpOp::kEq: return CmpOp::kNe;
    case CmpOp::kNe: return CmpOp::kEq;
    case CmpOp::kLt: return CmpOp::kGe;
    case CmpOp::kGe: return CmpOp::kLt;
    case CmpOp::kGt: return CmpOp::kLe;
    case CmpOp::kLe: return CmpOp::kGt;
  }
  throw ConfigError("bad comparison op");
}

// Tolerance-aware comparison. Equality means within kValueTol; strict
// inequalities must clear the tolerance. The six ops stay mutually coherent:
// != is exactly !==, <= is exactly !>, >= is exactly !<.
inline bool cmp_values(CmpOp op, double a, double b) {
  switch (op) {
    case CmpOp::kEq: return std::abs(a - b) <= kValueTol;
    case CmpOp::kNe: return std::abs(a - b) > kValueTol;
    case CmpOp::kLt: return b - a > kValueTol;
    case CmpOp::kGt: return a - b > kValueTol;
    case CmpOp::kLe: return !(a - b > kValueTol);
    case CmpOp::kGe: return !(b - a > kValueTol);
  }
  throw ConfigError("bad comparison op");
}

// Single-feature predicate over an ordered pair of rows: main.f <op> other.f.
struct Predicate {
  int feature = 0;
  CmpOp op = CmpOp::kEq;

  bool holds(const Row& main, const Row& other) const {
    return cmp_values(op, main[static_cast<size_t>(feature)],
                      other[static_cast<size_t>(feature)]);
  }

  friend bool operator==(const Predicate& a, const Predicate& b) {
    return a.feature == b.feature && a.op == b.op;
  }
  friend bool operator<(const Predicate& a, const Predicate& b) {
    if (a.feature != b.feature) return a.feature < b.feature;
    return static_cast<int>(a.op) < static_cast<int>(b.op);
  }

  std::string text(const Schema& schema) const {
    const auto& name = schema.feature(static_cast<size_t>(feature)).name;
    return "t." + name + " " + op_name(op) + " t'." + name;
  }
};

// The predicate space: every feature compared against the same feature of the
// other row. Ordered features admit all six ops, categorical only ==/!=.
// Indices into the returned vector are the bit positions used by Mask128.
inline std::vector<Predicate> predicate_space(const Schema& schema) {
  std::vector<Predicate> psi;
  for (size_t f = 0; f < schema.size(); ++f) {
    if (schema.feature(f).ordered()) {
      for (CmpOp op : {CmpOp::kEq, CmpOp::kNe, CmpOp::kLt, CmpOp::kGt, CmpOp::kLe, CmpOp::kGe})
        psi.push_back({static_cast<int>(f), op});
    } else {
      for (CmpOp op : {CmpOp::kEq, CmpOp::kNe}) psi.push_back({static_cast<int>(f), op});
    }
  }
  if (psi.size() > 128)
    throw ConfigError("predicate space exceeds 128 predicates (" +
                      std::to_string(psi.size()) + "); too many features");
  return psi;
}

// Fixed-width bitset over predicate-space indices.
struct Mask128 {
  uint64_t lo = 0;
  uint64_t hi = 0;

  void set(int i) {
    if (i < 64)
      lo |= uint64_t{1} << i;
    else
      hi |= uint64_t{1} << (i - 64);
  }
  bool test(int i) const {
    return i < 64 ? (lo >> i) & 1 : (hi >> (i - 64)) & 1;
  }
  int popcount() const { return std::popcount(lo) + std::popcount(hi); }
  bool contains(const Mask128& sub) const {
    return (lo & sub.lo) == sub.lo && (hi & sub.hi) == sub.hi;
  }
  friend Mask128 operator&(const Mask128& a, const Mask128& b) {
    return {a.lo & b.lo, a.hi & b.hi};
  }
  friend bool operator==(const Mask128& a, const Mask128& b) {
    return a.lo == b.lo && a.hi == b.hi;
  }
};

struct Mask128Hash {
  size_t operator()(const Mask128& m) const {
    return static_cast<size_t>(splitmix64(m.lo ^ splitmix64(m.hi)));
  }
};

// A denial constraint: no ordered pair of rows may satisfy every predicate.
// Predicates are kept sorted in canonical order.
struct DenialConstraint {
  std::vector<Predicate> preds;

  bool violated_by(const Row& main, const Row& other) const {
    for (const auto& p : preds)
      if (!p.holds(main, other)) return false;
    return true;
  }

  std::string text(const Schema& schema) const {
    std::string s = "not(";
    for (size_t i = 0; i < preds.size(); ++i) {
      if (i) s += " and ";
      s += preds[i].text(schema);
    }
    return s + ")";
  }

  friend bool operator==(const DenialConstraint& a, const DenialConstraint& b) {
    return a.preds == b.preds;
  }
  // Succinct first, then lexicographic on (feature, op) tuples.
  friend bool operator<(const DenialConstraint& a, const DenialConstraint& b) {
    if (a.preds.size() != b.preds.size()) return a.preds.size() < b.preds.size();
    return a.preds < b.preds;
  }
};

// One disjunct of a grounded clause. Cmp literals compare a feature against a
// constant with the shared tolerance (categorical constants are category
// indices, ops ==/!= only). Interval literals test membership in a numeric
// interval with exact, tolerance-free endpoint semantics.
struct Literal {
  enum class Kind { kCmp, kInterval };

  Kind kind = Kind::kCmp;
  int feature = 0;
  CmpOp op = CmpOp::kEq;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool lo_open = false;
  bool hi_open = false;

  static Literal cmp(int feature, CmpOp op, double value) {
    Literal l;
    l.kind = Kind::kCmp;
    l.feature = feature;
    l.op = op;
    l.value = value;
    return l;
  }

  static Literal interval(int feature, double lo, double hi, bool lo_open, bool hi_open) {
    Literal l;
    l.kind = Kind::kInterval;
    l.feature = feature;
    l.lo = lo;
    l.hi = hi;
    l.lo_open = lo_open;
    l.hi_open = hi_open;
    return l;
  }

  bool holds_value(double v) const {
    if (kind == Kind::kCmp) return cmp_values(op, v, value);
    bool above = lo_open ? v > lo : v >= lo;
    bool below = hi_open ? v < hi : v <= hi;
    return above && below;
  }

  bool holds(const Row& row) const { return holds_value(row[static_cast<size_t>(feature)]); }

  std::string text(const Schema& schema) const {
    const auto& fs = schema.feature(static_cast<size_t>(feature));
    if (kind == Kind::kInterval) {
      return fs.name + " in " + (lo_open ? "(" : "[") + std::to_string(lo) + ", " +
             std::to_string(hi) + (hi_open ? ")" : "]");
    }
    if (!fs.ordered()) {
      size_t c = static_cast<size_t>(std::llround(value));
      std::string cat = c < fs.arity() ? fs.categories[c] : std::to_string(value);
      return fs.name + " " + op_name(op) + " '" + cat + "'";
    }
    return fs.name + " " + op_name(op) + " " + std::to_string(value);
  }

  // JSON has no infinity; unbounded interval ends round-trip as strings.
  static nlohmann::json bound_to_json(double v) {
    if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
    return v;
  }
  static double bound_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
      std::string s = j.get<std::string>();
      if (s == "+inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      throw ConfigError("bad interval bound '" + s + "'");
    }
    return j.get<double>();
  }

  nlohmann::json to_json() const {
    if (kind == Kind::kCmp)
      return nlohmann::json{{"k", "cmp"}, {"f", feature}, {"op", op_name(op)}, {"c", value}};
    return nlohmann::json{{"k", "iv"},
                          {"f", feature},
                          {"lo", bound_to_json(lo)},
                          {"hi", bound_to_json(hi)},
                          {"lo_open", lo_open},
                          {"hi_open", hi_open}};
  }

  static Literal from_json(const nlohmann::json& j) {
    std::string k = j.at("k").get<std::string>();
    if (k == "cmp")
      return cmp(j.at("f").get<int>(), op_from_name(j.at("op").get<std::string>()),
                 j.at("c").get<double>());
    if (k == "iv")
      return interval(j.at("f").get<int>(), bound_from_json(j.at("lo")),
                      bound_from_json(j.at("hi")), j.at("lo_open").get<bool>(),
                      j.at("hi_open").get<bool>());
    throw ConfigError("unknown literal kind '" + k + "'");
  }
};

// Disjunction of literals; satisfied when at least one holds.
struct Clause {
  std::vector<Literal> lits;

  bool satisfied(const Row& row) const {
    for (const auto& l : lits)
      if (l.holds(row)) return true;
    return false;
  }

  std::string text(const Schema& schema) const {
    std::string s;
    for (size_t i = 0; i < lits.size(); ++i) {
      if (i) s += " or ";
      s += lits[i].text(schema);
    }
    return s;
  }
};

// Ground a denial constraint against a fixed witness tuple: the row must
// falsify at least one predicate, i.e. satisfy some negated predicate.
inline Clause ground_dc(const DenialConstraint& dc, const Row& other) {
  Clause c;
  for (const auto& p : dc.preds)
    c.lits.push_back(Literal::cmp(p.feature, negate_op(p.op),
                                  other[static_cast<size_t>(p.feature)]));
  return c;
}

// A grounded constraint theory: a conjunction of clauses bound to one schema.
struct GroundTheory {
  uint64_t schema_hash = 0;
  std::vector<Clause> clauses;

  void check_schema(const Schema& schema) const {
    if (schema.hash() != schema_hash)
      throw ConfigError("constraint theory was built for a different schema");
  }

  bool clauses_satisfied(const Row& row) const {
    for (const auto& c : clauses)
      if (!c.satisfied(row)) return false;
    return true;
  }

  // Compliance: the row is structurally valid for the schema and satisfies
  // every clause.
  bool complies(const Schema& schema, const Row& row) const {
    check_schema(schema);
    if (validate_row(schema, row)) return false;
    return clauses_satisfied(row);
  }

  nlohmann::json to_json() const {
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& c : clauses) {
      nlohmann::json jl = nlohmann::json::array();
      for (const auto& l : c.lits) jl.push_back(l.to_json());
      jc.push_back(std::move(jl));
    }
    return nlohmann::json{{"format", "tabfa-theory-v1"},
                          {"schema_hash", hex64(schema_hash)},
                          {"clauses", std::move(jc)}};
  }

  static GroundTheory from_json(const nlohmann::json& j) {
    if (j.value("format", "") != std::string("tabfa-theory-v1"))
      throw ConfigError("theory file: unknown format");
    GroundTheory t;
    t.schema_hash = std::stoull(j.at("schema_hash").get<std::string>(), nullptr, 16);
    for (const auto& jc : j.at("clauses")) {
      Clause c;
      for (const auto& jl : jc) c.lits.push_back(Literal::from_json(jl));
      t.clauses.push_back(std::move(c));
    }
    return t;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write theory '" + path + "'");
    out << to_json().dump() << "\n";
  }

  static GroundTheory load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open theory '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("theory '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }
};

}  // namespace tabfa
