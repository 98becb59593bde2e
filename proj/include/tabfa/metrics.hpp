#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tabfa/attack.hpp"
#include "tabfa/dc.hpp"
#include "tabfa/encoding.hpp"
#include "tabfa/mlp.hpp"
#include "tabfa/schema.hpp"

#include <json.hpp>

namespace tabfa {

// A golden constraint names a modification region that cannot be realized,
// e.g. forbidding the only category. Such pairs count as undetected.
struct GoldenUnviolatableError : StageError {
  using StageError::StageError;
};

namespace detail {

inline const char* golden_op_name(CmpOp op) {
  switch (op) {
    case CmpOp::kEq: return "=";
    case CmpOp::kNe: return "!=";
    case CmpOp::kLt: return "<";
    case CmpOp::kGt: return ">";
    case CmpOp::kLe: return "<=";
    default: return ">=";
  }
}

}  // namespace detail

// Atom of the golden mini-language: either an affine comparison
// a*x_i [+ b*x_j] <op> c over ordered features, or a categorical equality
// x_i =/!= 'category'.
struct GoldenAtom {
  enum class Kind { kLinear, kCategory };

  Kind kind = Kind::kLinear;
  int i = 0;
  double a = 1.0;
  int j = -1;
  double b = 0.0;
  CmpOp op = CmpOp::kEq;
  double c = 0.0;
  int category = 0;

  bool holds(const Row& row) const {
    if (kind == Kind::kCategory)
      return cmp_values(op, row[static_cast<size_t>(i)], static_cast<double>(category));
    double lhs = a * row[static_cast<size_t>(i)];
    if (j >= 0) lhs += b * row[static_cast<size_t>(j)];
    return cmp_values(op, lhs, c);
  }

  std::string text(const Schema& schema) const {
    const auto& fi = schema.feature(static_cast<size_t>(i));
    if (kind == Kind::kCategory)
      return fi.name + " " + detail::golden_op_name(op) + " '" +
             fi.categories[static_cast<size_t>(category)] + "'";
    std::ostringstream out;
    out.precision(17);
    if (a != 1.0) out << a << "*";
    out << fi.name;
    if (j >= 0) {
      out << " + ";
      if (b != 1.0) out << b << "*";
      out << schema.feature(static_cast<size_t>(j)).name;
    }
    out << " " << detail::golden_op_name(op) << " " << c;
    return out.str();
  }
};

// premise_1 & ... & premise_n -> consequence_1 & ... & consequence_m
// An empty premise is a bare invariant.
struct GoldenConstraint {
  std::vector<GoldenAtom> premise;
  std::vector<GoldenAtom> consequence;

  bool premise_holds(const Row& row) const {
    for (const auto& atom : premise)
      if (!atom.holds(row)) return false;
    return true;
  }

  bool violated_by(const Row& row) const {
    if (!premise_holds(row)) return false;
    for (const auto& atom : consequence)
      if (!atom.holds(row)) return true;
    return false;
  }

  std::string text(const Schema& schema) const {
    std::string out;
    for (size_t k = 0; k < premise.size(); ++k)
      out += (k ? " & " : "") + premise[k].text(schema);
    if (!premise.empty()) out += " -> ";
    for (size_t k = 0; k < consequence.size(); ++k)
      out += (k ? " & " : "") + consequence[k].text(schema);
    return out;
  }
};

namespace detail {

struct GoldenToken {
  enum class Kind { kIdent, kNumber, kQuoted, kOp, kEnd };
  Kind kind = Kind::kEnd;
  std::string text;
  double number = 0.0;
};

inline std::vector<GoldenToken> golden_lex(const std::string& line) {
  std::vector<GoldenToken> toks;
  size_t p = 0;
  auto op = [&](const std::string& s) {
    toks.push_back({GoldenToken::Kind::kOp, s, 0.0});
    p += s.size();
  };
  while (p < line.size()) {
    char ch = line[p];
    if (std::isspace(static_cast<unsigned char>(ch))) {
      ++p;
      continue;
    }
    if (line.compare(p, 2, "->") == 0) {
      op("->");
      continue;
    }
    if (line.compare(p, 2, "<=") == 0 || line.compare(p, 2, ">=") == 0 ||
        line.compare(p, 2, "!=") == 0) {
      op(line.substr(p, 2));
      continue;
    }
    if (ch == '&' || ch == '=' || ch == '<' || ch == '>' || ch == '+' || ch == '*') {
      op(std::string(1, ch));
      continue;
    }
    if (ch == '\'') {
      size_t end = line.find('\'', p + 1);
      if (end == std::string::npos) throw ConfigError("golden: unterminated quote in: " + line);
      toks.push_back({GoldenToken::Kind::kQuoted, line.substr(p + 1, end - p - 1), 0.0});
      p = end + 1;
      continue;
    }
    bool neg = ch == '-' && p + 1 < line.size() &&
               (std::isdigit(static_cast<unsigned char>(line[p + 1])) || line[p + 1] == '.');
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.' || neg) {
      size_t end = p + (neg ? 1 : 0);
      while (end < line.size() &&
             (std::isdigit(static_cast<unsigned char>(line[end])) || line[end] == '.'))
        ++end;
      GoldenToken t{GoldenToken::Kind::kNumber, line.substr(p, end - p), 0.0};
      try {
        t.number = std::stod(t.text);
      } catch (const std::exception&) {
        throw ConfigError("golden: bad number '" + t.text + "' in: " + line);
      }
      toks.push_back(t);
      p = end;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      size_t end = p;
      while (end < line.size()) {
        char c2 = line[end];
        if (std::isalnum(static_cast<unsigned char>(c2)) || c2 == '_') {
          ++end;
        } else if (c2 == '-' && end + 1 < line.size() &&
                   std::isalpha(static_cast<unsigned char>(line[end + 1]))) {
          ++end;  // hyphenated feature names, e.g. native-country
        } else {
          break;
        }
      }
      toks.push_back({GoldenToken::Kind::kIdent, line.substr(p, end - p), 0.0});
      p = end;
      continue;
    }
    throw ConfigError("golden: unexpected character '" + std::string(1, ch) + "' in: " + line);
  }
  toks.push_back({GoldenToken::Kind::kEnd, "", 0.0});
  return toks;
}

struct GoldenTerm {
  double coef = 0.0;     // feature term
  int feature = -1;      // -1 marks a plain constant
  double constant = 0.0;
  bool quoted = false;
  std::string category;
};

struct GoldenSide {
  std::vector<GoldenTerm> terms;
};

}  // namespace detail

// Parses lines of the form
//   previous = 0 -> poutcome = -1
//   2*NumSensitiveWords < UrlLength
//   job = 'student' -> marital = 'single' & age <= 35
// into typed golden constraints. '#' starts a comment.
inline std::vector<GoldenConstraint> parse_goldens(const Schema& schema,
                                                   const std::string& text) {
  using detail::GoldenToken;
  std::vector<GoldenConstraint> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;

    auto toks = detail::golden_lex(line);
    size_t p = 0;
    auto peek = [&]() -> const GoldenToken& { return toks[p]; };
    auto take = [&]() -> const GoldenToken& { return toks[p++]; };
    auto is_op = [&](const std::string& s) {
      return peek().kind == GoldenToken::Kind::kOp && peek().text == s;
    };

    auto feature_of = [&](const std::string& name) {
      int f = schema.feature_index(name);
      if (f < 0) throw ConfigError("golden: unknown feature '" + name + "' in: " + line);
      return f;
    };

    auto parse_term = [&]() -> detail::GoldenTerm {
      detail::GoldenTerm t;
      if (peek().kind == GoldenToken::Kind::kQuoted) {
        t.quoted = true;
        t.category = take().text;
        return t;
      }
      if (peek().kind == GoldenToken::Kind::kNumber) {
        double v = take().number;
        if (is_op("*")) {
          take();
          if (peek().kind != GoldenToken::Kind::kIdent)
            throw ConfigError("golden: expected feature after '*' in: " + line);
          t.coef = v;
          t.feature = feature_of(take().text);
          return t;
        }
        t.constant = v;
        return t;
      }
      if (peek().kind == GoldenToken::Kind::kIdent) {
        t.coef = 1.0;
        t.feature = feature_of(take().text);
        return t;
      }
      throw ConfigError("golden: expected term in: " + line);
    };

    auto parse_side = [&]() -> detail::GoldenSide {
      detail::GoldenSide side;
      side.terms.push_back(parse_term());
      while (is_op("+")) {
        take();
        side.terms.push_back(parse_term());
      }
      return side;
    };

    auto parse_atom = [&]() -> GoldenAtom {
      auto lhs = parse_side();
      if (peek().kind != GoldenToken::Kind::kOp)
        throw ConfigError("golden: expected comparison in: " + line);
      std::string ops = take().text;
      CmpOp op;
      if (ops == "=")
        op = CmpOp::kEq;
      else if (ops == "!=")
        op = CmpOp::kNe;
      else if (ops == "<")
        op = CmpOp::kLt;
      else if (ops == ">")
        op = CmpOp::kGt;
      else if (ops == "<=")
        op = CmpOp::kLe;
      else if (ops == ">=")
        op = CmpOp::kGe;
      else
        throw ConfigError("golden: unknown operator '" + ops + "' in: " + line);
      auto rhs = parse_side();

      bool has_quote = false;
      for (const auto& t : lhs.terms) has_quote |= t.quoted;
      for (const auto& t : rhs.terms) has_quote |= t.quoted;
      if (has_quote) {
        if (lhs.terms.size() != 1 || rhs.terms.size() != 1 || !rhs.terms[0].quoted ||
            lhs.terms[0].feature < 0 || lhs.terms[0].coef != 1.0 ||
            (op != CmpOp::kEq && op != CmpOp::kNe))
          throw ConfigError("golden: category atoms must be feature =/!= 'name' in: " + line);
        GoldenAtom atom;
        atom.kind = GoldenAtom::Kind::kCategory;
        atom.i = lhs.terms[0].feature;
        atom.op = op;
        const auto& fs = schema.feature(static_cast<size_t>(atom.i));
        if (fs.kind != FeatureKind::kCategorical)
          throw ConfigError("golden: '" + fs.name + "' is not categorical in: " + line);
        atom.category = schema.category_index(static_cast<size_t>(atom.i), rhs.terms[0].category);
        if (atom.category < 0)
          throw ConfigError("golden: '" + fs.name + "' has no category '" +
                            rhs.terms[0].category + "' in: " + line);
        return atom;
      }

      // Normalize to a*x_i + b*x_j <op> c with the lhs-first feature as
      // subject.
      double constant = 0.0;
      std::vector<std::pair<int, double>> feats;
      auto fold = [&](const detail::GoldenSide& side, double sign) {
        for (const auto& t : side.terms) {
          if (t.feature < 0) {
            constant -= sign * t.constant;
            continue;
          }
          bool merged = false;
          for (auto& [f, coef] : feats)
            if (f == t.feature) {
              coef += sign * t.coef;
              merged = true;
            }
          if (!merged) feats.emplace_back(t.feature, sign * t.coef);
        }
      };
      fold(lhs, 1.0);
      fold(rhs, -1.0);
      feats.erase(std::remove_if(feats.begin(), feats.end(),
                                 [](const auto& fc) { return fc.second == 0.0; }),
                  feats.end());
      if (feats.empty() || feats.size() > 2)
        throw ConfigError("golden: atoms need one or two features in: " + line);
      GoldenAtom atom;
      atom.i = feats[0].first;
      atom.a = feats[0].second;
      if (feats.size() == 2) {
        atom.j = feats[1].first;
        atom.b = feats[1].second;
      }
      atom.op = op;
      atom.c = constant;
      for (const auto& [f, coef] : feats)
        if (!schema.feature(static_cast<size_t>(f)).ordered())
          throw ConfigError("golden: categorical feature '" +
                            schema.feature(static_cast<size_t>(f)).name +
                            "' needs a quoted category in: " + line);
      return atom;
    };

    GoldenConstraint g;
    g.consequence.push_back(parse_atom());
    while (is_op("&")) {
      take();
      g.consequence.push_back(parse_atom());
    }
    if (is_op("->")) {
      take();
      g.premise = std::move(g.consequence);
      g.consequence.clear();
      g.consequence.push_back(parse_atom());
      while (is_op("&")) {
        take();
        g.consequence.push_back(parse_atom());
      }
    }
    if (peek().kind != GoldenToken::Kind::kEnd)
      throw ConfigError("golden: trailing tokens in: " + line);
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<GoldenConstraint> load_goldens(const Schema& schema, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open golden constraint file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_goldens(schema, buf.str());
}

namespace detail {

// Uniform draw of feature fi from {v : a*v <op> a*theta within its domain}.
// The comparison tolerance lives on the scaled values, so bounds are pulled
// in by kValueTol / |a| before sampling.
inline double draw_in_region(const FeatureSpec& fs, CmpOp op, double theta, double ascale,
                             std::mt19937_64& rng) {
  bool ordinal = fs.kind == FeatureKind::kOrdinal;
  double tol = kValueTol / ascale + 1e-12 * std::abs(theta);
  auto fail = [&]() -> double {
    throw GoldenUnviolatableError("no value of '" + fs.name + "' satisfies " +
                                  std::string(op_name(op)) + " " + std::to_string(theta));
  };
  auto uniform_int = [&](double lo, double hi) {
    lo = std::max(lo, fs.lo);
    hi = std::min(hi, fs.hi);
    if (lo > hi) return fail();
    std::uniform_int_distribution<long long> u(static_cast<long long>(lo),
                                               static_cast<long long>(hi));
    return static_cast<double>(u(rng));
  };
  auto uniform_real = [&](double lo, double hi) {
    lo = std::max(lo, fs.lo);
    hi = std::min(hi, fs.hi);
    if (lo > hi) return fail();
    if (lo == hi) return lo;
    std::uniform_real_distribution<double> u(lo, hi);
    return u(rng);
  };

  switch (op) {
    case CmpOp::kEq: {
      double v = ordinal ? std::round(theta) : theta;
      if (v < fs.lo || v > fs.hi || (ordinal && std::abs(v - theta) > tol)) return fail();
      return v;
    }
    case CmpOp::kNe: {
      if (ordinal) {
        double excl = std::round(theta);
        bool in_domain = excl >= fs.lo && excl <= fs.hi && std::abs(excl - theta) <= tol;
        if (!in_domain) return uniform_int(fs.lo, fs.hi);
        if (fs.hi - fs.lo < 1.0) return fail();
        double v = uniform_int(fs.lo, fs.hi - 1.0);
        return v >= excl ? v + 1.0 : v;
      }
      for (int tries = 0; tries < 8; ++tries) {
        double v = uniform_real(fs.lo, fs.hi);
        if (std::abs(v - theta) > tol) return v;
      }
      return fail();
    }
    case CmpOp::kLt:
      return ordinal ? uniform_int(fs.lo, std::ceil(theta - tol) - 1.0)
                     : uniform_real(fs.lo, theta - 2.0 * tol);
    case CmpOp::kLe:
      return ordinal ? uniform_int(fs.lo, std::floor(theta + tol)) : uniform_real(fs.lo, theta);
    case CmpOp::kGt:
      return ordinal ? uniform_int(std::floor(theta + tol) + 1.0, fs.hi)
                     : uniform_real(theta + 2.0 * tol, fs.hi);
    default:  // kGe
      return ordinal ? uniform_int(std::ceil(theta - tol), fs.hi) : uniform_real(theta, fs.hi);
  }
}

inline void set_atom(const Schema& schema, Row& row, const GoldenAtom& atom, bool want_true,
                     std::mt19937_64& rng) {
  if (atom.kind == GoldenAtom::Kind::kCategory) {
    const auto& fs = schema.feature(static_cast<size_t>(atom.i));
    bool pin = (atom.op == CmpOp::kEq) == want_true;
    if (pin) {
      row[static_cast<size_t>(atom.i)] = static_cast<double>(atom.category);
      return;
    }
    if (fs.arity() < 2)
      throw GoldenUnviolatableError("'" + fs.name + "' has no alternative category");
    std::uniform_int_distribution<size_t> u(0, fs.arity() - 2);
    size_t c = u(rng);
    if (c >= static_cast<size_t>(atom.category)) ++c;
    row[static_cast<size_t>(atom.i)] = static_cast<double>(c);
    return;
  }

  // Solve a*x_i <op> c - b*x_j for the subject feature.
  const auto& fs = schema.feature(static_cast<size_t>(atom.i));
  CmpOp op = want_true ? atom.op : negate_op(atom.op);
  double rhs = atom.c;
  if (atom.j >= 0) rhs -= atom.b * row[static_cast<size_t>(atom.j)];
  double theta = rhs / atom.a;
  if (atom.a < 0.0) {
    switch (op) {
      case CmpOp::kLt: op = CmpOp::kGt; break;
      case CmpOp::kGt: op = CmpOp::kLt; break;
      case CmpOp::kLe: op = CmpOp::kGe; break;
      case CmpOp::kGe: op = CmpOp::kLe; break;
      default: break;
    }
  }
  row[static_cast<size_t>(atom.i)] = draw_in_region(fs, op, theta, std::abs(atom.a), rng);
}

}  // namespace detail

// Negation sampling: make the premise hold, then push one uniformly chosen
// consequence atom into its violating region.
inline Row violate_golden(const Schema& schema, const Row& row, const GoldenConstraint& g,
                          uint64_t seed) {
  if (auto err = validate_row(schema, row)) throw DataError("violate_golden: " + *err);
  if (g.consequence.empty()) throw ConfigError("golden constraint has no consequence");
  auto rng = make_rng(seed);
  Row out = row;
  for (const auto& atom : g.premise)
    if (!atom.holds(out)) detail::set_atom(schema, out, atom, true, rng);
  std::uniform_int_distribution<size_t> u(0, g.consequence.size() - 1);
  detail::set_atom(schema, out, g.consequence[u(rng)], false, rng);
  if (!g.violated_by(out))
    throw StageError("golden violation construction failed for: " + g.text(schema));
  return out;
}

inline double empirical_completeness(const Schema& schema, const GroundTheory& theory,
                                     const std::vector<Row>& test) {
  if (test.empty()) throw DataError("completeness needs a nonempty test set");
  size_t n = 0;
  for (const auto& row : test)
    if (theory.complies(schema, row)) ++n;
  return static_cast<double>(n) / static_cast<double>(test.size());
}

// Fraction of (complying row, golden) pairs whose sampled violation the
// theory rejects. Unviolatable pairs stay in the denominator. nullopt when no
// test row complies.
inline std::optional<double> empirical_soundness(const Schema& schema, const GroundTheory& theory,
                                                 const std::vector<Row>& test,
                                                 const std::vector<GoldenConstraint>& goldens,
                                                 uint64_t seed) {
  if (goldens.empty()) throw ConfigError("soundness needs at least one golden constraint");
  std::vector<const Row*> complying;
  for (const auto& row : test)
    if (theory.complies(schema, row)) complying.push_back(&row);
  if (complying.empty()) return std::nullopt;

  size_t detected = 0;
  for (size_t ci = 0; ci < complying.size(); ++ci) {
    for (size_t gi = 0; gi < goldens.size(); ++gi) {
      uint64_t pair_seed = derive_seed(seed, ci * goldens.size() + gi);
      try {
        Row bad = violate_golden(schema, *complying[ci], goldens[gi], pair_seed);
        if (!theory.complies(schema, bad)) ++detected;
      } catch (const GoldenUnviolatableError&) {
        // counts in the denominator, detects nothing
      }
    }
  }
  return static_cast<double>(detected) /
         static_cast<double>(goldens.size() * complying.size());
}

inline double f1(double completeness, double soundness) {
  if (completeness < 0.0 || completeness > 1.0 || soundness < 0.0 || soundness > 1.0)
    throw ConfigError("f1 inputs must be in [0, 1]");
  double sum = completeness + soundness;
  if (sum == 0.0) return 0.0;
  return 2.0 * completeness * soundness / sum;
}

inline double golden_compliance(const std::vector<Row>& rows, const GoldenConstraint& g) {
  if (rows.empty()) throw DataError("golden compliance needs rows");
  size_t ok = 0;
  for (const auto& row : rows)
    if (!g.violated_by(row)) ++ok;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

struct EvaluationReport {
  size_t n_samples = 0;
  size_t successes = 0;
  size_t compliant = 0;
  size_t feasible = 0;
  size_t nan_linf_excluded = 0;
  double success_rate = 0.0;
  double feasible_success_rate = 0.0;
  double mean_l0 = std::numeric_limits<double>::quiet_NaN();
  double mean_linf = std::numeric_limits<double>::quiet_NaN();
  double completeness = std::numeric_limits<double>::quiet_NaN();
  double soundness = std::numeric_limits<double>::quiet_NaN();
  double f1_score = std::numeric_limits<double>::quiet_NaN();

  nlohmann::json to_json() const {
    auto opt = [](double v) {
      return std::isnan(v) ? nlohmann::json() : nlohmann::json(v);
    };
    return nlohmann::json{{"n_samples", n_samples},
                          {"successes", successes},
                          {"compliant", compliant},
                          {"feasible", feasible},
                          {"nan_linf_excluded", nan_linf_excluded},
                          {"success_rate", success_rate},
                          {"feasible_success_rate", feasible_success_rate},
                          {"mean_l0", opt(mean_l0)},
                          {"mean_linf", opt(mean_linf)},
                          {"completeness", opt(completeness)},
                          {"soundness", opt(soundness)},
                          {"f1", opt(f1_score)}};
  }
};

// Success and feasible-success rates over one attack run. With a model the
// misclassification is recounted from the stored perturbation instead of
// trusting the attack's own flag. Cost means cover the feasible subset only.
inline EvaluationReport attack_metrics(const Schema& schema, const GroundTheory& theory,
                                       const std::vector<AttackResult>& results,
                                       const std::vector<Row>& originals,
                                       const std::vector<int>& labels,
                                       const MlpModel* model = nullptr) {
  if (results.size() != originals.size() || results.size() != labels.size())
    throw ConfigError("attack_metrics: results, originals, and labels must align");
  EvaluationReport rep;
  rep.n_samples = results.size();
  double l0_sum = 0.0, linf_sum = 0.0;
  size_t linf_n = 0;
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& res = results[i];
    bool success = res.success;
    if (model) {
      auto enc = encode(schema, originals[i]);
      if (res.delta.size() != enc.size())
        throw ConfigError("attack_metrics: result delta does not match the schema encoding");
      for (size_t k = 0; k < enc.size(); ++k) enc[k] += res.delta[k];
      success = model->predict(enc) != labels[i];
    }
    bool compliant = !res.row.empty() && theory.complies(schema, res.row);
    if (success) ++rep.successes;
    if (compliant) ++rep.compliant;
    if (success && compliant) {
      ++rep.feasible;
      l0_sum += res.l0;
      if (std::isnan(res.linf)) {
        ++rep.nan_linf_excluded;
      } else {
        linf_sum += res.linf;
        ++linf_n;
      }
    }
  }
  rep.success_rate = rep.n_samples ? static_cast<double>(rep.successes) / rep.n_samples : 0.0;
  rep.feasible_success_rate =
      rep.n_samples ? static_cast<double>(rep.feasible) / rep.n_samples : 0.0;
  if (rep.feasible) rep.mean_l0 = l0_sum / static_cast<double>(rep.feasible);
  if (linf_n) rep.mean_linf = linf_sum / static_cast<double>(linf_n);
  return rep;
}

}  // namespace tabfa
