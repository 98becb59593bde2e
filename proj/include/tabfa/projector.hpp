#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tabfa/dc.hpp"
#include "tabfa/encoding.hpp"
#include "tabfa/schema.hpp"

#include <json.hpp>

namespace tabfa {

struct ProjectionConfig {
  double max_budget_fraction = 0.5;
  double epsilon = 1.0 / 30.0;
  std::string tie_break = "closest";
  bool exact_sweep = false;

  void validate() const {
    if (!(max_budget_fraction >= 0.0 && max_budget_fraction <= 1.0))
      throw ConfigError("max_budget_fraction must be in [0, 1]");
    if (!(epsilon > 0.0)) throw ConfigError("projection epsilon must be > 0");
    if (tie_break != "closest") throw ConfigError("unknown tie-break policy '" + tie_break + "'");
  }
};

enum class ProjectionStatus { kAlreadyCompliant, kProjected, kFailed };

inline const char* projection_status_name(ProjectionStatus s) {
  switch (s) {
    case ProjectionStatus::kAlreadyCompliant: return "already_compliant";
    case ProjectionStatus::kProjected: return "projected";
    default: return "failed";
  }
}

struct ProjectionResult {
  ProjectionStatus status = ProjectionStatus::kFailed;
  Row row;  // empty on failure
  std::vector<size_t> relaxed;
  size_t budget_used = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"status", projection_status_name(status)},
                          {"row", row},
                          {"relaxed", relaxed},
                          {"budget_used", budget_used}};
  }
};

// Features ordered by how few of the theory's literals the row currently
// satisfies; the least entangled features are relaxed first.
inline std::vector<size_t> rank_relaxation_candidates(const Schema& schema,
                                                      const GroundTheory& theory, const Row& xp) {
  std::vector<size_t> counts(schema.size(), 0);
  for (const auto& cl : theory.clauses)
    for (const auto& lit : cl.lits)
      if (lit.holds(xp)) ++counts[static_cast<size_t>(lit.feature)];
  std::vector<size_t> order(schema.size());
  for (size_t f = 0; f < order.size(); ++f) order[f] = f;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return counts[a] < counts[b]; });
  return order;
}

namespace detail {

struct SolveClause {
  std::vector<const Literal*> lits;  // literals on relaxed features only
};

inline std::pair<double, double> projection_bounds(const FeatureSpec& fs, double center,
                                                   double epsilon, double r) {
  double lo = std::max(center - epsilon * r, fs.lo);
  double hi = std::min(center + epsilon * r, fs.hi);
  if (fs.kind == FeatureKind::kOrdinal) {
    lo = std::ceil(lo);
    hi = std::floor(hi);
  }
  return {lo, hi};
}

inline std::vector<double> ordered_candidates(const FeatureSpec& fs, double xv, double xpv,
                                              double r, double epsilon,
                                              const std::vector<SolveClause>& work, size_t f) {
  auto [blo, bhi] = projection_bounds(fs, xv, epsilon, r);
  std::vector<double> raw{xpv, xv, blo, bhi};
  double nudge = fs.kind == FeatureKind::kOrdinal ? 1.0 : 1e-6 * r;
  for (const auto& cl : work)
    for (const auto* lit : cl.lits) {
      if (static_cast<size_t>(lit->feature) != f) continue;
      std::vector<double> consts;
      if (lit->kind == Literal::Kind::kCmp) {
        consts.push_back(lit->value);
      } else {
        if (std::isfinite(lit->lo)) consts.push_back(lit->lo);
        if (std::isfinite(lit->hi)) consts.push_back(lit->hi);
      }
      for (double c : consts) {
        raw.push_back(c);
        raw.push_back(c - nudge);
        raw.push_back(c + nudge);
      }
    }

  std::vector<double> cand;
  for (double v : raw) {
    if (fs.kind == FeatureKind::kOrdinal) {
      cand.push_back(std::clamp(std::floor(v), blo, bhi));
      cand.push_back(std::clamp(std::ceil(v), blo, bhi));
    } else {
      cand.push_back(std::clamp(v, blo, bhi));
    }
  }
  std::sort(cand.begin(), cand.end(), [&](double a, double b) {
    double da = std::abs(a - xpv), db = std::abs(b - xpv);
    if (da != db) return da < db;
    return a < b;
  });
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  // unique() needs equal values adjacent; distance sorting puts x+d and x-d
  // side by side but never interleaves duplicates of distinct values, and
  // exact duplicates share a distance, so adjacency holds.
  return cand;
}

}  // namespace detail

// Backtracking search over per-feature candidate grids, relaxed features
// assigned in the given order. Clauses are unary-literal disjunctions, so a
// clause whose fixed literals all fail either dies or constrains the relaxed
// features alone. Returns the first satisfying assignment, preferring values
// close to xp, or nullopt when the grid admits none.
inline std::optional<Row> solve_theory(const Schema& schema, const GroundTheory& theory,
                                       const Row& x, const Row& xp,
                                       const std::vector<double>& range, double epsilon,
                                       const std::vector<size_t>& relaxed) {
  theory.check_schema(schema);
  std::vector<int> depth_of(schema.size(), -1);
  for (size_t i = 0; i < relaxed.size(); ++i) depth_of[relaxed[i]] = static_cast<int>(i);

  std::vector<detail::SolveClause> work;
  for (const auto& cl : theory.clauses) {
    bool satisfied = false;
    detail::SolveClause sc;
    for (const auto& lit : cl.lits) {
      if (depth_of[static_cast<size_t>(lit.feature)] < 0) {
        if (lit.holds(xp)) {
          satisfied = true;
          break;
        }
      } else {
        sc.lits.push_back(&lit);
      }
    }
    if (satisfied) continue;
    if (sc.lits.empty()) return std::nullopt;
    work.push_back(std::move(sc));
  }

  Row out = xp;
  if (work.empty()) return out;

  std::vector<std::vector<double>> domains(relaxed.size());
  for (size_t i = 0; i < relaxed.size(); ++i) {
    size_t f = relaxed[i];
    const auto& fs = schema.feature(f);
    if (fs.ordered()) {
      domains[i] = detail::ordered_candidates(fs, x[f], xp[f], range[f], epsilon, work, f);
    } else {
      domains[i].push_back(xp[f]);
      for (size_t c = 0; c < fs.arity(); ++c)
        if (static_cast<double>(c) != xp[f]) domains[i].push_back(static_cast<double>(c));
    }
  }

  // Clause state given assignments up to depth: satisfied, dead, or unit.
  auto dfs = [&](auto&& self, size_t depth, const std::vector<std::vector<double>>& doms) -> bool {
    if (depth == relaxed.size()) return true;
    size_t f = relaxed[depth];
    for (double v : doms[depth]) {
      out[f] = v;
      bool dead = false;
      for (const auto& cl : work) {
        bool sat = false, open = false;
        for (const auto* lit : cl.lits) {
          size_t lf = static_cast<size_t>(lit->feature);
          if (depth_of[lf] <= static_cast<int>(depth)) {
            if (lit->holds_value(out[lf])) sat = true;
          } else {
            open = true;
          }
        }
        if (!sat && !open) {
          dead = true;
          break;
        }
      }
      if (dead) continue;

      // Unit propagation: a clause whose last live literal sits on a future
      // feature restricts that feature's candidates to the literal's region.
      auto next = doms;
      bool wiped = false;
      for (const auto& cl : work) {
        bool sat = false;
        const Literal* unit = nullptr;
        int n_open = 0;
        for (const auto* lit : cl.lits) {
          size_t lf = static_cast<size_t>(lit->feature);
          if (depth_of[lf] <= static_cast<int>(depth)) {
            if (lit->holds_value(out[lf])) sat = true;
          } else {
            ++n_open;
            unit = lit;
          }
        }
        if (sat || n_open != 1) continue;
        auto& dom = next[static_cast<size_t>(depth_of[static_cast<size_t>(unit->feature)])];
        dom.erase(std::remove_if(dom.begin(), dom.end(),
                                 [&](double c) { return !unit->holds_value(c); }),
                  dom.end());
        if (dom.empty()) {
          wiped = true;
          break;
        }
      }
      if (wiped) continue;
      if (self(self, depth + 1, next)) return true;
    }
    out[f] = xp[f];
    return false;
  };
  if (dfs(dfs, 0, domains)) return out;
  return std::nullopt;
}

inline ProjectionResult project(const Schema& schema, const GroundTheory& theory, const Row& x,
                                const Row& xp, const std::vector<double>& range,
                                const ProjectionConfig& cfg) {
  cfg.validate();
  theory.check_schema(schema);
  if (range.size() != schema.size()) throw ConfigError("project: range vector size mismatch");
  if (auto err = validate_row(schema, x)) throw DataError("projection center: " + *err);
  if (auto err = validate_row(schema, xp)) throw DataError("projection input: " + *err);

  ProjectionResult res;
  if (theory.complies(schema, xp)) {
    res.status = ProjectionStatus::kAlreadyCompliant;
    res.row = xp;
    return res;
  }

  auto order = rank_relaxation_candidates(schema, theory, xp);
  size_t bmax = static_cast<size_t>(std::ceil(cfg.max_budget_fraction * schema.size()));
  bmax = std::min(bmax, schema.size());
  if (bmax == 0) return res;

  auto attempt = [&](size_t b) {
    std::vector<size_t> rel(order.begin(), order.begin() + b);
    return solve_theory(schema, theory, x, xp, range, cfg.epsilon, rel);
  };

  std::optional<Row> best;
  size_t best_b = 0;
  if (cfg.exact_sweep) {
    for (size_t b = 1; b <= bmax && !best; ++b)
      if (auto r = attempt(b)) {
        best = r;
        best_b = b;
      }
  } else if (auto top = attempt(bmax)) {
    // Solvability is monotone in the budget: xp's value is always a
    // candidate, so any solution survives extra relaxed features.
    best = top;
    best_b = bmax;
    size_t lo = 1, hi = bmax;
    while (lo < hi) {
      size_t mid = lo + (hi - lo) / 2;
      if (auto r = attempt(mid)) {
        best = r;
        best_b = mid;
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
  }
  if (!best) return res;

  res.status = ProjectionStatus::kProjected;
  res.row = std::move(*best);
  res.budget_used = best_b;
  res.relaxed.assign(order.begin(), order.begin() + best_b);
  if (!theory.complies(schema, res.row))
    throw StageError("projection returned a non-compliant row");
  return res;
}

}  // namespace tabfa
