#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabfa/common.hpp"
#include "tabfa/dc.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

struct ValiantConfig {
  int k = 1;               // literals per feature in a clause; only 1 is tractable
  int default_k_bin = 4;   // bins for continuous features
  std::map<std::string, int> k_bin;  // per-feature override; 0 = pass-through
  uint64_t product_cap = 10000000;

  void validate(const Schema& schema) const {
    if (k != 1)
      throw ConfigError("intractable parameterization: only k = 1 clause theories are supported");
    if (default_k_bin < 2) throw ConfigError("k_bin must be >= 2");
    if (product_cap < 1) throw ConfigError("product_cap must be >= 1");
    for (const auto& [name, bins] : k_bin) {
      int f = schema.feature_index(name);
      if (f < 0) throw ConfigError("k_bin override for unknown feature '" + name + "'");
      if (!schema.feature(static_cast<size_t>(f)).ordered())
        throw ConfigError("k_bin override on categorical feature '" + name + "'");
      if (bins != 0 && bins < 2)
        throw ConfigError("k_bin override for '" + name + "' must be 0 (pass-through) or >= 2");
    }
  }

  int bins_for(const FeatureSpec& f) const {
    auto it = k_bin.find(f.name);
    if (it != k_bin.end()) return it->second;
    return f.kind == FeatureKind::kContinuous ? default_k_bin : 0;
  }
};

// Deterministic 1-D k-means: quantile seeding, Lloyd iterations (at most 50),
// no restarts. Returns sorted centroids; coinciding centroids are merged.
inline std::vector<double> kmeans_1d(std::vector<double> values, int k,
                                     std::vector<std::string>* warnings,
                                     const std::string& feature_name) {
  std::sort(values.begin(), values.end());
  std::vector<double> distinct = values;
  distinct.erase(std::unique(distinct.begin(), distinct.end(),
                             [](double a, double b) { return std::abs(a - b) <= kValueTol; }),
                 distinct.end());
  if (distinct.size() <= static_cast<size_t>(k)) {
    if (distinct.size() < static_cast<size_t>(k) && warnings)
      warnings->push_back("feature '" + feature_name + "': only " +
                          std::to_string(distinct.size()) + " distinct values, reduced from " +
                          std::to_string(k) + " bins");
    return distinct;
  }

  size_t n = values.size();
  std::vector<double> c(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    size_t at = static_cast<size_t>((j + 0.5) * static_cast<double>(n) / k);
    c[static_cast<size_t>(j)] = values[std::min(at, n - 1)];
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    std::vector<double> sum(c.size(), 0.0);
    std::vector<size_t> cnt(c.size(), 0);
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::abs(values[i] - c[0]);
      for (size_t j = 1; j < c.size(); ++j) {
        double d = std::abs(values[i] - c[j]);
        if (d < bd) {
          bd = d;
          best = static_cast<int>(j);
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
      sum[static_cast<size_t>(best)] += values[i];
      cnt[static_cast<size_t>(best)] += 1;
    }
    if (!changed) break;
    for (size_t j = 0; j < c.size(); ++j)
      if (cnt[j] > 0) c[j] = sum[j] / static_cast<double>(cnt[j]);
  }

  std::sort(c.begin(), c.end());
  std::vector<double> merged;
  for (double v : c)
    if (merged.empty() || v - merged.back() > kValueTol) merged.push_back(v);
  if (merged.size() < c.size() && warnings)
    warnings->push_back("feature '" + feature_name + "': coinciding centroids merged to " +
                        std::to_string(merged.size()) + " bins");
  return merged;
}

// Per-feature discretization. Binned features map values to bin codes by
// nearest centroid, realized as midpoint edges; pass-through features keep
// their raw values.
struct FeatureDisc {
  bool binned = false;
  std::vector<double> centroids;
  std::vector<double> edges;  // midpoints between adjacent centroids

  int bins() const { return static_cast<int>(centroids.size()); }

  int code(double v) const {
    int b = 0;
    for (double e : edges)
      if (v > e) ++b;
    return b;
  }
};

struct Discretizer {
  std::vector<FeatureDisc> feats;
  std::vector<std::string> warnings;

  static Discretizer fit(const Schema& schema, const std::vector<Row>& rows,
                         const ValiantConfig& cfg) {
    cfg.validate(schema);
    if (rows.empty()) throw DataError("discretizer needs at least one row");
    Discretizer d;
    d.feats.resize(schema.size());
    for (size_t f = 0; f < schema.size(); ++f) {
      int bins = cfg.bins_for(schema.feature(f));
      if (bins == 0) continue;
      std::vector<double> vals;
      vals.reserve(rows.size());
      for (const auto& r : rows) vals.push_back(r[f]);
      auto& fd = d.feats[f];
      fd.binned = true;
      fd.centroids = kmeans_1d(std::move(vals), bins, &d.warnings, schema.feature(f).name);
      for (size_t j = 0; j + 1 < fd.centroids.size(); ++j)
        fd.edges.push_back(0.5 * (fd.centroids[j] + fd.centroids[j + 1]));
    }
    return d;
  }

  nlohmann::json to_json(const Schema& schema) const {
    nlohmann::json jf = nlohmann::json::array();
    for (size_t f = 0; f < feats.size(); ++f) {
      nlohmann::json j{{"feature", schema.feature(f).name}, {"binned", feats[f].binned}};
      if (feats[f].binned) {
        j["centroids"] = feats[f].centroids;
        j["edges"] = feats[f].edges;
      }
      jf.push_back(std::move(j));
    }
    return jf;
  }
};

// Keep exactly the clauses of the product space satisfied by every row.
// Rows are given as support-index vectors; sizes are the per-feature support
// cardinalities. A clause (one support choice per feature) fails a row only
// when it differs from the row in every coordinate, so each distinct row
// clears the product of the complements.
inline std::vector<bool> filter_gamma(const std::vector<size_t>& sizes,
                                      const std::vector<std::vector<int>>& rows,
                                      uint64_t product_cap) {
  uint64_t product = 1;
  for (size_t m : sizes) {
    if (m == 0) throw DataError("empty support");
    if (product > product_cap / m) throw StageError("candidate-space cap exceeded");
    product *= m;
  }
  if (product > product_cap) throw StageError("candidate-space cap exceeded");

  size_t d = sizes.size();
  std::vector<uint64_t> stride(d);
  uint64_t s = 1;
  for (size_t i = d; i-- > 0;) {
    stride[i] = s;
    s *= sizes[i];
  }

  std::vector<bool> alive(product, true);
  std::vector<std::vector<int>> distinct = rows;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<std::vector<int>> allowed(d);
  for (const auto& x : distinct) {
    bool empty = false;
    for (size_t i = 0; i < d; ++i) {
      allowed[i].clear();
      for (int v = 0; v < static_cast<int>(sizes[i]); ++v)
        if (v != x[i]) allowed[i].push_back(v);
      if (allowed[i].empty()) empty = true;
    }
    if (empty) continue;
    auto clear = [&](auto&& self, size_t i, uint64_t base) -> void {
      if (i == d) {
        alive[base] = false;
        return;
      }
      for (int v : allowed[i]) self(self, i + 1, base + static_cast<uint64_t>(v) * stride[i]);
    };
    clear(clear, 0, 0);
  }
  return alive;
}

struct ValiantResult {
  Discretizer disc;
  std::vector<std::vector<double>> supports;  // binned: bin codes; else observed values
  std::vector<std::vector<int>> survivors;    // support-index vectors, one per clause
  GroundTheory theory;
  uint64_t product = 0;
  uint64_t tautologies = 0;
  size_t distinct_rows = 0;
};

// Does the discretization of a raw row satisfy a surviving clause (given as
// support values)? Binned features compare codes; pass-through features
// compare values under the shared tolerance.
inline bool valiant_clause_satisfied(const Discretizer& disc,
                                     const std::vector<double>& support_values, const Row& row) {
  for (size_t f = 0; f < support_values.size(); ++f) {
    if (disc.feats[f].binned) {
      if (disc.feats[f].code(row[f]) == static_cast<int>(support_values[f])) return true;
    } else if (std::abs(row[f] - support_values[f]) <= kValueTol) {
      return true;
    }
  }
  return false;
}

inline ValiantResult mine_valiant(const Schema& schema, const std::vector<Row>& rows,
                                  const ValiantConfig& cfg) {
  ValiantResult res;
  res.disc = Discretizer::fit(schema, rows, cfg);

  size_t d = schema.size();
  res.supports.resize(d);
  for (size_t f = 0; f < d; ++f) {
    if (res.disc.feats[f].binned) {
      for (int b = 0; b < res.disc.feats[f].bins(); ++b)
        res.supports[f].push_back(static_cast<double>(b));
    } else {
      std::set<double> seen;
      for (const auto& r : rows) seen.insert(r[f]);
      res.supports[f].assign(seen.begin(), seen.end());
    }
  }

  std::vector<size_t> sizes(d);
  for (size_t f = 0; f < d; ++f) sizes[f] = res.supports[f].size();

  std::vector<std::vector<int>> coded;
  coded.reserve(rows.size());
  for (const auto& r : rows) {
    std::vector<int> x(d);
    for (size_t f = 0; f < d; ++f) {
      if (res.disc.feats[f].binned) {
        x[f] = res.disc.feats[f].code(r[f]);
      } else {
        const auto& sup = res.supports[f];
        auto it = std::lower_bound(sup.begin(), sup.end(), r[f] - kValueTol);
        x[f] = static_cast<int>(it - sup.begin());
      }
    }
    coded.push_back(std::move(x));
  }
  {
    auto tmp = coded;
    std::sort(tmp.begin(), tmp.end());
    tmp.erase(std::unique(tmp.begin(), tmp.end()), tmp.end());
    res.distinct_rows = tmp.size();
  }

  auto alive = filter_gamma(sizes, coded, cfg.product_cap);
  res.product = alive.size();

  res.theory.schema_hash = schema.hash();
  std::vector<int> cell(d);
  for (uint64_t c = 0; c < alive.size(); ++c) {
    if (!alive[c]) continue;
    uint64_t rest = c;
    for (size_t f = d; f-- > 0;) {
      cell[f] = static_cast<int>(rest % sizes[f]);
      rest /= sizes[f];
    }
    res.survivors.push_back(cell);

    Clause clause;
    bool tautology = false;
    for (size_t f = 0; f < d && !tautology; ++f) {
      const auto& fs = schema.feature(f);
      double sv = res.supports[f][static_cast<size_t>(cell[f])];
      if (res.disc.feats[f].binned) {
        const auto& fd = res.disc.feats[f];
        int b = static_cast<int>(sv);
        double inf = std::numeric_limits<double>::infinity();
        double lo = b == 0 ? -inf : fd.edges[static_cast<size_t>(b - 1)];
        double hi = b == fd.bins() - 1 ? inf : fd.edges[static_cast<size_t>(b)];
        if (lo <= fs.lo - kValueTol && hi >= fs.hi)  // covers the whole domain
          tautology = true;
        else
          clause.lits.push_back(Literal::interval(static_cast<int>(f), lo, hi, true, false));
      } else if (fs.ordered()) {
        if (std::abs(fs.hi - fs.lo) <= kValueTol)
          tautology = true;
        else
          clause.lits.push_back(Literal::cmp(static_cast<int>(f), CmpOp::kEq, sv));
      } else {
        if (fs.arity() == 1)
          tautology = true;
        else
          clause.lits.push_back(Literal::cmp(static_cast<int>(f), CmpOp::kEq, sv));
      }
    }
    // A clause with an always-true literal carries no information; the
    // surviving support vector is kept, only the grounded form is dropped.
    if (tautology) {
      res.tautologies += 1;
      continue;
    }
    res.theory.clauses.push_back(std::move(clause));
  }
  return res;
}

}  // namespace tabfa
