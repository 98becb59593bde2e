#include <gtest/gtest.h>

#include <cstdio>
#include <random>

#include "tabfa/valiant.hpp"

using namespace tabfa;

namespace {

// Definitional filter: a clause survives iff every row shares at least one
// coordinate with it. Enumerates cells in the same row-major order as the
// miner (last feature fastest).
std::vector<std::vector<int>> brute_filter(const std::vector<size_t>& sizes,
                                           const std::vector<std::vector<int>>& rows) {
  std::vector<std::vector<int>> out;
  std::vector<int> cell(sizes.size(), 0);
  while (true) {
    bool all_ok = true;
    for (const auto& r : rows) {
      bool shares = false;
      for (size_t f = 0; f < sizes.size(); ++f)
        if (r[f] == cell[f]) {
          shares = true;
          break;
        }
      if (!shares) {
        all_ok = false;
        break;
      }
    }
    if (all_ok) out.push_back(cell);

    size_t f = sizes.size();
    bool carried = true;
    while (f-- > 0) {
      if (++cell[f] < static_cast<int>(sizes[f])) {
        carried = false;
        break;
      }
      cell[f] = 0;
    }
    if (carried) return out;
  }
}

std::vector<int> code_row(const ValiantResult& res, const Row& row) {
  std::vector<int> x(row.size());
  for (size_t f = 0; f < row.size(); ++f) {
    if (res.disc.feats[f].binned) {
      x[f] = res.disc.feats[f].code(row[f]);
    } else {
      const auto& sup = res.supports[f];
      auto it = std::lower_bound(sup.begin(), sup.end(), row[f] - kValueTol);
      x[f] = static_cast<int>(it - sup.begin());
    }
  }
  return x;
}

std::vector<double> support_values(const ValiantResult& res, const std::vector<int>& cell) {
  std::vector<double> v(cell.size());
  for (size_t f = 0; f < cell.size(); ++f)
    v[f] = res.supports[f][static_cast<size_t>(cell[f])];
  return v;
}

}  // namespace

TEST(Kmeans1d, SplitsSeparatedClusters) {
  std::vector<double> vals{0.0, 0.2, 0.1, 10.0, 10.3, 9.9, 10.1};
  auto c = kmeans_1d(vals, 2, nullptr, "x");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_NEAR(c[0], 0.1, 1e-9);
  EXPECT_NEAR(c[1], 10.075, 1e-9);

  // Exactly k distinct values: singleton bins.
  auto s = kmeans_1d({3.0, 1.0, 3.0, 2.0, 1.0}, 3, nullptr, "x");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 2.0);
  EXPECT_EQ(s[2], 3.0);

  // Fewer distinct values than bins: reduced with a warning.
  std::vector<std::string> warnings;
  auto r = kmeans_1d({5.0, 5.0, 7.0}, 4, &warnings, "y");
  EXPECT_EQ(r.size(), 2u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("y"), std::string::npos);

  // Determinism.
  auto c2 = kmeans_1d(vals, 2, nullptr, "x");
  EXPECT_EQ(c, c2);
}

TEST(Discretizer, BinCodesMatchNearestCentroid) {
  Schema s({{"v", FeatureKind::kContinuous, -100.0, 100.0, {}},
            {"o", FeatureKind::kOrdinal, 0.0, 9.0, {}}},
           "label", {"a", "b"});
  std::vector<Row> rows{{0.0, 1}, {0.0, 2}, {0.0, 3}, {10.0, 1}, {10.0, 2}, {10.0, 3}};
  ValiantConfig cfg;
  cfg.default_k_bin = 2;
  auto d = Discretizer::fit(s, rows, cfg);
  ASSERT_TRUE(d.feats[0].binned);
  EXPECT_FALSE(d.feats[1].binned);  // ordinal passes through by default
  ASSERT_EQ(d.feats[0].edges.size(), 1u);
  EXPECT_EQ(d.feats[0].edges[0], 5.0);
  EXPECT_EQ(d.feats[0].code(4.9), 0);
  EXPECT_EQ(d.feats[0].code(5.0), 0);  // boundary goes to the lower bin
  EXPECT_EQ(d.feats[0].code(5.1), 1);
  EXPECT_EQ(d.feats[0].code(-50.0), 0);
  EXPECT_EQ(d.feats[0].code(99.0), 1);

  // Ordinal binning via per-feature override.
  ValiantConfig cfg2;
  cfg2.default_k_bin = 2;
  cfg2.k_bin["o"] = 2;
  auto d2 = Discretizer::fit(s, rows, cfg2);
  EXPECT_TRUE(d2.feats[1].binned);

  ValiantConfig bad;
  bad.k = 2;
  EXPECT_THROW(bad.validate(s), ConfigError);
  try {
    bad.validate(s);
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("intractable parameterization"), std::string::npos);
  }
  ValiantConfig bad2;
  bad2.k_bin["nope"] = 2;
  EXPECT_THROW(bad2.validate(s), ConfigError);
  ValiantConfig bad3;
  bad3.k_bin["o"] = 1;
  EXPECT_THROW(bad3.validate(s), ConfigError);
}

TEST(FilterGamma, MatchesSpecariesExamples) {
  // Two binary supports, rows (0,0) and (1,1): exactly the mixed vectors
  // survive.
  std::vector<size_t> sizes{2, 2};
  std::vector<std::vector<int>> rows{{0, 0}, {1, 1}};
  auto alive = filter_gamma(sizes, rows, 1000);
  ASSERT_EQ(alive.size(), 4u);
  EXPECT_FALSE(alive[0]);  // (0,0) fails row (1,1)
  EXPECT_TRUE(alive[1]);   // (0,1)
  EXPECT_TRUE(alive[2]);   // (1,0)
  EXPECT_FALSE(alive[3]);  // (1,1) fails row (0,0)

  // A single training row keeps every clause sharing a coordinate with it.
  auto single = filter_gamma(sizes, {{0, 1}}, 1000);
  EXPECT_TRUE(single[0]);   // shares first coordinate
  EXPECT_TRUE(single[1]);   // identical
  EXPECT_FALSE(single[2]);  // (1,0) differs everywhere
  EXPECT_TRUE(single[3]);   // shares second coordinate

  // Empty training set: all of the space survives.
  auto vac = filter_gamma(sizes, {}, 1000);
  for (bool b : vac) EXPECT_TRUE(b);

  EXPECT_THROW(filter_gamma({100, 100}, {}, 9999), StageError);
}

TEST(Valiant, MatchesDefinitionalFilterOnRandomInstances) {
  auto rng = make_rng(20260502);
  std::uniform_int_distribution<int> nf(2, 4);
  std::uniform_int_distribution<int> kind(0, 2);
  std::uniform_int_distribution<size_t> nrows(3, 40);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<FeatureSpec> feats;
    int d = nf(rng);
    for (int f = 0; f < d; ++f) {
      std::string name = "f" + std::to_string(f);
      switch (kind(rng)) {
        case 0:
          feats.push_back({name, FeatureKind::kOrdinal, 0.0, 3.0, {}});
          break;
        case 1:
          feats.push_back({name, FeatureKind::kContinuous, 0.0, 100.0, {}});
          break;
        default:
          feats.push_back({name, FeatureKind::kCategorical, 0.0, 0.0, {"c0", "c1", "c2"}});
      }
    }
    Schema schema(feats, "label", {"x", "y"});
    std::vector<Row> rows;
    size_t n = nrows(rng);
    for (size_t r = 0; r < n; ++r) {
      Row row;
      for (const auto& fs : schema.features()) {
        if (fs.kind == FeatureKind::kOrdinal)
          row.push_back(static_cast<double>(rng() % 4));
        else if (fs.kind == FeatureKind::kContinuous)
          row.push_back(static_cast<double>(rng() % 10) * 10.0);
        else
          row.push_back(static_cast<double>(rng() % 3));
      }
      rows.push_back(std::move(row));
    }

    ValiantConfig cfg;
    cfg.default_k_bin = 3;
    cfg.product_cap = 10000;
    auto res = mine_valiant(schema, rows, cfg);

    std::vector<size_t> sizes(res.supports.size());
    for (size_t f = 0; f < sizes.size(); ++f) sizes[f] = res.supports[f].size();
    std::vector<std::vector<int>> coded;
    for (const auto& r : rows) coded.push_back(code_row(res, r));
    auto expect = brute_filter(sizes, coded);
    ASSERT_EQ(res.survivors.size(), expect.size()) << "instance " << inst;
    for (size_t k = 0; k < expect.size(); ++k)
      EXPECT_EQ(res.survivors[k], expect[k]) << "instance " << inst << " clause " << k;

    // Mining soundness: every training row satisfies every mined clause.
    for (const auto& cell : res.survivors) {
      auto sv = support_values(res, cell);
      for (const auto& r : rows) EXPECT_TRUE(valiant_clause_satisfied(res.disc, sv, r));
    }
    for (const auto& r : rows) EXPECT_TRUE(res.theory.clauses_satisfied(r));
  }
}

TEST(Valiant, RawComplianceEqualsDiscretizedSatisfaction) {
  Schema schema({{"v", FeatureKind::kContinuous, 0.0, 100.0, {}},
                 {"o", FeatureKind::kOrdinal, 0.0, 5.0, {}},
                 {"c", FeatureKind::kCategorical, 0.0, 0.0, {"a", "b", "c"}}},
                "label", {"x", "y"});
  auto rng = make_rng(31);
  std::vector<Row> rows;
  for (int i = 0; i < 60; ++i)
    rows.push_back({static_cast<double>(rng() % 101), static_cast<double>(rng() % 6), 0.0});
  ValiantConfig cfg;
  cfg.default_k_bin = 4;
  auto res = mine_valiant(schema, rows, cfg);
  ASSERT_GT(res.survivors.size(), 0u);

  std::uniform_real_distribution<double> cont(0.0, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Row row{cont(rng), static_cast<double>(rng() % 6), static_cast<double>(rng() % 3)};
    bool grounded = res.theory.clauses_satisfied(row);
    bool discretized = true;
    for (const auto& cell : res.survivors)
      if (!valiant_clause_satisfied(res.disc, support_values(res, cell), row)) {
        discretized = false;
        break;
      }
    EXPECT_EQ(grounded, discretized) << "trial " << trial;
  }
}

TEST(Valiant, GroundsBinsAsExactIntervals) {
  Schema schema({{"v", FeatureKind::kContinuous, -1000.0, 1000.0, {}},
                 {"o", FeatureKind::kOrdinal, 0.0, 9.0, {}}},
                "label", {"x", "y"});
  std::vector<Row> rows{{0.0, 1}, {0.1, 1}, {10.0, 2}, {10.1, 2}};
  ValiantConfig cfg;
  cfg.default_k_bin = 2;
  auto res = mine_valiant(schema, rows, cfg);
  ASSERT_GT(res.theory.clauses.size(), 0u);

  bool saw_lower = false, saw_upper = false;
  for (const auto& cl : res.theory.clauses)
    for (const auto& lit : cl.lits) {
      if (lit.kind != Literal::Kind::kInterval) continue;
      if (std::isinf(lit.lo) && lit.lo < 0) {
        saw_lower = true;
        EXPECT_TRUE(lit.holds({lit.hi, 0}));            // closed upper edge
        EXPECT_FALSE(lit.holds({lit.hi + 1e-9, 0}));    // exact, no tolerance
        EXPECT_TRUE(lit.holds({-999.0, 0}));            // unbounded below
      }
      if (std::isinf(lit.hi)) {
        saw_upper = true;
        EXPECT_FALSE(lit.holds({lit.lo, 0}));           // open lower edge
        EXPECT_TRUE(lit.holds({lit.lo + 1e-9, 0}));
        EXPECT_TRUE(lit.holds({999.0, 0}));
      }
    }
  EXPECT_TRUE(saw_lower);
  EXPECT_TRUE(saw_upper);

  // Unbounded interval ends survive the theory file round trip.
  std::string path = "/tmp/tabfa_valiant_theory.json";
  res.theory.save(path);
  auto loaded = GroundTheory::load(path);
  EXPECT_EQ(loaded.to_json().dump(), res.theory.to_json().dump());
  std::remove(path.c_str());

  // Determinism.
  auto res2 = mine_valiant(schema, rows, cfg);
  EXPECT_EQ(res.theory.to_json().dump(), res2.theory.to_json().dump());
}

TEST(Valiant, SingleBinFeatureMakesTautologies) {
  Schema schema({{"v", FeatureKind::kContinuous, 0.0, 10.0, {}},
                 {"o", FeatureKind::kOrdinal, 0.0, 5.0, {}}},
                "label", {"x", "y"});
  // One distinct continuous value: the binned literal covers everything.
  std::vector<Row> rows{{5.0, 1}, {5.0, 2}, {5.0, 3}};
  ValiantConfig cfg;
  auto res = mine_valiant(schema, rows, cfg);
  EXPECT_FALSE(res.disc.warnings.empty());
  EXPECT_GT(res.tautologies, 0u);
  EXPECT_EQ(res.survivors.size(), res.theory.clauses.size() + res.tautologies);
  for (const auto& cl : res.theory.clauses)
    for (const auto& lit : cl.lits) EXPECT_NE(lit.feature, 0);
}
