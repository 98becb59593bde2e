#pragma once

#include <algorithm>
#include <string>

#include "tabfa/dataset.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

// Synthetic workforce table with planted integrity rules, for end-to-end
// checks that cannot ship real data. Every generated row satisfies the
// golden constraints below by construction.
inline Schema census_schema() {
  return Schema({{"income", FeatureKind::kContinuous, 0.0, 100000.0, {}},
                 {"bonus", FeatureKind::kContinuous, 0.0, 50000.0, {}},
                 {"age", FeatureKind::kOrdinal, 18.0, 90.0, {}},
                 {"seniority", FeatureKind::kOrdinal, 0.0, 50.0, {}},
                 {"dept", FeatureKind::kCategorical, 0.0, 0.0, {"eng", "sales", "hr"}}},
                "label", {"stay", "leave"});
}

inline const char* census_goldens_text() {
  return "bonus <= income\n"
         "seniority + 18 <= age\n"
         "dept = 'eng' -> income >= 45000\n";
}

inline Dataset make_census(size_t n, uint64_t seed) {
  if (n == 0) throw ConfigError("make_census: need at least one row");
  Dataset data;
  data.schema = census_schema();
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> age_d(18, 90), dept_d(0, 2);

  for (size_t i = 0; i < n; ++i) {
    int dept = dept_d(rng);
    int age = age_d(rng);
    std::uniform_int_distribution<int> sen_d(0, std::min(age - 18, 50));
    int seniority = sen_d(rng);
    double income = dept == 0 ? 45000.0 + 55000.0 * unit(rng) : 5000.0 + 95000.0 * unit(rng);
    double bonus = 0.5 * income * unit(rng);

    double score = 0.6 * income / 100000.0 + 0.25 * (age - 18) / 72.0 + (dept == 0 ? 0.15 : 0.0);
    data.rows.push_back({income, bonus, static_cast<double>(age), static_cast<double>(seniority),
                         static_cast<double>(dept)});
    data.labels.push_back(score > 0.5 ? 1 : 0);
  }
  return data;
}

}  // namespace tabfa
