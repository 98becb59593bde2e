#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "tabfa/common.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

// max_i |delta_i| / R_i over ordered features. Categorical features do not
// participate. A nonzero delta on a zero-range feature has no finite
// standardized size and is rejected.
inline double standardized_linf(const Schema& schema, const std::vector<double>& range,
                                const Row& original, const Row& perturbed) {
  if (original.size() != schema.size() || perturbed.size() != schema.size() ||
      range.size() != schema.size())
    throw DataError("standardized_linf: size mismatch with schema");
  double worst = 0.0;
  for (size_t f = 0; f < schema.size(); ++f) {
    if (!schema.feature(f).ordered()) continue;
    double d = std::abs(perturbed[f] - original[f]);
    if (range[f] <= 0.0) {
      if (d > kValueTol)
        throw DataError("standardized_linf: feature '" + schema.feature(f).name +
                        "' has zero range but nonzero delta");
      continue;
    }
    worst = std::max(worst, d / range[f]);
  }
  return worst;
}

// Number of raw features whose values differ. A categorical feature counts as
// one regardless of its one-hot width; ordered features compare with the
// shared equality tolerance.
inline int l0_cost(const Schema& schema, const Row& a, const Row& b) {
  if (a.size() != schema.size() || b.size() != schema.size())
    throw DataError("l0_cost: size mismatch with schema");
  int count = 0;
  for (size_t f = 0; f < schema.size(); ++f) {
    if (schema.feature(f).kind == FeatureKind::kCategorical) {
      if (std::llround(a[f]) != std::llround(b[f])) ++count;
    } else if (std::abs(a[f] - b[f]) > kValueTol) {
      ++count;
    }
  }
  return count;
}

}  // namespace tabfa
