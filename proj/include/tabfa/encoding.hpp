#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tabfa/common.hpp"
#include "tabfa/dataset.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

// Raw row -> encoded vector: ordered values verbatim, categorical features as
// one-hot blocks. Normalization is the model's concern, not the encoding's.
inline std::vector<double> encode(const Schema& schema, const Row& row) {
  if (auto problem = validate_row(schema, row)) throw DataError("encode: " + *problem);
  std::vector<double> enc(schema.encoded_dim(), 0.0);
  for (size_t f = 0; f < schema.size(); ++f) {
    const auto& fs = schema.feature(f);
    size_t off = schema.offset(f);
    if (fs.ordered()) {
      enc[off] = row[f];
    } else {
      enc[off + static_cast<size_t>(std::llround(row[f]))] = 1.0;
    }
  }
  return enc;
}

// Lists every violated structure constraint of an encoded sample: one-hot
// block well-formedness, ordinal integrality, and domain membership.
inline std::vector<std::string> validate_encoded(const Schema& schema,
                                                 const std::vector<double>& enc) {
  std::vector<std::string> problems;
  if (enc.size() != schema.encoded_dim()) {
    problems.push_back("encoded dimension " + std::to_string(enc.size()) + " != " +
                       std::to_string(schema.encoded_dim()));
    return problems;
  }
  for (size_t f = 0; f < schema.size(); ++f) {
    const auto& fs = schema.feature(f);
    size_t off = schema.offset(f);
    if (fs.kind == FeatureKind::kCategorical) {
      size_t ones = 0;
      bool junk = false;
      for (size_t k = 0; k < fs.arity(); ++k) {
        double v = enc[off + k];
        if (std::abs(v - 1.0) <= kValueTol)
          ++ones;
        else if (std::abs(v) > kValueTol)
          junk = true;
      }
      if (ones != 1 || junk)
        problems.push_back("feature '" + fs.name + "': malformed one-hot block");
    } else {
      double v = enc[off];
      if (!std::isfinite(v)) {
        problems.push_back("feature '" + fs.name + "': non-finite value");
        continue;
      }
      if (v < fs.lo - kValueTol || v > fs.hi + kValueTol)
        problems.push_back("feature '" + fs.name + "': value " + std::to_string(v) +
                           " outside domain");
      if (fs.kind == FeatureKind::kOrdinal && std::abs(v - std::round(v)) > kValueTol)
        problems.push_back("feature '" + fs.name + "': non-integer ordinal value");
    }
  }
  return problems;
}

inline bool structure_valid(const Schema& schema, const std::vector<double>& enc) {
  return validate_encoded(schema, enc).empty();
}

// Inverse of encode. Requires well-formed one-hot blocks and integral
// ordinals; domain membership is the validator's concern.
inline Row decode(const Schema& schema, const std::vector<double>& enc) {
  if (enc.size() != schema.encoded_dim())
    throw DataError("decode: encoded dimension mismatch");
  Row row(schema.size(), 0.0);
  for (size_t f = 0; f < schema.size(); ++f) {
    const auto& fs = schema.feature(f);
    size_t off = schema.offset(f);
    if (fs.kind == FeatureKind::kCategorical) {
      int hot = -1;
      for (size_t k = 0; k < fs.arity(); ++k) {
        double v = enc[off + k];
        if (std::abs(v - 1.0) <= kValueTol) {
          if (hot >= 0) throw DataError("decode: feature '" + fs.name + "': two hot coordinates");
          hot = static_cast<int>(k);
        } else if (std::abs(v) > kValueTol) {
          throw DataError("decode: feature '" + fs.name + "': malformed one-hot block");
        }
      }
      if (hot < 0) throw DataError("decode: feature '" + fs.name + "': no hot coordinate");
      row[f] = hot;
    } else {
      double v = enc[off];
      if (fs.kind == FeatureKind::kOrdinal) {
        if (std::abs(v - std::round(v)) > kValueTol)
          throw DataError("decode: feature '" + fs.name + "': non-integer ordinal value");
        v = std::round(v);
      }
      row[f] = v;
    }
  }
  return row;
}

}  // namespace tabfa
