#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tabfa/common.hpp"

namespace tabfa {

enum class FeatureKind { kCategorical, kOrdinal, kContinuous };

inline const char* kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::kCategorical: return "categorical";
    case FeatureKind::kOrdinal: return "ordinal";
    case FeatureKind::kContinuous: return "continuous";
  }
  return "?";
}

inline FeatureKind kind_from_name(const std::string& s) {
  if (s == "categorical") return FeatureKind::kCategorical;
  if (s == "ordinal") return FeatureKind::kOrdinal;
  if (s == "continuous") return FeatureKind::kContinuous;
  throw ConfigError("unknown feature kind '" + s + "'");
}

// One typed feature. Ordered kinds carry a [lo, hi] domain (integer bounds for
// ordinals); categorical features carry their category list.
struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::string> categories;

  bool ordered() const { return kind != FeatureKind::kCategorical; }
  size_t arity() const { return categories.size(); }
};

// A raw row: one double per feature, categorical values stored as category
// indices. Encoded samples expand categorical features to one-hot blocks.
using Row = std::vector<double>;

class Schema {
 public:
  Schema() = default;

  Schema(std::vector<FeatureSpec> features, std::string label_name,
         std::vector<std::string> classes)
      : features_(std::move(features)),
        label_name_(std::move(label_name)),
        classes_(std::move(classes)) {
    validate();
    build_layout();
    for (size_t i = 0; i < features_.size(); ++i) name_index_[features_[i].name] = i;
    hash_ = fnv1a64(canonical_text());
  }

  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec& feature(size_t i) const { return features_.at(i); }
  size_t size() const { return features_.size(); }

  int feature_index(const std::string& name) const {
    auto it = name_index_.find(name);
    return it == name_index_.end() ? -1 : static_cast<int>(it->second);
  }

  const std::string& label_name() const { return label_name_; }
  const std::vector<std::string>& classes() const { return classes_; }
  size_t n_classes() const { return classes_.size(); }

  int class_index(const std::string& value) const {
    for (size_t i = 0; i < classes_.size(); ++i)
      if (classes_[i] == value) return static_cast<int>(i);
    return -1;
  }

  int category_index(size_t f, const std::string& value) const {
    const auto& cats = features_.at(f).categories;
    for (size_t i = 0; i < cats.size(); ++i)
      if (cats[i] == value) return static_cast<int>(i);
    return -1;
  }

  // Encoded layout: features appear in schema order; ordered features occupy
  // one coordinate, categorical features a contiguous one-hot block.
  size_t encoded_dim() const { return encoded_dim_; }
  size_t offset(size_t f) const { return offsets_.at(f); }
  size_t width(size_t f) const {
    const auto& fs = features_.at(f);
    return fs.ordered() ? 1 : fs.arity();
  }
  size_t feature_of(size_t coord) const { return coord_feature_.at(coord); }

  uint64_t hash() const { return hash_; }
  std::string hash_hex() const { return hex64(hash()); }

  nlohmann::json to_json() const {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features_) {
      nlohmann::json j{{"name", f.name}, {"kind", kind_name(f.kind)}};
      if (f.ordered()) {
        j["lo"] = f.lo;
        j["hi"] = f.hi;
      } else {
        j["categories"] = f.categories;
      }
      feats.push_back(std::move(j));
    }
    return nlohmann::json{{"features", std::move(feats)},
                          {"label", {{"name", label_name_}, {"classes", classes_}}}};
  }

  static Schema from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("features") || !j.contains("label"))
      throw ConfigError("schema file must contain 'features' and 'label'");
    std::vector<FeatureSpec> feats;
    for (const auto& jf : j.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      f.kind = kind_from_name(jf.at("kind").get<std::string>());
      if (f.ordered()) {
        if (!jf.contains("lo") || !jf.contains("hi"))
          throw ConfigError("feature '" + f.name + "': ordered kinds need lo and hi");
        f.lo = jf.at("lo").get<double>();
        f.hi = jf.at("hi").get<double>();
      } else {
        if (!jf.contains("categories"))
          throw ConfigError("feature '" + f.name + "': categorical kind needs categories");
        f.categories = jf.at("categories").get<std::vector<std::string>>();
      }
      feats.push_back(std::move(f));
    }
    const auto& jl = j.at("label");
    return Schema(std::move(feats), jl.at("name").get<std::string>(),
                  jl.at("classes").get<std::vector<std::string>>());
  }

  static Schema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema file '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("schema file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write schema file '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

 private:
  void validate() const {
    if (features_.empty()) throw ConfigError("schema has no features");
    if (classes_.size() < 2) throw ConfigError("schema needs at least 2 classes");
    std::unordered_map<std::string, int> seen;
    for (const auto& f : features_) {
      if (f.name.empty()) throw ConfigError("feature with empty name");
      if (++seen[f.name] > 1) throw ConfigError("duplicate feature name '" + f.name + "'");
      if (f.ordered()) {
        if (!std::isfinite(f.lo) || !std::isfinite(f.hi) || f.lo > f.hi)
          throw ConfigError("feature '" + f.name + "': invalid domain [lo, hi]");
        if (f.kind == FeatureKind::kOrdinal &&
            (f.lo != std::floor(f.lo) || f.hi != std::floor(f.hi)))
          throw ConfigError("feature '" + f.name + "': ordinal bounds must be integers");
        if (!f.categories.empty())
          throw ConfigError("feature '" + f.name + "': ordered kinds take no categories");
      } else {
        if (f.categories.empty())
          throw ConfigError("feature '" + f.name + "': empty category list");
        std::unordered_map<std::string, int> cseen;
        for (const auto& c : f.categories)
          if (++cseen[c] > 1)
            throw ConfigError("feature '" + f.name + "': duplicate category '" + c + "'");
      }
    }
    if (seen.count(label_name_)) throw ConfigError("label name collides with a feature name");
    std::unordered_map<std::string, int> lseen;
    for (const auto& c : classes_)
      if (++lseen[c] > 1) throw ConfigError("duplicate class '" + c + "'");
  }

  void build_layout() {
    offsets_.clear();
    coord_feature_.clear();
    size_t off = 0;
    for (size_t f = 0; f < features_.size(); ++f) {
      offsets_.push_back(off);
      size_t w = features_[f].ordered() ? 1 : features_[f].arity();
      for (size_t k = 0; k < w; ++k) coord_feature_.push_back(f);
      off += w;
    }
    encoded_dim_ = off;
  }

  std::string canonical_text() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& f : features_) {
      os << f.name << '\x1f' << kind_name(f.kind) << '\x1f';
      if (f.ordered()) {
        os << f.lo << '\x1f' << f.hi;
      } else {
        for (const auto& c : f.categories) os << c << '\x1e';
      }
      os << '\x1d';
    }
    os << label_name_ << '\x1f';
    for (const auto& c : classes_) os << c << '\x1e';
    return os.str();
  }

  std::vector<FeatureSpec> features_;
  std::string label_name_;
  std::vector<std::string> classes_;
  std::unordered_map<std::string, size_t> name_index_;
  std::vector<size_t> offsets_;
  std::vector<size_t> coord_feature_;
  size_t encoded_dim_ = 0;
  uint64_t hash_ = 0;
};

}  // namespace tabfa
