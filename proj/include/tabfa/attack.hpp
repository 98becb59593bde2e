#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "tabfa/cost.hpp"
#include "tabfa/encoding.hpp"
#include "tabfa/mlp.hpp"
#include "tabfa/schema.hpp"

#include <json.hpp>

namespace tabfa {

enum class AttackMode { kTabPgd, kPlainPgd };

inline const char* attack_mode_name(AttackMode m) {
  return m == AttackMode::kTabPgd ? "tabpgd" : "plain_pgd";
}

inline AttackMode attack_mode_from_name(const std::string& s) {
  if (s == "tabpgd") return AttackMode::kTabPgd;
  if (s == "plain_pgd") return AttackMode::kPlainPgd;
  throw ConfigError("unknown attack mode '" + s + "'");
}

struct AttackConfig {
  double epsilon = 1.0 / 30.0;
  double alpha = 1.0 / 3000.0;
  int iterations = 100;
  uint64_t seed = 0;
  int cw_max_iterations = 30;
  AttackMode mode = AttackMode::kTabPgd;
  std::vector<size_t> frozen;

  void validate(const Schema& schema) const {
    if (!(epsilon > 0.0)) throw ConfigError("attack epsilon must be > 0");
    if (!(alpha > 0.0)) throw ConfigError("attack alpha must be > 0");
    if (iterations < 1) throw ConfigError("attack iterations must be >= 1");
    if (cw_max_iterations < 0) throw ConfigError("cw_max_iterations must be >= 0");
    for (size_t f : frozen)
      if (f >= schema.size()) throw ConfigError("frozen feature index out of range");
  }
};

struct AttackResult {
  bool success = false;
  Row row;  // raw perturbed row; empty when the iterate is not decodable
  std::vector<double> delta;
  size_t iterations_used = 0;
  double linf = 0.0;
  int l0 = 0;
  std::vector<double> g_accum;

  nlohmann::json to_json() const {
    return nlohmann::json{{"success", success},
                          {"row", row},
                          {"delta", delta},
                          {"iterations_used", iterations_used},
                          {"linf", std::isnan(linf) ? nlohmann::json() : nlohmann::json(linf)},
                          {"l0", l0}};
  }

  static AttackResult from_json(const nlohmann::json& j) {
    AttackResult r;
    r.success = j.at("success").get<bool>();
    r.row = j.at("row").get<Row>();
    r.delta = j.at("delta").get<std::vector<double>>();
    r.iterations_used = j.at("iterations_used").get<size_t>();
    r.linf = j.at("linf").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                    : j.at("linf").get<double>();
    r.l0 = j.at("l0").get<int>();
    return r;
  }
};

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline void check_attack_inputs(const MlpModel& model, const Schema& schema,
                                const std::vector<double>& range, const Row& x, int y,
                                const AttackConfig& cfg) {
  cfg.validate(schema);
  if (model.input_dim() != schema.encoded_dim() || model.n_classes() != schema.n_classes())
    throw ConfigError("attack: model shape does not match schema");
  if (model.schema_hash() != schema.hash())
    throw ConfigError("attack: model was trained against a different schema");
  if (range.size() != schema.size()) throw ConfigError("attack: range vector size mismatch");
  if (auto err = validate_row(schema, x)) throw DataError("attack sample: " + *err);
  if (y < 0 || static_cast<size_t>(y) >= schema.n_classes())
    throw DataError("attack: label out of range");
}

inline std::vector<char> frozen_mask(const Schema& schema, const std::vector<size_t>& frozen) {
  std::vector<char> mask(schema.size(), 0);
  for (size_t f : frozen) mask[f] = 1;
  return mask;
}

// Ball bounds for an ordered feature, intersected with the domain. Ordinal
// bounds are rounded inward so every admissible value is an integer.
inline std::pair<double, double> ball_bounds(const FeatureSpec& fs, double x, double epsilon,
                                             double r) {
  double lo = std::max(x - epsilon * r, fs.lo);
  double hi = std::min(x + epsilon * r, fs.hi);
  if (fs.kind == FeatureKind::kOrdinal) {
    lo = std::ceil(lo);
    hi = std::floor(hi);
  }
  return {lo, hi};
}

}  // namespace detail

inline Row random_init(const Schema& schema, const std::vector<double>& range, const Row& x,
                       double epsilon, const std::vector<char>& frozen, std::mt19937_64& rng) {
  Row out = x;
  for (size_t f = 0; f < schema.size(); ++f) {
    const auto& fs = schema.feature(f);
    if (!fs.ordered() || frozen[f] || range[f] <= 0.0) continue;
    auto [lo, hi] = detail::ball_bounds(fs, x[f], epsilon, range[f]);
    if (hi - lo <= 0.0) continue;
    if (fs.kind == FeatureKind::kOrdinal) {
      std::uniform_int_distribution<long long> u(static_cast<long long>(lo),
                                                 static_cast<long long>(hi));
      out[f] = static_cast<double>(u(rng));
    } else {
      std::uniform_real_distribution<double> u(lo, hi);
      out[f] = u(rng);
    }
  }
  return out;
}

inline AttackResult tabpgd(const MlpModel& model, const Schema& schema,
                           const std::vector<double>& range, const Row& x, int y,
                           const AttackConfig& cfg) {
  detail::check_attack_inputs(model, schema, range, x, y, cfg);
  auto frozen = detail::frozen_mask(schema, cfg.frozen);
  auto rng = make_rng(cfg.seed);

  AttackResult res;
  res.g_accum.assign(schema.encoded_dim(), 0.0);
  const auto enc0 = encode(schema, x);
  auto finish = [&](bool ok, size_t iters, const Row& r) {
    res.success = ok;
    res.iterations_used = iters;
    res.row = r;
    auto enc = encode(schema, r);
    res.delta.resize(enc.size());
    for (size_t i = 0; i < enc.size(); ++i) res.delta[i] = enc[i] - enc0[i];
    res.linf = standardized_linf(schema, range, x, r);
    res.l0 = l0_cost(schema, x, r);
    return res;
  };

  Row cur = random_init(schema, range, x, cfg.epsilon, frozen, rng);
  auto cur_enc = encode(schema, cur);
  if (model.predict(cur_enc) != y) return finish(true, 0, cur);

  for (int it = 1; it <= cfg.iterations; ++it) {
    auto g = model.loss_and_input_grad(cur_enc, y).second;
    for (size_t f = 0; f < schema.size(); ++f) {
      const auto& fs = schema.feature(f);
      size_t off = schema.offset(f);
      if (fs.ordered()) {
        if (frozen[f]) continue;
        double v = cur[f] + cfg.alpha * range[f] * detail::sgn(g[off]);
        if (fs.kind == FeatureKind::kOrdinal) v = std::ceil(v);
        v = std::clamp(v, fs.lo, fs.hi);
        auto [blo, bhi] = detail::ball_bounds(fs, x[f], cfg.epsilon, range[f]);
        cur[f] = std::clamp(v, blo, bhi);
      } else {
        for (size_t c = 0; c < fs.arity(); ++c) res.g_accum[off + c] += g[off + c];
        if (frozen[f]) continue;
        size_t best = static_cast<size_t>(std::llround(cur[f]));
        double top = res.g_accum[off + best];
        for (size_t c = 0; c < fs.arity(); ++c)
          if (res.g_accum[off + c] > top) {
            top = res.g_accum[off + c];
            best = c;
          }
        cur[f] = static_cast<double>(best);
      }
    }
    cur_enc = encode(schema, cur);
    if (model.predict(cur_enc) != y) return finish(true, static_cast<size_t>(it), cur);
  }
  return finish(false, static_cast<size_t>(cfg.iterations), cur);
}

// Iteratively freezes the least important feature, p_f = g_f . delta_f / R_f,
// and re-runs tabpgd until it stops succeeding. Categorical features sum the
// product over their one-hot block with unit range.
inline AttackResult tabcw(const MlpModel& model, const Schema& schema,
                          const std::vector<double>& range, const Row& x, int y,
                          const AttackConfig& cfg) {
  detail::check_attack_inputs(model, schema, range, x, y, cfg);
  // The first run shares cfg.seed with a standalone tabpgd call, so a tabcw
  // success never costs more than the plain attack it refines.
  AttackConfig inner = cfg;
  auto latest = tabpgd(model, schema, range, x, y, inner);
  if (!latest.success) return latest;
  AttackResult best = latest;

  auto frozen = detail::frozen_mask(schema, cfg.frozen);
  for (int k = 1; k <= cfg.cw_max_iterations; ++k) {
    auto g = model.loss_and_input_grad(encode(schema, latest.row), y).second;
    double lowest = std::numeric_limits<double>::infinity();
    size_t pick = schema.size();
    for (size_t f = 0; f < schema.size(); ++f) {
      if (frozen[f]) continue;
      const auto& fs = schema.feature(f);
      size_t off = schema.offset(f);
      double p = 0.0;
      if (fs.ordered()) {
        if (range[f] > 0.0) p = g[off] * latest.delta[off] / range[f];
      } else {
        for (size_t c = 0; c < fs.arity(); ++c) p += g[off + c] * latest.delta[off + c];
      }
      if (p < lowest) {
        lowest = p;
        pick = f;
      }
    }
    if (pick == schema.size()) break;
    frozen[pick] = 1;
    inner.frozen.push_back(pick);
    inner.seed = derive_seed(cfg.seed, static_cast<uint64_t>(k));
    auto next = tabpgd(model, schema, range, x, y, inner);
    if (!next.success) break;
    latest = next;
    if (latest.l0 <= best.l0) best = latest;
  }
  return best;
}

// Unstandardized linf PGD on the encoded vector, no structure enforcement.
// Baseline for ablations; iterates may leave the one-hot manifold, in which
// case the result carries no raw row.
inline AttackResult plain_pgd(const MlpModel& model, const Schema& schema,
                              const std::vector<double>& range, const Row& x, int y,
                              const AttackConfig& cfg) {
  detail::check_attack_inputs(model, schema, range, x, y, cfg);
  const auto enc0 = encode(schema, x);
  auto cur = enc0;

  AttackResult res;
  res.g_accum.assign(schema.encoded_dim(), 0.0);
  auto finish = [&](bool ok, size_t iters) {
    res.success = ok;
    res.iterations_used = iters;
    res.delta.resize(cur.size());
    for (size_t i = 0; i < cur.size(); ++i) res.delta[i] = cur[i] - enc0[i];
    if (structure_valid(schema, cur)) res.row = decode(schema, cur);
    res.linf = 0.0;
    res.l0 = 0;
    for (size_t f = 0; f < schema.size(); ++f) {
      size_t off = schema.offset(f), w = schema.width(f);
      bool moved = false;
      for (size_t c = 0; c < w; ++c)
        if (std::abs(res.delta[off + c]) > kValueTol) moved = true;
      if (moved) ++res.l0;
      if (!schema.feature(f).ordered()) continue;
      double d = std::abs(res.delta[off]);
      if (d <= kValueTol) continue;
      if (range[f] <= 0.0)
        res.linf = std::numeric_limits<double>::quiet_NaN();
      else if (!std::isnan(res.linf))
        res.linf = std::max(res.linf, d / range[f]);
    }
    return res;
  };

  if (model.predict(cur) != y) return finish(true, 0);
  for (int it = 1; it <= cfg.iterations; ++it) {
    auto g = model.loss_and_input_grad(cur, y).second;
    for (size_t i = 0; i < cur.size(); ++i) {
      cur[i] += cfg.alpha * detail::sgn(g[i]);
      cur[i] = std::clamp(cur[i], enc0[i] - cfg.epsilon, enc0[i] + cfg.epsilon);
    }
    if (model.predict(cur) != y) return finish(true, static_cast<size_t>(it));
  }
  return finish(false, static_cast<size_t>(cfg.iterations));
}

}  // namespace tabfa
