#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tabfa/common.hpp"
#include "tabfa/dc.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

struct DcMinerConfig {
  int max_predicates = 4;
  double violation_cap = 0.01;
  size_t row_sample_cap = 3000;
  size_t pair_sample_cap = 4500000;
  uint64_t seed = 0;

  void validate() const {
    if (max_predicates < 1) throw ConfigError("miner: max_predicates must be >= 1");
    if (!(violation_cap >= 0.0 && violation_cap < 1.0))
      throw ConfigError("miner: violation_cap must be in [0, 1)");
    if (row_sample_cap < 2) throw ConfigError("miner: row_sample_cap must be >= 2");
    if (pair_sample_cap < 1) throw ConfigError("miner: pair_sample_cap must be >= 1");
  }
};

// Satisfaction region of an op under the value trichotomy: bit 1 = a < b,
// bit 2 = a == b, bit 4 = a > b. Exact because the comparison ops are
// mutually coherent.
inline int op_region(CmpOp op) {
  switch (op) {
    case CmpOp::kLt: return 1;
    case CmpOp::kEq: return 2;
    case CmpOp::kGt: return 4;
    case CmpOp::kLe: return 3;
    case CmpOp::kGe: return 6;
    case CmpOp::kNe: return 5;
  }
  throw ConfigError("bad comparison op");
}

// Satisfaction evidence for the predicate space over sampled row pairs.
// Every directed pair contributes one mask (bit q set iff psi[q] holds);
// masks are deduplicated with multiplicities. Per mask we keep the distinct
// main rows (for row-level violation queries) and (other row, count)
// postings (for witness compliance scoring).
struct Evidence {
  std::vector<Predicate> psi;
  std::vector<size_t> sample_index;  // sampled row -> index into the source rows
  std::vector<Mask128> masks;
  std::vector<uint64_t> counts;
  uint64_t total_pairs = 0;  // directed

  std::vector<size_t> mains_offsets;
  std::vector<uint32_t> mains_rows;
  std::vector<size_t> others_offsets;
  std::vector<uint32_t> others_rows;
  std::vector<uint32_t> others_counts;
  std::vector<uint64_t> other_totals;  // per sampled row: directed pairs where it is the other

  size_t n_rows() const { return sample_index.size(); }

  // Weighted violation count of a predicate set given as a mask.
  uint64_t violation_count(const Mask128& p) const {
    uint64_t c = 0;
    for (size_t g = 0; g < masks.size(); ++g)
      if (masks[g].contains(p)) c += counts[g];
    return c;
  }

  // True iff the violation count exceeds cap * total. Aborts the scan as
  // soon as the threshold is crossed.
  bool exceeds_cap(const Mask128& p, double cap) const {
    double limit = cap * static_cast<double>(total_pairs);
    uint64_t c = 0;
    for (size_t g = 0; g < masks.size(); ++g) {
      if (masks[g].contains(p)) {
        c += counts[g];
        if (static_cast<double>(c) > limit) return true;
      }
    }
    return false;
  }

  Mask128 mask_of(const DenialConstraint& dc) const {
    Mask128 m;
    for (const auto& p : dc.preds) {
      bool found = false;
      for (size_t q = 0; q < psi.size(); ++q)
        if (psi[q] == p) {
          m.set(static_cast<int>(q));
          found = true;
          break;
        }
      if (!found) throw ConfigError("predicate not in the evidence predicate space");
    }
    return m;
  }

  static Evidence build(const Schema& schema, const std::vector<Row>& rows,
                        const DcMinerConfig& cfg) {
    cfg.validate();
    if (rows.size() < 2) throw DataError("evidence needs at least two rows");

    Evidence ev;
    ev.psi = predicate_space(schema);

    // Row sample.
    size_t n_all = rows.size();
    if (n_all <= cfg.row_sample_cap) {
      ev.sample_index.resize(n_all);
      for (size_t i = 0; i < n_all; ++i) ev.sample_index[i] = i;
    } else {
      std::vector<size_t> idx(n_all);
      for (size_t i = 0; i < n_all; ++i) idx[i] = i;
      auto rng = make_rng(cfg.seed, /*stream=*/0xdc01);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(cfg.row_sample_cap);
      std::sort(idx.begin(), idx.end());
      ev.sample_index = std::move(idx);
    }
    size_t n = ev.sample_index.size();

    // Unordered pair sample; each selected pair contributes both directions.
    std::vector<std::pair<uint32_t, uint32_t>> pairs;
    uint64_t all_pairs = static_cast<uint64_t>(n) * (n - 1) / 2;
    if (all_pairs <= cfg.pair_sample_cap) {
      pairs.reserve(all_pairs);
      for (uint32_t i = 0; i < n; ++i)
        for (uint32_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    } else {
      auto rng = make_rng(cfg.seed, /*stream=*/0xdc02);
      std::uniform_int_distribution<uint64_t> pick(0, n - 1);
      std::unordered_set<uint64_t> seen;
      seen.reserve(cfg.pair_sample_cap * 2);
      pairs.reserve(cfg.pair_sample_cap);
      while (pairs.size() < cfg.pair_sample_cap) {
        uint32_t i = static_cast<uint32_t>(pick(rng));
        uint32_t j = static_cast<uint32_t>(pick(rng));
        if (i == j) continue;
        if (i > j) std::swap(i, j);
        uint64_t key = (static_cast<uint64_t>(i) << 32) | j;
        if (seen.insert(key).second) pairs.emplace_back(i, j);
      }
      std::sort(pairs.begin(), pairs.end());
    }

    // Per-feature psi layout for fast mask computation.
    struct FeatSlot {
      int base;
      bool ordered;
    };
    std::vector<FeatSlot> slots(schema.size());
    {
      int base = 0;
      for (size_t f = 0; f < schema.size(); ++f) {
        slots[f] = {base, schema.feature(f).ordered()};
        base += schema.feature(f).ordered() ? 6 : 2;
      }
    }
    auto directed_mask = [&](const Row& a, const Row& b) {
      Mask128 m;
      for (size_t f = 0; f < schema.size(); ++f) {
        double va = a[f], vb = b[f];
        int region = std::abs(va - vb) <= kValueTol ? 2 : (va < vb ? 1 : 4);
        int base = slots[f].base;
        if (slots[f].ordered) {
          // psi order per feature: ==, !=, <, >, <=, >=
          if (region & 2) m.set(base);
          if (region & 5) m.set(base + 1);
          if (region & 1) m.set(base + 2);
          if (region & 4) m.set(base + 3);
          if (region & 3) m.set(base + 4);
          if (region & 6) m.set(base + 5);
        } else {
          if (region & 2) m.set(base);
          if (region & 5) m.set(base + 1);
        }
      }
      return m;
    };

    std::unordered_map<Mask128, uint32_t, Mask128Hash> intern;
    std::vector<std::pair<uint32_t, uint32_t>> main_post;   // (mask, main row)
    std::vector<std::pair<uint32_t, uint32_t>> other_post;  // (mask, other row)
    main_post.reserve(pairs.size() * 2);
    other_post.reserve(pairs.size() * 2);
    ev.other_totals.assign(n, 0);

    auto add_directed = [&](uint32_t mi, uint32_t oi, const Mask128& m) {
      auto [it, fresh] = intern.emplace(m, static_cast<uint32_t>(ev.masks.size()));
      if (fresh) {
        ev.masks.push_back(m);
        ev.counts.push_back(0);
      }
      ev.counts[it->second] += 1;
      main_post.emplace_back(it->second, mi);
      other_post.emplace_back(it->second, oi);
      ev.other_totals[oi] += 1;
      ev.total_pairs += 1;
    };

    for (auto [i, j] : pairs) {
      const Row& a = rows[ev.sample_index[i]];
      const Row& b = rows[ev.sample_index[j]];
      add_directed(i, j, directed_mask(a, b));
      add_directed(j, i, directed_mask(b, a));
    }

    // Compress postings into CSR form; mains deduplicated, others counted.
    std::sort(main_post.begin(), main_post.end());
    main_post.erase(std::unique(main_post.begin(), main_post.end()), main_post.end());
    std::sort(other_post.begin(), other_post.end());

    size_t n_masks = ev.masks.size();
    ev.mains_offsets.assign(n_masks + 1, 0);
    for (const auto& [g, r] : main_post) ev.mains_offsets[g + 1] += 1;
    for (size_t g = 0; g < n_masks; ++g) ev.mains_offsets[g + 1] += ev.mains_offsets[g];
    ev.mains_rows.resize(main_post.size());
    for (size_t k = 0; k < main_post.size(); ++k) ev.mains_rows[k] = main_post[k].second;

    ev.others_offsets.assign(n_masks + 1, 0);
    for (size_t k = 0; k < other_post.size();) {
      size_t e = k;
      while (e < other_post.size() && other_post[e] == other_post[k]) ++e;
      ev.others_rows.push_back(other_post[k].second);
      ev.others_counts.push_back(static_cast<uint32_t>(e - k));
      ev.others_offsets[other_post[k].first + 1] += 1;
      k = e;
    }
    for (size_t g = 0; g < n_masks; ++g) ev.others_offsets[g + 1] += ev.others_offsets[g];
    return ev;
  }
};

struct DcMinerStats {
  uint64_t pairs_directed = 0;
  uint64_t distinct_masks = 0;
  uint64_t nodes_visited = 0;
  uint64_t recorded = 0;
};

// Enumerate all minimal predicate sets whose violation fraction over the
// evidence is at most the cap, up to max_predicates predicates. A set is
// extended only while it still exceeds the cap, so recorded sets always have
// every proper prefix above the cap; minimality is then settled by checking
// the remaining (|P|-1)-subsets, which suffices because the violation count
// is antitone in the predicate set.
inline std::vector<DenialConstraint> mine_dcs(const Evidence& ev, const DcMinerConfig& cfg,
                                              DcMinerStats* stats = nullptr) {
  cfg.validate();
  const size_t n_psi = ev.psi.size();
  const double limit = cfg.violation_cap * static_cast<double>(ev.total_pairs);

  std::vector<DenialConstraint> out;
  std::vector<int> chosen;
  std::vector<uint8_t> regions(128, 7);  // per feature; psi <= 128 bounds the feature count

  // Reusable per-depth sublists of violating-mask indices.
  std::vector<std::vector<uint32_t>> lists(static_cast<size_t>(cfg.max_predicates) + 1);
  lists[0].resize(ev.masks.size());
  for (uint32_t g = 0; g < ev.masks.size(); ++g) lists[0][g] = g;

  uint64_t nodes = 0;

  auto minimal = [&](const std::vector<int>& set) {
    if (set.size() <= 1) return true;
    for (size_t drop = 0; drop < set.size(); ++drop) {
      Mask128 sub;
      for (size_t k = 0; k < set.size(); ++k)
        if (k != drop) sub.set(set[k]);
      if (!ev.exceeds_cap(sub, cfg.violation_cap)) return false;
    }
    return true;
  };

  auto rec = [&](auto&& self, size_t depth, size_t start) -> void {
    const auto& live = lists[depth];
    for (size_t q = start; q < n_psi; ++q) {
      int f = ev.psi[q].feature;
      uint8_t next_region = regions[f] & static_cast<uint8_t>(op_region(ev.psi[q].op));
      // Empty region: contradictory on this feature, nothing can satisfy it.
      // Unchanged region: the new predicate is implied, so every superset
      // through it is non-minimal.
      if (next_region == 0 || next_region == regions[f]) continue;
      ++nodes;

      auto& child = lists[depth + 1];
      child.clear();
      uint64_t count = 0;
      for (uint32_t g : live)
        if (ev.masks[g].test(static_cast<int>(q))) {
          child.push_back(g);
          count += ev.counts[g];
        }

      if (static_cast<double>(count) <= limit) {
        chosen.push_back(static_cast<int>(q));
        if (minimal(chosen)) {
          DenialConstraint dc;
          for (int c : chosen) dc.preds.push_back(ev.psi[static_cast<size_t>(c)]);
          out.push_back(std::move(dc));
        }
        chosen.pop_back();
      } else if (depth + 1 < static_cast<size_t>(cfg.max_predicates)) {
        uint8_t saved = regions[f];
        regions[f] = next_region;
        chosen.push_back(static_cast<int>(q));
        self(self, depth + 1, q + 1);
        chosen.pop_back();
        regions[f] = saved;
      }
    }
  };
  rec(rec, 0, 0);

  if (stats) {
    stats->pairs_directed = ev.total_pairs;
    stats->distinct_masks = ev.masks.size();
    stats->nodes_visited = nodes;
    stats->recorded = out.size();
  }
  return out;
}

struct RankWeights {
  double succinctness = 1.0;
  double coverage = 1.0;
  double pair_violation = 2.0;
  double sample_violation = 2.0;
};

struct RankConfig {
  size_t candidate_pool = 10000;
  RankWeights weights;
};

struct RankedDc {
  DenialConstraint dc;
  double score = 0.0;
  double succinctness = 0.0;
  double coverage = 0.0;
  double pair_violation = 0.0;
  double sample_violation = 0.0;
};

// Score and order mined constraints. The pool is pre-filtered to the most
// succinct candidates; each is scored by succinctness, evidence coverage,
// pair-level violation and row-level violation.
inline std::vector<RankedDc> rank_dcs(const Evidence& ev, std::vector<DenialConstraint> dcs,
                                      const RankConfig& cfg) {
  if (cfg.candidate_pool < 1) throw ConfigError("rank: candidate_pool must be >= 1");
  std::sort(dcs.begin(), dcs.end());
  if (dcs.size() > cfg.candidate_pool) dcs.resize(cfg.candidate_pool);
  if (dcs.empty()) return {};

  size_t min_len = dcs.front().preds.size();  // canonical sort puts the shortest first

  std::vector<uint32_t> stamp(ev.n_rows(), 0);
  uint32_t gen = 0;

  std::vector<RankedDc> ranked;
  ranked.reserve(dcs.size());
  for (auto& dc : dcs) {
    Mask128 p = ev.mask_of(dc);
    double plen = static_cast<double>(dc.preds.size());

    double cov_sum = 0.0;
    uint64_t viol = 0;
    ++gen;
    size_t rows_hit = 0;
    for (size_t g = 0; g < ev.masks.size(); ++g) {
      cov_sum += static_cast<double>(ev.counts[g]) *
                 static_cast<double>((ev.masks[g] & p).popcount());
      if (ev.masks[g].contains(p)) {
        viol += ev.counts[g];
        if (rows_hit < ev.n_rows()) {
          for (size_t k = ev.mains_offsets[g]; k < ev.mains_offsets[g + 1]; ++k) {
            uint32_t r = ev.mains_rows[k];
            if (stamp[r] != gen) {
              stamp[r] = gen;
              ++rows_hit;
            }
          }
        }
      }
    }

    RankedDc rd;
    rd.succinctness = static_cast<double>(min_len) / plen;
    rd.coverage = cov_sum / (static_cast<double>(ev.total_pairs) * plen);
    rd.pair_violation = static_cast<double>(viol) / static_cast<double>(ev.total_pairs);
    rd.sample_violation = static_cast<double>(rows_hit) / static_cast<double>(ev.n_rows());
    rd.score = cfg.weights.succinctness * rd.succinctness + cfg.weights.coverage * rd.coverage -
               cfg.weights.pair_violation * rd.pair_violation -
               cfg.weights.sample_violation * rd.sample_violation;
    rd.dc = std::move(dc);
    ranked.push_back(std::move(rd));
  }

  // Ties keep canonical order: the pool is already canonically sorted.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedDc& a, const RankedDc& b) { return a.score > b.score; });
  return ranked;
}

struct TheorySelectConfig {
  size_t n_dcs = 5000;
  size_t n_tuples = 1;

  void validate() const {
    if (n_dcs < 1) throw ConfigError("select: n_dcs must be >= 1");
    if (n_tuples < 1) throw ConfigError("select: n_tuples must be >= 1");
  }
};

// Ground the top-ranked constraints against their most compliant witness
// tuples. A witness row's compliance for a constraint is the fraction of
// sampled rows that do not violate the constraint against it.
inline GroundTheory select_theory(const Schema& schema, const Evidence& ev,
                                  const std::vector<Row>& rows,
                                  const std::vector<RankedDc>& ranked,
                                  const TheorySelectConfig& cfg) {
  cfg.validate();
  GroundTheory theory;
  theory.schema_hash = schema.hash();

  size_t take = std::min(cfg.n_dcs, ranked.size());
  std::vector<double> viol_w(ev.n_rows());
  for (size_t d = 0; d < take; ++d) {
    Mask128 p = ev.mask_of(ranked[d].dc);
    std::fill(viol_w.begin(), viol_w.end(), 0.0);
    for (size_t g = 0; g < ev.masks.size(); ++g) {
      if (!ev.masks[g].contains(p)) continue;
      for (size_t k = ev.others_offsets[g]; k < ev.others_offsets[g + 1]; ++k)
        viol_w[ev.others_rows[k]] += static_cast<double>(ev.others_counts[k]);
    }
    std::vector<std::pair<double, size_t>> scored(ev.n_rows());
    for (size_t r = 0; r < ev.n_rows(); ++r) {
      double tot = static_cast<double>(ev.other_totals[r]);
      double compliance = tot > 0 ? 1.0 - viol_w[r] / tot : 1.0;
      scored[r] = {compliance, r};
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first > b.first;
    });
    size_t w = std::min(cfg.n_tuples, scored.size());
    for (size_t k = 0; k < w; ++k)
      theory.clauses.push_back(
          ground_dc(ranked[d].dc, rows[ev.sample_index[scored[k].second]]));
  }
  return theory;
}

// Mined-constraint list file format.
inline void save_dcs(const std::string& path, const Schema& schema,
                     const std::vector<DenialConstraint>& dcs) {
  nlohmann::json jd = nlohmann::json::array();
  for (const auto& dc : dcs) {
    nlohmann::json jp = nlohmann::json::array();
    for (const auto& p : dc.preds)
      jp.push_back(nlohmann::json{{"f", p.feature}, {"op", op_name(p.op)}});
    jd.push_back(std::move(jp));
  }
  nlohmann::json j{{"format", "tabfa-dcs-v1"},
                   {"schema_hash", schema.hash_hex()},
                   {"dcs", std::move(jd)}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write constraints '" + path + "'");
  out << j.dump() << "\n";
}

inline std::vector<DenialConstraint> load_dcs(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open constraints '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("constraints '" + path + "' are not valid JSON: " + e.what());
  }
  if (j.value("format", "") != std::string("tabfa-dcs-v1"))
    throw ConfigError("constraints file: unknown format");
  if (j.at("schema_hash").get<std::string>() != schema.hash_hex())
    throw ConfigError("constraints '" + path + "' were mined for a different schema");
  std::vector<DenialConstraint> dcs;
  for (const auto& jd : j.at("dcs")) {
    DenialConstraint dc;
    for (const auto& jp : jd) {
      int f = jp.at("f").get<int>();
      if (f < 0 || static_cast<size_t>(f) >= schema.size())
        throw ConfigError("constraints file: feature index out of range");
      dc.preds.push_back({f, op_from_name(jp.at("op").get<std::string>())});
    }
    dcs.push_back(std::move(dc));
  }
  return dcs;
}

}  // namespace tabfa
