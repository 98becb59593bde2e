#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tabfa/attack.hpp"
#include "tabfa/cost.hpp"
#include "tabfa/dataset.hpp"
#include "tabfa/dc_miner.hpp"
#include "tabfa/metrics.hpp"
#include "tabfa/mlp.hpp"
#include "tabfa/projector.hpp"
#include "tabfa/valiant.hpp"

#include <json.hpp>

namespace tabfa {

struct Provenance {
  uint64_t config_hash = 0;
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"config_hash", hex64(config_hash)}, {"seed", seed}};
  }

  static Provenance from_json(const nlohmann::json& j) {
    Provenance p;
    p.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    p.seed = j.at("seed").get<uint64_t>();
    return p;
  }

  friend bool operator==(const Provenance& a, const Provenance& b) {
    return a.config_hash == b.config_hash && a.seed == b.seed;
  }
};

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> keys,
                        const char* ctx) {
  if (!j.is_object()) throw ConfigError(std::string("config: '") + ctx + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys)
      if (item.key() == k) known = true;
    if (!known)
      throw ConfigError("config: unknown key '" + std::string(ctx) + item.key() + "'");
  }
}

inline nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string(what) + " not found: '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(what) + " '" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw StageError("cannot write '" + path + "'");
  out << j.dump() << "\n";
}

inline void check_provenance(const nlohmann::json& j, const Provenance& want, const char* what) {
  if (!j.contains("provenance"))
    throw ConfigError(std::string(what) + ": artifact carries no provenance");
  Provenance got;
  try {
    got = Provenance::from_json(j.at("provenance"));
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": malformed provenance");
  }
  if (!(got == want))
    throw ConfigError(std::string(what) + ": provenance mismatch (artifact " +
                      hex64(got.config_hash) + "/s" + std::to_string(got.seed) + ", expected " +
                      hex64(want.config_hash) + "/s" + std::to_string(want.seed) +
                      "); refusing mixed inputs");
}

}  // namespace detail

// Everything one experiment needs. The config hash covers all knobs that
// change results; seeds and the output directory stay outside it so repeated
// runs of one configuration share a hash.
struct PipelineConfig {
  std::string dataset_path;
  std::string schema_path;
  std::string goldens_path;
  std::string out_dir = "runs";
  uint64_t seed = 1;
  std::vector<uint64_t> seeds;
  double test_fraction = 0.13;
  size_t attack_samples = 0;  // 0 = every test row
  std::string miner = "dc";
  std::string attack_mode = "tabpgd";
  std::vector<std::string> frozen;
  TrainConfig train;
  DcMinerConfig dc_miner;
  RankConfig rank;
  TheorySelectConfig select;
  ValiantConfig valiant;
  AttackConfig attack;
  ProjectionConfig projection;

  std::vector<uint64_t> effective_seeds() const {
    return seeds.empty() ? std::vector<uint64_t>{seed} : seeds;
  }

  void validate() const {
    if (dataset_path.empty()) throw ConfigError("config: 'dataset' is required");
    if (schema_path.empty()) throw ConfigError("config: 'schema' is required");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw ConfigError("config: test_fraction must be in (0, 1)");
    if (miner != "dc" && miner != "valiant")
      throw ConfigError("config: miner must be 'dc' or 'valiant'");
    if (attack_mode != "tabpgd" && attack_mode != "tabcw" && attack_mode != "plain_pgd")
      throw ConfigError("config: attack mode must be tabpgd, tabcw, or plain_pgd");
    if (train.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
    dc_miner.validate();
    select.validate();
    projection.validate();
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
      detail::expect_keys(j,
                          {"dataset", "schema", "goldens", "out_dir", "seed", "seeds",
                           "test_fraction", "attack_samples", "miner", "train", "dc_miner",
                           "rank", "select", "valiant", "attack", "projection"},
                          "");
      c.dataset_path = j.at("dataset").get<std::string>();
      c.schema_path = j.at("schema").get<std::string>();
      c.goldens_path = j.value("goldens", "");
      c.out_dir = j.value("out_dir", c.out_dir);
      c.seed = j.value("seed", c.seed);
      if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
      c.test_fraction = j.value("test_fraction", c.test_fraction);
      c.attack_samples = j.value("attack_samples", c.attack_samples);
      c.miner = j.value("miner", c.miner);
      if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::expect_keys(
            t, {"hidden_layers", "hidden_width", "learning_rate", "epochs", "batch_size"},
            "train.");
        c.train.hidden_layers = t.value("hidden_layers", c.train.hidden_layers);
        c.train.hidden_width = t.value("hidden_width", c.train.hidden_width);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
      }
      if (j.contains("dc_miner")) {
        const auto& m = j.at("dc_miner");
        detail::expect_keys(
            m, {"max_predicates", "violation_cap", "row_sample_cap", "pair_sample_cap"},
            "dc_miner.");
        c.dc_miner.max_predicates = m.value("max_predicates", c.dc_miner.max_predicates);
        c.dc_miner.violation_cap = m.value("violation_cap", c.dc_miner.violation_cap);
        c.dc_miner.row_sample_cap = m.value("row_sample_cap", c.dc_miner.row_sample_cap);
        c.dc_miner.pair_sample_cap = m.value("pair_sample_cap", c.dc_miner.pair_sample_cap);
      }
      if (j.contains("rank")) {
        const auto& r = j.at("rank");
        detail::expect_keys(r, {"candidate_pool", "weights"}, "rank.");
        c.rank.candidate_pool = r.value("candidate_pool", c.rank.candidate_pool);
        if (r.contains("weights")) {
          const auto& w = r.at("weights");
          detail::expect_keys(
              w, {"succinctness", "coverage", "pair_violation", "sample_violation"},
              "rank.weights.");
          c.rank.weights.succinctness = w.value("succinctness", c.rank.weights.succinctness);
          c.rank.weights.coverage = w.value("coverage", c.rank.weights.coverage);
          c.rank.weights.pair_violation =
              w.value("pair_violation", c.rank.weights.pair_violation);
          c.rank.weights.sample_violation =
              w.value("sample_violation", c.rank.weights.sample_violation);
        }
      }
      if (j.contains("select")) {
        const auto& s = j.at("select");
        detail::expect_keys(s, {"n_dcs", "n_tuples"}, "select.");
        c.select.n_dcs = s.value("n_dcs", c.select.n_dcs);
        c.select.n_tuples = s.value("n_tuples", c.select.n_tuples);
      }
      if (j.contains("valiant")) {
        const auto& v = j.at("valiant");
        detail::expect_keys(v, {"default_k_bin", "k_bin", "product_cap"}, "valiant.");
        c.valiant.default_k_bin = v.value("default_k_bin", c.valiant.default_k_bin);
        c.valiant.product_cap = v.value("product_cap", c.valiant.product_cap);
        if (v.contains("k_bin"))
          for (const auto& item : v.at("k_bin").items())
            c.valiant.k_bin[item.key()] = item.value().get<int>();
      }
      if (j.contains("attack")) {
        const auto& a = j.at("attack");
        detail::expect_keys(
            a, {"mode", "epsilon", "alpha", "iterations", "cw_max_iterations", "frozen"},
            "attack.");
        c.attack_mode = a.value("mode", c.attack_mode);
        c.attack.epsilon = a.value("epsilon", c.attack.epsilon);
        c.attack.alpha = a.value("alpha", c.attack.alpha);
        c.attack.iterations = a.value("iterations", c.attack.iterations);
        c.attack.cw_max_iterations = a.value("cw_max_iterations", c.attack.cw_max_iterations);
        if (a.contains("frozen")) c.frozen = a.at("frozen").get<std::vector<std::string>>();
      }
      if (j.contains("projection")) {
        const auto& p = j.at("projection");
        detail::expect_keys(p, {"max_budget_fraction", "exact_sweep"}, "projection.");
        c.projection.max_budget_fraction =
            p.value("max_budget_fraction", c.projection.max_budget_fraction);
        c.projection.exact_sweep = p.value("exact_sweep", c.projection.exact_sweep);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    // The projection ball is the attack ball.
    c.projection.epsilon = c.attack.epsilon;
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json a{{"mode", attack_mode},
                     {"epsilon", attack.epsilon},
                     {"alpha", attack.alpha},
                     {"iterations", attack.iterations},
                     {"cw_max_iterations", attack.cw_max_iterations},
                     {"frozen", frozen}};
    nlohmann::json kb = nlohmann::json::object();
    for (const auto& [name, bins] : valiant.k_bin) kb[name] = bins;
    return nlohmann::json{
        {"dataset", dataset_path},
        {"schema", schema_path},
        {"goldens", goldens_path},
        {"out_dir", out_dir},
        {"seed", seed},
        {"seeds", seeds},
        {"test_fraction", test_fraction},
        {"attack_samples", attack_samples},
        {"miner", miner},
        {"train",
         {{"hidden_layers", train.hidden_layers},
          {"hidden_width", train.hidden_width},
          {"learning_rate", train.learning_rate},
          {"epochs", train.epochs},
          {"batch_size", train.batch_size}}},
        {"dc_miner",
         {{"max_predicates", dc_miner.max_predicates},
          {"violation_cap", dc_miner.violation_cap},
          {"row_sample_cap", dc_miner.row_sample_cap},
          {"pair_sample_cap", dc_miner.pair_sample_cap}}},
        {"rank",
         {{"candidate_pool", rank.candidate_pool},
          {"weights",
           {{"succinctness", rank.weights.succinctness},
            {"coverage", rank.weights.coverage},
            {"pair_violation", rank.weights.pair_violation},
            {"sample_violation", rank.weights.sample_violation}}}}},
        {"select", {{"n_dcs", select.n_dcs}, {"n_tuples", select.n_tuples}}},
        {"valiant",
         {{"default_k_bin", valiant.default_k_bin},
          {"k_bin", std::move(kb)},
          {"product_cap", valiant.product_cap}}},
        {"attack", std::move(a)},
        {"projection",
         {{"max_budget_fraction", projection.max_budget_fraction},
          {"exact_sweep", projection.exact_sweep}}}};
  }

  uint64_t hash() const {
    nlohmann::json j = to_json();
    j.erase("out_dir");
    j.erase("seed");
    j.erase("seeds");
    return fnv1a64(j.dump());
  }

  static PipelineConfig load(const std::string& path) {
    return from_json(detail::read_json_file(path, "config"));
  }
};

struct RunPaths {
  std::string dir;
  std::string config;
  std::string model;
  std::string dcs;
  std::string theory;
  std::string attacks;
  std::string projected;
  std::string report;
};

inline RunPaths run_paths(const PipelineConfig& cfg, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(cfg.out_dir) / (hex64(cfg.hash()) + "-s" + std::to_string(seed));
  RunPaths p;
  p.dir = dir.string();
  p.config = (dir / "config.json").string();
  p.model = (dir / "model.json").string();
  p.dcs = (dir / "dcs.json").string();
  p.theory = (dir / "theory.json").string();
  p.attacks = (dir / "attacks.jsonl").string();
  p.projected = (dir / "projected.jsonl").string();
  p.report = (dir / "report.json").string();
  return p;
}

// Loaded inputs shared by every stage of one seeded run. Per-stage RNG
// streams hang off the run seed: 0 split, 1 training, 2 mining, 3 attack,
// 4 soundness sampling.
struct StageContext {
  PipelineConfig cfg;
  uint64_t seed = 0;
  Provenance prov;
  RunPaths paths;
  Schema schema;
  Dataset data;
  Split split;
  std::vector<double> range;
  std::string theory_override;  // alternate theory path, or "empty"
};

inline StageContext make_context(const PipelineConfig& cfg, uint64_t seed) {
  cfg.validate();
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.schema_path))
    throw ConfigError("schema not found: '" + cfg.schema_path + "'");
  if (!fs::exists(cfg.dataset_path))
    throw ConfigError("dataset not found: '" + cfg.dataset_path + "'");
  if (!cfg.goldens_path.empty() && !fs::exists(cfg.goldens_path))
    throw ConfigError("golden constraints not found: '" + cfg.goldens_path + "'");

  StageContext ctx;
  ctx.cfg = cfg;
  ctx.seed = seed;
  ctx.prov = Provenance{cfg.hash(), seed};
  ctx.schema = Schema::load(cfg.schema_path);
  ctx.data = load_csv(cfg.dataset_path, ctx.schema);
  ctx.split = make_split(ctx.data.rows.size(), cfg.test_fraction, derive_seed(seed, 0));
  ctx.range = range_sizes(ctx.schema, gather(ctx.data.rows, ctx.split.train));
  ctx.paths = run_paths(cfg, seed);
  fs::create_directories(ctx.paths.dir);
  nlohmann::json jc{{"provenance", ctx.prov.to_json()}, {"config", cfg.to_json()}};
  detail::write_json_file(ctx.paths.config, jc);
  return ctx;
}

inline nlohmann::json run_validate_data(const PipelineConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.schema_path))
    throw ConfigError("schema not found: '" + cfg.schema_path + "'");
  if (!fs::exists(cfg.dataset_path))
    throw ConfigError("dataset not found: '" + cfg.dataset_path + "'");
  Schema schema = Schema::load(cfg.schema_path);
  Dataset data = load_csv(cfg.dataset_path, schema);
  std::vector<size_t> class_counts(schema.n_classes(), 0);
  for (int y : data.labels) ++class_counts[static_cast<size_t>(y)];
  return nlohmann::json{{"rows", data.rows.size()},
                        {"features", schema.size()},
                        {"encoded_dim", schema.encoded_dim()},
                        {"classes", schema.classes()},
                        {"class_counts", class_counts},
                        {"schema_hash", schema.hash_hex()}};
}

inline TrainReport run_train(const StageContext& ctx) {
  TrainConfig tc = ctx.cfg.train;
  tc.seed = derive_seed(ctx.seed, 1);
  TrainReport rep;
  MlpModel model = train_mlp(ctx.data, ctx.split, tc, &rep);
  nlohmann::json j = model.to_json();
  j["provenance"] = ctx.prov.to_json();
  j["train_report"] = nlohmann::json{{"train_accuracy", rep.train_accuracy},
                                     {"test_accuracy", rep.test_accuracy},
                                     {"final_loss", rep.final_loss},
                                     {"epochs", rep.epochs}};
  detail::write_json_file(ctx.paths.model, j);
  return rep;
}

inline MlpModel load_model(const StageContext& ctx) {
  nlohmann::json j = detail::read_json_file(ctx.paths.model, "model checkpoint");
  detail::check_provenance(j, ctx.prov, "model checkpoint");
  MlpModel m = MlpModel::from_json(j);
  if (m.schema_hash() != ctx.schema.hash())
    throw ConfigError("model checkpoint was trained for a different schema");
  return m;
}

inline size_t run_mine_dcs(const StageContext& ctx) {
  DcMinerConfig mc = ctx.cfg.dc_miner;
  mc.seed = derive_seed(ctx.seed, 2);
  auto train_rows = gather(ctx.data.rows, ctx.split.train);
  Evidence ev = Evidence::build(ctx.schema, train_rows, mc);
  DcMinerStats stats;
  auto dcs = mine_dcs(ev, mc, &stats);
  nlohmann::json jd = nlohmann::json::array();
  for (const auto& dc : dcs) {
    nlohmann::json jp = nlohmann::json::array();
    for (const auto& p : dc.preds)
      jp.push_back(nlohmann::json{{"f", p.feature}, {"op", op_name(p.op)}});
    jd.push_back(std::move(jp));
  }
  nlohmann::json j{{"format", "tabfa-dcs-v1"},
                   {"schema_hash", ctx.schema.hash_hex()},
                   {"provenance", ctx.prov.to_json()},
                   {"pairs_directed", stats.pairs_directed},
                   {"dcs", std::move(jd)}};
  detail::write_json_file(ctx.paths.dcs, j);
  return dcs.size();
}

inline GroundTheory run_rank(const StageContext& ctx) {
  nlohmann::json jd = detail::read_json_file(ctx.paths.dcs, "mined constraints");
  detail::check_provenance(jd, ctx.prov, "mined constraints");
  auto dcs = load_dcs(ctx.paths.dcs, ctx.schema);

  DcMinerConfig mc = ctx.cfg.dc_miner;
  mc.seed = derive_seed(ctx.seed, 2);
  auto train_rows = gather(ctx.data.rows, ctx.split.train);
  Evidence ev = Evidence::build(ctx.schema, train_rows, mc);
  auto ranked = rank_dcs(ev, std::move(dcs), ctx.cfg.rank);
  GroundTheory theory = select_theory(ctx.schema, ev, train_rows, ranked, ctx.cfg.select);

  nlohmann::json j = theory.to_json();
  j["provenance"] = ctx.prov.to_json();
  j["miner"] = "dc";
  j["ranked"] = ranked.size();
  detail::write_json_file(ctx.paths.theory, j);
  return theory;
}

inline GroundTheory run_mine_valiant(const StageContext& ctx) {
  ValiantConfig vc = ctx.cfg.valiant;
  auto train_rows = gather(ctx.data.rows, ctx.split.train);
  ValiantResult res = mine_valiant(ctx.schema, train_rows, vc);
  nlohmann::json j = res.theory.to_json();
  j["provenance"] = ctx.prov.to_json();
  j["miner"] = "valiant";
  j["survivors"] = res.survivors.size();
  j["tautologies"] = res.tautologies;
  j["candidate_product"] = res.product;
  detail::write_json_file(ctx.paths.theory, j);
  return res.theory;
}

inline GroundTheory load_theory(const StageContext& ctx) {
  if (ctx.theory_override == "empty") {
    GroundTheory t;
    t.schema_hash = ctx.schema.hash();
    return t;
  }
  std::string path = ctx.theory_override.empty() ? ctx.paths.theory : ctx.theory_override;
  nlohmann::json j = detail::read_json_file(path, "constraint theory");
  detail::check_provenance(j, ctx.prov, "constraint theory");
  GroundTheory t = GroundTheory::from_json(j);
  t.check_schema(ctx.schema);
  return t;
}

struct AttackRecord {
  size_t index = 0;      // position in the attacked subset
  size_t row_index = 0;  // row in the dataset
  int label = 0;
  uint64_t seed = 0;
  Row x;
  AttackResult result;
};

inline std::vector<size_t> attacked_rows(const StageContext& ctx) {
  auto idx = ctx.split.test;
  if (ctx.cfg.attack_samples > 0 && idx.size() > ctx.cfg.attack_samples)
    idx.resize(ctx.cfg.attack_samples);
  return idx;
}

inline std::vector<size_t> resolve_frozen(const Schema& schema,
                                          const std::vector<std::string>& names) {
  std::vector<size_t> out;
  for (const auto& name : names) {
    int f = schema.feature_index(name);
    if (f < 0) throw ConfigError("frozen feature '" + name + "' is not in the schema");
    out.push_back(static_cast<size_t>(f));
  }
  return out;
}

inline size_t run_attack(const StageContext& ctx) {
  MlpModel model = load_model(ctx);
  AttackConfig ac = ctx.cfg.attack;
  ac.frozen = resolve_frozen(ctx.schema, ctx.cfg.frozen);
  ac.mode = ctx.cfg.attack_mode == "plain_pgd" ? AttackMode::kPlainPgd : AttackMode::kTabPgd;
  uint64_t base = derive_seed(ctx.seed, 3);
  auto rows_idx = attacked_rows(ctx);

  std::ofstream out(ctx.paths.attacks);
  if (!out) throw StageError("cannot write '" + ctx.paths.attacks + "'");
  nlohmann::json header{{"format", "tabfa-attacks-v1"},
                        {"provenance", ctx.prov.to_json()},
                        {"mode", ctx.cfg.attack_mode},
                        {"samples", rows_idx.size()}};
  out << header.dump() << "\n";

  for (size_t k = 0; k < rows_idx.size(); ++k) {
    size_t ri = rows_idx[k];
    AttackConfig one = ac;
    one.seed = derive_seed(base, k);
    const Row& x = ctx.data.rows[ri];
    int y = ctx.data.labels[ri];
    AttackResult res =
        ctx.cfg.attack_mode == "tabcw"
            ? tabcw(model, ctx.schema, ctx.range, x, y, one)
            : ctx.cfg.attack_mode == "plain_pgd"
                  ? plain_pgd(model, ctx.schema, ctx.range, x, y, one)
                  : tabpgd(model, ctx.schema, ctx.range, x, y, one);
    nlohmann::json rec{{"i", k},          {"row_index", ri},          {"label", y},
                       {"seed", one.seed}, {"x", x},                  {"result", res.to_json()}};
    out << rec.dump() << "\n";
  }
  return rows_idx.size();
}

inline std::vector<AttackRecord> load_attacks(const StageContext& ctx) {
  std::ifstream in(ctx.paths.attacks);
  if (!in) throw ConfigError("attack records not found: '" + ctx.paths.attacks + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("attack records: empty file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("attack records: bad header: ") + e.what());
  }
  if (header.value("format", "") != std::string("tabfa-attacks-v1"))
    throw ConfigError("attack records: unknown format");
  detail::check_provenance(header, ctx.prov, "attack records");

  std::vector<AttackRecord> recs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("attack records: bad record: ") + e.what());
    }
    AttackRecord r;
    r.index = j.at("i").get<size_t>();
    r.row_index = j.at("row_index").get<size_t>();
    r.label = j.at("label").get<int>();
    r.seed = j.at("seed").get<uint64_t>();
    r.x = j.at("x").get<Row>();
    r.result = AttackResult::from_json(j.at("result"));
    if (r.row_index >= ctx.data.rows.size() || r.x != ctx.data.rows[r.row_index] ||
        r.label != ctx.data.labels[r.row_index])
      throw DataError("attack records do not match the dataset");
    recs.push_back(std::move(r));
  }
  return recs;
}

inline size_t run_project(const StageContext& ctx) {
  GroundTheory theory = load_theory(ctx);
  auto records = load_attacks(ctx);
  ProjectionConfig pc = ctx.cfg.projection;
  pc.epsilon = ctx.cfg.attack.epsilon;

  std::ofstream out(ctx.paths.projected);
  if (!out) throw StageError("cannot write '" + ctx.paths.projected + "'");
  nlohmann::json header{{"format", "tabfa-projected-v1"},
                        {"provenance", ctx.prov.to_json()},
                        {"samples", records.size()}};
  out << header.dump() << "\n";

  size_t landed = 0;
  for (const auto& rec : records) {
    nlohmann::json line{{"i", rec.index}};
    if (!rec.result.success) {
      line["skipped"] = "attack_failed";
    } else if (rec.result.row.empty()) {
      line["skipped"] = "no_row";
    } else {
      ProjectionResult pr = project(ctx.schema, theory, rec.x, rec.result.row, ctx.range, pc);
      line["projection"] = pr.to_json();
      if (pr.status != ProjectionStatus::kFailed) ++landed;
    }
    out << line.dump() << "\n";
  }
  return landed;
}

// i -> projected row (empty when skipped or failed), aligned with the attack
// records.
inline std::vector<Row> load_projected(const StageContext& ctx, size_t n_records) {
  std::ifstream in(ctx.paths.projected);
  if (!in) throw ConfigError("projection records not found: '" + ctx.paths.projected + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("projection records: empty file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("projection records: bad header: ") + e.what());
  }
  if (header.value("format", "") != std::string("tabfa-projected-v1"))
    throw ConfigError("projection records: unknown format");
  detail::check_provenance(header, ctx.prov, "projection records");

  std::vector<Row> rows(n_records);
  size_t seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("projection records: bad record: ") + e.what());
    }
    size_t i = j.at("i").get<size_t>();
    if (i >= n_records) throw ConfigError("projection records do not match the attack records");
    ++seen;
    if (j.contains("projection")) rows[i] = j.at("projection").at("row").get<Row>();
  }
  if (seen != n_records)
    throw ConfigError("projection records do not match the attack records");
  return rows;
}

inline nlohmann::json run_evaluate(const StageContext& ctx) {
  MlpModel model = load_model(ctx);
  GroundTheory theory = load_theory(ctx);
  auto records = load_attacks(ctx);

  std::vector<Row> originals;
  std::vector<int> labels;
  std::vector<AttackResult> results;
  for (const auto& rec : records) {
    originals.push_back(rec.x);
    labels.push_back(rec.label);
    results.push_back(rec.result);
  }
  EvaluationReport attack_rep =
      attack_metrics(ctx.schema, theory, results, originals, labels, &model);

  auto test_rows = gather(ctx.data.rows, ctx.split.test);
  auto test_labels = gather(ctx.data.labels, ctx.split.test);
  double completeness = empirical_completeness(ctx.schema, theory, test_rows);
  std::optional<double> soundness;
  std::optional<double> fscore;
  size_t n_goldens = 0;
  if (!ctx.cfg.goldens_path.empty()) {
    auto goldens = load_goldens(ctx.schema, ctx.cfg.goldens_path);
    n_goldens = goldens.size();
    soundness =
        empirical_soundness(ctx.schema, theory, test_rows, goldens, derive_seed(ctx.seed, 4));
    if (soundness) fscore = f1(completeness, *soundness);
  }
  attack_rep.completeness = completeness;
  if (soundness) attack_rep.soundness = *soundness;
  if (fscore) attack_rep.f1_score = *fscore;

  nlohmann::json projected_json;
  if (std::filesystem::exists(ctx.paths.projected)) {
    auto projected_rows = load_projected(ctx, records.size());
    std::vector<AttackResult> proj_results;
    for (size_t i = 0; i < records.size(); ++i) {
      AttackResult r;
      r.delta.assign(ctx.schema.encoded_dim(), 0.0);
      if (!projected_rows[i].empty()) {
        r.row = projected_rows[i];
        auto e0 = encode(ctx.schema, records[i].x);
        auto e1 = encode(ctx.schema, r.row);
        for (size_t k = 0; k < e0.size(); ++k) r.delta[k] = e1[k] - e0[k];
        r.l0 = l0_cost(ctx.schema, records[i].x, r.row);
        r.linf = standardized_linf(ctx.schema, ctx.range, records[i].x, r.row);
        r.success = true;  // recounted against the model below
      }
      proj_results.push_back(std::move(r));
    }
    EvaluationReport proj_rep =
        attack_metrics(ctx.schema, theory, proj_results, originals, labels, &model);
    proj_rep.completeness = completeness;
    if (soundness) proj_rep.soundness = *soundness;
    if (fscore) proj_rep.f1_score = *fscore;
    projected_json = proj_rep.to_json();
  }

  nlohmann::json report{{"format", "tabfa-report-v1"},
                        {"provenance", ctx.prov.to_json()},
                        {"model_test_accuracy", accuracy(model, ctx.schema, test_rows, test_labels)},
                        {"theory_clauses", theory.clauses.size()},
                        {"goldens", n_goldens},
                        {"attack", attack_rep.to_json()},
                        {"projected", projected_json}};
  detail::write_json_file(ctx.paths.report, report);
  return report;
}

namespace detail {

template <typename F>
auto run_stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(name) + " stage failed: " + e.what());
  }
}

inline nlohmann::json mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return nlohmann::json();
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return nlohmann::json{{"mean", mean}, {"std", std::sqrt(var)}, {"n", xs.size()}};
}

inline nlohmann::json aggregate_reports(const std::vector<nlohmann::json>& reports) {
  auto collect = [&](auto&& pick) {
    std::vector<double> xs;
    for (const auto& r : reports) {
      nlohmann::json v = pick(r);
      if (v.is_number()) xs.push_back(v.get<double>());
    }
    return mean_std(xs);
  };
  nlohmann::json agg;
  agg["model_test_accuracy"] =
      collect([](const nlohmann::json& r) { return r.at("model_test_accuracy"); });
  for (const char* part : {"attack", "projected"}) {
    nlohmann::json block;
    for (const char* field :
         {"success_rate", "feasible_success_rate", "completeness", "soundness", "f1", "mean_l0",
          "mean_linf"}) {
      block[field] = collect([&](const nlohmann::json& r) {
        const auto& p = r.at(part);
        return p.is_null() ? nlohmann::json() : p.at(field);
      });
    }
    agg[part] = std::move(block);
  }
  return agg;
}

}  // namespace detail

// All stages for every configured seed; per-seed artifacts land in their run
// directories and the cross-seed summary next to them.
inline nlohmann::json run_pipeline(const PipelineConfig& cfg) {
  auto seeds = cfg.effective_seeds();
  std::vector<nlohmann::json> reports;
  for (uint64_t s : seeds) {
    StageContext ctx = make_context(cfg, s);
    detail::run_stage("train", [&] { return run_train(ctx); });
    if (cfg.miner == "valiant") {
      detail::run_stage("mine-valiant", [&] { return run_mine_valiant(ctx); });
    } else {
      detail::run_stage("mine-dcs", [&] { return run_mine_dcs(ctx); });
      detail::run_stage("rank", [&] { return run_rank(ctx); });
    }
    detail::run_stage("attack", [&] { return run_attack(ctx); });
    detail::run_stage("project", [&] { return run_project(ctx); });
    reports.push_back(detail::run_stage("evaluate", [&] { return run_evaluate(ctx); }));
  }

  nlohmann::json summary{{"format", "tabfa-summary-v1"},
                         {"config_hash", hex64(cfg.hash())},
                         {"seeds", seeds},
                         {"runs", reports},
                         {"aggregate", detail::aggregate_reports(reports)}};
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  detail::write_json_file(
      (fs::path(cfg.out_dir) / (hex64(cfg.hash()) + "-summary.json")).string(), summary);
  return summary;
}

}  // namespace tabfa
