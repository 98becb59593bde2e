#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tabfa/pipeline.hpp"
#include "tabfa/synth.hpp"

using namespace tabfa;

namespace {

struct StageArgs {
  std::string config;
  std::optional<uint64_t> seed;
  std::string theory;
  std::string mode;
};

StageContext stage_context(const StageArgs& args) {
  PipelineConfig cfg = PipelineConfig::load(args.config);
  if (!args.mode.empty()) cfg.attack_mode = args.mode;
  StageContext ctx = make_context(cfg, args.seed.value_or(cfg.seed));
  ctx.theory_override = args.theory;
  return ctx;
}

void emit(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint-aware robustness evaluation for tabular classifiers"};
  app.require_subcommand(1);

  StageArgs args;
  std::vector<uint64_t> seeds;
  std::string synth_out;
  uint64_t synth_rows = 2000;
  uint64_t synth_seed = 7;

  auto add_stage = [&](const char* name, const char* help, bool theory_flag = false) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "pipeline config file")->required();
    sub->add_option("--seed", args.seed, "run seed (default: config seed)");
    sub->add_option("--mode", args.mode,
                    "override the config's attack mode (tabpgd, tabcw, or plain_pgd); "
                    "stages of one lineage must share it");
    if (theory_flag)
      sub->add_option("--theory", args.theory,
                      "alternate theory file, or 'empty' for the empty theory");
    return sub;
  };

  CLI::App* validate = app.add_subcommand("validate-data", "check a dataset against its schema");
  validate->add_option("--config", args.config, "pipeline config file")->required();
  validate->callback([&] { emit(run_validate_data(PipelineConfig::load(args.config))); });

  add_stage("train", "train the classifier checkpoint")->callback([&] {
    StageContext ctx = stage_context(args);
    TrainReport rep = run_train(ctx);
    emit({{"model", ctx.paths.model},
          {"train_accuracy", rep.train_accuracy},
          {"test_accuracy", rep.test_accuracy}});
  });

  add_stage("mine-dcs", "mine soft denial constraints from the training split")->callback([&] {
    StageContext ctx = stage_context(args);
    size_t n = run_mine_dcs(ctx);
    emit({{"constraints", ctx.paths.dcs}, {"mined", n}});
  });

  add_stage("mine-valiant", "mine single-literal clause constraints")->callback([&] {
    StageContext ctx = stage_context(args);
    GroundTheory theory = run_mine_valiant(ctx);
    emit({{"theory", ctx.paths.theory}, {"clauses", theory.clauses.size()}});
  });

  add_stage("rank", "rank mined constraints and ground the selected theory")->callback([&] {
    StageContext ctx = stage_context(args);
    GroundTheory theory = run_rank(ctx);
    emit({{"theory", ctx.paths.theory}, {"clauses", theory.clauses.size()}});
  });

  add_stage("attack", "perturb test samples against the checkpoint")->callback([&] {
    StageContext ctx = stage_context(args);
    size_t n = run_attack(ctx);
    emit({{"records", ctx.paths.attacks}, {"samples", n}});
  });

  add_stage("project", "project attack outputs onto the mined theory", true)->callback([&] {
    StageContext ctx = stage_context(args);
    size_t landed = run_project(ctx);
    emit({{"records", ctx.paths.projected}, {"projected", landed}});
  });

  add_stage("evaluate", "score the theory and the attack records", true)->callback([&] {
    StageContext ctx = stage_context(args);
    emit(run_evaluate(ctx));
  });

  CLI::App* run = app.add_subcommand("run", "execute every stage for each seed");
  run->add_option("--config", args.config, "pipeline config file")->required();
  run->add_option("--seeds", seeds, "comma-separated run seeds")->delimiter(',');
  run->callback([&] {
    PipelineConfig cfg = PipelineConfig::load(args.config);
    if (!seeds.empty()) cfg.seeds = seeds;
    emit(run_pipeline(cfg));
  });

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic workforce dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--rows", synth_rows, "rows to generate");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->callback([&] {
    namespace fs = std::filesystem;
    fs::create_directories(synth_out);
    Dataset data = make_census(synth_rows, synth_seed);
    std::string csv = (fs::path(synth_out) / "census.csv").string();
    std::string schema = (fs::path(synth_out) / "schema.json").string();
    std::string goldens = (fs::path(synth_out) / "goldens.txt").string();
    save_csv(csv, data);
    data.schema.save(schema);
    std::ofstream g(goldens);
    if (!g) throw StageError("cannot write '" + goldens + "'");
    g << census_goldens_text();
    emit({{"dataset", csv}, {"schema", schema}, {"goldens", goldens}, {"rows", data.rows.size()}});
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
