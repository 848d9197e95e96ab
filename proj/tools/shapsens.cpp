#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "shapsens/error.hpp"
#include "shapsens/harness.hpp"

namespace {

using shapsens::ExperimentConfig;

// Flags shared by every experiment subcommand; unset flags leave the config
// file (or defaults) untouched.
struct Overrides {
  std::string config;
  std::optional<std::string> name, out_dir, csv, schema, protected_feature, method, ovr, mode, transform, model,
      representative;
  std::optional<std::size_t> rows, folds, bucket_min, bucket_max, background, permutations, threads, budget, initial;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<double> epsilon, lo, hi;
  std::optional<std::vector<std::string>> strategies;
  bool integer = false, no_tune = false, no_inject = false;
  std::optional<int> depth, rounds;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--name", name, "run name (directory under --out-dir)");
    app->add_option("--out-dir", out_dir, "parent of run directories");
    app->add_option("--csv", csv, "data CSV (default: synthetic)");
    app->add_option("--schema", schema, "schema JSON for --csv");
    app->add_option("--rows", rows, "synthetic row count");
    app->add_option("--data-seed", data_seed, "synthetic data seed");
    app->add_option("--seed", seed, "root seed");
    app->add_option("--folds", folds, "cross-validation folds");
    app->add_option("--protected", protected_feature, "protected feature");
    app->add_option("--bucket-min", bucket_min, "smallest bucket count");
    app->add_option("--bucket-max", bucket_max, "largest bucket count");
    app->add_option("--strategies", strategies, "bucket strategies (equi-width, equi-depth)");
    app->add_option("--representative", representative, "bucket representative (median|midpoint|index)");
    app->add_option("--ovr", ovr, "categorical feature for one-vs-rest series");
    app->add_option("--method", method, "explainer (tree|exact|sampled)");
    app->add_option("--background", background, "background rows");
    app->add_option("--permutations", permutations, "permutations for the sampled explainer");
    app->add_option("--threads", threads, "worker threads (0: all cores)");
    app->add_option("--mode", mode, "attack mode (fixed-model|retrain)");
    app->add_option("--budget", budget, "attack evaluation budget");
    app->add_option("--initial", initial, "attack initial random samples");
    app->add_option("--epsilon", epsilon, "absolute fidelity threshold (disables equi-width matching)");
    app->add_option("--lo", lo, "attack domain minimum");
    app->add_option("--hi", hi, "attack domain maximum");
    app->add_flag("--integer", integer, "restrict attack boundaries to integers");
    app->add_flag("--no-inject", no_inject, "do not seed the attack with the equi-width point");
    app->add_flag("--no-tune", no_tune, "skip the hyperparameter grid");
    app->add_option("--depth", depth, "max depth when not tuning");
    app->add_option("--rounds", rounds, "boosting rounds when not tuning");
    app->add_option("--transform", transform, "representation file");
    app->add_option("--model", model, "model file");
  }

  ExperimentConfig build(shapsens::Protocol protocol) const {
    nlohmann::json j = nlohmann::json::object();
    if (!config.empty()) {
      std::ifstream in(config);
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw shapsens::ParseError(config + ": " + e.what());
      }
    }
    j["protocol"] = shapsens::to_string(protocol);
    auto set = [&](const char* key, const auto& v) {
      if (v) j[key] = *v;
    };
    set("name", name);
    set("output_dir", out_dir);
    set("protected", protected_feature);
    set("folds", folds);
    set("seed", seed);
    set("strategies", strategies);
    set("representative", representative);
    set("ovr_feature", ovr);
    set("threads", threads);
    set("transform", transform);
    set("model", model);
    if (csv) j["data"] = {{"csv", *csv}, {"schema", schema.value_or("")}};
    if (rows || data_seed) {
      auto& s = j["data"]["synthetic"];
      if (rows) s["rows"] = *rows;
      if (data_seed) s["seed"] = *data_seed;
    }
    if (bucket_min) j["buckets"]["min"] = *bucket_min;
    if (bucket_max) j["buckets"]["max"] = *bucket_max;
    if (method) j["explainer"]["method"] = *method;
    if (background) j["explainer"]["background"] = *background;
    if (permutations) j["explainer"]["permutations"] = *permutations;
    if (no_tune) j["grid"]["tune"] = false;
    if (depth) j["grid"]["fixed"]["max_depth"] = *depth;
    if (rounds) j["grid"]["fixed"]["rounds"] = *rounds;
    auto& a = j["attack"];
    if (a.is_null()) a = nlohmann::json::object();
    if (mode) a["mode"] = *mode;
    if (budget) a["budget"] = *budget;
    if (initial) a["initial_samples"] = *initial;
    if (epsilon) {
      a["epsilon"] = *epsilon;
      a["epsilon_policy"] = "absolute";
    }
    if (lo) a["lo"] = *lo;
    if (hi) a["hi"] = *hi;
    if (integer) a["integer_boundaries"] = true;
    if (no_inject) a["inject_equi_width"] = false;
    if (protocol == shapsens::Protocol::kAttackMerge && !a.contains("epsilon_policy")) {
      a["epsilon_policy"] = "absolute";
      if (!a.contains("epsilon")) a["epsilon"] = 0.9;
    }
    return ExperimentConfig::from_json(j);
  }
};

void print_error(const std::string& kind, const std::string& message, const std::optional<ExperimentConfig>& cfg) {
  const nlohmann::json record{{"error", kind}, {"message", message}};
  std::cerr << record.dump() << "\n";
  if (cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg->run_dir(), ec);
    std::ofstream out(cfg->run_dir() / "error.json");
    if (out) out << record.dump(2) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley explanation sensitivity and bucketization attacks"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write the synthetic dataset");
  std::size_t synth_rows = 2000;
  std::uint64_t synth_seed = 42;
  std::string synth_out = "synthetic.csv";
  std::string synth_schema;
  synth->add_option("--rows", synth_rows, "rows");
  synth->add_option("--seed", synth_seed, "seed");
  synth->add_option("-o,--out", synth_out, "CSV path");
  synth->add_option("--schema-out", synth_schema, "also write the schema JSON here");

  Overrides train_o, explain_o, sens_o, bucket_o, merge_o;
  auto* train = app.add_subcommand("train", "grid-search and train a model on the whole dataset");
  train_o.attach(train);
  auto* explain = app.add_subcommand("explain", "explain every row with a saved model");
  explain_o.attach(explain);
  auto* sens = app.add_subcommand("sensitivity", "bucket-count sensitivity protocol");
  sens_o.attach(sens);
  auto* attack = app.add_subcommand("attack", "representation attacks");
  attack->require_subcommand(1);
  auto* bucket = attack->add_subcommand("bucket", "optimize bucket boundaries of a numeric feature");
  bucket_o.attach(bucket);
  auto* merge = attack->add_subcommand("merge", "search category merges of a categorical feature");
  merge_o.attach(merge);
  auto* rep = app.add_subcommand("report", "summarize a run directory");
  std::string report_dir;
  rep->add_option("run_dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  std::optional<ExperimentConfig> cfg;
  try {
    if (synth->parsed()) {
      const auto d = shapsens::synth_generate({synth_rows}, synth_seed);
      for (const std::filesystem::path p : {synth_out, synth_schema}) {
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
      }
      d.write_csv(synth_out);
      if (!synth_schema.empty()) d.schema().save(synth_schema);
      return 0;
    }
    if (rep->parsed()) {
      std::cout << shapsens::report(report_dir);
      return 0;
    }
    const std::pair<CLI::App*, std::pair<Overrides*, shapsens::Protocol>> commands[] = {
        {train, {&train_o, shapsens::Protocol::kTrain}},
        {explain, {&explain_o, shapsens::Protocol::kExplain}},
        {sens, {&sens_o, shapsens::Protocol::kSensitivity}},
        {bucket, {&bucket_o, shapsens::Protocol::kAttackBucket}},
        {merge, {&merge_o, shapsens::Protocol::kAttackMerge}},
    };
    for (const auto& [cmd, target] : commands) {
      if (!cmd->parsed()) continue;
      cfg = target.first->build(target.second);
      const auto manifest = shapsens::run_protocol(*cfg);
      std::cout << (cfg->run_dir() / "manifest.json").string() << "\n";
      return manifest.status == "ok" ? 0 : 1;
    }
  } catch (const shapsens::Error& e) {
    print_error(e.kind(), e.what(), cfg);
    return e.kind() == "argument" || e.kind() == "schema" ? 2 : 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what(), cfg);
    return 1;
  }
  return 0;
}
