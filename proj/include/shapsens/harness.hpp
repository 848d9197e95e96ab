#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "shapsens/attack.hpp"
#include "shapsens/data.hpp"
#include "shapsens/explain.hpp"
#include "shapsens/model.hpp"
#include "shapsens/transform.hpp"

namespace shapsens {

enum class Protocol { kSensitivity, kAttackBucket, kAttackMerge, kExplain, kTrain };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& text);

struct DataSource {
  std::filesystem::path csv;     // empty: synthetic
  std::filesystem::path schema;  // required with csv
  SynthSpec synth;
  std::uint64_t synth_seed = 42;

  bool synthetic() const { return csv.empty(); }
};

struct ExplainerSettings {
  std::string method = "tree";  // tree | exact | sampled
  std::size_t background = 100;
  std::size_t permutations = 200;
};

// Hyperparameter grid searched per fold on the original representation;
// the selected setting is then reused for every representation of the fold.
struct ModelGrid {
  std::vector<int> depths{2, 3, 4};
  std::vector<int> rounds{50, 100, 200};
  double learning_rate = 0.1;
  double validation_fraction = 0.2;
  bool tune = true;  // false: use `fixed`
  Hyperparams fixed;
};

struct ExperimentConfig {
  std::string name = "run";
  std::filesystem::path output_dir = "runs";
  Protocol protocol = Protocol::kSensitivity;
  DataSource data;
  std::string protected_feature;  // empty: the schema's protected feature
  std::vector<std::string> strategies{"equi-width", "equi-depth"};
  std::size_t bucket_min = 2;
  std::size_t bucket_max = 12;
  Representative representative = Representative::kIndex;  // retraining: index is enough
  std::string ovr_feature;  // categorical feature for one-vs-rest series; empty: none
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  ExplainerSettings explainer;
  ModelGrid grid;
  AttackConfig attack;
  // Explicit merge candidates as partitions of the category list; empty:
  // enumerate.
  std::vector<std::vector<std::vector<std::string>>> merge_candidates;
  std::filesystem::path transform;  // train/explain: representation file
  std::filesystem::path model;      // explain: model file
  std::size_t threads = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  std::filesystem::path run_dir() const { return output_dir / name; }
  std::vector<std::size_t> bucket_counts() const;
};

struct RunManifest {
  nlohmann::json config;
  std::string version;
  std::string status = "running";  // running | ok | failed
  std::vector<std::string> artifacts;  // relative to the run directory
  nlohmann::json timings = nlohmann::json::object();
  nlohmann::json error;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& run_dir) const;
};

inline constexpr const char* kVersion = "0.1.0";

Dataset load_dataset(const DataSource& source);

// Grid search on a holdout split of `train_rows`; ties keep the first
// setting in (depth, rounds) order.
struct GridResult {
  Hyperparams best;
  double accuracy = 0.0;
  std::vector<std::pair<Hyperparams, double>> scores;
};
GridResult select_hyperparams(const Dataset& d, const TransformSpec& spec, const std::vector<std::size_t>& train_rows,
                              const ModelGrid& grid, std::uint64_t seed);

ExplainMethod explain_method(const ExplainerSettings& s, std::uint64_t seed);
std::vector<Explanation> explain_rows(const TreeEnsembleModel& model, const Matrix& xs, const Background& bg,
                                      const ExplainMethod& method, const std::vector<std::size_t>& observations,
                                      std::size_t threads = 0);

// Each returns the manifest written to the run directory.
RunManifest run_sensitivity(const ExperimentConfig& cfg);
RunManifest run_attack(const ExperimentConfig& cfg);
RunManifest run_train(const ExperimentConfig& cfg);
RunManifest run_explain(const ExperimentConfig& cfg);
RunManifest run_protocol(const ExperimentConfig& cfg);

// Human-readable digest of a finished run directory.
std::string report(const std::filesystem::path& run_dir);

// Shortest round-trip decimal; "nan" for NaN.
std::string format_number(double v);

}  // namespace shapsens
