#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace shapsens {

enum class FeatureKind { kContinuous, kOrdinal, kCategorical };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& text);

struct FeatureDescriptor {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  std::vector<std::string> categories;  // categorical only

  bool is_categorical() const { return kind == FeatureKind::kCategorical; }
  // Index of `token` in categories, or nullopt.
  std::optional<std::size_t> category_index(const std::string& token) const;

  bool operator==(const FeatureDescriptor&) const = default;
};

// Typed description of a tabular dataset: ordered features, a binary target
// and the protected feature under audit.
class Schema {
 public:
  Schema() = default;
  Schema(std::vector<FeatureDescriptor> features, std::string target, std::string protected_feature);

  const std::vector<FeatureDescriptor>& features() const { return features_; }
  const std::string& target() const { return target_; }
  const std::string& protected_feature() const { return protected_; }
  std::size_t size() const { return features_.size(); }

  const FeatureDescriptor& feature(std::size_t i) const { return features_.at(i); }
  const FeatureDescriptor& feature(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;

  // Same features and target, different protected feature.
  Schema with_protected(const std::string& name) const;

  nlohmann::json to_json() const;
  static Schema from_json(const nlohmann::json& j);
  static Schema load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const Schema&) const = default;

 private:
  void validate() const;

  std::vector<FeatureDescriptor> features_;
  std::string target_;
  std::string protected_;
};

// Immutable table of feature values with binary targets. Categorical values
// are stored as the index of the token in the descriptor's category list.
// Row order is meaningful: indices identify observations across modules.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Schema schema, std::vector<std::vector<double>> rows, std::vector<int> targets);

  const Schema& schema() const { return schema_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  const std::vector<int>& targets() const { return targets_; }

  double value(std::size_t row, std::size_t feature) const { return rows_.at(row).at(feature); }
  const std::string& token(std::size_t row, std::size_t feature) const;

  // All values of one feature, in row order.
  std::vector<double> column(std::size_t feature) const;
  std::vector<double> column(std::size_t feature, const std::vector<std::size_t>& rows) const;
  std::vector<std::string> tokens(std::size_t feature, const std::vector<std::size_t>& rows) const;

  Dataset with_schema(Schema schema) const;

  // Writes header + rows; categorical values are written as tokens.
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;

  bool operator==(const Dataset&) const = default;

 private:
  void validate() const;

  Schema schema_;
  std::vector<std::vector<double>> rows_;
  std::vector<int> targets_;
};

Dataset load_csv(const std::filesystem::path& path, const Schema& schema);
Dataset parse_csv(const std::string& text, const Schema& schema);

// Parameters of the bundled synthetic generator. Only the row count is
// exposed; the feature and label model are fixed.
struct SynthSpec {
  std::size_t rows = 2000;
};

Schema synth_schema();
Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

struct FoldSplit {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

// Shuffled k-fold partition of [0, n). The first n % k folds receive one
// extra row.
std::vector<FoldSplit> split_kfold(std::size_t n, std::size_t k, std::uint64_t seed);
inline std::vector<FoldSplit> split_kfold(const Dataset& d, std::size_t k, std::uint64_t seed) {
  return split_kfold(d.size(), k, seed);
}

struct ConfusionPartition {
  std::vector<std::size_t> true_positive;
  std::vector<std::size_t> false_positive;
  std::vector<std::size_t> true_negative;
  std::vector<std::size_t> false_negative;
};

ConfusionPartition confusion_partition(const std::vector<int>& predicted, const std::vector<int>& actual);

}  // namespace shapsens
