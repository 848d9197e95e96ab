#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "shapsens/matrix.hpp"
#include "shapsens/transform.hpp"

namespace shapsens {

struct Hyperparams {
  int rounds = 100;
  int max_depth = 3;  // at most 6
  double learning_rate = 0.1;
  double l2 = 1.0;
  double min_child_weight = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static Hyperparams from_json(const nlohmann::json& j);

  bool operator==(const Hyperparams&) const = default;
};

// A node is a leaf when column < 0. Rows go left when value < threshold.
struct TreeNode {
  int column = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf log-odds increment, before learning-rate scaling

  bool is_leaf() const { return column < 0; }
  bool operator==(const TreeNode&) const = default;
};

// Node 0 is the root.
struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> row) const;
  int depth() const;
  bool operator==(const Tree&) const = default;
};

// Additive tree ensemble; margin(x) = base + lr * sum of tree outputs.
class TreeEnsembleModel {
 public:
  TreeEnsembleModel() = default;
  TreeEnsembleModel(double base_score, double learning_rate, std::vector<Tree> trees,
                    std::vector<std::string> column_names);

  double base_score() const { return base_; }
  double learning_rate() const { return lr_; }
  const std::vector<Tree>& trees() const { return trees_; }
  std::size_t width() const { return columns_.size(); }
  const std::vector<std::string>& column_names() const { return columns_; }
  // Mean training log-loss after each round (empty for hand-built models).
  const std::vector<double>& training_loss() const { return training_loss_; }
  void set_training_loss(std::vector<double> loss) { training_loss_ = std::move(loss); }

  double margin(std::span<const double> row) const;
  // Margins for all rows of `x`.
  std::vector<double> margins(const Matrix& x) const;
  int label(std::span<const double> row, double threshold = 0.0) const;
  std::vector<int> labels(const Matrix& x, double threshold = 0.0) const;

  // Ensemble whose tree list is this model's followed by other's; both
  // must share width and learning rate. Bases add.
  TreeEnsembleModel concatenate(const TreeEnsembleModel& other) const;

  nlohmann::json to_json() const;
  static TreeEnsembleModel from_json(const nlohmann::json& j);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static TreeEnsembleModel load(const std::filesystem::path& path);

  bool operator==(const TreeEnsembleModel&) const = default;

 private:
  void check_width(std::size_t n) const;

  double base_ = 0.0;
  double lr_ = 1.0;
  std::vector<Tree> trees_;
  std::vector<std::string> columns_;
  std::vector<double> training_loss_;
};

// Newton boosting on logistic loss with exact greedy splits. Ties between
// equal-gain splits go to the lower column, then the lower threshold.
// `seed` is recorded for provenance; training has no random component.
TreeEnsembleModel train_gbt(const Matrix& x, const std::vector<int>& targets, const Hyperparams& h,
                            std::uint64_t seed, std::vector<std::string> column_names = {});
TreeEnsembleModel train_gbt(const EncodedMatrix& m, const std::vector<int>& targets, const Hyperparams& h,
                            std::uint64_t seed);

double log_loss(const std::vector<double>& margins, const std::vector<int>& targets);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& actual);

}  // namespace shapsens
