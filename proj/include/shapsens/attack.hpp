#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "shapsens/data.hpp"
#include "shapsens/explain.hpp"
#include "shapsens/model.hpp"
#include "shapsens/transform.hpp"

namespace shapsens {

// fixed-model: the model is trained once on the original representation and
// only the explainer's inputs (observations and background) are
// re-represented. retrain: the model is retrained on the transformed data.
enum class AttackMode { kFixedModel, kRetrain };
enum class EpsilonPolicy { kAbsolute, kMatchEquiWidth };

std::string to_string(AttackMode mode);
AttackMode attack_mode_from_string(const std::string& text);

struct AttackConfig {
  std::string protected_feature = "age";
  AttackMode mode = AttackMode::kFixedModel;
  std::size_t buckets = 5;  // k; k-1 interior boundaries are optimized
  double lo = 17.0;
  double hi = 94.0;
  std::size_t budget = 300;           // evaluations, excluding the injected equi-width point
  std::size_t initial_samples = 20;   // random design inside the budget
  bool inject_equi_width = true;
  bool integer_boundaries = false;    // interior boundaries restricted to integers in (lo, hi)
  EpsilonPolicy epsilon_policy = EpsilonPolicy::kMatchEquiWidth;
  double epsilon = 0.0;               // used by the absolute policy
  std::uint64_t seed = 0;
  // Surrogate settings.
  double length_scale_fraction = 0.2;  // of (hi - lo), every dimension
  double jitter = 1e-6;
  double exploration = 0.01;           // EI margin, standardized units
  std::size_t candidates = 1024;
  // Merge attack: partitions with 2..max_blocks blocks are enumerated.
  std::size_t max_blocks = 2;
  std::size_t max_enumerated_categories = 8;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

// Everything an attack evaluation needs besides the candidate
// representation. Immutable during an attack.
struct AttackContext {
  const Dataset* data = nullptr;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> eval_rows;
  std::vector<std::size_t> background_rows;  // dataset indices, subset of train_rows
  TransformSpec base_spec;                   // original representation
  TreeEnsembleModel model;                   // trained on base_spec over train_rows
  std::vector<int> reference_labels;         // model predictions on untransformed eval rows
  Hyperparams retrain_params;
  std::uint64_t retrain_seed = 0;
};

// Trains the original model on `train_rows` and fixes the background
// subsample and reference predictions.
AttackContext make_attack_context(const Dataset& data, std::vector<std::size_t> train_rows,
                                  std::vector<std::size_t> eval_rows, const Hyperparams& params,
                                  std::size_t background_size, std::uint64_t seed,
                                  TransformSpec base_spec = {});

struct AttackEvaluation {
  double objective = 0.0;
  double mean_rank = 0.0;
  double fidelity = 0.0;
  double mean_abs_weight = 0.0;  // mean |grouped weight| of the protected feature
  bool feasible = false;

  bool operator==(const AttackEvaluation&) const = default;
};

// Protected feature's grouped explanations on the eval rows under `spec`
// plus fidelity against the reference labels. Honors the config mode.
struct RepresentationOutcome {
  std::vector<GroupedExplanation> explanations;
  double mean_rank = 0.0;
  double fidelity = 0.0;
  double mean_abs_weight = 0.0;
};

RepresentationOutcome evaluate_representation(const AttackContext& ctx, const AttackConfig& cfg,
                                              const std::optional<BucketSpec>& buckets,
                                              const std::optional<MergeSpec>& merge);

// Objective for full boundaries b_0 < ... < b_k: mean rank of the protected
// feature minus 10 * (#features) * max(0, epsilon - fidelity).
AttackEvaluation attack_objective(const std::vector<double>& boundaries, const AttackConfig& cfg,
                                  const AttackContext& ctx, double epsilon);
AttackEvaluation merge_objective(const MergeSpec& spec, const AttackConfig& cfg, const AttackContext& ctx,
                                 double epsilon);
// Original representation, no bucketization.
AttackEvaluation base_evaluation(const AttackConfig& cfg, const AttackContext& ctx);
// Equi-width boundaries over [lo, hi] with the configured k.
AttackEvaluation equi_width_baseline(const AttackConfig& cfg, const AttackContext& ctx, double epsilon = 0.0);

struct TraceEntry {
  std::size_t iteration = 0;
  std::string phase;               // "equi-width", "initial", "bo", "enumerate", "candidate"
  std::vector<double> boundaries;  // full b_0..b_k (bucket attacks)
  std::optional<MergeSpec> merge;  // merge attacks
  AttackEvaluation eval;
  double best_objective = 0.0;     // running maximum of objective
};

struct AttackResult {
  std::optional<BucketSpec> best_buckets;
  std::optional<MergeSpec> best_merge;
  AttackEvaluation best;
  bool feasible = false;  // false: best is the least-infeasible point
  double epsilon = 0.0;
  AttackEvaluation base;
  std::optional<AttackEvaluation> equi_width;
  std::vector<TraceEntry> trace;
};

AttackResult bo_attack(const AttackConfig& cfg, const AttackContext& ctx);

// Every partition of `categories` into between min_blocks and max_blocks
// nonempty blocks, in restricted-growth-string order.
std::vector<std::vector<std::vector<std::string>>> set_partitions(const std::vector<std::string>& categories,
                                                                  std::size_t min_blocks, std::size_t max_blocks);

AttackResult merge_attack(const AttackConfig& cfg, const AttackContext& ctx,
                          const std::optional<std::vector<MergeSpec>>& candidates = std::nullopt);

// One spec per category isolating it from the rest ("White, Rest", ...).
std::vector<MergeSpec> one_vs_rest_specs(const std::string& feature, const std::vector<std::string>& categories);

}  // namespace shapsens
