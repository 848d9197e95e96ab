#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "shapsens/matrix.hpp"
#include "shapsens/model.hpp"
#include "shapsens/transform.hpp"

namespace shapsens {

// Reference rows that stand in for "absent" features: the value of a
// coalition S is the mean margin over background rows b of the composite
// row taking x on S and b elsewhere.
struct Background {
  Matrix rows;
  std::string source;  // provenance, e.g. "fold-2/train"
  std::uint64_t seed = 0;

  std::size_t size() const { return rows.rows(); }
};

// Indices of a seeded subsample of `pool_size` rows, ascending. Returns all
// rows when the pool is not larger than `size`.
std::vector<std::size_t> background_indices(std::size_t pool_size, std::size_t size, std::uint64_t seed);
Background make_background(const Matrix& pool, std::size_t size, std::uint64_t seed, std::string source = "");

enum class MethodKind { kExact, kTree, kSampled };

struct ExplainMethod {
  MethodKind kind = MethodKind::kTree;
  std::size_t permutations = 0;  // sampled only
  std::uint64_t seed = 0;        // sampled only
  bool all_orderings = false;    // sampled only: enumerate every ordering once

  std::string tag() const;  // "exact", "tree", "sampled(200;seed=7)", "sampled(all)"
};

struct Explanation {
  double base = 0.0;               // v(empty set)
  std::vector<double> weights;     // one per player
  std::vector<double> std_errors;  // sampled only: per-player standard error
  std::size_t observation = 0;
  ExplainMethod method;

  double total() const;  // base + sum of weights
};

struct GroupedExplanation {
  double base = 0.0;
  std::vector<double> weights;  // one per logical feature
  std::shared_ptr<const GroupMap> groups;
  std::size_t observation = 0;

  double total() const;
  double weight(const std::string& feature) const;
};

// Optional player definition: by default every encoded column is a player.
// With a group map, each logical feature is one player whose columns toggle
// together.
using Players = const GroupMap*;

double value_function(const TreeEnsembleModel& model, std::span<const double> x, const std::vector<bool>& coalition,
                      const Background& bg);

// Subset enumeration of the Shapley formula. Throws CapabilityError when
// there are more players than `width_limit`.
Explanation exact_shapley(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg,
                          std::size_t width_limit = 16, Players players = nullptr, std::size_t observation = 0);

struct SamplingOptions {
  std::size_t permutations = 200;
  std::uint64_t seed = 0;
  bool all_orderings = false;  // ignore `permutations` and visit all n! orderings
};

// Monte-Carlo over feature orderings.
Explanation sampled_shapley(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg,
                            const SamplingOptions& options, Players players = nullptr, std::size_t observation = 0);

// Exact interventional Shapley values computed per tree and background row
// from the leaf reachability game; no limit on the number of players.
Explanation tree_shapley(const TreeEnsembleModel& model, std::span<const double> x, const Background& bg,
                         Players players = nullptr, std::size_t observation = 0);

// tree_shapley for every row of `xs`; observation indices are taken from
// `observations` when given, else 0..n-1. Results equal per-row calls.
std::vector<Explanation> tree_shapley_batch(const TreeEnsembleModel& model, const Matrix& xs, const Background& bg,
                                            Players players = nullptr,
                                            const std::vector<std::size_t>& observations = {});

GroupedExplanation aggregate_groups(const Explanation& e, std::shared_ptr<const GroupMap> groups);
std::vector<GroupedExplanation> aggregate_groups(const std::vector<Explanation>& es, const GroupMap& groups);

int reconstruct_label(const Explanation& e);
int reconstruct_label(const GroupedExplanation& e);

// Tolerance of the efficiency check every explainer applies to its output.
inline constexpr double kEfficiencyTolerance = 1e-9;
// Number of explanations whose efficiency has been verified in this process.
std::uint64_t efficiency_checks();

}  // namespace shapsens
