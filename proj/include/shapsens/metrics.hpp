#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapsens/data.hpp"
#include "shapsens/explain.hpp"

namespace shapsens {

struct FidelityReport {
  double lambda = 0.0;
  std::size_t faithful = 0;
  std::size_t total = 0;
  std::vector<int> reference;  // labels the reconstructions were compared to
};

// Fraction of explanations whose reconstructed label equals the reference
// label. Reference labels are the original model's predictions on
// untransformed inputs.
FidelityReport fidelity(const std::vector<GroupedExplanation>& explanations, const std::vector<int>& reference_labels);
FidelityReport fidelity(const std::vector<Explanation>& explanations, const std::vector<int>& reference_labels);

// 1-based ranks by descending |weight|; equal magnitudes keep feature order.
std::vector<int> rank_weights(std::span<const double> weights);
std::vector<int> rank(const GroupedExplanation& e);

class RankTable {
 public:
  RankTable() = default;
  explicit RankTable(const std::vector<GroupedExplanation>& explanations);

  std::size_t size() const { return observations_.size(); }
  const std::vector<std::size_t>& observations() const { return observations_; }
  const std::vector<std::string>& features() const { return features_; }
  std::size_t feature_index(const std::string& feature) const;

  int rank(std::size_t position, std::size_t feature) const { return ranks_[position][feature]; }
  // Rank of `feature` for the observation with id `observation`.
  int rank_of_observation(std::size_t observation, std::size_t feature) const;
  std::vector<int> feature_ranks(const std::string& feature) const;
  // Observations whose ranking needed the feature-order tie-break.
  std::size_t tied_observations() const { return tied_; }

 private:
  std::vector<std::size_t> observations_;
  std::vector<std::string> features_;
  std::vector<std::vector<int>> ranks_;
  std::map<std::size_t, std::size_t> position_;
  std::size_t tied_ = 0;
};

double avg_abs_shap(const std::vector<GroupedExplanation>& explanations, const std::string& feature);
// Mean |weight| over observations where `feature` ranks first; nullopt when
// there are none.
std::optional<double> avg_abs_shap_top(const std::vector<GroupedExplanation>& explanations,
                                       const std::string& feature);
double avg_rank(const std::vector<GroupedExplanation>& explanations, const std::string& feature);
double avg_rank(const RankTable& ranks, const std::string& feature);
double top1_frequency(const std::vector<GroupedExplanation>& explanations, const std::string& feature);
double top1_frequency(const RankTable& ranks, const std::string& feature);

// shift -> count, with shift = rank_before - rank_after (positive means the
// feature became more important).
using ShiftHistogram = std::map<int, std::size_t>;
ShiftHistogram rank_shift_histogram(const RankTable& before, const RankTable& after, const std::string& feature);

// rank -> count
using RankDistribution = std::map<int, std::size_t>;

struct SubgroupRankStats {
  RankDistribution true_positive;
  RankDistribution false_positive;
  RankDistribution true_negative;
  RankDistribution false_negative;
};

// Partition indices are observation ids of the rank table.
SubgroupRankStats subgroup_rank_stats(const RankTable& ranks, const ConfusionPartition& parts,
                                      const std::string& feature);

struct ShiftCounts {
  std::size_t promoted = 0;
  std::size_t demoted = 0;
  std::size_t unchanged = 0;

  bool operator==(const ShiftCounts&) const = default;
};

// `bucket_of` gives the bucket of each observation, aligned with
// before.observations().
std::vector<ShiftCounts> per_bucket_shift_counts(const RankTable& before, const RankTable& after,
                                                 const std::string& feature, const std::vector<std::size_t>& bucket_of,
                                                 std::size_t bucket_count);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace shapsens
