#include "shapsens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shapsens/error.hpp"

namespace shapsens {

namespace {

template <typename E>
FidelityReport fidelity_impl(const std::vector<E>& explanations, const std::vector<int>& reference) {
  if (explanations.empty()) throw ArgumentError("fidelity needs at least one explanation");
  if (explanations.size() != reference.size()) throw ArgumentError("explanations and reference labels differ in length");
  FidelityReport report;
  report.total = explanations.size();
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    report.faithful += reconstruct_label(explanations[i]) == reference[i] ? 1 : 0;
  }
  report.lambda = static_cast<double>(report.faithful) / static_cast<double>(report.total);
  report.reference = reference;
  return report;
}

std::size_t feature_of(const std::vector<GroupedExplanation>& es, const std::string& feature) {
  if (es.empty()) throw ArgumentError("no explanations to summarize");
  return es.front().groups->index_of(feature);
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

FidelityReport fidelity(const std::vector<GroupedExplanation>& explanations, const std::vector<int>& reference_labels) {
  return fidelity_impl(explanations, reference_labels);
}

FidelityReport fidelity(const std::vector<Explanation>& explanations, const std::vector<int>& reference_labels) {
  return fidelity_impl(explanations, reference_labels);
}

std::vector<int> rank_weights(std::span<const double> weights) {
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(weights[a]) > std::abs(weights[b]); });
  std::vector<int> ranks(weights.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = static_cast<int>(pos) + 1;
  return ranks;
}

std::vector<int> rank(const GroupedExplanation& e) { return rank_weights(e.weights); }

RankTable::RankTable(const std::vector<GroupedExplanation>& explanations) {
  if (explanations.empty()) return;
  features_ = explanations.front().groups->group_names;
  for (const auto& e : explanations) {
    if (e.weights.size() != features_.size()) throw ArgumentError("explanations disagree on feature count");
    if (!position_.emplace(e.observation, observations_.size()).second) {
      throw ArgumentError("observation " + std::to_string(e.observation) + " appears twice");
    }
    observations_.push_back(e.observation);
    ranks_.push_back(shapsens::rank(e));
    std::vector<double> mags;
    for (double w : e.weights) mags.push_back(std::abs(w));
    std::sort(mags.begin(), mags.end());
    if (std::adjacent_find(mags.begin(), mags.end()) != mags.end()) ++tied_;
  }
}

std::size_t RankTable::feature_index(const std::string& feature) const {
  auto it = std::find(features_.begin(), features_.end(), feature);
  if (it == features_.end()) throw ArgumentError("rank table has no feature '" + feature + "'");
  return static_cast<std::size_t>(it - features_.begin());
}

int RankTable::rank_of_observation(std::size_t observation, std::size_t feature) const {
  auto it = position_.find(observation);
  if (it == position_.end()) throw ArgumentError("observation " + std::to_string(observation) + " not in rank table");
  return ranks_[it->second][feature];
}

std::vector<int> RankTable::feature_ranks(const std::string& feature) const {
  const std::size_t f = feature_index(feature);
  std::vector<int> out;
  out.reserve(ranks_.size());
  for (const auto& r : ranks_) out.push_back(r[f]);
  return out;
}

double avg_abs_shap(const std::vector<GroupedExplanation>& explanations, const std::string& feature) {
  const std::size_t f = feature_of(explanations, feature);
  double sum = 0.0;
  for (const auto& e : explanations) sum += std::abs(e.weights[f]);
  return sum / static_cast<double>(explanations.size());
}

std::optional<double> avg_abs_shap_top(const std::vector<GroupedExplanation>& explanations,
                                       const std::string& feature) {
  const std::size_t f = feature_of(explanations, feature);
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& e : explanations) {
    if (rank(e)[f] != 1) continue;
    sum += std::abs(e.weights[f]);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

double avg_rank(const RankTable& ranks, const std::string& feature) {
  if (ranks.size() == 0) throw ArgumentError("no ranks to summarize");
  const auto r = ranks.feature_ranks(feature);
  return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

double avg_rank(const std::vector<GroupedExplanation>& explanations, const std::string& feature) {
  feature_of(explanations, feature);
  return avg_rank(RankTable(explanations), feature);
}

double top1_frequency(const RankTable& ranks, const std::string& feature) {
  if (ranks.size() == 0) throw ArgumentError("no ranks to summarize");
  const auto r = ranks.feature_ranks(feature);
  return static_cast<double>(std::count(r.begin(), r.end(), 1)) / static_cast<double>(r.size());
}

double top1_frequency(const std::vector<GroupedExplanation>& explanations, const std::string& feature) {
  feature_of(explanations, feature);
  return top1_frequency(RankTable(explanations), feature);
}

ShiftHistogram rank_shift_histogram(const RankTable& before, const RankTable& after, const std::string& feature) {
  if (before.observations() != after.observations()) {
    throw ArgumentError("rank tables cover different observations");
  }
  const std::size_t fb = before.feature_index(feature);
  const std::size_t fa = after.feature_index(feature);
  ShiftHistogram hist;
  for (std::size_t i = 0; i < before.size(); ++i) ++hist[before.rank(i, fb) - after.rank(i, fa)];
  return hist;
}

SubgroupRankStats subgroup_rank_stats(const RankTable& ranks, const ConfusionPartition& parts,
                                      const std::string& feature) {
  const std::size_t f = ranks.feature_index(feature);
  auto fill = [&](const std::vector<std::size_t>& cell) {
    RankDistribution d;
    for (std::size_t obs : cell) ++d[ranks.rank_of_observation(obs, f)];
    return d;
  };
  return {fill(parts.true_positive), fill(parts.false_positive), fill(parts.true_negative),
          fill(parts.false_negative)};
}

std::vector<ShiftCounts> per_bucket_shift_counts(const RankTable& before, const RankTable& after,
                                                 const std::string& feature, const std::vector<std::size_t>& bucket_of,
                                                 std::size_t bucket_count) {
  if (before.observations() != after.observations()) {
    throw ArgumentError("rank tables cover different observations");
  }
  if (bucket_of.size() != before.size()) throw ArgumentError("bucket assignment does not match rank table size");
  const std::size_t fb = before.feature_index(feature);
  const std::size_t fa = after.feature_index(feature);
  std::vector<ShiftCounts> counts(bucket_count);
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (bucket_of[i] >= bucket_count) throw ArgumentError("bucket index out of range");
    auto& c = counts[bucket_of[i]];
    const int shift = before.rank(i, fb) - after.rank(i, fa);
    if (shift > 0) ++c.promoted;
    else if (shift < 0) ++c.demoted;
    else ++c.unchanged;
  }
  return counts;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("spearman needs two aligned series of length >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace shapsens
