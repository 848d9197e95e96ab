#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "shapsens/error.hpp"
#include "shapsens/metrics.hpp"

using namespace shapsens;

namespace {

std::shared_ptr<const GroupMap> groups(std::vector<std::string> names) {
  return std::make_shared<const GroupMap>(GroupMap::identity(names));
}

GroupedExplanation ge(std::size_t obs, double base, std::vector<double> w,
                      std::shared_ptr<const GroupMap> g) {
  return GroupedExplanation{base, std::move(w), std::move(g), obs};
}

const auto kAgeEduHrs = groups({"age", "edu", "hrs"});

}  // namespace

TEST(Fidelity, Counts) {
  std::vector<GroupedExplanation> es{ge(0, 1, {0.5}, groups({"a"})), ge(1, -1, {0.2}, groups({"a"})),
                                     ge(2, 0, {0.1}, groups({"a"})), ge(3, 0, {-0.1}, groups({"a"}))};
  auto r = fidelity(es, {1, 0, 1, 0});
  EXPECT_EQ(r.lambda, 1.0);
  r = fidelity(es, {1, 0, 1, 1});
  EXPECT_EQ(r.lambda, 0.75);
  EXPECT_EQ(r.faithful, 3u);
  EXPECT_EQ(r.total, 4u);
  EXPECT_THROW(fidelity(std::vector<GroupedExplanation>{}, {}), ArgumentError);
  EXPECT_THROW(fidelity(es, {1}), ArgumentError);
}

TEST(Rank, ByMagnitudeWithSchemaTieBreak) {
  EXPECT_EQ(rank(ge(0, 0, {0.99, -0.59, 0.37}, kAgeEduHrs)), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(rank(ge(0, 0, {0.1, -0.5, 0.5}, kAgeEduHrs)), (std::vector<int>{3, 1, 2}));
  EXPECT_EQ(rank(ge(0, 0, {0.3}, groups({"only"}))), std::vector<int>{1});
  // Positive scaling leaves ranks unchanged.
  EXPECT_EQ(rank_weights(std::vector<double>{0.2, -3, 1}), rank_weights(std::vector<double>{0.6, -9, 3}));
}

TEST(Metrics, Averages) {
  std::vector<GroupedExplanation> es{ge(0, 0, {0.2, 1.0, 0.0}, kAgeEduHrs), ge(1, 0, {-0.4, 0.1, 0.0}, kAgeEduHrs)};
  EXPECT_NEAR(avg_abs_shap(es, "age"), 0.3, 1e-15);
  EXPECT_EQ(avg_abs_shap(es, "hrs"), 0.0);
  EXPECT_EQ(avg_rank(es, "age"), 1.5);
  EXPECT_EQ(avg_rank(es, "hrs"), 3.0);
  EXPECT_EQ(top1_frequency(es, "age"), 0.5);
  EXPECT_EQ(top1_frequency(es, "hrs"), 0.0);
  EXPECT_NEAR(*avg_abs_shap_top(es, "age"), 0.4, 1e-15);
  EXPECT_FALSE(avg_abs_shap_top(es, "hrs").has_value());
  EXPECT_THROW(avg_abs_shap(es, "zip"), ArgumentError);
}

TEST(Metrics, TopOneFrequenciesSumToOne) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  std::vector<GroupedExplanation> es;
  for (std::size_t i = 0; i < 50; ++i) es.push_back(ge(i, 0, {n(rng), n(rng), std::round(n(rng))}, kAgeEduHrs));
  double total = 0;
  for (const auto& f : kAgeEduHrs->group_names) total += top1_frequency(es, f);
  EXPECT_NEAR(total, 1.0, 1e-12);
  const RankTable table(es);
  for (std::size_t p = 0; p < table.size(); ++p) {
    std::vector<int> r{table.rank(p, 0), table.rank(p, 1), table.rank(p, 2)};
    std::sort(r.begin(), r.end());
    EXPECT_EQ(r, (std::vector<int>{1, 2, 3}));
  }
}

TEST(RankShift, Examples) {
  const RankTable a({ge(0, 0, {0.1, 0.5, 0.3}, kAgeEduHrs), ge(4, 0, {0.9, 0.5, 0.3}, kAgeEduHrs)});
  auto h = rank_shift_histogram(a, a, "age");
  EXPECT_EQ(h, (ShiftHistogram{{0, 2}}));
  const RankTable b({ge(0, 0, {0.6, 0.5, 0.3}, kAgeEduHrs), ge(4, 0, {0.1, 0.5, 0.3}, kAgeEduHrs)});
  h = rank_shift_histogram(a, b, "age");
  EXPECT_EQ(h, (ShiftHistogram{{2, 1}, {-2, 1}}));
  const RankTable c({ge(0, 0, {0.1, 0.5, 0.3}, kAgeEduHrs)});
  EXPECT_THROW(rank_shift_histogram(a, c, "age"), ArgumentError);
}

TEST(RankShift, FiveFeatureDemotion) {
  const auto g = groups({"a", "b", "c", "d", "e"});
  const RankTable before({ge(0, 0, {5, 4, 3, 2, 1}, g)});
  const RankTable after({ge(0, 0, {0.5, 4, 3, 2, 1}, g)});
  EXPECT_EQ(rank_shift_histogram(before, after, "a"), (ShiftHistogram{{-4, 1}}));
}

TEST(RankShift, SumsMatchRankDifference) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  std::vector<GroupedExplanation> x, y;
  for (std::size_t i = 0; i < 40; ++i) {
    x.push_back(ge(i, 0, {n(rng), n(rng), n(rng)}, kAgeEduHrs));
    y.push_back(ge(i, 0, {n(rng), n(rng), n(rng)}, kAgeEduHrs));
  }
  const RankTable a(x), b(y);
  const auto h = rank_shift_histogram(a, b, "edu");
  long weighted = 0;
  std::size_t count = 0;
  for (const auto& [s, c] : h) {
    weighted += s * static_cast<long>(c);
    count += c;
  }
  const auto ra = a.feature_ranks("edu"), rb = b.feature_ranks("edu");
  EXPECT_EQ(count, 40u);
  EXPECT_EQ(weighted, std::accumulate(ra.begin(), ra.end(), 0L) - std::accumulate(rb.begin(), rb.end(), 0L));
}

TEST(Subgroups, Distributions) {
  const RankTable t({ge(10, 0, {0.9, 0.1, 0.2}, kAgeEduHrs), ge(11, 0, {0.1, 0.9, 0.2}, kAgeEduHrs),
                     ge(12, 0, {0.9, 0.1, 0.0}, kAgeEduHrs)});
  ConfusionPartition all;
  all.true_positive = {10, 11, 12};
  auto s = subgroup_rank_stats(t, all, "age");
  EXPECT_EQ(s.true_positive, (RankDistribution{{1, 2}, {3, 1}}));
  EXPECT_TRUE(s.false_negative.empty());
  ConfusionPartition split;
  split.true_positive = {10};
  split.false_negative = {11, 12};
  s = subgroup_rank_stats(t, split, "age");
  EXPECT_EQ(s.true_positive, (RankDistribution{{1, 1}}));
  EXPECT_EQ(s.false_negative, (RankDistribution{{1, 1}, {3, 1}}));
  ConfusionPartition bad;
  bad.true_negative = {99};
  EXPECT_THROW(subgroup_rank_stats(t, bad, "age"), ArgumentError);
}

TEST(BucketShift, Counts) {
  const RankTable before({ge(0, 0, {0.5, 0.4, 0.1}, kAgeEduHrs), ge(1, 0, {0.3, 0.4, 0.1}, kAgeEduHrs),
                          ge(2, 0, {0.5, 0.4, 0.1}, kAgeEduHrs), ge(3, 0, {0.5, 0.4, 0.1}, kAgeEduHrs)});
  auto counts = per_bucket_shift_counts(before, before, "age", {0, 1, 0, 1}, 2);
  ASSERT_EQ(counts.size(), 2u);
  EXPECT_EQ(counts[0], (ShiftCounts{0, 0, 2}));
  EXPECT_EQ(counts[1], (ShiftCounts{0, 0, 2}));
  const RankTable after({ge(0, 0, {0.3, 0.4, 0.1}, kAgeEduHrs), ge(1, 0, {0.5, 0.4, 0.1}, kAgeEduHrs),
                         ge(2, 0, {0.5, 0.4, 0.1}, kAgeEduHrs), ge(3, 0, {0.05, 0.4, 0.1}, kAgeEduHrs)});
  counts = per_bucket_shift_counts(before, after, "age", {0, 1, 0, 1}, 2);
  EXPECT_EQ(counts[0], (ShiftCounts{0, 1, 1}));
  EXPECT_EQ(counts[1], (ShiftCounts{1, 1, 0}));
  EXPECT_THROW(per_bucket_shift_counts(before, after, "age", {0, 1}, 2), ArgumentError);
  EXPECT_THROW(per_bucket_shift_counts(before, after, "age", {0, 1, 0, 5}, 2), ArgumentError);
}

TEST(Spearman, KnownValues) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-15);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-15);
  // Tied y values get average ranks: ry = {1.5, 1.5, 3, 4}.
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {5, 5, 6, 7}), 0.9486832980505138, 1e-12);
  EXPECT_EQ(spearman({1, 2, 3}, {2, 2, 2}), 0.0);
  EXPECT_THROW(spearman({1, 2}, {1}), ArgumentError);
}
