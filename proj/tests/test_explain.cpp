#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "shapsens/error.hpp"
#include "shapsens/explain.hpp"
#include "support/oracles.hpp"

using namespace shapsens;

namespace {

Background bg_of(Matrix m) { return Background{std::move(m), "test", 0}; }

std::vector<double> row_of(const Matrix& m, std::size_t r) {
  auto s = m.row(r);
  return {s.begin(), s.end()};
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "player " << i;
}

// A single stump on column 0: margin 1 when x0 < 0.5 else -1.
TreeEnsembleModel stump() {
  Tree t;
  t.nodes = {TreeNode{0, 0.5, 1, 2, 0.0}, TreeNode{-1, 0, -1, -1, 1.0}, TreeNode{-1, 0, -1, -1, -1.0}};
  return TreeEnsembleModel(0.0, 1.0, {t}, {"a", "b"});
}

}  // namespace

TEST(Explain, ExactMatchesBruteForceOnRandomModels) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t width = 3 + trial % 5;
    const auto model = oracle::random_model(rng, width, 6, 3);
    const auto bg = oracle::random_matrix(rng, 15, width);
    const auto xs = oracle::random_matrix(rng, 1, width);
    const auto x = row_of(xs, 0);
    const auto e = exact_shapley(model, x, bg_of(bg));
    expect_close(e.weights, oracle::brute_force_shapley(model, x, bg), 1e-9);
  }
}

TEST(Explain, TreeMatchesExact) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t width = 2 + trial % 7;
    const auto model = oracle::random_model(rng, width, 8, 1 + trial % 6);
    const auto bg = oracle::random_matrix(rng, 12, width);
    const auto xs = oracle::random_matrix(rng, 4, width);
    const auto batch = tree_shapley_batch(model, xs, bg_of(bg));
    for (std::size_t r = 0; r < xs.rows(); ++r) {
      const auto exact = exact_shapley(model, xs.row(r), bg_of(bg));
      expect_close(batch[r].weights, exact.weights, 1e-9);
      expect_close(tree_shapley(model, xs.row(r), bg_of(bg)).weights, batch[r].weights, 1e-12);
      EXPECT_NEAR(batch[r].base, exact.base, 1e-9);
    }
  }
}

TEST(Explain, StumpHandComputed) {
  // Background {0.2, 0.8} on column 0: v(empty) = 0, v({a}) = 1 for x0 = 0.1.
  Matrix bg(2, 2, std::vector<double>{0.2, 0.0, 0.8, 0.0});
  const std::vector<double> x{0.1, 5.0};
  const auto e = exact_shapley(stump(), x, bg_of(bg));
  EXPECT_DOUBLE_EQ(e.base, 0.0);
  EXPECT_DOUBLE_EQ(e.weights[0], 1.0);
  EXPECT_DOUBLE_EQ(e.weights[1], 0.0);
}

TEST(Explain, EfficiencyHoldsForAllMethods) {
  std::mt19937_64 rng(13);
  const auto model = oracle::random_model(rng, 5, 10, 4);
  const auto bg = oracle::random_matrix(rng, 10, 5);
  const auto xs = oracle::random_matrix(rng, 3, 5);
  const auto before = efficiency_checks();
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    const double margin = model.margin(xs.row(r));
    EXPECT_NEAR(exact_shapley(model, xs.row(r), bg_of(bg)).total(), margin, 1e-9);
    EXPECT_NEAR(tree_shapley(model, xs.row(r), bg_of(bg)).total(), margin, 1e-9);
    EXPECT_NEAR(sampled_shapley(model, xs.row(r), bg_of(bg), {50, 3, false}).total(), margin, 1e-9);
  }
  EXPECT_EQ(efficiency_checks() - before, 9u);
}

TEST(Explain, DummyColumnGetsZero) {
  std::mt19937_64 rng(14);
  auto model = oracle::random_model(rng, 4, 8, 3);
  // Column 3 is never split on.
  std::vector<Tree> trees = model.trees();
  for (auto& t : trees) {
    for (auto& n : t.nodes) {
      if (n.column == 3) n.column = 0;
    }
  }
  model = TreeEnsembleModel(model.base_score(), model.learning_rate(), trees, model.column_names());
  const auto bg = oracle::random_matrix(rng, 8, 4);
  const auto xs = oracle::random_matrix(rng, 1, 4);
  EXPECT_EQ(exact_shapley(model, xs.row(0), bg_of(bg)).weights[3], 0.0);
  EXPECT_EQ(tree_shapley(model, xs.row(0), bg_of(bg)).weights[3], 0.0);
}

TEST(Explain, SymmetricColumnsGetEqualWeights) {
  // f = [x0 < 0.5] + [x1 < 0.5] with identical backgrounds and inputs.
  Tree t0, t1;
  t0.nodes = {TreeNode{0, 0.5, 1, 2, 0}, TreeNode{-1, 0, -1, -1, 1}, TreeNode{-1, 0, -1, -1, 0}};
  t1.nodes = {TreeNode{1, 0.5, 1, 2, 0}, TreeNode{-1, 0, -1, -1, 1}, TreeNode{-1, 0, -1, -1, 0}};
  const TreeEnsembleModel m(0.0, 1.0, {t0, t1}, {"a", "b"});
  Matrix bg(3, 2, std::vector<double>{0.9, 0.9, 0.1, 0.1, 0.7, 0.7});
  const std::vector<double> x{0.2, 0.2};
  const auto e = exact_shapley(m, x, bg_of(bg));
  EXPECT_NEAR(e.weights[0], e.weights[1], 1e-15);
  const auto te = tree_shapley(m, x, bg_of(bg));
  EXPECT_NEAR(te.weights[0], te.weights[1], 1e-15);
}

TEST(Explain, LinearityOverConcatenatedModels) {
  std::mt19937_64 rng(15);
  const auto f = oracle::random_model(rng, 5, 4, 3);
  const auto g = TreeEnsembleModel(0.2, f.learning_rate(), oracle::random_model(rng, 5, 4, 3).trees(),
                                   f.column_names());
  const auto fg = f.concatenate(g);
  const auto bg = oracle::random_matrix(rng, 10, 5);
  const auto xs = oracle::random_matrix(rng, 1, 5);
  const auto ef = tree_shapley(f, xs.row(0), bg_of(bg));
  const auto eg = tree_shapley(g, xs.row(0), bg_of(bg));
  const auto efg = tree_shapley(fg, xs.row(0), bg_of(bg));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(efg.weights[i], ef.weights[i] + eg.weights[i], 1e-12);
}

TEST(Explain, LinearClosedForm) {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t width = 4;
    const auto bg = oracle::random_matrix(rng, 20, width);
    const auto xs = oracle::random_matrix(rng, 1, width);
    Matrix support(21, width);
    for (std::size_t r = 0; r < 20; ++r) {
      for (std::size_t c = 0; c < width; ++c) support(r, c) = bg(r, c);
    }
    for (std::size_t c = 0; c < width; ++c) support(20, c) = xs(0, c);
    std::vector<double> w(width);
    for (auto& v : w) v = normal(rng);
    const auto model = oracle::linear_model(w, support);
    const auto e = tree_shapley(model, xs.row(0), bg_of(bg));
    for (std::size_t c = 0; c < width; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < 20; ++r) mean += bg(r, c);
      mean /= 20.0;
      EXPECT_NEAR(e.weights[c], w[c] * (xs(0, c) - mean), 1e-9);
    }
  }
}

TEST(Explain, SampledAllOrderingsEqualsExact) {
  std::mt19937_64 rng(17);
  const auto model = oracle::random_model(rng, 5, 6, 3);
  const auto bg = oracle::random_matrix(rng, 10, 5);
  const auto xs = oracle::random_matrix(rng, 1, 5);
  SamplingOptions opt;
  opt.all_orderings = true;
  const auto s = sampled_shapley(model, xs.row(0), bg_of(bg), opt);
  expect_close(s.weights, exact_shapley(model, xs.row(0), bg_of(bg)).weights, 1e-9);
  EXPECT_EQ(s.method.tag(), "sampled(all)");
}

TEST(Explain, SampledIsDeterministicPerSeed) {
  std::mt19937_64 rng(18);
  const auto model = oracle::random_model(rng, 6, 6, 3);
  const auto bg = oracle::random_matrix(rng, 10, 6);
  const auto xs = oracle::random_matrix(rng, 1, 6);
  const auto a = sampled_shapley(model, xs.row(0), bg_of(bg), {30, 9, false});
  const auto b = sampled_shapley(model, xs.row(0), bg_of(bg), {30, 9, false});
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.std_errors.size(), 6u);
}

TEST(Explain, GroupedPlayersMatchBruteForceOverGroups) {
  std::mt19937_64 rng(19);
  const auto model = oracle::random_model(rng, 5, 6, 3);
  const auto bg = oracle::random_matrix(rng, 8, 5);
  const auto xs = oracle::random_matrix(rng, 1, 5);
  GroupMap groups{{0, 1, 1, 2, 2}, {"a", "b", "c"}};
  const auto tree = tree_shapley(model, xs.row(0), bg_of(bg), &groups);
  const auto exact = exact_shapley(model, xs.row(0), bg_of(bg), 16, &groups);
  ASSERT_EQ(tree.weights.size(), 3u);
  expect_close(tree.weights, exact.weights, 1e-9);
  // Brute force over the 3 groups by expanding group masks to columns.
  std::vector<double> v(8);
  for (std::uint32_t s = 0; s < 8; ++s) {
    std::uint32_t cols = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      if (s >> groups.column_group[c] & 1u) cols |= 1u << c;
    }
    v[s] = oracle::coalition_value(model, row_of(xs, 0), bg, cols);
  }
  const double phi_a = (v[1] - v[0]) / 3 + (v[3] - v[2]) / 6 + (v[5] - v[4]) / 6 + (v[7] - v[6]) / 3;
  EXPECT_NEAR(exact.weights[0], phi_a, 1e-9);
}

TEST(Explain, ExactRefusesWidePlayerSets) {
  std::mt19937_64 rng(20);
  const auto model = oracle::random_model(rng, 17, 2, 2);
  const auto bg = oracle::random_matrix(rng, 2, 17);
  const auto xs = oracle::random_matrix(rng, 1, 17);
  EXPECT_THROW(exact_shapley(model, xs.row(0), bg_of(bg)), CapabilityError);
  EXPECT_NO_THROW(tree_shapley(model, xs.row(0), bg_of(bg)));
}

TEST(Explain, InputValidation) {
  Matrix bg(1, 2);
  const std::vector<double> narrow{0.1};
  EXPECT_THROW(exact_shapley(stump(), narrow, bg_of(bg)), ArgumentError);
  EXPECT_THROW(tree_shapley(stump(), std::vector<double>{0.1, 0.2}, bg_of(Matrix(0, 2))), ArgumentError);
  EXPECT_THROW(sampled_shapley(stump(), std::vector<double>{0.1, 0.2}, bg_of(bg), {0, 1, false}), ArgumentError);
}

TEST(Explain, BackgroundIndicesAreSortedAndSeeded) {
  const auto a = background_indices(500, 100, 3);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, background_indices(500, 100, 3));
  EXPECT_NE(a, background_indices(500, 100, 4));
  EXPECT_EQ(background_indices(5, 100, 3).size(), 5u);
}

TEST(Explain, AggregateGroupsSumsColumns) {
  Explanation e;
  e.base = 0.5;
  e.weights = {1.0, 2.0, -0.5, 0.25};
  e.observation = 7;
  GroupMap groups{{0, 1, 1, 0}, {"a", "b"}};
  const auto g = aggregate_groups(e, std::make_shared<const GroupMap>(groups));
  EXPECT_DOUBLE_EQ(g.weight("a"), 1.25);
  EXPECT_DOUBLE_EQ(g.weight("b"), 1.5);
  EXPECT_DOUBLE_EQ(g.total(), e.total());
  EXPECT_EQ(g.observation, 7u);
  EXPECT_EQ(reconstruct_label(g), 1);
}

TEST(Explain, ValueFunctionExamples) {
  // f(x) = x1 + x2 as two trees with identity-like leaves on {0, 1, 2}.
  Matrix support(3, 2, std::vector<double>{0, 0, 1, 1, 2, 2});
  const auto f = oracle::linear_model({1.0, 1.0}, support);
  Matrix bg(2, 2, std::vector<double>{0, 0, 2, 2});
  const std::vector<double> x{1, 1};
  EXPECT_DOUBLE_EQ(value_function(f, x, {true, false}, bg_of(bg)), 2.0);
  EXPECT_DOUBLE_EQ(value_function(f, x, {true, true}, bg_of(bg)), f.margin(x));
  EXPECT_DOUBLE_EQ(value_function(f, x, {false, false}, bg_of(bg)), 2.0);
  EXPECT_THROW(value_function(f, x, {true}, bg_of(bg)), ArgumentError);
}

TEST(Explain, ConstantModelHasZeroWeights) {
  const TreeEnsembleModel m(0.4, 0.1, {}, {"a", "b", "c"});
  Matrix bg(2, 3, 0.5);
  const std::vector<double> x{1, 2, 3};
  const auto e = exact_shapley(m, x, bg_of(bg));
  EXPECT_EQ(e.weights, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(e.base, 0.4);
  EXPECT_EQ(sampled_shapley(m, x, bg_of(bg), {7, 1, false}).weights, (std::vector<double>{0, 0, 0}));
}

TEST(Explain, ProductSplitsEvenly) {
  // x1 * x2 on {0,1}^2 as a depth-2 grid.
  Tree t;
  t.nodes = {TreeNode{0, 0.5, 1, 2, 0}, TreeNode{-1, 0, -1, -1, 0}, TreeNode{1, 0.5, 3, 4, 0},
             TreeNode{-1, 0, -1, -1, 0}, TreeNode{-1, 0, -1, -1, 1}};
  const TreeEnsembleModel m(0.0, 1.0, {t}, {"x1", "x2"});
  Matrix bg(1, 2, 0.0);
  const std::vector<double> x{1, 1};
  EXPECT_EQ(exact_shapley(m, x, bg_of(bg)).weights, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(tree_shapley(m, x, bg_of(bg)).weights, (std::vector<double>{0.5, 0.5}));
}

TEST(Explain, ReconstructLabelMatchesPrediction) {
  std::mt19937_64 rng(21);
  const auto model = oracle::random_model(rng, 5, 10, 3);
  const auto bg = oracle::random_matrix(rng, 10, 5);
  const auto xs = oracle::random_matrix(rng, 30, 5);
  for (const auto& e : tree_shapley_batch(model, xs, bg_of(bg))) {
    EXPECT_EQ(reconstruct_label(e), model.label(xs.row(e.observation)));
  }
  Explanation e;
  e.base = -1;
  e.weights = {0.4, 0.3};
  EXPECT_EQ(reconstruct_label(e), 0);
  e.base = 0;
  e.weights = {};
  EXPECT_EQ(reconstruct_label(e), 0);
}

TEST(Explain, AggregateExamples) {
  Explanation e;
  e.weights = {0.2, -0.1, 0.05, 0.0, 1.0};
  const auto g = aggregate_groups(e, std::make_shared<const GroupMap>(GroupMap{{0, 0, 0, 0, 1}, {"race", "age"}}));
  EXPECT_NEAR(g.weight("race"), 0.15, 1e-15);
  const auto id = aggregate_groups(e, std::make_shared<const GroupMap>(GroupMap::identity({"a", "b", "c", "d", "e"})));
  EXPECT_EQ(id.weights, e.weights);
  EXPECT_THROW(aggregate_groups(e, std::make_shared<const GroupMap>(GroupMap{{0, 0}, {"x"}})), ArgumentError);
}
