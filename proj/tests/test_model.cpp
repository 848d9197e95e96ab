#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "shapsens/error.hpp"
#include "shapsens/model.hpp"

using namespace shapsens;

namespace {

TreeEnsembleModel stump_model() {
  Tree t;
  t.nodes = {TreeNode{0, 5.0, 1, 2, 0}, TreeNode{-1, 0, -1, -1, -1}, TreeNode{-1, 0, -1, -1, 1}};
  return TreeEnsembleModel(0.0, 1.0, {t}, {"x0"});
}

struct Problem {
  Matrix x;
  std::vector<int> y;
};

Problem separable(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  Problem p{Matrix(n, 2), {}};
  for (std::size_t r = 0; r < n; ++r) {
    p.x(r, 0) = g(rng);
    p.x(r, 1) = g(rng);
    p.y.push_back(p.x(r, 0) + 0.5 * p.x(r, 1) > 0 ? 1 : 0);
  }
  return p;
}

}  // namespace

TEST(Model, TraversalAndLabels) {
  const auto m = stump_model();
  EXPECT_EQ(m.margin(std::vector<double>{3.0}), -1.0);
  EXPECT_EQ(m.margin(std::vector<double>{5.0}), 1.0);
  const TreeEnsembleModel empty(0.7, 0.1, {}, {"x0"});
  EXPECT_EQ(empty.margin(std::vector<double>{123.0}), 0.7);
  EXPECT_EQ(TreeEnsembleModel(0.0, 1.0, {}, {"x"}).label(std::vector<double>{0.0}), 0);
  EXPECT_EQ(TreeEnsembleModel(2.3, 1.0, {}, {"x"}).label(std::vector<double>{0.0}), 1);
  EXPECT_EQ(TreeEnsembleModel(-0.1, 1.0, {}, {"x"}).label(std::vector<double>{0.0}), 0);
  EXPECT_THROW(m.margin(std::vector<double>{1.0, 2.0}), ArgumentError);
}

TEST(Model, HyperparamValidation) {
  Hyperparams h;
  EXPECT_NO_THROW(h.validate());
  h.rounds = 0;
  EXPECT_THROW(h.validate(), ArgumentError);
  h = {};
  h.max_depth = 7;
  EXPECT_THROW(h.validate(), ArgumentError);
  h = {};
  h.learning_rate = 1.5;
  EXPECT_THROW(h.validate(), ArgumentError);
  h = {};
  h.l2 = -1;
  EXPECT_THROW(h.validate(), ArgumentError);
  EXPECT_EQ(Hyperparams::from_json(Hyperparams{}.to_json()), Hyperparams{});
}

TEST(Gbt, ConstantFeatureGivesBaseRate) {
  Matrix x(100, 1, 1.0);
  std::vector<int> y(100, 0);
  for (int i = 0; i < 70; ++i) y[static_cast<std::size_t>(i)] = 1;
  const auto m = train_gbt(x, y, Hyperparams{}, 0);
  EXPECT_NEAR(m.margin(x.row(0)), std::log(0.7 / 0.3), 1e-9);
  EXPECT_NEAR(accuracy(m.labels(x), y), 0.7, 1e-12);
}

TEST(Gbt, RejectsDegenerateTargets) {
  Matrix x(3, 1, 0.0);
  EXPECT_THROW(train_gbt(x, {1, 1, 1}, Hyperparams{}, 0), TrainingError);
  EXPECT_THROW(train_gbt(Matrix(1, 1), {1}, Hyperparams{}, 0), TrainingError);
  EXPECT_THROW(train_gbt(x, {1, 0}, Hyperparams{}, 0), ArgumentError);
}

TEST(Gbt, SeparableAccuracy) {
  const auto p = separable(1, 1000);
  const auto m = train_gbt(p.x, p.y, Hyperparams{}, 0);
  EXPECT_GE(accuracy(m.labels(p.x), p.y), 0.95);
}

TEST(Gbt, XorAccuracy) {
  Matrix x(400, 2);
  std::vector<int> y;
  for (std::size_t r = 0; r < 400; ++r) {
    x(r, 0) = static_cast<double>(r % 2);
    x(r, 1) = static_cast<double>((r / 2) % 2);
    y.push_back(static_cast<int>(r % 2) ^ static_cast<int>((r / 2) % 2));
  }
  Hyperparams h;
  h.max_depth = 2;
  h.rounds = 20;
  const auto m = train_gbt(x, y, h, 0);
  EXPECT_GE(accuracy(m.labels(x), y), 0.95);
}

TEST(Gbt, LossNonIncreasingAndRecorded) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Matrix x(200, 4);
    std::vector<int> y;
    for (std::size_t r = 0; r < 200; ++r) {
      for (std::size_t c = 0; c < 4; ++c) x(r, c) = u(rng);
      y.push_back(u(rng) < x(r, 0) * x(r, 1) + 0.2 ? 1 : 0);
    }
    const auto m = train_gbt(x, y, Hyperparams{}, seed);
    const auto& loss = m.training_loss();
    ASSERT_EQ(loss.size(), 100u);
    for (std::size_t i = 1; i < loss.size(); ++i) EXPECT_LE(loss[i], loss[i - 1] + 1e-12);
    EXPECT_NEAR(loss.back(), log_loss(m.margins(x), y), 1e-9);
  }
}

TEST(Gbt, DeterministicBytes) {
  const auto p = separable(2, 300);
  EXPECT_EQ(train_gbt(p.x, p.y, Hyperparams{}, 5).serialize(), train_gbt(p.x, p.y, Hyperparams{}, 5).serialize());
}

TEST(Gbt, RowOrderDoesNotChangeSplits) {
  const auto p = separable(3, 300);
  std::vector<std::size_t> perm(300);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
  Matrix xs(300, 2);
  std::vector<int> ys;
  for (std::size_t r = 0; r < 300; ++r) {
    xs(r, 0) = p.x(perm[r], 0);
    xs(r, 1) = p.x(perm[r], 1);
    ys.push_back(p.y[perm[r]]);
  }
  const auto a = train_gbt(p.x, p.y, Hyperparams{}, 0);
  const auto b = train_gbt(xs, ys, Hyperparams{}, 0);
  ASSERT_EQ(a.trees().size(), b.trees().size());
  for (std::size_t t = 0; t < a.trees().size(); ++t) {
    const auto& na = a.trees()[t].nodes;
    const auto& nb = b.trees()[t].nodes;
    ASSERT_EQ(na.size(), nb.size());
    for (std::size_t i = 0; i < na.size(); ++i) {
      EXPECT_EQ(na[i].column, nb[i].column);
      EXPECT_EQ(na[i].threshold, nb[i].threshold);
      EXPECT_NEAR(na[i].value, nb[i].value, 1e-9);
    }
  }
}

TEST(Gbt, DepthIsBounded) {
  const auto p = separable(4, 500);
  Hyperparams h;
  h.max_depth = 2;
  h.rounds = 10;
  const auto m = train_gbt(p.x, p.y, h, 0);
  for (const auto& t : m.trees()) EXPECT_LE(t.depth(), 2);
}

TEST(Model, FileRoundTripIsBitIdentical) {
  const auto p = separable(5, 300);
  const auto m = train_gbt(p.x, p.y, Hyperparams{}, 0);
  const auto path = std::filesystem::temp_directory_path() / "shapsens_model.json";
  m.save(path);
  const auto back = TreeEnsembleModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.serialize(), m.serialize());
  for (std::size_t r = 0; r < p.x.rows(); ++r) EXPECT_EQ(back.margin(p.x.row(r)), m.margin(p.x.row(r)));
  EXPECT_EQ(m.to_json().at("version"), 1);
}

TEST(Model, MalformedFilesAreRejected) {
  auto j = stump_model().to_json();
  j["trees"][0][0]["left"] = 17;
  EXPECT_THROW(TreeEnsembleModel::from_json(j), Error);
  EXPECT_THROW(TreeEnsembleModel::load("/nonexistent/model.json"), IoError);
}

TEST(Model, SyntheticFixtureMargins) {
  const auto d = synth_generate({}, 42);
  const auto x = apply_pipeline(d, {});
  const auto m = train_gbt(x, d.targets(), Hyperparams{}, 0);
  // Regression fixture from the first correct build.
  const std::vector<double> expected = {0.82064960010707644, 3.544598000778953,  3.5996973715478155, 1.461670514893934,
                                       4.2870537873243357,  2.0754201843172151, -0.58805263837438404, 1.4838915762049782,
                                       2.942614243834524,   2.3537311033775143};
  for (std::size_t r = 0; r < expected.size(); ++r) EXPECT_NEAR(m.margin(x.values.row(r)), expected[r], 1e-12);
}
