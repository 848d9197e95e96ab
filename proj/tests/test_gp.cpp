#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "shapsens/gp.hpp"

using namespace shapsens;

TEST(GaussianProcess, InterpolatesObservations) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 10);
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (int i = 0; i < 12; ++i) {
    xs.push_back({static_cast<double>(i), u(rng)});
    ys.push_back(std::sin(xs.back()[0]) + 0.1 * xs.back()[1]);
  }
  const double jitter = 1e-6;
  GaussianProcess gp({2.0, 2.0}, jitter);
  gp.fit(xs, ys);
  EXPECT_EQ(gp.size(), 12u);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto p = gp.predict_standardized(xs[i]);
    EXPECT_NEAR(p.mean, gp.standardize(ys[i]), 10 * gp.effective_jitter());
    EXPECT_GE(p.variance, 0.0);
    EXPECT_LE(p.variance, 10 * gp.effective_jitter());
  }
}

TEST(GaussianProcess, VarianceNonNegativeAndRevertsToPrior) {
  GaussianProcess gp({1.0});
  gp.fit({{0.0}, {0.5}, {1.0}}, {1.0, 2.0, 3.0});
  for (double x = -5; x <= 5; x += 0.25) EXPECT_GE(gp.predict(std::vector<double>{x}).variance, 0.0);
  const auto far = gp.predict(std::vector<double>{1e3});
  EXPECT_NEAR(far.mean, 2.0, 1e-9);  // constant mean = sample mean
}

TEST(GaussianProcess, DuplicateInputsRaiseJitter) {
  GaussianProcess gp({1.0}, 0.0);
  gp.fit({{1.0}, {1.0}, {2.0}}, {1.0, 1.0, 0.0});
  EXPECT_GT(gp.effective_jitter(), 0.0);
  EXPECT_TRUE(std::isfinite(gp.predict(std::vector<double>{1.5}).mean));
}

TEST(ExpectedImprovement, Properties) {
  EXPECT_EQ(expected_improvement(0.0, 0.0, 1.0, 0.0), 0.0);
  EXPECT_NEAR(expected_improvement(2.0, 0.0, 1.0, 0.0), 1.0, 1e-15);
  // Standard normal at the incumbent: sigma * phi(0).
  EXPECT_NEAR(expected_improvement(0.0, 1.0, 0.0, 0.0), 1.0 / std::sqrt(2 * M_PI), 1e-12);
  EXPECT_GT(expected_improvement(0.0, 4.0, 0.0, 0.0), expected_improvement(0.0, 1.0, 0.0, 0.0));
  EXPECT_GT(expected_improvement(0.5, 1.0, 0.0, 0.0), expected_improvement(0.0, 1.0, 0.0, 0.0));
  EXPECT_GE(expected_improvement(-10.0, 0.01, 0.0, 0.01), 0.0);
}
