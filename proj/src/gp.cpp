#include "shapsens/gp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <algorithm>

#include "shapsens/error.hpp"

namespace shapsens {

GaussianProcess::GaussianProcess(std::vector<double> length_scales, double jitter)
    : length_scales_(std::move(length_scales)), jitter_(jitter), effective_jitter_(jitter) {
  for (double l : length_scales_) {
    if (!(l > 0.0)) throw ArgumentError("GP length-scales must be positive");
  }
  if (!(jitter >= 0.0)) throw ArgumentError("GP jitter must be non-negative");
}

double GaussianProcess::kernel(std::span<const double> a, std::span<const double> b) const {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) / length_scales_[i];
    d2 += d * d;
  }
  return std::exp(-0.5 * d2);
}

void GaussianProcess::fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets) {
  if (inputs.empty() || inputs.size() != targets.size()) throw ArgumentError("GP needs aligned, nonempty data");
  for (const auto& x : inputs) {
    if (x.size() != length_scales_.size()) throw ArgumentError("GP input dimension mismatch");
  }
  inputs_ = inputs;
  const auto n = static_cast<Eigen::Index>(inputs.size());

  double mean = 0.0;
  for (double y : targets) mean += y;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double y : targets) var += (y - mean) * (y - mean);
  var /= static_cast<double>(n);
  y_mean_ = mean;
  y_scale_ = var > 0.0 ? std::sqrt(var) : 1.0;

  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = standardize(targets[static_cast<std::size_t>(i)]);

  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel(inputs_[static_cast<std::size_t>(i)], inputs_[static_cast<std::size_t>(j)]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }

  effective_jitter_ = jitter_;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += effective_jitter_;
    llt_.compute(kj);
    if (llt_.info() == Eigen::Success) break;
    effective_jitter_ = effective_jitter_ > 0.0 ? effective_jitter_ * 10.0 : 1e-10;
  }
  if (llt_.info() != Eigen::Success) throw std::runtime_error("GP covariance factorization failed");
  alpha_ = llt_.solve(y);
}

GaussianProcess::Prediction GaussianProcess::predict_standardized(std::span<const double> x) const {
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  if (n == 0) return {0.0, 1.0};
  if (x.size() != length_scales_.size()) throw ArgumentError("GP query dimension mismatch");
  Eigen::VectorXd kx(n);
  for (Eigen::Index i = 0; i < n; ++i) kx(i) = kernel(x, inputs_[static_cast<std::size_t>(i)]);
  const double mean = kx.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(kx);
  const double var = std::max(0.0, 1.0 - v.squaredNorm());
  return {mean, var};
}

GaussianProcess::Prediction GaussianProcess::predict(std::span<const double> x) const {
  const auto s = predict_standardized(x);
  return {y_mean_ + y_scale_ * s.mean, y_scale_ * y_scale_ * s.variance};
}

double expected_improvement(double mean, double variance, double best, double xi) {
  const double improvement = mean - best - xi;
  const double sigma = std::sqrt(std::max(0.0, variance));
  if (sigma <= 0.0) return std::max(0.0, improvement);
  const double z = improvement / sigma;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return improvement * cdf + sigma * pdf;
}

}  // namespace shapsens
