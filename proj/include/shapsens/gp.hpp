#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace shapsens {

// Gaussian-process regression with a constant mean and an anisotropic
// squared-exponential kernel. Targets are standardized before fitting; all
// predictions are returned in the original units.
class GaussianProcess {
 public:
  struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
  };

  GaussianProcess(std::vector<double> length_scales, double jitter = 1e-6);

  void fit(const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets);

  Prediction predict(std::span<const double> x) const;
  // Same, in the standardized target space used for fitting.
  Prediction predict_standardized(std::span<const double> x) const;

  double standardize(double y) const { return (y - y_mean_) / y_scale_; }
  std::size_t size() const { return inputs_.size(); }
  // Jitter actually added to the diagonal (raised if factorization failed).
  double effective_jitter() const { return effective_jitter_; }

 private:
  double kernel(std::span<const double> a, std::span<const double> b) const;

  std::vector<double> length_scales_;
  double jitter_;
  double effective_jitter_;
  std::vector<std::vector<double>> inputs_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
};

// Expected improvement over `best` for maximization, with exploration
// margin `xi`. All quantities in one consistent scale.
double expected_improvement(double mean, double variance, double best, double xi);

}  // namespace shapsens
