#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mrsgd/optimizer.hpp"
#include "mrsgd/rng.hpp"
#include "mrsgd/tensor.hpp"

namespace mrsgd {

/// Cost of full-network training over k steps divided by multirate training
/// with an l-layer fast suffix, in layer-visit units.
double speedup_ratio(std::size_t k, std::size_t layers, std::size_t fast_layers);

/// Counted layer visits for k vanilla steps and for one multirate macro step.
struct CostComparison {
  CostCounters vanilla;
  CostCounters multirate;
  std::uint64_t vanilla_visits() const { return vanilla.forward_layer_visits + vanilla.backward_layer_visits; }
  std::uint64_t multirate_visits() const { return multirate.forward_layer_visits + multirate.backward_layer_visits; }
  double ratio() const { return static_cast<double>(vanilla_visits()) / static_cast<double>(multirate_visits()); }
};

/// Dry run on a small dense net with `layers` layers and a layer-wise
/// partition whose last `fast_layers` layers are fast.
CostComparison count_costs(std::size_t k, std::size_t layers, std::size_t fast_layers);

struct BoundInputs {
  double h = 0.0;
  std::size_t T = 0;
  std::size_t k = 1;
  double L = 0.0;
  double M = 0.0;
  std::size_t groups = 2;
  double f0 = 0.0;
  double fstar = 0.0;

  void validate() const;
};

/// 2(f0 - f*)/(hT) + h L M l (h L k^2 / 3 + 1).
double theorem1_bound(const BoundInputs& in);
/// 2(f0 - f*)/(hT) + h L M / 2.
double sgd_bound(const BoundInputs& in);

/// Binary logistic regression with an L2 penalty,
/// f(theta) = mean_i log(1 + exp(-y_i x_i.theta)) + lambda/2 |theta|^2, y in {-1, +1}.
/// Coordinates are split into two parameter blocks (first half: layer 0,
/// second half: layer 1) so a layer-wise partition yields two groups.
class LogisticProblem final : public Objective {
 public:
  LogisticProblem(Tensor features, std::vector<double> labels, double lambda);

  /// Standardized Gaussian features with labels from a noisy random hyperplane.
  static LogisticProblem synthetic(std::size_t n, std::size_t d, double lambda, RngStream rng);

  std::vector<Tensor>& parameters() override { return params_; }
  ParamLayout layout() const override;
  std::size_t layer_count() const override { return 2; }
  /// Mean gradient over the rows of batch.inputs (targets hold +-1 labels).
  GradientMap gradient(const Batch& batch, std::size_t first_layer, CostCounters& counters) override;

  std::size_t samples() const { return labels_.size(); }
  std::size_t dimension() const { return features_.cols(); }
  double lambda() const { return lambda_; }
  const Tensor& features() const { return features_; }
  const std::vector<double>& labels() const { return labels_; }

  /// Flattened parameter vector and its inverse.
  std::vector<double> theta() const;
  void set_theta(std::span<const double> theta);

  double loss(std::span<const double> theta) const;
  std::vector<double> full_gradient(std::span<const double> theta) const;
  std::vector<double> sample_gradient(std::span<const double> theta, std::size_t i) const;
  /// One-row batch for sample i.
  Batch sample_batch(std::size_t i) const;

  /// |X|_2^2 / (4n) + lambda, with the operator norm from power iteration.
  double analytic_smoothness(double tol = 1e-12, std::size_t max_iter = 10000) const;

 private:
  Tensor features_;
  std::vector<double> labels_;
  double lambda_;
  std::vector<Tensor> params_;
};

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Largest eigenvalue of the symmetric positive semidefinite n x n matrix `a`
/// by power iteration.
double power_iteration(const Tensor& a, double tol = 1e-12, std::size_t max_iter = 10000);

/// max over sampled pairs of |grad(phi) - grad(theta)| / |phi - theta| times
/// `safety`. Pairs are drawn in a box of half-width `radius` around `center`;
/// coincident pairs are skipped.
double estimate_L(const GradientFn& grad, std::span<const double> center, double radius, std::size_t pairs,
                  RngStream rng, double safety = 1.5);

/// max over samples and iterates of |grad f_i(theta)|^2 times `safety`.
double estimate_M(const LogisticProblem& problem, const std::vector<std::vector<double>>& iterates,
                  double safety = 1.5);

/// f* from plain full-batch gradient descent at stepsize 1/L.
double solve_fstar(const LogisticProblem& problem, std::size_t steps, double L);

struct BoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double sgd_rhs = 0.0;
  double L = 0.0;
  double M = 0.0;
  double fstar = 0.0;
  double f0 = 0.0;
  std::size_t k = 1;
  std::size_t T = 0;
  double h = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lhs_per_seed;
  bool holds = false;
  bool holds_sgd = false;

  std::string to_json() const;
};

struct BoundCheckConfig {
  double h = 0.05;     // per-iteration stepsize
  std::size_t k = 1;
  std::size_t T = 2000;
  bool drift = true;
  std::size_t fstar_steps = 100000;
};

/// Runs momentum-free multirate SGD (one uniformly drawn sample per
/// iteration, fast group = layer 1, slow group = layer 0) from a common start
/// for each seed, and compares the seed-averaged (1/T) sum |grad f(theta_t)|^2
/// with the bounds evaluated at the estimated L, M and f*.
BoundReport verify_bound(const LogisticProblem& problem, std::span<const double> theta0, const BoundCheckConfig& cfg,
                         const std::vector<std::uint64_t>& seeds);

}  // namespace mrsgd
