#include "mrsgd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "mrsgd/errors.hpp"
#include "mrsgd/network.hpp"
#include "mrsgd/partition.hpp"

namespace mrsgd {

double speedup_ratio(std::size_t k, std::size_t layers, std::size_t fast_layers) {
  if (k == 0) throw DomainError("speedup_ratio: k must be positive");
  if (fast_layers == 0 || fast_layers > layers) throw DomainError("speedup_ratio: need 1 <= l <= L");
  const double kd = static_cast<double>(k);
  const double L = static_cast<double>(layers);
  const double l = static_cast<double>(fast_layers);
  return (2.0 * kd * L) / ((kd + 1.0) * L + (kd - 1.0) * l);
}

CostComparison count_costs(std::size_t k, std::size_t layers, std::size_t fast_layers) {
  if (k == 0 || layers == 0) throw DomainError("count_costs: k and L must be positive");
  RngStream rng(0, 0);
  std::vector<std::size_t> widths(layers + 1, 3);
  Network net = Network::dense(widths, Activation::tanh, Activation::softmax, true, rng.child(1));
  const Partition partition = layerwise(net, fast_layers);
  std::vector<Batch> batches;
  RngStream data = rng.child(2);
  for (std::size_t i = 0; i < k; ++i) {
    Tensor x = gauss(data, 2 * 3, 0.0, 1.0).reshaped({2, 3});
    std::vector<std::int64_t> labels{static_cast<std::int64_t>(i % 3), static_cast<std::int64_t>((i + 1) % 3)};
    batches.push_back({std::move(x), one_hot(labels, 3)});
  }
  MultirateConfig cfg;
  cfg.h = 0.0;  // counting only
  cfg.k = k;

  CostComparison out;
  NetworkObjective obj(net, LossKind::cross_entropy);
  OptState vanilla = OptState::zeros(net.layout());
  for (const Batch& b : batches) vanilla_step(obj, vanilla, b, cfg);
  out.vanilla = vanilla.counters;

  OptState multirate = OptState::zeros(net.layout());
  macro_step(obj, multirate, partition, cfg, batches);
  out.multirate = multirate.counters;
  return out;
}

void BoundInputs::validate() const {
  if (!(h > 0.0) || !(L > 0.0) || !(M > 0.0)) throw DomainError("bound inputs: h, L and M must be positive");
  if (k == 0 || T == 0) throw DomainError("bound inputs: k and T must be positive");
  if (T % k != 0) throw DomainError("bound inputs: T must be a multiple of k");
  if (f0 < fstar) throw DomainError("bound inputs: f0 must be at least fstar");
}

namespace {

double optimization_term(const BoundInputs& in) {
  return 2.0 * (in.f0 - in.fstar) / (in.h * static_cast<double>(in.T));
}

}  // namespace

double theorem1_bound(const BoundInputs& in) {
  in.validate();
  const double k = static_cast<double>(in.k);
  const double hl = in.h * in.L;
  return optimization_term(in) + hl * in.M * static_cast<double>(in.groups) * (hl * k * k / 3.0 + 1.0);
}

double sgd_bound(const BoundInputs& in) {
  in.validate();
  return optimization_term(in) + in.h * in.L * in.M / 2.0;
}

// ---------------------------------------------------------------------------

LogisticProblem::LogisticProblem(Tensor features, std::vector<double> labels, double lambda)
    : features_(std::move(features)), labels_(std::move(labels)), lambda_(lambda) {
  if (features_.rank() != 2) throw DimensionError("logistic: features must be a matrix");
  if (features_.rows() != labels_.size()) throw DimensionError("logistic: one label per feature row required");
  if (features_.cols() < 2) throw DimensionError("logistic: need at least two coordinates");
  if (!(lambda_ >= 0.0)) throw DomainError("logistic: lambda must be nonnegative");
  for (double y : labels_) {
    if (y != 1.0 && y != -1.0) throw DomainError("logistic: labels must be +-1");
  }
  const std::size_t d = features_.cols();
  params_.push_back(Tensor({d / 2}));
  params_.push_back(Tensor({d - d / 2}));
}

LogisticProblem LogisticProblem::synthetic(std::size_t n, std::size_t d, double lambda, RngStream rng) {
  if (n == 0 || d < 2) throw DomainError("logistic: need n >= 1 and d >= 2");
  RngStream xs = rng.child(1), ws = rng.child(2), noise = rng.child(3);
  Tensor x = gauss(xs, n * d, 0.0, 1.0).reshaped({n, d});
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) x.at(i, j) = sd > 0.0 ? (x.at(i, j) - mean) / sd : 0.0;
  }
  const Tensor w = gauss(ws, d, 0.0, 1.0);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x.at(i, j) * w[j];
    s = s / std::sqrt(static_cast<double>(d)) + 0.5 * noise.normal();
    y[i] = s >= 0.0 ? 1.0 : -1.0;
  }
  return LogisticProblem(std::move(x), std::move(y), lambda);
}

ParamLayout LogisticProblem::layout() const {
  return {BlockInfo{{0, ParamRole::weight}, params_[0].size()}, BlockInfo{{1, ParamRole::weight}, params_[1].size()}};
}

std::vector<double> LogisticProblem::theta() const {
  std::vector<double> out(params_[0].values().begin(), params_[0].values().end());
  out.insert(out.end(), params_[1].values().begin(), params_[1].values().end());
  return out;
}

void LogisticProblem::set_theta(std::span<const double> theta) {
  if (theta.size() != dimension()) throw DimensionError("logistic: theta has the wrong length");
  const std::size_t half = params_[0].size();
  std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(half), params_[0].values().begin());
  std::copy(theta.begin() + static_cast<std::ptrdiff_t>(half), theta.end(), params_[1].values().begin());
}

namespace {

double margin(const Tensor& x, std::size_t row, std::span<const double> theta) {
  double s = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j) s += x.at(row, j) * theta[j];
  return s;
}

// log(1 + exp(-m)), stable for either sign.
double softplus_neg(double m) { return std::max(-m, 0.0) + std::log1p(std::exp(-std::abs(m))); }

// d/dm log(1 + exp(-m)) = -1 / (1 + exp(m)).
double softplus_neg_slope(double m) {
  if (m >= 0.0) {
    const double e = std::exp(-m);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(m));
}

}  // namespace

double LogisticProblem::loss(std::span<const double> theta) const {
  if (theta.size() != dimension()) throw DimensionError("logistic: theta has the wrong length");
  double total = 0.0;
  for (std::size_t i = 0; i < samples(); ++i) total += softplus_neg(labels_[i] * margin(features_, i, theta));
  return total / static_cast<double>(samples()) + 0.5 * lambda_ * squared_norm(theta);
}

std::vector<double> LogisticProblem::sample_gradient(std::span<const double> theta, std::size_t i) const {
  const std::size_t d = dimension();
  std::vector<double> g(d);
  const double c = labels_[i] * softplus_neg_slope(labels_[i] * margin(features_, i, theta));
  for (std::size_t j = 0; j < d; ++j) g[j] = c * features_.at(i, j) + lambda_ * theta[j];
  return g;
}

std::vector<double> LogisticProblem::full_gradient(std::span<const double> theta) const {
  const std::size_t d = dimension();
  std::vector<double> g(d, 0.0);
  for (std::size_t i = 0; i < samples(); ++i) {
    const double c = labels_[i] * softplus_neg_slope(labels_[i] * margin(features_, i, theta));
    for (std::size_t j = 0; j < d; ++j) g[j] += c * features_.at(i, j);
  }
  const double n = static_cast<double>(samples());
  for (std::size_t j = 0; j < d; ++j) g[j] = g[j] / n + lambda_ * theta[j];
  return g;
}

Batch LogisticProblem::sample_batch(std::size_t i) const {
  const std::size_t d = dimension();
  Tensor x({1, d});
  for (std::size_t j = 0; j < d; ++j) x[j] = features_.at(i, j);
  return {std::move(x), Tensor({1, 1}, labels_.at(i))};
}

GradientMap LogisticProblem::gradient(const Batch& batch, std::size_t, CostCounters& counters) {
  const std::size_t d = dimension();
  if (batch.inputs.rank() != 2 || batch.inputs.cols() != d) throw DimensionError("logistic: batch width differs from d");
  const std::size_t m = batch.inputs.rows();
  if (m == 0 || batch.targets.size() != m) throw DimensionError("logistic: one +-1 target per batch row required");
  const std::vector<double> theta = this->theta();
  std::vector<double> g(d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double y = batch.targets[i];
    const double c = y * softplus_neg_slope(y * margin(batch.inputs, i, theta));
    for (std::size_t j = 0; j < d; ++j) g[j] += c * batch.inputs.at(i, j);
  }
  for (std::size_t j = 0; j < d; ++j) g[j] = g[j] / static_cast<double>(m) + lambda_ * theta[j];
  counters.forward_layer_visits += 1;
  counters.backward_layer_visits += 1;
  counters.flops += 4 * m * d;
  const std::size_t half = params_[0].size();
  GradientMap out;
  out.emplace(ParamKey{0, ParamRole::weight}, Tensor({half}, std::vector<double>(g.begin(), g.begin() + half)));
  out.emplace(ParamKey{1, ParamRole::weight}, Tensor({d - half}, std::vector<double>(g.begin() + half, g.end())));
  return out;
}

double power_iteration(const Tensor& a, double tol, std::size_t max_iter) {
  if (a.rank() != 2 || a.rows() != a.cols()) throw DimensionError("power_iteration: square matrix required");
  const std::size_t n = a.rows();
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n))), w(n);
  double estimate = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * v[j];
      w[i] = s;
    }
    const double norm = std::sqrt(squared_norm(w));
    if (norm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
    const double previous = estimate;
    estimate = norm;
    if (it > 0 && std::abs(estimate - previous) <= tol * estimate) break;
  }
  return estimate;
}

double LogisticProblem::analytic_smoothness(double tol, std::size_t max_iter) const {
  const Tensor gram = matmul_tn(features_, features_);
  return power_iteration(gram, tol, max_iter) / (4.0 * static_cast<double>(samples())) + lambda_;
}

double estimate_L(const GradientFn& grad, std::span<const double> center, double radius, std::size_t pairs,
                  RngStream rng, double safety) {
  const std::size_t d = center.size();
  double best = 0.0;
  std::vector<double> a(d), b(d);
  for (std::size_t p = 0; p < pairs; ++p) {
    for (std::size_t j = 0; j < d; ++j) {
      a[j] = center[j] + radius * (2.0 * rng.uniform() - 1.0);
      b[j] = center[j] + radius * (2.0 * rng.uniform() - 1.0);
    }
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) dist += (a[j] - b[j]) * (a[j] - b[j]);
    if (dist == 0.0) continue;
    const std::vector<double> ga = grad(a), gb = grad(b);
    double diff = 0.0;
    for (std::size_t j = 0; j < d; ++j) diff += (ga[j] - gb[j]) * (ga[j] - gb[j]);
    best = std::max(best, std::sqrt(diff / dist));
  }
  return best * safety;
}

double estimate_M(const LogisticProblem& problem, const std::vector<std::vector<double>>& iterates, double safety) {
  double best = 0.0;
  for (const auto& theta : iterates) {
    for (std::size_t i = 0; i < problem.samples(); ++i) best = std::max(best, squared_norm(problem.sample_gradient(theta, i)));
  }
  return best * safety;
}

double solve_fstar(const LogisticProblem& problem, std::size_t steps, double L) {
  if (!(L > 0.0)) throw DomainError("solve_fstar: L must be positive");
  std::vector<double> theta(problem.dimension(), 0.0);
  const double h = 1.0 / L;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::vector<double> g = problem.full_gradient(theta);
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= h * g[j];
  }
  return problem.loss(theta);
}

std::string BoundReport::to_json() const {
  nlohmann::ordered_json j;
  j["lhs"] = lhs;
  j["rhs"] = rhs;
  j["sgd_rhs"] = sgd_rhs;
  j["L"] = L;
  j["M"] = M;
  j["fstar"] = fstar;
  j["f0"] = f0;
  j["h"] = h;
  j["k"] = k;
  j["T"] = T;
  j["seeds"] = seeds;
  j["lhs_per_seed"] = lhs_per_seed;
  j["holds"] = holds;
  j["holds_sgd"] = holds_sgd;
  return j.dump(2);
}

namespace {

// Records |grad f|^2 and the largest per-sample |grad f_i|^2 at every iterate
// where the optimizer asks for a gradient.
class TracingObjective final : public Objective {
 public:
  explicit TracingObjective(LogisticProblem& problem) : problem_(&problem) {}
  std::vector<Tensor>& parameters() override { return problem_->parameters(); }
  ParamLayout layout() const override { return problem_->layout(); }
  std::size_t layer_count() const override { return problem_->layer_count(); }
  GradientMap gradient(const Batch& batch, std::size_t first_layer, CostCounters& counters) override {
    const std::vector<double> theta = problem_->theta();
    grad_norms.push_back(squared_norm(problem_->full_gradient(theta)));
    for (std::size_t i = 0; i < problem_->samples(); ++i) {
      max_sample_norm = std::max(max_sample_norm, squared_norm(problem_->sample_gradient(theta, i)));
    }
    return problem_->gradient(batch, first_layer, counters);
  }

  std::vector<double> grad_norms;
  double max_sample_norm = 0.0;

 private:
  LogisticProblem* problem_;
};

}  // namespace

BoundReport verify_bound(const LogisticProblem& problem, std::span<const double> theta0, const BoundCheckConfig& cfg,
                         const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ContractError("verify_bound: at least one seed required");
  if (cfg.k == 0 || cfg.T == 0 || cfg.T % cfg.k != 0) throw DomainError("verify_bound: T must be a positive multiple of k");
  if (theta0.size() != problem.dimension()) throw DimensionError("verify_bound: theta0 has the wrong length");
  BoundReport report;
  report.k = cfg.k;
  report.T = cfg.T;
  report.h = cfg.h;
  report.seeds = seeds;
  report.L = problem.analytic_smoothness();
  if (!(cfg.h > 0.0) || 1.0 - cfg.h * report.L < 0.0) throw DomainError("verify_bound: stepsize violates 1 - hL >= 0");
  report.f0 = problem.loss(theta0);
  report.fstar = std::min(solve_fstar(problem, cfg.fstar_steps, report.L), report.f0);

  MultirateConfig mr;
  mr.h = cfg.h * static_cast<double>(cfg.k);
  mr.k = cfg.k;
  mr.momentum = 0.0;
  mr.drift = true;

  double max_sample_norm = 0.0;
  double lhs_sum = 0.0;
  for (std::uint64_t seed : seeds) {
    LogisticProblem copy = problem;
    copy.set_theta(theta0);
    const Partition partition = layerwise(copy.layout(), 1);
    TracingObjective traced(copy);
    OptState state = OptState::zeros(copy.layout(), RngStream(seed, 0));
    RngStream sampler = state.rng.child(1);
    std::vector<Batch> batches(cfg.k);
    for (std::size_t step = 0; step < cfg.T / cfg.k; ++step) {
      for (auto& b : batches) b = copy.sample_batch(sampler.uniform_index(copy.samples()));
      macro_step(traced, state, partition, mr, batches);
    }
    double sum = 0.0;
    for (double g : traced.grad_norms) sum += g;
    const double lhs = sum / static_cast<double>(cfg.T);
    report.lhs_per_seed.push_back(lhs);
    lhs_sum += lhs;
    max_sample_norm = std::max(max_sample_norm, traced.max_sample_norm);
  }
  report.lhs = lhs_sum / static_cast<double>(seeds.size());
  report.M = 1.5 * max_sample_norm;

  BoundInputs in{cfg.h, cfg.T, cfg.k, report.L, report.M, 2, report.f0, report.fstar};
  report.rhs = theorem1_bound(in);
  report.sgd_rhs = sgd_bound(in);
  const double worst = *std::max_element(report.lhs_per_seed.begin(), report.lhs_per_seed.end());
  report.holds = worst <= report.rhs;
  report.holds_sgd = worst <= report.sgd_rhs;
  return report;
}

}  // namespace mrsgd
