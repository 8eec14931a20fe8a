#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrsgd/network.hpp"
#include "mrsgd/partition.hpp"
#include "mrsgd/rng.hpp"
#include "mrsgd/tensor.hpp"

namespace mrsgd {

/// A minibatch: one sample per row of `inputs`, matching rows of `targets`.
struct Batch {
  Tensor inputs;
  Tensor targets;
};

/// What the stepping engine trains: parameter blocks in layout order plus a
/// gradient oracle that may skip layers below `first_layer`.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::vector<Tensor>& parameters() = 0;
  virtual ParamLayout layout() const = 0;
  virtual std::size_t layer_count() const = 0;
  /// Mean-batch-loss gradient for every block in layers >= first_layer.
  virtual GradientMap gradient(const Batch& batch, std::size_t first_layer, CostCounters& counters) = 0;
};

/// Network + loss. Gradients for a suffix use truncated backpropagation.
class NetworkObjective final : public Objective {
 public:
  NetworkObjective(Network& net, LossKind loss) : net_(&net), loss_(loss) {}
  std::vector<Tensor>& parameters() override { return net_->parameters(); }
  ParamLayout layout() const override { return net_->layout(); }
  std::size_t layer_count() const override { return net_->layer_count(); }
  GradientMap gradient(const Batch& batch, std::size_t first_layer, CostCounters& counters) override;

  Network& network() { return *net_; }
  LossKind loss() const { return loss_; }

 private:
  Network* net_;
  LossKind loss_;
};

struct NoiseConfig {
  std::vector<double> gamma;  // friction per tier (one value broadcasts)
  std::vector<double> tau;    // temperature per tier (one value broadcasts)
};

struct MultirateConfig {
  /// Slow (macro) stepsize; the fast micro-stepsize is h / k. For vanilla
  /// steps and the random-subset cycle, h is the fast stepsize.
  double h = 0.1;
  std::size_t k = 1;
  double momentum = 0.0;
  /// true: linear drift of slow parameters at every micro-step.
  /// false: one slow jump at the start of each macro step.
  bool drift = true;
  /// Weight decay per tier (empty = none, one value broadcasts).
  std::vector<double> weight_decay;
  /// Uncoupled slow stepsize h_S.
  std::optional<double> slow_stepsize;
  /// Ablation: slow tier uses the fast stepsize h / k while still refreshing every k steps.
  bool same_lr = false;
  std::optional<NoiseConfig> noise;

  void validate() const;
  double decay_for_tier(std::size_t tier) const;
};

/// Optimizer state. `momenta` mirrors the parameter blocks and holds p_F and
/// p_S side by side (in noise mode it holds the Langevin velocity).
struct OptState {
  std::vector<Tensor> momenta;
  std::uint64_t micro_step = 0;
  std::uint64_t macro_step = 0;
  std::optional<std::vector<Tensor>> stash;
  RngStream rng;
  CostCounters counters;
  std::vector<std::string> warnings;

  static OptState zeros(const ParamLayout& layout, RngStream rng = {});
  bool operator==(const OptState&) const = default;
};

/// p := mu p + g (+ omega theta);  theta := theta - h p  on every parameter.
void vanilla_step(Objective& obj, OptState& state, const Batch& batch, const MultirateConfig& cfg);

/// One macro step: exactly `period_max` minibatches (k for two tiers). With
/// drift, slow tiers refresh their momentum once and move h/k along it at
/// every micro-step; without drift they jump by their full stepsize at the
/// refresh. Fast gradients use truncated backpropagation whenever the fast
/// tier lives in a final layer suffix.
void macro_step(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                std::span<const Batch> batches);

/// macro_step with weight decay added into every momentum refresh.
void macro_step_wd(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                   std::span<const Batch> batches);

/// Copy slow (tier >= 1) scalars into state.stash and zero them.
void stash_slow(std::vector<Tensor>& params, OptState& state, const Partition& partition);
/// Write stashed values back and clear the stash.
void restore_slow(std::vector<Tensor>& params, OptState& state, const Partition& partition);

/// Random-subset cycle over k + 1 minibatches: slow scalars zeroed for k fast
/// steps at stepsize h, restored, then one joint update (fast h, slow h*k or
/// the uncoupled h_S) on the last batch. `partition` is replaced by a freshly
/// sampled mask afterwards.
void random_subset_cycle(Objective& obj, OptState& state, Partition& partition, const MultirateConfig& cfg,
                         std::span<const Batch> batches);

/// Ablation without the multirate component: a new mask every step, masked
/// scalars zeroed for that step only, fast scalars updated at stepsize h.
void masked_step(Objective& obj, OptState& state, Partition& partition, const MultirateConfig& cfg,
                 const Batch& batch);

/// Merge period k = h_slow / h_fast; throws unless it is a positive integer.
std::size_t composite_period(double h_fast, double h_slow);

/// Two copies trained at different rates: `fast` takes k vanilla steps at
/// h_fast on the k batches, `slow` one step at h_slow on the first batch,
/// then both are replaced by their parameter-wise mean.
void composite_average_step(Objective& fast, Objective& slow, OptState& fast_state, OptState& slow_state,
                            double h_fast, double h_slow, double momentum, std::span<const Batch> batches);

/// Semi-implicit Euler step of partitioned underdamped Langevin dynamics:
/// p := (1 - gamma h) p - h grad + sqrt(2 gamma tau h) xi;  theta := theta + h p,
/// with gamma, tau taken per tier.
void noise_step(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                const Batch& batch);

/// Learning rate at the start of `epoch` for a linear decay to zero over
/// `epochs` epochs.
double linear_decay(double h, std::size_t epoch, std::size_t epochs);

}  // namespace mrsgd
