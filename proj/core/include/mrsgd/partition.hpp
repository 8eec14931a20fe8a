#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrsgd/network.hpp"
#include "mrsgd/rng.hpp"

namespace mrsgd {

enum class PartitionMode { all_fast, layerwise, bias_slow, random_subset, multi_tier };
enum class BiasVariant { all, input_only, output_only };

std::string_view to_string(PartitionMode m);
PartitionMode parse_partition_mode(std::string_view s);
BiasVariant parse_bias_variant(std::string_view s);

/// Update schedule of one tier. Tier 0 is the fastest and refreshes every
/// micro-step. `stepsize` multiplies the momentum once per refresh (jump
/// updates); `drift_stepsize` multiplies it at every micro-step (linear
/// drift), so period * drift_stepsize == stepsize up to rounding.
struct RateTier {
  std::size_t index = 0;
  std::size_t period = 1;
  double stepsize = 0.0;
  double drift_stepsize = 0.0;
  bool overridden = false;
};

/// Parameters that regenerate a random-subset partition at every cycle.
struct RandomSubsetSpec {
  std::vector<double> probabilities;  // one per layer, applied to weights
  bool include_biases = false;
  std::size_t resample_period = 1;

  bool operator==(const RandomSubsetSpec&) const = default;
};

/// Assignment of every parameter scalar to a rate tier.
///
/// Tiers are stored per scalar, block by block in layout order. Multi-tier
/// partitions carry their period ratios K; two-tier partitions take their
/// period from the optimizer's k.
class Partition {
 public:
  Partition() = default;
  Partition(ParamLayout layout, std::vector<std::vector<std::uint8_t>> tiers, std::size_t tier_count,
            PartitionMode mode);

  /// Every scalar in tier 0.
  static Partition all_fast(const ParamLayout& layout);

  PartitionMode mode() const noexcept { return mode_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t tier_count() const noexcept { return tier_count_; }
  std::size_t layer_count() const noexcept { return layer_count_; }

  std::span<const std::uint8_t> block_tiers(std::size_t block) const { return tiers_.at(block); }
  std::uint8_t tier_of(std::size_t block, std::size_t scalar) const { return tiers_.at(block).at(scalar); }
  /// Tier of a whole-block id, or of its first scalar for ranged ids.
  std::uint8_t tier_of(const ParamId& id) const;

  /// Maximal runs of equal tier, as (ParamId, tier) pairs in layout order.
  std::vector<std::pair<ParamId, std::size_t>> assignment() const;

  std::size_t count_in_tier(std::size_t tier) const { return counts_.at(tier); }
  std::size_t scalar_count() const;
  /// Lowest layer holding a scalar of `tier`, or layer_count() when the tier is empty.
  std::size_t first_layer_of(std::size_t tier) const { return first_layer_.at(tier); }
  /// Whether the partition's layout matches `layout` block for block.
  bool matches(const ParamLayout& layout) const;

  /// Period ratios K_j (empty for two-tier partitions).
  const std::vector<std::size_t>& ratios() const noexcept { return ratios_; }
  void set_ratios(std::vector<std::size_t> ratios);
  /// Refresh period of each tier, with `k` used for two-tier partitions.
  std::vector<std::size_t> periods(std::size_t k) const;

  const std::optional<RandomSubsetSpec>& random_subset() const noexcept { return random_subset_; }
  void set_random_subset(RandomSubsetSpec spec) { random_subset_ = std::move(spec); }
  /// Fresh mask drawn from the same random-subset spec.
  Partition resample(RngStream& rng) const;

  bool operator==(const Partition&) const = default;

 private:
  void index();

  ParamLayout layout_;
  std::vector<std::vector<std::uint8_t>> tiers_;
  std::size_t tier_count_ = 1;
  std::size_t layer_count_ = 0;
  PartitionMode mode_ = PartitionMode::all_fast;
  std::vector<std::size_t> ratios_;
  std::optional<RandomSubsetSpec> random_subset_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> first_layer_;
};

/// Last `fast_layers` layers in tier 0, the rest in tier 1.
Partition layerwise(const ParamLayout& layout, std::size_t fast_layers);
Partition layerwise(const Network& net, std::size_t fast_layers);

/// Biases slow (tier 1), weights fast (tier 0). Networks without biases get
/// an empty slow set.
Partition bias_slow(const Network& net, BiasVariant variant = BiasVariant::all);

/// Each weight scalar of layer l goes to the slow tier with probability
/// probabilities[l]; biases stay fast unless include_biases.
Partition sample_random_subset(const Network& net, const std::vector<double>& probabilities, RngStream& rng,
                               std::size_t resample_period, bool include_biases = false);

/// groups[i] lists the layers on tier i (tier 0 fastest); tier i refreshes
/// every K_0 * ... * K_{i-1} micro-steps.
Partition multi_tier(const Network& net, const std::vector<std::set<std::size_t>>& groups,
                     const std::vector<std::size_t>& ratios);

/// Per-tier schedule for a base (slowest-tier) stepsize h. In coupled mode
/// every tier moves h / period_max per micro-step; slow_override replaces the
/// per-refresh stepsize of every tier above 0.
std::vector<RateTier> rate_tiers(const Partition& partition, std::size_t k, double h,
                                 std::optional<double> slow_override = std::nullopt);

}  // namespace mrsgd
