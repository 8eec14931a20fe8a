#include "mrsgd/partition.hpp"

#include <algorithm>
#include <array>

#include "mrsgd/errors.hpp"

namespace mrsgd {

std::string_view to_string(PartitionMode m) {
  switch (m) {
    case PartitionMode::all_fast: return "all_fast";
    case PartitionMode::layerwise: return "layerwise";
    case PartitionMode::bias_slow: return "bias_slow";
    case PartitionMode::random_subset: return "random_subset";
    case PartitionMode::multi_tier: return "multi_tier";
  }
  return "?";
}

PartitionMode parse_partition_mode(std::string_view s) {
  if (s == "all_fast" || s == "none") return PartitionMode::all_fast;
  if (s == "layerwise") return PartitionMode::layerwise;
  if (s == "bias_slow") return PartitionMode::bias_slow;
  if (s == "random_subset") return PartitionMode::random_subset;
  if (s == "multi_tier") return PartitionMode::multi_tier;
  throw FormatError("unknown partition mode '" + std::string(s) + "'");
}

BiasVariant parse_bias_variant(std::string_view s) {
  if (s == "all") return BiasVariant::all;
  if (s == "input" || s == "input_only") return BiasVariant::input_only;
  if (s == "output" || s == "output_only") return BiasVariant::output_only;
  throw FormatError("unknown bias variant '" + std::string(s) + "'");
}

Partition::Partition(ParamLayout layout, std::vector<std::vector<std::uint8_t>> tiers, std::size_t tier_count,
                     PartitionMode mode)
    : layout_(std::move(layout)), tiers_(std::move(tiers)), tier_count_(tier_count), mode_(mode) {
  if (tier_count_ == 0 || tier_count_ > 255) throw ContractError("partition: tier count must be in [1, 255]");
  if (tiers_.size() != layout_.size()) throw ContractError("partition: one tier vector per parameter block required");
  for (std::size_t b = 0; b < layout_.size(); ++b) {
    if (tiers_[b].size() != layout_[b].size) {
      throw ContractError("partition: block " + std::to_string(b) + " tier vector does not cover the block");
    }
  }
  index();
}

void Partition::index() {
  layer_count_ = 0;
  for (const BlockInfo& b : layout_) layer_count_ = std::max(layer_count_, b.key.layer + 1);
  counts_.assign(tier_count_, 0);
  first_layer_.assign(tier_count_, layer_count_);
  std::array<std::size_t, 256> hist{};
  for (std::size_t b = 0; b < layout_.size(); ++b) {
    hist.fill(0);
    for (std::uint8_t t : tiers_[b]) ++hist[t];
    for (std::size_t t = 0; t < hist.size(); ++t) {
      if (hist[t] == 0) continue;
      if (t >= tier_count_) throw ContractError("partition: tier index out of range");
      counts_[t] += hist[t];
      first_layer_[t] = std::min(first_layer_[t], layout_[b].key.layer);
    }
  }
}

Partition Partition::all_fast(const ParamLayout& layout) {
  std::vector<std::vector<std::uint8_t>> tiers;
  for (const BlockInfo& b : layout) tiers.emplace_back(b.size, std::uint8_t{0});
  return Partition(layout, std::move(tiers), 1, PartitionMode::all_fast);
}

std::uint8_t Partition::tier_of(const ParamId& id) const {
  for (std::size_t b = 0; b < layout_.size(); ++b) {
    if (layout_[b].key == id.key()) return tiers_[b].at(id.begin);
  }
  throw ContractError("partition: unknown parameter block");
}

std::vector<std::pair<ParamId, std::size_t>> Partition::assignment() const {
  std::vector<std::pair<ParamId, std::size_t>> out;
  for (std::size_t b = 0; b < layout_.size(); ++b) {
    const auto& tiers = tiers_[b];
    std::size_t start = 0;
    for (std::size_t i = 1; i <= tiers.size(); ++i) {
      if (i == tiers.size() || tiers[i] != tiers[start]) {
        out.push_back({ParamId{layout_[b].key.layer, layout_[b].key.role, start, i}, tiers[start]});
        start = i;
      }
    }
  }
  return out;
}

std::size_t Partition::scalar_count() const {
  std::size_t n = 0;
  for (const BlockInfo& b : layout_) n += b.size;
  return n;
}

bool Partition::matches(const ParamLayout& layout) const { return layout == layout_; }

void Partition::set_ratios(std::vector<std::size_t> ratios) {
  if (!ratios.empty() && ratios.size() + 1 != tier_count_) {
    throw ContractError("partition: need exactly tier_count - 1 period ratios");
  }
  for (std::size_t r : ratios) {
    if (r == 0) throw ContractError("partition: period ratios must be positive");
  }
  ratios_ = std::move(ratios);
}

std::vector<std::size_t> Partition::periods(std::size_t k) const {
  if (k == 0) throw ContractError("partition: k must be positive");
  std::vector<std::size_t> out{1};
  if (!ratios_.empty()) {
    for (std::size_t r : ratios_) out.push_back(out.back() * r);
    return out;
  }
  for (std::size_t t = 1; t < tier_count_; ++t) out.push_back(out.back() * k);
  return out;
}

Partition Partition::resample(RngStream& rng) const {
  if (!random_subset_) throw StateError("resample: partition was not built from a random-subset spec");
  std::vector<std::vector<std::uint8_t>> tiers;
  for (const BlockInfo& b : layout_) {
    std::vector<std::uint8_t> t(b.size, std::uint8_t{0});
    const bool maskable = b.key.role == ParamRole::weight || random_subset_->include_biases;
    if (maskable) {
      const double p = random_subset_->probabilities.at(b.key.layer);
      rng.fill_bernoulli(t.data(), t.size(), p);
    }
    tiers.push_back(std::move(t));
  }
  Partition out(layout_, std::move(tiers), 2, PartitionMode::random_subset);
  out.random_subset_ = random_subset_;
  return out;
}

Partition layerwise(const ParamLayout& layout, std::size_t fast_layers) {
  std::size_t depth = 0;
  for (const BlockInfo& b : layout) depth = std::max(depth, b.key.layer + 1);
  if (fast_layers == 0 || fast_layers > depth) {
    throw ContractError("layerwise: fast layer count must be in [1, " + std::to_string(depth) + "]");
  }
  const std::size_t first_fast = depth - fast_layers;
  std::vector<std::vector<std::uint8_t>> tiers;
  for (const BlockInfo& b : layout) {
    tiers.emplace_back(b.size, b.key.layer >= first_fast ? std::uint8_t{0} : std::uint8_t{1});
  }
  return Partition(layout, std::move(tiers), 2, PartitionMode::layerwise);
}

Partition layerwise(const Network& net, std::size_t fast_layers) { return layerwise(net.layout(), fast_layers); }

Partition bias_slow(const Network& net, BiasVariant variant) {
  const ParamLayout layout = net.layout();
  const std::size_t last = net.layer_count() - 1;
  std::vector<std::vector<std::uint8_t>> tiers;
  for (const BlockInfo& b : layout) {
    bool slow = b.key.role == ParamRole::bias;
    if (variant == BiasVariant::input_only) slow = slow && b.key.layer == 0;
    if (variant == BiasVariant::output_only) slow = slow && b.key.layer == last;
    tiers.emplace_back(b.size, slow ? std::uint8_t{1} : std::uint8_t{0});
  }
  return Partition(layout, std::move(tiers), 2, PartitionMode::bias_slow);
}

Partition sample_random_subset(const Network& net, const std::vector<double>& probabilities, RngStream& rng,
                               std::size_t resample_period, bool include_biases) {
  if (probabilities.size() != net.layer_count()) {
    throw ContractError("sample_random_subset: need one probability per layer (" + std::to_string(net.layer_count()) +
                        "), got " + std::to_string(probabilities.size()));
  }
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("sample_random_subset: probability outside [0, 1]");
  }
  if (resample_period == 0) throw ContractError("sample_random_subset: resample period must be positive");
  Partition seed_partition(net.layout(), [&] {
    std::vector<std::vector<std::uint8_t>> tiers;
    for (const BlockInfo& b : net.layout()) tiers.emplace_back(b.size, std::uint8_t{0});
    return tiers;
  }(), 2, PartitionMode::random_subset);
  seed_partition.set_random_subset({probabilities, include_biases, resample_period});
  return seed_partition.resample(rng);
}

Partition multi_tier(const Network& net, const std::vector<std::set<std::size_t>>& groups,
                     const std::vector<std::size_t>& ratios) {
  if (groups.empty()) throw ContractError("multi_tier: at least one group required");
  if (ratios.size() + 1 != groups.size()) throw ContractError("multi_tier: need |K| = tiers - 1");
  std::vector<int> tier_of_layer(net.layer_count(), -1);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t layer : groups[g]) {
      if (layer >= net.layer_count()) throw ContractError("multi_tier: layer index out of range");
      if (tier_of_layer[layer] != -1) throw ContractError("multi_tier: layer " + std::to_string(layer) + " in two groups");
      tier_of_layer[layer] = static_cast<int>(g);
    }
  }
  for (std::size_t l = 0; l < tier_of_layer.size(); ++l) {
    if (tier_of_layer[l] == -1) throw ContractError("multi_tier: layer " + std::to_string(l) + " not covered");
  }
  const ParamLayout layout = net.layout();
  std::vector<std::vector<std::uint8_t>> tiers;
  for (const BlockInfo& b : layout) tiers.emplace_back(b.size, static_cast<std::uint8_t>(tier_of_layer[b.key.layer]));
  Partition out(layout, std::move(tiers), groups.size(), PartitionMode::multi_tier);
  out.set_ratios(ratios);
  return out;
}

std::vector<RateTier> rate_tiers(const Partition& partition, std::size_t k, double h,
                                 std::optional<double> slow_override) {
  const std::vector<std::size_t> periods = partition.periods(k);
  const std::size_t longest = periods.back();
  const double micro = h / static_cast<double>(longest);
  std::vector<RateTier> out;
  for (std::size_t t = 0; t < periods.size(); ++t) {
    // Periods divide each other, so longest / period is exact.
    const std::size_t ratio = longest / periods[t];
    RateTier tier{t, periods[t], ratio == 1 ? h : h / static_cast<double>(ratio), micro, false};
    if (t > 0 && slow_override) {
      tier.stepsize = *slow_override;
      tier.drift_stepsize = *slow_override / static_cast<double>(periods[t]);
      tier.overridden = true;
    }
    out.push_back(tier);
  }
  return out;
}

}  // namespace mrsgd
