#include "mrsgd/optimizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

std::vector<Tensor> zeros_like(const std::vector<Tensor>& blocks) {
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (const Tensor& b : blocks) out.push_back(Tensor::zeros_like(b));
  return out;
}

void ensure_momenta(Objective& obj, OptState& state) {
  auto& params = obj.parameters();
  if (state.momenta.empty()) state.momenta = zeros_like(params);
  if (state.momenta.size() != params.size()) throw StateError("optimizer state does not mirror the parameter blocks");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (state.momenta[b].size() != params[b].size()) throw StateError("momentum shape differs from its parameter");
    if (state.momenta[b].shape() != params[b].shape()) state.momenta[b] = state.momenta[b].reshaped(params[b].shape());
  }
}

void check_partition(const Objective& obj, const Partition& partition) {
  if (!partition.matches(obj.layout())) throw ContractError("partition does not match the parameter layout");
}

double per_tier(const std::vector<double>& values, std::size_t tier, double fallback) {
  if (values.empty()) return fallback;
  return values.size() == 1 ? values[0] : values.at(tier);
}

const Tensor& gradient_block(const GradientMap& grads, std::size_t block, const ParamLayout& layout) {
  auto it = grads.find(layout[block].key);
  if (it == grads.end()) throw StateError("gradient for a due parameter block was not computed");
  return it->second;
}

using TierFlags = std::vector<char>;

// Branch-free select; masks are random per scalar so branches mispredict.
inline double blend(std::uint64_t mask, double a, double b) {
  return std::bit_cast<double>((std::bit_cast<std::uint64_t>(a) & mask) | (std::bit_cast<std::uint64_t>(b) & ~mask));
}
inline double pick(bool c, double a, double b) { return blend(-static_cast<std::uint64_t>(c), a, b); }
inline std::uint64_t all_bits(bool c) { return -static_cast<std::uint64_t>(c); }

// p := mu p + g (+ omega theta) on the scalars whose tier is flagged in `due`.
void refresh_momenta(std::vector<Tensor>& params, OptState& state, const Partition& partition,
                     const GradientMap& grads, const TierFlags& due, const MultirateConfig& cfg) {
  const ParamLayout& layout = partition.layout();
  const double mu = cfg.momentum;
  const std::size_t tiers = due.size();
  std::vector<double> decay(tiers);
  bool any_decay = false;
  for (std::size_t t = 0; t < tiers; ++t) {
    decay[t] = cfg.decay_for_tier(t);
    any_decay = any_decay || decay[t] != 0.0;
  }
  const char* flag = due.data();
  const double* omega = decay.data();
  for (std::size_t b = 0; b < layout.size(); ++b) {
    if (layout[b].size == 0) continue;
    const std::uint8_t* tier = partition.block_tiers(b).data();
    const std::size_t n = layout[b].size;
    std::size_t j = 0;
    while (j < n && !flag[tier[j]]) ++j;
    if (j == n) continue;
    const double* g = gradient_block(grads, b, layout).data();
    double* p = state.momenta[b].data();
    const double* theta = params[b].data();
    if (tiers <= 2 && !any_decay) {
      const std::uint64_t due0 = all_bits(flag[0]), due1 = all_bits(tiers == 2 && flag[1]);
      for (; j < n; ++j) {
        const std::uint64_t slow = all_bits(tier[j] != 0);
        p[j] = blend((due1 & slow) | (due0 & ~slow), mu * p[j] + g[j], p[j]);
      }
      continue;
    }
    for (; j < n; ++j) {
      const std::uint8_t t = tier[j];
      const double om = omega[t];
      double np = mu * p[j] + g[j];
      np = om != 0.0 ? np + om * theta[j] : np;
      p[j] = pick(flag[t], np, p[j]);
    }
  }
}

// theta := theta - step[tier] p for every scalar whose tier is flagged in `active`.
void move_along_momenta(std::vector<Tensor>& params, const OptState& state, const Partition& partition,
                        const std::vector<double>& step, const TierFlags& active) {
  const ParamLayout& layout = partition.layout();
  const std::size_t tiers = active.size();
  const char* flag = active.data();
  const double* h = step.data();
  for (std::size_t b = 0; b < layout.size(); ++b) {
    const std::uint8_t* tier = partition.block_tiers(b).data();
    const double* p = state.momenta[b].data();
    double* theta = params[b].data();
    const std::size_t n = layout[b].size;
    if (tiers <= 2) {
      const std::uint64_t on0 = all_bits(flag[0]), on1 = all_bits(tiers == 2 && flag[1]);
      const double h0 = h[0], h1 = tiers == 2 ? h[1] : 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const std::uint64_t slow = all_bits(tier[j] != 0);
        const double moved = theta[j] - blend(slow, h1, h0) * p[j];
        theta[j] = blend((on1 & slow) | (on0 & ~slow), moved, theta[j]);
      }
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint8_t t = tier[j];
      const double moved = theta[j] - h[t] * p[j];
      theta[j] = pick(flag[t], moved, theta[j]);
    }
  }
}

std::optional<double> slow_override(const MultirateConfig& cfg) {
  if (cfg.same_lr) return cfg.h / static_cast<double>(cfg.k);
  return cfg.slow_stepsize;
}

void run_macro_step(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                    std::span<const Batch> batches) {
  cfg.validate();
  check_partition(obj, partition);
  ensure_momenta(obj, state);
  const std::vector<RateTier> tiers = rate_tiers(partition, cfg.k, cfg.h, slow_override(cfg));
  const std::size_t cycle = tiers.back().period;
  if (batches.size() != cycle) {
    throw ContractError("macro_step: expected " + std::to_string(cycle) + " minibatches, got " +
                        std::to_string(batches.size()));
  }
  const std::size_t tier_count = tiers.size();
  TierFlags populated(tier_count);
  std::vector<double> drift(tier_count), jump(tier_count);
  for (std::size_t t = 0; t < tier_count; ++t) {
    populated[t] = partition.count_in_tier(t) > 0;
    drift[t] = tiers[t].drift_stepsize;
    jump[t] = tiers[t].stepsize;
  }
  auto& params = obj.parameters();

  for (std::size_t micro = 0; micro < cycle; ++micro) {
    TierFlags due(tier_count, false);
    for (std::size_t t = 0; t < tier_count; ++t) due[t] = populated[t] && micro % tiers[t].period == 0;

    if (cfg.drift) {
      std::size_t first = partition.layer_count();
      bool any_due = false;
      for (std::size_t t = 0; t < tier_count; ++t) {
        if (!due[t]) continue;
        any_due = true;
        first = std::min(first, partition.first_layer_of(t));
      }
      if (any_due) {
        const GradientMap grads = obj.gradient(batches[micro], first, state.counters);
        refresh_momenta(params, state, partition, grads, due, cfg);
      }
      move_along_momenta(params, state, partition, drift, populated);
    } else {
      // Slowest first: each tier sees the parameters left by the slower jumps.
      for (std::size_t t = tier_count; t-- > 0;) {
        if (!due[t]) continue;
        TierFlags only(tier_count, false);
        only[t] = true;
        const GradientMap grads = obj.gradient(batches[micro], partition.first_layer_of(t), state.counters);
        refresh_momenta(params, state, partition, grads, only, cfg);
        move_along_momenta(params, state, partition, jump, only);
      }
    }
  }
  state.micro_step += cycle;
  state.macro_step += 1;
}

}  // namespace

GradientMap NetworkObjective::gradient(const Batch& batch, std::size_t first_layer, CostCounters& counters) {
  net_->forward(batch.inputs, &counters);
  return net_->backward_from(first_layer, loss_, batch.targets, &counters);
}

void MultirateConfig::validate() const {
  if (!(h >= 0.0) || !std::isfinite(h)) throw DomainError("stepsize h must be finite and nonnegative");
  if (k == 0) throw DomainError("k must be a positive integer");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
  for (double w : weight_decay) {
    if (!(w >= 0.0)) throw DomainError("weight decay must be nonnegative");
  }
  if (slow_stepsize && !(*slow_stepsize > 0.0)) throw DomainError("slow stepsize override must be positive");
  if (noise) {
    for (double g : noise->gamma) {
      if (!(g > 0.0)) throw DomainError("noise friction gamma must be positive");
    }
    for (double t : noise->tau) {
      if (!(t >= 0.0)) throw DomainError("noise temperature tau must be nonnegative");
    }
  }
}

double MultirateConfig::decay_for_tier(std::size_t tier) const { return per_tier(weight_decay, tier, 0.0); }

OptState OptState::zeros(const ParamLayout& layout, RngStream rng) {
  OptState s;
  for (const BlockInfo& b : layout) s.momenta.push_back(Tensor({b.size}));
  s.rng = rng;
  return s;
}

void vanilla_step(Objective& obj, OptState& state, const Batch& batch, const MultirateConfig& cfg) {
  cfg.validate();
  ensure_momenta(obj, state);
  const GradientMap grads = obj.gradient(batch, 0, state.counters);
  auto& params = obj.parameters();
  const ParamLayout layout = obj.layout();
  const double mu = cfg.momentum;
  const double h = cfg.h;
  const double omega = cfg.decay_for_tier(0);
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() == 0) continue;
    const Tensor& g = gradient_block(grads, b, layout);
    Tensor& p = state.momenta[b];
    Tensor& theta = params[b];
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] = mu * p[j] + g[j];
      if (omega != 0.0) p[j] += omega * theta[j];
      theta[j] -= h * p[j];
    }
  }
  state.micro_step += 1;
  state.macro_step += 1;
}

void macro_step(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                std::span<const Batch> batches) {
  run_macro_step(obj, state, partition, cfg, batches);
}

void macro_step_wd(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                   std::span<const Batch> batches) {
  for (double w : cfg.weight_decay) {
    if (!(w >= 0.0)) throw DomainError("macro_step_wd: weight decay must be nonnegative");
  }
  run_macro_step(obj, state, partition, cfg, batches);
}

void stash_slow(std::vector<Tensor>& params, OptState& state, const Partition& partition) {
  if (state.stash) throw StateError("stash_slow: a stash is already active");
  std::vector<Tensor> stash;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto tiers = partition.block_tiers(b);
    Tensor saved = Tensor::zeros_like(params[b]);
    double* theta = params[b].data();
    double* out = saved.data();
    for (std::size_t j = 0; j < saved.size(); ++j) {
      const bool slow = tiers[j] != 0;
      out[j] = pick(slow, theta[j], 0.0);
      theta[j] = pick(slow, 0.0, theta[j]);
    }
    stash.push_back(std::move(saved));
  }
  state.stash = std::move(stash);
}

void restore_slow(std::vector<Tensor>& params, OptState& state, const Partition& partition) {
  if (!state.stash) throw StateError("restore_slow: no stashed slow values");
  const auto& stash = *state.stash;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto tiers = partition.block_tiers(b);
    double* theta = params[b].data();
    const double* saved = stash[b].data();
    for (std::size_t j = 0; j < params[b].size(); ++j) theta[j] = pick(tiers[j] != 0, saved[j], theta[j]);
  }
  state.stash.reset();
}

void random_subset_cycle(Objective& obj, OptState& state, Partition& partition, const MultirateConfig& cfg,
                         std::span<const Batch> batches) {
  cfg.validate();
  check_partition(obj, partition);
  if (partition.tier_count() != 2) throw ContractError("random_subset_cycle: needs a two-tier mask partition");
  if (batches.size() != cfg.k + 1) {
    throw ContractError("random_subset_cycle: expected k + 1 = " + std::to_string(cfg.k + 1) + " minibatches, got " +
                        std::to_string(batches.size()));
  }
  ensure_momenta(obj, state);
  auto& params = obj.parameters();
  const TierFlags fast_only{true, false};
  const TierFlags both{true, true};

  stash_slow(params, state, partition);
  const std::vector<double> fast_step{cfg.h, 0.0};
  for (std::size_t i = 0; i < cfg.k; ++i) {
    if (partition.count_in_tier(0) == 0) break;
    const GradientMap grads = obj.gradient(batches[i], partition.first_layer_of(0), state.counters);
    refresh_momenta(params, state, partition, grads, fast_only, cfg);
    move_along_momenta(params, state, partition, fast_step, fast_only);
  }
  restore_slow(params, state, partition);

  const double slow_h = cfg.same_lr ? cfg.h : cfg.slow_stepsize.value_or(cfg.h * static_cast<double>(cfg.k));
  const GradientMap grads = obj.gradient(batches[cfg.k], 0, state.counters);
  refresh_momenta(params, state, partition, grads, both, cfg);
  move_along_momenta(params, state, partition, {cfg.h, slow_h}, both);

  partition = partition.resample(state.rng);
  state.micro_step += cfg.k + 1;
  state.macro_step += 1;
}

void masked_step(Objective& obj, OptState& state, Partition& partition, const MultirateConfig& cfg,
                 const Batch& batch) {
  cfg.validate();
  check_partition(obj, partition);
  ensure_momenta(obj, state);
  partition = partition.resample(state.rng);
  auto& params = obj.parameters();
  const TierFlags fast_only{true, false};
  stash_slow(params, state, partition);
  if (partition.count_in_tier(0) > 0) {
    const GradientMap grads = obj.gradient(batch, partition.first_layer_of(0), state.counters);
    refresh_momenta(params, state, partition, grads, fast_only, cfg);
    move_along_momenta(params, state, partition, {cfg.h, 0.0}, fast_only);
  }
  restore_slow(params, state, partition);
  state.micro_step += 1;
  state.macro_step += 1;
}

std::size_t composite_period(double h_fast, double h_slow) {
  if (!(h_fast > 0.0) || !(h_slow > 0.0)) throw DomainError("composite: stepsizes must be positive");
  const double ratio = h_slow / h_fast;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded) {
    throw ContractError("composite: h_slow / h_fast must be a positive integer");
  }
  return static_cast<std::size_t>(rounded);
}

void composite_average_step(Objective& fast, Objective& slow, OptState& fast_state, OptState& slow_state,
                            double h_fast, double h_slow, double momentum, std::span<const Batch> batches) {
  if (!(fast.layout() == slow.layout())) throw ContractError("composite: the two copies differ in architecture");
  const std::size_t k = composite_period(h_fast, h_slow);
  if (batches.size() != k) {
    throw ContractError("composite: expected " + std::to_string(k) + " minibatches, got " +
                        std::to_string(batches.size()));
  }
  MultirateConfig fast_cfg;
  fast_cfg.h = h_fast;
  fast_cfg.momentum = momentum;
  MultirateConfig slow_cfg = fast_cfg;
  slow_cfg.h = h_slow;
  for (const Batch& b : batches) vanilla_step(fast, fast_state, b, fast_cfg);
  vanilla_step(slow, slow_state, batches[0], slow_cfg);

  auto& a = fast.parameters();
  auto& b = slow.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      const double mean = 0.5 * (a[i][j] + b[i][j]);
      a[i][j] = mean;
      b[i][j] = mean;
    }
  }
}

void noise_step(Objective& obj, OptState& state, const Partition& partition, const MultirateConfig& cfg,
                const Batch& batch) {
  cfg.validate();
  if (!cfg.noise) throw ContractError("noise_step: configuration has no noise section");
  check_partition(obj, partition);
  ensure_momenta(obj, state);
  const double h = cfg.h;
  const std::size_t tier_count = partition.tier_count();
  std::vector<double> damping(tier_count), kick(tier_count);
  for (std::size_t t = 0; t < tier_count; ++t) {
    const double gamma = per_tier(cfg.noise->gamma, t, 1.0);
    const double tau = per_tier(cfg.noise->tau, t, 0.0);
    damping[t] = 1.0 - gamma * h;
    kick[t] = std::sqrt(2.0 * gamma * tau * h);
    if (damping[t] < 0.0) {
      const std::string msg = "noise_step: 1 - gamma h < 0 on tier " + std::to_string(t);
      if (std::find(state.warnings.begin(), state.warnings.end(), msg) == state.warnings.end()) {
        state.warnings.push_back(msg);
      }
    }
  }
  const GradientMap grads = obj.gradient(batch, 0, state.counters);
  auto& params = obj.parameters();
  const ParamLayout& layout = partition.layout();
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() == 0) continue;
    const auto tiers = partition.block_tiers(b);
    const Tensor& g = gradient_block(grads, b, layout);
    Tensor& p = state.momenta[b];
    Tensor& theta = params[b];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const std::uint8_t t = tiers[j];
      p[j] = damping[t] * p[j] - h * g[j];
      if (kick[t] != 0.0) p[j] += kick[t] * state.rng.normal();
      theta[j] += h * p[j];
    }
  }
  state.micro_step += 1;
  state.macro_step += 1;
}

double linear_decay(double h, std::size_t epoch, std::size_t epochs) {
  if (epochs == 0) return h;
  return h * (1.0 - static_cast<double>(epoch) / static_cast<double>(epochs));
}

}  // namespace mrsgd
