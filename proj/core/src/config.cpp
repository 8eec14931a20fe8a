#include "mrsgd/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& what, const std::string& value) {
  throw FormatError("config: " + key + ": expected " + what + ", got '" + value + "'");
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, "a number", v);
  return out;
}

std::uint64_t to_integer(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, "a nonnegative integer", v);
  return out;
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text, const std::string& origin) {
  ConfigMap map;
  map.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw FormatError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    if (key.empty()) throw FormatError(origin + ":" + std::to_string(number) + ": empty key");
    map.values_[key] = trim(std::string_view(content).substr(eq + 1));
  }
  return map;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::string ConfigMap::str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ConfigMap::real(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : to_real(key, it->second);
}

std::optional<double> ConfigMap::optional_real(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty() || it->second == "none") return std::nullopt;
  return to_real(key, it->second);
}

std::uint64_t ConfigMap::integer(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : to_integer(key, it->second);
}

bool ConfigMap::boolean(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, "a boolean", v);
}

std::vector<double> ConfigMap::reals(const std::string& key, const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  if (trim(it->second).empty()) return out;
  for (const auto& item : split(it->second, ',')) out.push_back(to_real(key, item));
  return out;
}

std::vector<std::uint64_t> ConfigMap::integers(const std::string& key,
                                               const std::vector<std::uint64_t>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::uint64_t> out;
  if (trim(it->second).empty()) return out;
  for (const auto& item : split(it->second, ',')) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const std::uint64_t lo = to_integer(key, trim(item.substr(0, dash)));
      const std::uint64_t hi = to_integer(key, trim(item.substr(dash + 1)));
      if (hi < lo) bad_value(key, "an ascending range", item);
      for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      out.push_back(to_integer(key, item));
    }
  }
  return out;
}

std::vector<std::string> ConfigMap::strings(const std::string& key, const std::vector<std::string>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (trim(it->second).empty()) return {};
  return split(it->second, ',');
}

std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, ConfigMap>> ConfigMap::expand_sweeps() const {
  ConfigMap base = *this;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& [key, value] : values_) {
    if (key.rfind("sweep.", 0) != 0) continue;
    const std::string target = key.substr(6);
    if (target.empty()) throw FormatError("config: sweep key without a target");
    auto items = split(value, value.find(';') != std::string::npos ? ';' : ',');
    if (items.empty() || std::any_of(items.begin(), items.end(), [](const std::string& s) { return s.empty(); })) {
      bad_value(key, "a comma-separated list of values", value);
    }
    axes.emplace_back(target, std::move(items));
    base.erase(key);
  }
  std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, ConfigMap>> out;
  out.emplace_back(std::vector<std::pair<std::string, std::string>>{}, base);
  for (const auto& [target, items] : axes) {
    decltype(out) next;
    for (const auto& [assign, map] : out) {
      for (const auto& v : items) {
        auto a = assign;
        a.emplace_back(target, v);
        ConfigMap m = map;
        m.set(target, v);
        next.emplace_back(std::move(a), std::move(m));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::vanilla: return "vanilla";
    case Algorithm::multirate: return "multirate";
    case Algorithm::random_subset: return "random_subset";
    case Algorithm::masked: return "masked";
    case Algorithm::composite: return "composite";
    case Algorithm::noise: return "noise";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view s) {
  if (s == "vanilla" || s == "sgd") return Algorithm::vanilla;
  if (s == "multirate") return Algorithm::multirate;
  if (s == "random_subset") return Algorithm::random_subset;
  if (s == "masked") return Algorithm::masked;
  if (s == "composite") return Algorithm::composite;
  if (s == "noise") return Algorithm::noise;
  throw FormatError("config: optimizer.algorithm: unknown algorithm '" + std::string(s) + "'");
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "experiment.name", "output.dir",
      "data.kind", "data.seed", "data.turns", "data.train_per_class", "data.test_per_class", "data.noise",
      "data.mnist_dir", "data.train_limit", "data.test_limit",
      "data.blob.side", "data.blob.bumps", "data.blob.width", "data.blob.amplitude", "data.blob.distractors",
      "data.blob.pixel_noise",
      "data.patch.patch_side", "data.patch.z_std", "data.patch.scale", "data.patch.fractions", "data.patch.train",
      "data.patch.test",
      "model.hidden", "model.conv", "model.activation", "model.loss", "model.bias",
      "partition.mode", "partition.fast_layers", "partition.bias_variant", "partition.probabilities",
      "partition.include_biases", "partition.groups", "partition.ratios",
      "optimizer.algorithm", "optimizer.h", "optimizer.k", "optimizer.momentum", "optimizer.drift",
      "optimizer.weight_decay", "optimizer.slow_stepsize", "optimizer.same_lr", "optimizer.noise_gamma",
      "optimizer.noise_tau", "optimizer.h_fast", "optimizer.h_slow",
      "train.epochs", "train.batch_size", "train.seeds", "train.eval_train", "train.track_grad_norm",
      "train.checkpoint", "train.lr_decay"};
  return keys;
}

template <class F>
auto field(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError("config: " + key + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& map) {
  for (const auto& [key, value] : map.values()) {
    if (key.rfind("bound.", 0) == 0 || key.rfind("gradcheck.", 0) == 0) continue;
    if (key.rfind("sweep.", 0) == 0) throw FormatError("config: " + key + ": sweeps must be expanded before building");
    if (!known_keys().contains(key)) throw FormatError("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  c.name = map.str("experiment.name", c.name);
  c.output_dir = map.str("output.dir", "");

  DataConfig& d = c.data;
  d.kind = map.str("data.kind", d.kind);
  if (d.kind != "spiral" && d.kind != "mnist" && d.kind != "patch") {
    throw FormatError("config: data.kind: expected spiral, mnist or patch, got '" + d.kind + "'");
  }
  d.seed = map.integer("data.seed", d.seed);
  d.turns = map.real("data.turns", d.turns);
  d.train_per_class = map.integer("data.train_per_class", d.train_per_class);
  d.test_per_class = map.integer("data.test_per_class", d.test_per_class);
  d.noise = map.real("data.noise", d.noise);
  d.mnist_dir = map.str("data.mnist_dir", "");
  d.train_limit = map.integer("data.train_limit", 0);
  d.test_limit = map.integer("data.test_limit", 0);
  d.blobs.side = map.integer("data.blob.side", d.blobs.side);
  d.blobs.bumps = map.integer("data.blob.bumps", d.blobs.bumps);
  d.blobs.width = map.real("data.blob.width", d.blobs.width);
  d.blobs.amplitude = map.real("data.blob.amplitude", d.blobs.amplitude);
  d.blobs.distractors = map.integer("data.blob.distractors", d.blobs.distractors);
  d.blobs.pixel_noise = map.real("data.blob.pixel_noise", d.blobs.pixel_noise);
  d.patch.image_side = d.blobs.side;
  d.patch.patch_side = map.integer("data.patch.patch_side", d.patch.patch_side);
  d.patch.z_std = map.real("data.patch.z_std", d.patch.z_std);
  d.patch.patch_only_scale = map.real("data.patch.scale", d.patch.patch_only_scale);
  const auto fr = map.reals("data.patch.fractions", {d.patch.fraction_none, d.patch.fraction_patch_only,
                                                     d.patch.fraction_mixed});
  if (fr.size() != 3) throw FormatError("config: data.patch.fractions: expected three values");
  d.patch.fraction_none = fr[0];
  d.patch.fraction_patch_only = fr[1];
  d.patch.fraction_mixed = fr[2];
  d.patch_train = map.integer("data.patch.train", d.patch_train);
  d.patch_test = map.integer("data.patch.test", d.patch_test);

  ModelConfig& m = c.model;
  {
    const auto hidden = map.integers("model.hidden", {64});
    m.hidden.assign(hidden.begin(), hidden.end());
  }
  for (const auto& item : map.strings("model.conv", {})) {
    const auto x = item.find('x');
    if (x == std::string::npos) bad_value("model.conv", "entries like 8x3 (channels x kernel)", item);
    m.conv.emplace_back(to_integer("model.conv", item.substr(0, x)), to_integer("model.conv", item.substr(x + 1)));
  }
  m.activation = field("model.activation", [&] { return parse_activation(map.str("model.activation", "tanh")); });
  m.loss = field("model.loss", [&] { return parse_loss(map.str("model.loss", "cross_entropy")); });
  m.bias = map.boolean("model.bias", m.bias);

  PartitionConfig& p = c.partition;
  p.mode = field("partition.mode", [&] { return parse_partition_mode(map.str("partition.mode", "all_fast")); });
  p.fast_layers = map.integer("partition.fast_layers", p.fast_layers);
  p.bias_variant = field("partition.bias_variant", [&] { return parse_bias_variant(map.str("partition.bias_variant", "all")); });
  p.probabilities = map.reals("partition.probabilities", {});
  p.include_biases = map.boolean("partition.include_biases", false);
  if (map.has("partition.groups")) {
    for (const auto& group : split(map.str("partition.groups", ""), '|')) {
      std::set<std::size_t> layers;
      for (const auto& item : split(group, ',')) {
        if (!item.empty()) layers.insert(to_integer("partition.groups", item));
      }
      p.groups.push_back(std::move(layers));
    }
  }
  {
    const auto ratios = map.integers("partition.ratios", {});
    p.ratios.assign(ratios.begin(), ratios.end());
  }

  c.algorithm = parse_algorithm(map.str("optimizer.algorithm", "vanilla"));
  MultirateConfig& o = c.optimizer;
  o.h = map.real("optimizer.h", o.h);
  o.k = map.integer("optimizer.k", o.k);
  o.momentum = map.real("optimizer.momentum", o.momentum);
  o.drift = map.boolean("optimizer.drift", o.drift);
  o.weight_decay = map.reals("optimizer.weight_decay", {});
  o.slow_stepsize = map.optional_real("optimizer.slow_stepsize");
  o.same_lr = map.boolean("optimizer.same_lr", false);
  if (c.algorithm == Algorithm::noise) {
    o.noise = NoiseConfig{map.reals("optimizer.noise_gamma", {1.0}), map.reals("optimizer.noise_tau", {0.0})};
  }
  c.h_fast = map.real("optimizer.h_fast", c.h_fast);
  c.h_slow = map.real("optimizer.h_slow", c.h_slow);

  TrainConfig& t = c.train;
  t.epochs = map.integer("train.epochs", t.epochs);
  t.batch_size = map.integer("train.batch_size", t.batch_size);
  t.seeds = map.integers("train.seeds", t.seeds);
  t.eval_train = map.boolean("train.eval_train", t.eval_train);
  t.track_grad_norm = map.boolean("train.track_grad_norm", t.track_grad_norm);
  t.checkpoint = map.boolean("train.checkpoint", t.checkpoint);
  const std::string decay = map.str("train.lr_decay", "none");
  if (decay != "none" && decay != "linear") bad_value("train.lr_decay", "none or linear", decay);
  t.linear_decay = decay == "linear";

  field("optimizer", [&] {
    c.validate();
    return 0;
  });
  return c;
}

void ExperimentConfig::validate() const {
  optimizer.validate();
  if (train.batch_size == 0) throw FormatError("config: train.batch_size: must be positive");
  if (train.seeds.empty()) throw FormatError("config: train.seeds: at least one seed required");
  if (data.kind != "patch" && !model.conv.empty()) throw FormatError("config: model.conv: only image data supports conv layers");
  if (algorithm == Algorithm::composite) composite_period(h_fast, h_slow);
  if ((algorithm == Algorithm::random_subset || algorithm == Algorithm::masked) &&
      partition.mode != PartitionMode::random_subset) {
    throw FormatError("config: partition.mode: random_subset and masked algorithms need partition.mode = random_subset");
  }
}

std::size_t ExperimentConfig::cycle_length() const {
  switch (algorithm) {
    case Algorithm::vanilla:
    case Algorithm::masked:
    case Algorithm::noise: return 1;
    case Algorithm::random_subset: return optimizer.k + 1;
    case Algorithm::composite: return composite_period(h_fast, h_slow);
    case Algorithm::multirate: {
      if (partition.mode == PartitionMode::multi_tier && !partition.ratios.empty()) {
        std::size_t p = 1;
        for (std::size_t r : partition.ratios) p *= r;
        return p;
      }
      return optimizer.k;
    }
  }
  return 1;
}

}  // namespace mrsgd
