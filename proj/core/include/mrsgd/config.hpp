#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mrsgd/data.hpp"
#include "mrsgd/network.hpp"
#include "mrsgd/optimizer.hpp"
#include "mrsgd/partition.hpp"

namespace mrsgd {

/// Flat `key = value` text with dotted keys. `#` starts a comment; blank
/// lines are ignored; later assignments override earlier ones.
class ConfigMap {
 public:
  ConfigMap() = default;
  static ConfigMap parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigMap load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void erase(const std::string& key) { values_.erase(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::string& fallback) const;
  double real(const std::string& key, double fallback) const;
  std::optional<double> optional_real(const std::string& key) const;
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::uint64_t> integers(const std::string& key, const std::vector<std::uint64_t>& fallback) const;
  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) const;

  /// `sweep.<key> = a, b, c` entries (or `a; b; c` when values contain
  /// commas) expanded into the Cartesian product of
  /// plain configs (keys in lexicographic order, first key slowest). Each
  /// point is returned with its (key, value) assignments.
  std::vector<std::pair<std::vector<std::pair<std::string, std::string>>, ConfigMap>> expand_sweeps() const;

  std::string origin() const { return origin_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_ = "<string>";
};

enum class Algorithm { vanilla, multirate, random_subset, masked, composite, noise };
std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view s);

struct DataConfig {
  std::string kind = "spiral";  // spiral | mnist | patch
  std::uint64_t seed = 0;
  // spiral
  double turns = 4.0;
  std::size_t train_per_class = 2000;
  std::size_t test_per_class = 1000;
  double noise = 0.02;
  // mnist
  std::string mnist_dir;
  std::size_t train_limit = 0;  // 0 = all
  std::size_t test_limit = 0;
  // patch
  BlobSpec blobs;
  PatchSpec patch;
  std::size_t patch_train = 4000;
  std::size_t patch_test = 2000;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{64};
  std::vector<std::pair<std::size_t, std::size_t>> conv;  // (channels, kernel)
  Activation activation = Activation::tanh;
  LossKind loss = LossKind::cross_entropy;
  bool bias = true;
};

struct PartitionConfig {
  PartitionMode mode = PartitionMode::all_fast;
  std::size_t fast_layers = 1;
  BiasVariant bias_variant = BiasVariant::all;
  std::vector<double> probabilities;
  bool include_biases = false;
  std::vector<std::set<std::size_t>> groups;
  std::vector<std::size_t> ratios;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::vector<std::uint64_t> seeds{0};
  bool eval_train = true;
  bool track_grad_norm = false;
  bool checkpoint = false;
  bool linear_decay = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  ModelConfig model;
  PartitionConfig partition;
  Algorithm algorithm = Algorithm::vanilla;
  MultirateConfig optimizer;
  double h_fast = 0.004;  // composite
  double h_slow = 0.1;    // composite
  TrainConfig train;
  std::string output_dir;

  /// Builds from a map; unknown keys and malformed values throw FormatError
  /// naming the offending key.
  static ExperimentConfig from_map(const ConfigMap& map);
  void validate() const;
  /// Micro-steps consumed by one optimizer call.
  std::size_t cycle_length() const;
};

}  // namespace mrsgd
