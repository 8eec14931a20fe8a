#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mrsgd/rng.hpp"
#include "mrsgd/tensor.hpp"

namespace mrsgd {

enum class Activation { identity, relu, tanh, softmax };
enum class LossKind { cross_entropy, mean_squared_error };
enum class LayerKind { dense, conv };
enum class ParamRole : int { weight = 0, bias = 1 };

std::string_view to_string(Activation a);
std::string_view to_string(LossKind l);
Activation parse_activation(std::string_view s);
LossKind parse_loss(std::string_view s);

/// Identifies one parameter block: the weight or bias tensor of a layer.
struct ParamKey {
  std::size_t layer = 0;
  ParamRole role = ParamRole::weight;

  auto operator<=>(const ParamKey&) const = default;
  /// Position of this block in Network::parameters().
  std::size_t block_index() const { return 2 * layer + static_cast<std::size_t>(role); }
};

/// A flat scalar range [begin, end) inside one parameter block.
struct ParamId {
  std::size_t layer = 0;
  ParamRole role = ParamRole::weight;
  std::size_t begin = 0;
  std::size_t end = 0;

  ParamKey key() const { return {layer, role}; }
  std::size_t size() const { return end - begin; }
  bool operator==(const ParamId&) const = default;
};

/// Per-block description used by partitions and optimizers; one entry per
/// (layer, role) in block order, including zero-sized bias blocks.
struct BlockInfo {
  ParamKey key;
  std::size_t size = 0;

  bool operator==(const BlockInfo&) const = default;
};
using ParamLayout = std::vector<BlockInfo>;

using GradientMap = std::map<ParamKey, Tensor>;

/// Declarative layer description. For dense layers `units` is the output
/// width; for conv layers it is the output channel count.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;
  std::size_t kernel = 0;
  Activation activation = Activation::identity;
};

/// Resolved geometry of a layer. Image tensors are stored channel-last
/// (height, width, channel) and flattened per sample.
struct Layer {
  LayerKind kind = LayerKind::dense;
  Activation activation = Activation::identity;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // conv only
  std::size_t in_height = 0, in_width = 0, in_channels = 0;
  std::size_t kernel = 0;
  std::size_t out_height = 0, out_width = 0, out_channels = 0;

  std::size_t fan_in() const { return kind == LayerKind::dense ? in_features : in_channels * kernel * kernel; }
  std::size_t weight_rows() const { return kind == LayerKind::dense ? out_features : out_channels; }
  std::size_t bias_size() const { return weight_rows(); }
};

/// Feedforward stack of affine/conv stages with a parameter registry and a
/// forward cache consumed by backpropagation.
class Network {
 public:
  Network() = default;

  /// `input_shape` is {features} or {height, width, channels}. Weights and
  /// biases are drawn uniform in +-1/sqrt(fan_in).
  Network(std::vector<std::size_t> input_shape, const std::vector<LayerSpec>& specs, bool with_bias, RngStream init);

  /// Dense network with the given widths (input first).
  static Network dense(const std::vector<std::size_t>& widths, Activation hidden, Activation output, bool with_bias,
                       RngStream init);

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  const std::vector<std::size_t>& input_shape() const noexcept { return input_shape_; }
  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t output_size() const { return layers_.back().out_features; }
  bool has_bias() const noexcept { return with_bias_; }
  /// Layer descriptions that rebuild this architecture.
  std::vector<LayerSpec> specs() const;

  /// Blocks in order weight(0), bias(0), weight(1), ... Bias blocks are empty
  /// when the network has no biases.
  std::vector<Tensor>& parameters() noexcept { return params_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  Tensor& block(ParamKey key) { return params_.at(key.block_index()); }
  const Tensor& block(ParamKey key) const { return params_.at(key.block_index()); }

  ParamLayout layout() const;
  /// One ParamId per nonempty block covering the whole block.
  std::vector<ParamId> registry() const;
  std::size_t parameter_count() const;

  /// Evaluates the batch (rows = samples) and caches per-layer activations.
  Tensor forward(const Tensor& inputs, CostCounters* counters = nullptr);

  /// Gradients of the mean batch loss for every parameter block.
  GradientMap backward_full(LossKind loss, const Tensor& targets, CostCounters* counters = nullptr);

  /// Gradients restricted to a contiguous final suffix of layers. Values are
  /// identical to backward_full on those blocks; only |fast_suffix| layers
  /// are visited.
  GradientMap backward_truncated(LossKind loss, const Tensor& targets, const std::set<std::size_t>& fast_suffix,
                                 CostCounters* counters = nullptr);

  /// Same as backward_truncated for the suffix [first_layer, L).
  GradientMap backward_from(std::size_t first_layer, LossKind loss, const Tensor& targets,
                            CostCounters* counters = nullptr);

  double loss_eval(LossKind loss, const Tensor& inputs, const Tensor& targets, CostCounters* counters = nullptr);

  bool has_cache() const noexcept { return !outputs_.empty(); }
  void clear_cache();

  /// Architecture equality (shapes and activations), ignoring values.
  bool same_architecture(const Network& other) const;

 private:
  void check_loss_pairing(LossKind loss) const;

  std::vector<std::size_t> input_shape_;
  std::size_t input_size_ = 0;
  bool with_bias_ = true;
  std::vector<Layer> layers_;
  std::vector<Tensor> params_;

  // Forward cache: batch input, post-activation output per layer, im2col
  // patches for conv layers.
  Tensor input_;
  std::vector<Tensor> outputs_;
  std::vector<Tensor> patches_;
};

/// Mean batch loss from network outputs. Cross-entropy expects softmax
/// probabilities (clamped at 1e-12) and one-hot targets; mean squared error
/// is 0.5 * ||y - t||^2 averaged over the batch.
double loss_value(LossKind loss, const Tensor& outputs, const Tensor& targets);

/// One-hot encoding of integer labels.
Tensor one_hot(std::span<const std::int64_t> labels, std::size_t classes);

/// Fraction of rows whose argmax matches the label.
double accuracy(const Tensor& outputs, std::span<const std::int64_t> labels);

}  // namespace mrsgd
