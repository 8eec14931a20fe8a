#include "mrsgd/network.hpp"

#include <algorithm>
#include <cmath>

#include "mrsgd/errors.hpp"

namespace mrsgd {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void apply_activation(Activation act, Tensor& z) {
  switch (act) {
    case Activation::identity:
      return;
    case Activation::relu:
      for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::tanh:
      for (double& v : z.values()) v = std::tanh(v);
      return;
    case Activation::softmax: {
      const std::size_t cols = z.cols();
      for (std::size_t r = 0; r < z.rows(); ++r) {
        double* row = z.data() + r * cols;
        const double peak = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          row[c] = std::exp(row[c] - peak);
          total += row[c];
        }
        for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
      }
      return;
    }
  }
}

// Multiplies delta in place by the activation derivative expressed through
// the activation output y.
void multiply_activation_derivative(Activation act, const Tensor& y, Tensor& delta) {
  switch (act) {
    case Activation::identity:
      return;
    case Activation::relu:
      for (std::size_t i = 0; i < delta.size(); ++i) {
        if (!(y[i] > 0.0)) delta[i] = 0.0;
      }
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= 1.0 - y[i] * y[i];
      return;
    case Activation::softmax:
      throw ContractError("softmax is only supported as the output activation paired with cross-entropy");
  }
}

// Rows of the result are (sample, output position); columns are the receptive
// field in (kernel row, kernel col, channel) order.
Tensor im2col(const Layer& l, const Tensor& x) {
  const std::size_t n = x.rows();
  const std::size_t positions = l.out_height * l.out_width;
  const std::size_t field = l.kernel * l.kernel * l.in_channels;
  Tensor cols({n * positions, field});
  for (std::size_t s = 0; s < n; ++s) {
    const double* img = x.data() + s * l.in_features;
    for (std::size_t oh = 0; oh < l.out_height; ++oh) {
      for (std::size_t ow = 0; ow < l.out_width; ++ow) {
        double* dst = cols.data() + ((s * positions) + oh * l.out_width + ow) * field;
        for (std::size_t ki = 0; ki < l.kernel; ++ki) {
          const double* src = img + ((oh + ki) * l.in_width + ow) * l.in_channels;
          std::copy(src, src + l.kernel * l.in_channels, dst + ki * l.kernel * l.in_channels);
        }
      }
    }
  }
  return cols;
}

Tensor col2im(const Layer& l, const Tensor& dcols, std::size_t n) {
  const std::size_t positions = l.out_height * l.out_width;
  const std::size_t field = l.kernel * l.kernel * l.in_channels;
  Tensor dx({n, l.in_features});
  for (std::size_t s = 0; s < n; ++s) {
    double* img = dx.data() + s * l.in_features;
    for (std::size_t oh = 0; oh < l.out_height; ++oh) {
      for (std::size_t ow = 0; ow < l.out_width; ++ow) {
        const double* src = dcols.data() + ((s * positions) + oh * l.out_width + ow) * field;
        for (std::size_t ki = 0; ki < l.kernel; ++ki) {
          double* dst = img + ((oh + ki) * l.in_width + ow) * l.in_channels;
          const double* row = src + ki * l.kernel * l.in_channels;
          for (std::size_t j = 0; j < l.kernel * l.in_channels; ++j) dst[j] += row[j];
        }
      }
    }
  }
  return dx;
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

std::string_view to_string(LossKind l) {
  return l == LossKind::cross_entropy ? "cross_entropy" : "mse";
}

Activation parse_activation(std::string_view s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "softmax") return Activation::softmax;
  throw FormatError("unknown activation '" + std::string(s) + "'");
}

LossKind parse_loss(std::string_view s) {
  if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
  if (s == "mse" || s == "mean_squared_error") return LossKind::mean_squared_error;
  throw FormatError("unknown loss '" + std::string(s) + "'");
}

Network::Network(std::vector<std::size_t> input_shape, const std::vector<LayerSpec>& specs, bool with_bias,
                 RngStream init)
    : input_shape_(std::move(input_shape)), with_bias_(with_bias) {
  if (specs.empty()) throw ContractError("network needs at least one layer");
  if (input_shape_.size() != 1 && input_shape_.size() != 3) {
    throw DimensionError("input shape must be {features} or {height, width, channels}");
  }
  input_size_ = shape_product(input_shape_);

  std::vector<std::size_t> shape = input_shape_;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    if (spec.units == 0) throw ContractError("layer " + std::to_string(i) + " has zero units");
    if (spec.activation == Activation::softmax && i + 1 != specs.size()) {
      throw ContractError("softmax is only allowed on the output layer");
    }
    Layer l;
    l.kind = spec.kind;
    l.activation = spec.activation;
    l.in_features = shape_product(shape);
    if (spec.kind == LayerKind::dense) {
      l.out_features = spec.units;
      shape = {spec.units};
    } else {
      if (shape.size() != 3) throw DimensionError("conv layer " + std::to_string(i) + " needs an image-shaped input");
      if (spec.kernel == 0 || spec.kernel > shape[0] || spec.kernel > shape[1]) {
        throw DimensionError("conv layer " + std::to_string(i) + " kernel does not fit its input");
      }
      l.in_height = shape[0];
      l.in_width = shape[1];
      l.in_channels = shape[2];
      l.kernel = spec.kernel;
      l.out_height = l.in_height - l.kernel + 1;
      l.out_width = l.in_width - l.kernel + 1;
      l.out_channels = spec.units;
      l.out_features = l.out_height * l.out_width * l.out_channels;
      shape = {l.out_height, l.out_width, l.out_channels};
    }
    layers_.push_back(l);
  }

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in()));
    RngStream stream = init.child(i);
    Tensor w({l.weight_rows(), l.fan_in()});
    for (double& v : w.values()) v = (2.0 * stream.uniform() - 1.0) * bound;
    Tensor b({with_bias_ ? l.bias_size() : 0});
    for (double& v : b.values()) v = (2.0 * stream.uniform() - 1.0) * bound;
    params_.push_back(std::move(w));
    params_.push_back(std::move(b));
  }
}

Network Network::dense(const std::vector<std::size_t>& widths, Activation hidden, Activation output, bool with_bias,
                       RngStream init) {
  if (widths.size() < 2) throw ContractError("dense network needs at least input and output widths");
  std::vector<LayerSpec> specs;
  for (std::size_t i = 1; i < widths.size(); ++i) {
    specs.push_back({LayerKind::dense, widths[i], 0, i + 1 == widths.size() ? output : hidden});
  }
  return Network({widths[0]}, specs, with_bias, init);
}

ParamLayout Network::layout() const {
  ParamLayout out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({{i, ParamRole::weight}, params_[2 * i].size()});
    out.push_back({{i, ParamRole::bias}, params_[2 * i + 1].size()});
  }
  return out;
}

std::vector<ParamId> Network::registry() const {
  std::vector<ParamId> out;
  for (const BlockInfo& b : layout()) {
    if (b.size > 0) out.push_back({b.key.layer, b.key.role, 0, b.size});
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.size();
  return n;
}

void Network::clear_cache() {
  input_ = Tensor();
  outputs_.clear();
  patches_.clear();
}

Tensor Network::forward(const Tensor& x, CostCounters* counters) {
  if (x.rank() != 2 || x.cols() != input_size_) {
    throw DimensionError("forward: expected batch x " + std::to_string(input_size_) + " input, got " + x.shape_string());
  }
  clear_cache();
  outputs_.reserve(layers_.size());
  patches_.resize(layers_.size());
  const std::size_t n = x.rows();
  input_ = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const Tensor& w = params_[2 * i];
    const Tensor& b = params_[2 * i + 1];
    const Tensor& current = i == 0 ? input_ : outputs_[i - 1];
    Tensor z;
    if (l.kind == LayerKind::dense) {
      z = matmul_nt(current, w, counters);
      if (with_bias_) add_row_broadcast(z, b);
    } else {
      patches_[i] = im2col(l, current);
      z = matmul_nt(patches_[i], w, counters);
      if (with_bias_) add_row_broadcast(z, b);
      z = z.reshaped({n, l.out_features});
    }
    apply_activation(l.activation, z);
    outputs_.push_back(std::move(z));
  }
  if (counters != nullptr) counters->forward_layer_visits += layers_.size();
  return outputs_.back();
}

void Network::check_loss_pairing(LossKind loss) const {
  const Activation out = layers_.back().activation;
  if (loss == LossKind::cross_entropy && out != Activation::softmax) {
    throw ContractError("cross-entropy loss requires a softmax output layer");
  }
  if (loss == LossKind::mean_squared_error && out == Activation::softmax) {
    throw ContractError("softmax output is only supported with cross-entropy loss");
  }
}

GradientMap Network::backward_full(LossKind loss, const Tensor& targets, CostCounters* counters) {
  return backward_from(0, loss, targets, counters);
}

GradientMap Network::backward_truncated(LossKind loss, const Tensor& targets,
                                        const std::set<std::size_t>& fast_suffix, CostCounters* counters) {
  if (fast_suffix.empty()) {
    if (!has_cache()) throw StateError("backward: no cached forward pass");
    return {};
  }
  const std::size_t first = *fast_suffix.begin();
  const std::size_t last = *fast_suffix.rbegin();
  if (last + 1 != layers_.size() || fast_suffix.size() != layers_.size() - first) {
    throw ContractError("backward_truncated: fast layers must form a contiguous final suffix");
  }
  return backward_from(first, loss, targets, counters);
}

GradientMap Network::backward_from(std::size_t first_layer, LossKind loss, const Tensor& targets,
                                   CostCounters* counters) {
  if (!has_cache()) throw StateError("backward: no cached forward pass");
  check_loss_pairing(loss);
  const std::size_t depth = layers_.size();
  if (first_layer > depth) throw ContractError("backward: suffix start beyond last layer");
  GradientMap grads;
  if (first_layer == depth) return grads;

  const Tensor& out = outputs_.back();
  if (targets.rank() != 2 || targets.rows() != out.rows() || targets.cols() != out.cols()) {
    throw DimensionError("backward: targets " + targets.shape_string() + " do not match outputs " + out.shape_string());
  }
  const std::size_t n = out.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  Tensor delta = sub(out, targets);
  for (double& v : delta.values()) v *= inv_n;
  if (loss == LossKind::mean_squared_error) multiply_activation_derivative(layers_.back().activation, out, delta);

  for (std::size_t i = depth; i-- > first_layer;) {
    const Layer& l = layers_[i];
    const Tensor& w = params_[2 * i];
    Tensor upstream;
    if (l.kind == LayerKind::dense) {
      grads[{i, ParamRole::weight}] = matmul_tn(delta, i == 0 ? input_ : outputs_[i - 1], counters);
      if (with_bias_) grads[{i, ParamRole::bias}] = column_sums(delta);
      if (i > first_layer) upstream = matmul(delta, w, counters);
    } else {
      const Tensor dz = delta.reshaped({n * l.out_height * l.out_width, l.out_channels});
      grads[{i, ParamRole::weight}] = matmul_tn(dz, patches_[i], counters);
      if (with_bias_) grads[{i, ParamRole::bias}] = column_sums(dz);
      if (i > first_layer) upstream = col2im(l, matmul(dz, w, counters), n);
    }
    if (counters != nullptr) counters->backward_layer_visits += 1;
    if (i > first_layer) {
      multiply_activation_derivative(layers_[i - 1].activation, outputs_[i - 1], upstream);
      delta = std::move(upstream);
    }
  }
  return grads;
}

double Network::loss_eval(LossKind loss, const Tensor& inputs, const Tensor& targets, CostCounters* counters) {
  check_loss_pairing(loss);
  const Tensor out = forward(inputs, counters);
  return loss_value(loss, out, targets);
}

bool Network::same_architecture(const Network& other) const {
  if (input_shape_ != other.input_shape_ || with_bias_ != other.with_bias_ || layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& a = layers_[i];
    const Layer& b = other.layers_[i];
    if (a.kind != b.kind || a.activation != b.activation || a.in_features != b.in_features ||
        a.out_features != b.out_features || a.kernel != b.kernel) {
      return false;
    }
  }
  return true;
}

double loss_value(LossKind loss, const Tensor& outputs, const Tensor& targets) {
  if (outputs.shape() != targets.shape()) {
    throw DimensionError("loss: outputs " + outputs.shape_string() + " vs targets " + targets.shape_string());
  }
  const std::size_t n = outputs.rows();
  double total = 0.0;
  if (loss == LossKind::cross_entropy) {
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      if (targets[i] != 0.0) total -= targets[i] * std::log(std::max(outputs[i], kProbabilityFloor));
    }
  } else {
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      const double d = outputs[i] - targets[i];
      total += 0.5 * d * d;
    }
  }
  return total / static_cast<double>(n);
}

Tensor one_hot(std::span<const std::int64_t> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DomainError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

double accuracy(const Tensor& outputs, std::span<const std::int64_t> labels) {
  if (outputs.rows() != labels.size()) throw DimensionError("accuracy: row/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  const std::size_t cols = outputs.cols();
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double* row = outputs.data() + r * cols;
    const auto best = static_cast<std::int64_t>(std::max_element(row, row + cols) - row);
    if (best == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<LayerSpec> Network::specs() const {
  std::vector<LayerSpec> out;
  for (const Layer& l : layers_) {
    const std::size_t units = l.kind == LayerKind::dense ? l.out_features : l.out_channels;
    out.push_back({l.kind, units, l.kernel, l.activation});
  }
  return out;
}

}  // namespace mrsgd
