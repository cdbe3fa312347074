#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fraclens/tensor.hpp"

namespace fraclens {

enum class LayerKind { standardize, conv2d, relu, maxpool2, global_avg_pool, flatten, dense };
enum class Padding { valid, same };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_channels = 0;  // conv2d
  std::size_t kernel = 0;        // conv2d, square
  Padding padding = Padding::valid;
  std::size_t units = 0;  // dense

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Thrown when layers, parameters or class names do not fit together.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sequential CNN. Parameter layout per layer:
///   standardize: scale[C], shift[C]         y = x * scale + shift
///   conv2d:      weight[O,I,K,K], bias[O]
///   dense:       weight[U,In], bias[U]
/// Parameter names are "layer<i>.<field>". The last layer must be dense and is
/// the classification head.
class Model {
 public:
  /// Validates shapes and parameter layout; throws ModelError naming the offending layer.
  static Model create(Shape input_shape, std::vector<LayerSpec> layers, std::vector<Parameter> params,
                      std::vector<std::string> class_names);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& layer_input_shape(std::size_t layer) const { return shapes_.at(layer); }
  const Shape& layer_output_shape(std::size_t layer) const { return shapes_.at(layer + 1); }
  const Shape& output_shape() const { return shapes_.back(); }

  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& parameter(std::string_view name) const;
  /// Indices into parameters() owned by a layer, in layout order.
  std::span<const std::size_t> layer_parameters(std::size_t layer) const { return layer_params_.at(layer); }

  const std::vector<std::string>& class_names() const { return class_names_; }
  std::size_t num_classes() const { return class_names_.size(); }
  std::size_t head_layer() const { return layers_.size() - 1; }
  bool is_head_parameter(std::size_t param_index) const;

  /// Number of scalar values in trainable parameters.
  std::size_t trainable_count() const;

  /// Replaces one parameter's values; shape must match. Used by optimizers on
  /// their private copy.
  void set_parameter_value(std::size_t index, Tensor value);

  friend bool operator==(const Model&, const Model&) = default;

 private:
  Model() = default;

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;  // shapes_[i] is the input of layer i; back() is the output
  std::vector<Parameter> params_;
  std::vector<std::vector<std::size_t>> layer_params_;
  std::vector<std::string> class_names_;
};

/// Fluent construction with seeded initialization: He-uniform for hidden
/// weights, the head rule (uniform +-1/sqrt(fan_in)) for the final dense layer,
/// zero biases.
class ModelBuilder {
 public:
  explicit ModelBuilder(Shape input_shape);

  ModelBuilder& standardize(std::vector<double> mean, std::vector<double> stddev);
  ModelBuilder& conv2d(std::size_t out_channels, std::size_t kernel, Padding padding = Padding::same);
  ModelBuilder& relu();
  ModelBuilder& maxpool2();
  ModelBuilder& global_avg_pool();
  ModelBuilder& flatten();
  ModelBuilder& dense(std::size_t units);

  Model build(std::vector<std::string> class_names, std::uint64_t seed) const;

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<double> mean_, stddev_;
};

/// Small conv net used throughout the pipeline:
/// standardize, 3x[conv3x3 + ReLU] with two max-pools, global average pool, dense head.
Model make_tiny_cnn(Shape input_shape, std::vector<std::string> class_names, std::uint64_t seed,
                    std::vector<double> mean = {}, std::vector<double> stddev = {});

/// New k-output head initialized uniform in +-1/sqrt(fan_in) from seed; all
/// other parameters copied unchanged. The new head is trainable.
Model replace_head(const Model& model, std::vector<std::string> class_names, std::uint64_t seed);
Model replace_head(const Model& model, std::size_t k, std::uint64_t seed);

/// Only the head weight and bias stay trainable.
Model freeze_backbone(const Model& model);

}  // namespace fraclens
