#include "fraclens/model.hpp"

#include <cmath>

#include "fraclens/rng.hpp"

namespace fraclens {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::standardize: return "standardize";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::standardize, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2,
                 LayerKind::global_avg_pool, LayerKind::flatten, LayerKind::dense})
    if (layer_kind_name(k) == name) return k;
  throw ModelError("unknown layer kind '" + std::string(name) + "'");
}

namespace {

std::string layer_label(std::size_t i, const LayerSpec& spec) {
  return "layer " + std::to_string(i) + " (" + std::string(layer_kind_name(spec.kind)) + ")";
}

struct ParamSlot {
  std::string field;
  Shape shape;
};

// Output shape and expected parameter slots for one layer given its input.
Shape infer(std::size_t i, const LayerSpec& spec, const Shape& in, std::vector<ParamSlot>& slots) {
  const auto fail = [&](const std::string& why) -> Shape {
    throw ModelError(layer_label(i, spec) + ": " + why + " (input shape " + to_string(in) + ")");
  };
  switch (spec.kind) {
    case LayerKind::standardize:
      if (in.size() != 3) return fail("expects [C,H,W] input");
      slots = {{"scale", {in[0]}}, {"shift", {in[0]}}};
      return in;
    case LayerKind::conv2d: {
      if (in.size() != 3) return fail("expects [C,H,W] input");
      if (spec.out_channels == 0 || spec.kernel == 0) return fail("needs positive out_channels and kernel");
      if (spec.padding == Padding::same && spec.kernel % 2 == 0) return fail("same padding needs an odd kernel");
      if (spec.padding == Padding::valid && (in[1] < spec.kernel || in[2] < spec.kernel))
        return fail("kernel larger than input");
      slots = {{"weight", {spec.out_channels, in[0], spec.kernel, spec.kernel}}, {"bias", {spec.out_channels}}};
      if (spec.padding == Padding::same) return {spec.out_channels, in[1], in[2]};
      return {spec.out_channels, in[1] - spec.kernel + 1, in[2] - spec.kernel + 1};
    }
    case LayerKind::relu:
      slots.clear();
      return in;
    case LayerKind::maxpool2:
      if (in.size() != 3) return fail("expects [C,H,W] input");
      if (in[1] < 2 || in[2] < 2) return fail("spatial size below 2x2");
      slots.clear();
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::global_avg_pool:
      if (in.size() != 3) return fail("expects [C,H,W] input");
      slots.clear();
      return {in[0]};
    case LayerKind::flatten:
      slots.clear();
      return {shape_size(in)};
    case LayerKind::dense:
      if (in.size() != 1) return fail("expects a flat input");
      if (spec.units == 0) return fail("needs positive units");
      slots = {{"weight", {spec.units, in[0]}}, {"bias", {spec.units}}};
      return {spec.units};
  }
  return fail("unsupported layer");
}

}  // namespace

Model Model::create(Shape input_shape, std::vector<LayerSpec> layers, std::vector<Parameter> params,
                    std::vector<std::string> class_names) {
  if (input_shape.size() != 3) throw ModelError("input shape must be [C,H,W], got " + to_string(input_shape));
  for (auto d : input_shape)
    if (d == 0) throw ModelError("input shape has a zero dimension: " + to_string(input_shape));
  if (layers.empty() || layers.back().kind != LayerKind::dense)
    throw ModelError("the final layer must be a dense head");

  Model m;
  m.input_shape_ = std::move(input_shape);
  m.layers_ = std::move(layers);
  m.shapes_.push_back(m.input_shape_);
  m.layer_params_.resize(m.layers_.size());

  std::size_t next = 0;
  std::vector<ParamSlot> slots;
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    const auto& spec = m.layers_[i];
    m.shapes_.push_back(infer(i, spec, m.shapes_.back(), slots));
    for (const auto& slot : slots) {
      const std::string name = "layer" + std::to_string(i) + "." + slot.field;
      if (next >= params.size()) throw ModelError(layer_label(i, spec) + ": missing parameter " + name);
      const auto& p = params[next];
      if (p.name != name)
        throw ModelError(layer_label(i, spec) + ": expected parameter " + name + ", found " + p.name);
      if (p.value.shape() != slot.shape)
        throw ModelError(layer_label(i, spec) + ": parameter " + name + " has shape " + to_string(p.value.shape()) +
                         ", expected " + to_string(slot.shape));
      m.layer_params_[i].push_back(next++);
    }
  }
  if (next != params.size()) throw ModelError("unexpected extra parameter " + params[next].name);
  if (class_names.size() != m.shapes_.back()[0])
    throw ModelError("class_names has " + std::to_string(class_names.size()) + " entries but the head has " +
                     std::to_string(m.shapes_.back()[0]) + " outputs");
  m.params_ = std::move(params);
  m.class_names_ = std::move(class_names);
  return m;
}

const Parameter& Model::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ModelError("no parameter named " + std::string(name));
}

bool Model::is_head_parameter(std::size_t param_index) const {
  for (auto idx : layer_params_.back())
    if (idx == param_index) return true;
  return false;
}

std::size_t Model::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.size();
  return n;
}

void Model::set_parameter_value(std::size_t index, Tensor value) {
  auto& p = params_.at(index);
  if (value.shape() != p.value.shape())
    throw ModelError("parameter " + p.name + " shape change " + to_string(p.value.shape()) + " -> " +
                     to_string(value.shape()));
  p.value = std::move(value);
}

ModelBuilder::ModelBuilder(Shape input_shape) : input_shape_(std::move(input_shape)) {}

ModelBuilder& ModelBuilder::standardize(std::vector<double> mean, std::vector<double> stddev) {
  layers_.push_back({.kind = LayerKind::standardize});
  mean_ = std::move(mean);
  stddev_ = std::move(stddev);
  return *this;
}

ModelBuilder& ModelBuilder::conv2d(std::size_t out_channels, std::size_t kernel, Padding padding) {
  layers_.push_back({.kind = LayerKind::conv2d, .out_channels = out_channels, .kernel = kernel, .padding = padding});
  return *this;
}

ModelBuilder& ModelBuilder::relu() {
  layers_.push_back({.kind = LayerKind::relu});
  return *this;
}

ModelBuilder& ModelBuilder::maxpool2() {
  layers_.push_back({.kind = LayerKind::maxpool2});
  return *this;
}

ModelBuilder& ModelBuilder::global_avg_pool() {
  layers_.push_back({.kind = LayerKind::global_avg_pool});
  return *this;
}

ModelBuilder& ModelBuilder::flatten() {
  layers_.push_back({.kind = LayerKind::flatten});
  return *this;
}

ModelBuilder& ModelBuilder::dense(std::size_t units) {
  layers_.push_back({.kind = LayerKind::dense, .units = units});
  return *this;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Model ModelBuilder::build(std::vector<std::string> class_names, std::uint64_t seed) const {
  if (layers_.empty() || layers_.back().kind != LayerKind::dense)
    throw ModelError("the final layer must be a dense head");
  std::vector<Parameter> params;
  Shape shape = input_shape_;
  std::vector<ParamSlot> slots;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = layers_[i];
    const Shape out = infer(i, spec, shape, slots);
    Rng rng(derive_seed(seed, i));
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (spec.kind) {
      case LayerKind::standardize: {
        const std::size_t c = shape[0];
        Tensor scale({c}, 1.0), shift({c}, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
          const double mu = k < mean_.size() ? mean_[k] : (mean_.empty() ? 0.0 : mean_.back());
          const double sd = k < stddev_.size() ? stddev_[k] : (stddev_.empty() ? 1.0 : stddev_.back());
          if (!(sd > 0.0)) throw ModelError(layer_label(i, spec) + ": stddev must be positive");
          scale[k] = 1.0 / sd;
          shift[k] = -mu / sd;
        }
        params.push_back({prefix + "scale", std::move(scale), false});
        params.push_back({prefix + "shift", std::move(shift), false});
        break;
      }
      case LayerKind::conv2d:
      case LayerKind::dense: {
        const bool head = i + 1 == layers_.size();
        const auto& wshape = slots[0].shape;
        const double fan_in = static_cast<double>(shape_size(wshape) / wshape[0]);
        const double bound = head ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
        params.push_back({prefix + "weight", uniform_tensor(wshape, bound, rng), true});
        params.push_back({prefix + "bias", Tensor(slots[1].shape, 0.0), true});
        break;
      }
      default:
        break;
    }
    shape = out;
  }
  return Model::create(input_shape_, layers_, std::move(params), std::move(class_names));
}

Model make_tiny_cnn(Shape input_shape, std::vector<std::string> class_names, std::uint64_t seed,
                    std::vector<double> mean, std::vector<double> stddev) {
  const std::size_t k = class_names.size();
  std::size_t h = input_shape.size() == 3 ? input_shape[1] : 0, w = input_shape.size() == 3 ? input_shape[2] : 0;
  ModelBuilder b(std::move(input_shape));
  b.standardize(std::move(mean), std::move(stddev));
  for (std::size_t filters : {8, 12, 16, 16}) {
    b.conv2d(filters, 3).relu();
    // small inputs keep the conv stack but stop pooling at 1x1
    if (h >= 2 && w >= 2) {
      b.maxpool2();
      h /= 2;
      w /= 2;
    }
  }
  return b.global_avg_pool().dense(k).build(std::move(class_names), seed);
}

Model replace_head(const Model& model, std::vector<std::string> class_names, std::uint64_t seed) {
  const std::size_t k = class_names.size();
  if (k < 2) throw ModelError("replace_head needs at least 2 classes, got " + std::to_string(k));
  const std::size_t head = model.head_layer();
  const std::size_t fan_in = model.layer_input_shape(head)[0];

  auto layers = model.layers();
  layers.back().units = k;
  std::vector<Parameter> params;
  for (std::size_t i = 0; i < model.parameters().size(); ++i)
    if (!model.is_head_parameter(i)) params.push_back(model.parameters()[i]);

  Rng rng(derive_seed(seed, head));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  const std::string prefix = "layer" + std::to_string(head) + ".";
  params.push_back({prefix + "weight", uniform_tensor({k, fan_in}, bound, rng), true});
  params.push_back({prefix + "bias", uniform_tensor({k}, bound, rng), true});
  return Model::create(model.input_shape(), std::move(layers), std::move(params), std::move(class_names));
}

Model replace_head(const Model& model, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
  if (k < 2) throw ModelError("replace_head needs at least 2 classes, got " + std::to_string(k));
  return replace_head(model, std::move(names), seed);
}

Model freeze_backbone(const Model& model) {
  std::vector<Parameter> params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].trainable = model.is_head_parameter(i);
  return Model::create(model.input_shape(), model.layers(), std::move(params), model.class_names());
}

}  // namespace fraclens
