#include "fraclens/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "layers.hpp"

namespace fraclens {

struct TapeAccess {
  using Record = Tape::Record;
  static Tape make(const Model& model) {
    Tape t;
    t.model_ = &model;
    return t;
  }
  static auto& records(Tape& t) { return t.records_; }
  static const Model* model(const Tape& t) { return t.model_; }
  static void set_output(Tape& t, Tensor out) { t.output_ = std::move(out); }
  static void consume(Tape& t) { t.consumed_ = true; }
};

Tape::Tape(Tape&& other) noexcept
    : model_(other.model_),
      records_(std::move(other.records_)),
      output_(std::move(other.output_)),
      consumed_(other.consumed_) {
  other.model_ = nullptr;
  other.records_.clear();
  other.consumed_ = true;
}

Tape& Tape::operator=(Tape&& other) noexcept {
  if (this != &other) {
    model_ = other.model_;
    records_ = std::move(other.records_);
    output_ = std::move(other.output_);
    consumed_ = other.consumed_;
    other.model_ = nullptr;
    other.records_.clear();
    other.consumed_ = true;
  }
  return *this;
}

Tensor Tape::replay() const {
  if (!model_ || records_.empty()) throw std::logic_error("replay on an empty tape");
  Tensor act = records_.front().input;
  for (const auto& r : records_) act = detail::layer_forward(*model_, r.layer, act, nullptr);
  return act;
}

namespace {

void check_input(const Model& model, const Tensor& x) {
  if (x.shape() != model.input_shape())
    throw std::invalid_argument("shape mismatch at layer 0 (" +
                                std::string(layer_kind_name(model.layers().front().kind)) + "): expected " +
                                to_string(model.input_shape()) + ", got " + to_string(x.shape()));
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& x) {
  check_input(model, x);
  Tape tape = TapeAccess::make(model);
  auto& records = TapeAccess::records(tape);
  records.reserve(model.layers().size());
  Tensor act = x;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    TapeAccess::Record rec;
    rec.layer = i;
    Tensor next = detail::layer_forward(model, i, act, &rec.argmax);
    rec.input = std::move(act);
    records.push_back(std::move(rec));
    act = std::move(next);
  }
  TapeAccess::set_output(tape, act);
  return {std::move(act), std::move(tape)};
}

Tensor predict(const Model& model, const Tensor& x) {
  check_input(model, x);
  Tensor act = x;
  for (std::size_t i = 0; i < model.layers().size(); ++i) act = detail::layer_forward(model, i, act, nullptr);
  return act;
}

Tensor backward(Tape&& tape_in, std::span<const double> output_grad, std::vector<Tensor>* param_grads,
                bool need_input_grad) {
  Tape tape = std::move(tape_in);
  const Model* model = TapeAccess::model(tape);
  if (!model || tape.consumed()) throw std::logic_error("backward on an empty or consumed tape");
  TapeAccess::consume(tape);
  auto& records = TapeAccess::records(tape);
  if (output_grad.size() != tape.output().size())
    throw std::invalid_argument("output gradient has " + std::to_string(output_grad.size()) + " entries, expected " +
                                std::to_string(tape.output().size()));
  if (param_grads) param_grads->resize(model->parameters().size());

  // Below `stop`, nothing needs a gradient: no trainable parameters and no
  // input gradient requested.
  std::size_t stop = 0;
  if (!need_input_grad) {
    stop = records.size();
    if (param_grads)
      for (std::size_t i = 0; i < records.size(); ++i) {
        bool trainable = false;
        for (auto id : model->layer_parameters(i)) trainable |= model->parameters()[id].trainable;
        if (trainable) {
          stop = i;
          break;
        }
      }
  }

  Tensor grad(tape.output().shape(), std::vector<double>(output_grad.begin(), output_grad.end()));
  for (std::size_t i = records.size(); i-- > stop;) {
    const auto& rec = records[i];
    if (param_grads) detail::layer_backward_params(*model, rec.layer, rec.input, grad, *param_grads);
    if (i == stop && !need_input_grad) break;
    grad = detail::layer_backward_input(*model, rec.layer, rec.input, rec.argmax, grad);
  }
  if (!need_input_grad) return {};
  return grad;
}

Tensor grad_input(const Model& model, const Tensor& x, std::size_t c) {
  if (c >= model.num_classes())
    throw std::out_of_range("class index " + std::to_string(c) + " out of range for " +
                            std::to_string(model.num_classes()) + " classes");
  auto fwd = forward(model, x);
  std::vector<double> seed(fwd.logits.size(), 0.0);
  seed[c] = 1.0;
  return backward(std::move(fwd.tape), seed);
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Tensor numeric_gradient(const Model& model, const Tensor& x, std::size_t c, double h) {
  if (c >= model.num_classes()) throw std::out_of_range("class index " + std::to_string(c) + " out of range");
  check_input(model, x);
  return numeric_gradient([&](const Tensor& p) { return predict(model, p)[c]; }, x, h);
}

double kink_margin(const Model& model, const Tensor& x) {
  check_input(model, x);
  double margin = std::numeric_limits<double>::infinity();
  Tensor act = x;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto kind = model.layers()[i].kind;
    if (kind == LayerKind::relu) {
      for (double v : act.data()) margin = std::min(margin, std::abs(v));
    } else if (kind == LayerKind::maxpool2) {
      const auto& out = model.layer_output_shape(i);
      const std::size_t h = act.dim(1), w = act.dim(2);
      const bool after_relu = i > 0 && model.layers()[i - 1].kind == LayerKind::relu;
      for (std::size_t c = 0; c < out[0]; ++c)
        for (std::size_t y = 0; y < out[1]; ++y)
          for (std::size_t xx = 0; xx < out[2]; ++xx) {
            const std::size_t base = (c * h + 2 * y) * w + 2 * xx;
            double v[4] = {act[base], act[base + 1], act[base + w], act[base + w + 1]};
            std::sort(v, v + 4);
            // a window of dead ReLU outputs stays all-zero under small moves
            if (after_relu && v[3] == 0.0) continue;
            margin = std::min(margin, v[3] - v[2]);
          }
    }
    act = detail::layer_forward(model, i, act, nullptr);
  }
  return margin;
}

CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::out_of_range("label " + std::to_string(label) + " out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  CrossEntropy ce;
  ce.loss = std::log(z) + mx - logits[label];
  ce.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) ce.grad[i] = std::exp(logits[i] - mx) / z;
  ce.grad[label] -= 1.0;
  return ce;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace fraclens
