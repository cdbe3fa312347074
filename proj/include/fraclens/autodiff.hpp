#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fraclens/model.hpp"
#include "fraclens/tensor.hpp"

namespace fraclens {

/// Record of one forward evaluation: the input of every layer plus the
/// max-pool selections. A tape feeds exactly one reverse pass and refers to
/// the model it was recorded against, which must outlive it.
class Tape {
 public:
  Tape() = default;
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  const Tensor& output() const { return output_; }
  /// Input recorded for layer i.
  const Tensor& layer_input(std::size_t i) const { return records_.at(i).input; }

  /// Re-runs every recorded layer from its saved input and returns the final
  /// output; equals output() bit for bit.
  Tensor replay() const;

 private:
  struct Record {
    std::size_t layer = 0;
    Tensor input;
    std::vector<std::uint32_t> argmax;
  };

  friend struct TapeAccess;

  const Model* model_ = nullptr;
  std::vector<Record> records_;
  Tensor output_;
  bool consumed_ = false;
};

struct ForwardResult {
  Tensor logits;
  Tape tape;
};

/// Throws std::invalid_argument naming the layer when x does not fit.
ForwardResult forward(const Model& model, const Tensor& x);

/// Logits without recording a tape.
Tensor predict(const Model& model, const Tensor& x);

/// Reverse pass seeded with d(objective)/d(logits). Consumes the tape.
/// When param_grads is non-null it is resized to model.parameters().size() and
/// trainable parameter gradients are accumulated into it. With
/// need_input_grad = false the returned tensor is empty and the work for the
/// first layers is skipped.
Tensor backward(Tape&& tape, std::span<const double> output_grad, std::vector<Tensor>* param_grads = nullptr,
                bool need_input_grad = true);

/// d logit_c / dx.
Tensor grad_input(const Model& model, const Tensor& x, std::size_t c);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);
Tensor numeric_gradient(const Model& model, const Tensor& x, std::size_t c, double h);

/// Smallest distance of any ReLU pre-activation from 0 and of any max-pool
/// winner from its runner-up. Finite-difference checks are only meaningful
/// when this exceeds the step.
double kink_margin(const Model& model, const Tensor& x);

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits = softmax - onehot
};

CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label);

std::size_t argmax(std::span<const double> values);

}  // namespace fraclens
