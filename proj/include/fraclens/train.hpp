#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fraclens/attack.hpp"
#include "fraclens/dataset.hpp"
#include "fraclens/model.hpp"

namespace fraclens {

/// Adam on mean cross-entropy over minibatches of the train split.
struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Requires a model whose backbone is already frozen.
  bool head_only = false;
  std::uint64_t seed = 0;

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_loss;  // mean loss over each epoch's (possibly perturbed) inputs
};

TrainResult train(const Model& model, const Dataset& ds, const TrainConfig& cfg);

/// Madry-style adversarial training: every minibatch image is replaced by its
/// PGD perturbation against the current parameters before the update.
TrainResult adv_train(const Model& model, const Dataset& ds, const AttackConfig& atk, const TrainConfig& cfg);

/// Fraction of argmax-correct predictions on a split (ties go to the lower class index).
double evaluate(const Model& model, const Dataset& ds, Split split);

}  // namespace fraclens
