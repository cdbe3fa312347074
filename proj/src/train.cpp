#include "fraclens/train.hpp"

#include <cmath>
#include <numeric>
#include <optional>

#include "fraclens/autodiff.hpp"
#include "fraclens/rng.hpp"

namespace fraclens {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

namespace {

class Adam {
 public:
  Adam(const Model& model, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : model.parameters()) {
      m_.emplace_back(p.value.shape(), 0.0);
      v_.emplace_back(p.value.shape(), 0.0);
    }
  }

  void step(Model& model, const std::vector<Tensor>& grads, double scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      const auto& p = model.parameters()[i];
      if (!p.trainable || grads[i].empty()) continue;
      Tensor value = p.value;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        const double g = grads[i][k] * scale;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        value[k] -= cfg_.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.adam_epsilon);
      }
      model.set_parameter_value(i, std::move(value));
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

TrainResult run_training(const Model& initial, const Dataset& ds, const TrainConfig& cfg,
                         const std::optional<AttackConfig>& atk) {
  cfg.validate();
  if (atk) atk->validate();
  auto order = ds.indices(Split::train);
  if (order.empty()) throw std::invalid_argument("train split is empty");
  if (cfg.head_only)
    for (std::size_t i = 0; i < initial.parameters().size(); ++i)
      if (initial.parameters()[i].trainable && !initial.is_head_parameter(i))
        throw std::invalid_argument("head_only training needs a frozen backbone; " + initial.parameters()[i].name +
                                    " is trainable");

  TrainResult result{initial, {}};
  Model& model = result.model;
  Adam adam(model, cfg);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5eed));
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> grads(model.parameters().size());
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = ds.samples[order[b]];
        const auto label = static_cast<std::size_t>(s.label);
        Tensor input = s.image;
        if (atk) {
          AttackConfig local = *atk;
          local.seed = derive_seed(atk->seed, step * cfg.batch_size + (b - start));
          input = pgd(model, s.image, label, local);
        }
        auto fwd = forward(model, input);
        const auto ce = softmax_cross_entropy(fwd.logits.data(), label);
        if (!std::isfinite(ce.loss))
          throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch + 1) + ", sample " + s.id);
        epoch_loss += ce.loss;
        backward(std::move(fwd.tape), ce.grad, &grads, false);
      }
      adam.step(model, grads, 1.0 / static_cast<double>(end - start));
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss))
      throw TrainingDiverged("mean loss became non-finite at epoch " + std::to_string(epoch + 1));
    result.epoch_loss.push_back(epoch_loss);
  }
  return result;
}

}  // namespace

TrainResult train(const Model& model, const Dataset& ds, const TrainConfig& cfg) {
  return run_training(model, ds, cfg, std::nullopt);
}

TrainResult adv_train(const Model& model, const Dataset& ds, const AttackConfig& atk, const TrainConfig& cfg) {
  return run_training(model, ds, cfg, atk);
}

double evaluate(const Model& model, const Dataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw std::invalid_argument("split " + std::string(split_name(split)) + " is empty");
  std::size_t correct = 0;
  for (auto i : idx) {
    const auto& s = ds.samples[i];
    if (argmax(predict(model, s.image).data()) == static_cast<std::size_t>(s.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace fraclens
