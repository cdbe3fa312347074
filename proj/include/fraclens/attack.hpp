#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fraclens/dataset.hpp"
#include "fraclens/model.hpp"

namespace fraclens {

/// L-infinity PGD settings; radii are in pixel units of [0, 1] images.
struct AttackConfig {
  double epsilon = 4.0 / 255.0;
  double step_size = 1.0 / 255.0;
  std::size_t iters = 10;
  bool random_start = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::string digest() const;
};

/// Untargeted PGD on the cross-entropy of the true label. Each step moves by
/// step_size * sign(grad) (sign(0) = 0) and projects onto the epsilon-ball
/// around x intersected with [0, 1]. Throws std::out_of_range for a bad label.
Tensor pgd(const Model& model, const Tensor& x, std::size_t label, const AttackConfig& cfg);

/// Fraction of a split classified correctly after attacking each image
/// against the same model. The random start (if enabled) of image i uses
/// derive_seed(cfg.seed, i).
double adv_accuracy(const Model& model, const Dataset& ds, Split split, const AttackConfig& cfg);

/// Accuracy drop in percentage points; both inputs must lie in [0, 100].
double delta_acc(double clean_percent, double adv_percent);

struct RobustnessReport {
  std::string model_id;
  double clean_acc = 0.0;  // percent
  double adv_acc = 0.0;    // percent
  double delta_acc = 0.0;  // clean_acc - adv_acc

  static RobustnessReport make(std::string model_id, double clean_percent, double adv_percent);
};

/// Descending adversarial accuracy, then ascending delta, then model id.
std::vector<RobustnessReport> rank_models(std::vector<RobustnessReport> reports);

/// CSV with header model,clean_acc,adv_acc,delta_acc and two-decimal
/// percentages. Comment lines ("# ...") precede the header.
void write_robustness_csv(const std::vector<RobustnessReport>& reports, const std::filesystem::path& path,
                          const std::vector<std::string>& comments = {});
std::string format_percent(double percent);

}  // namespace fraclens
