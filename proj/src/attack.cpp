#include "fraclens/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "fraclens/autodiff.hpp"
#include "fraclens/rng.hpp"

namespace fraclens {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack epsilon must be >= 0");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("attack step size must be >= 0");
}

std::string AttackConfig::digest() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "pgd;eps=%.9g;step=%.9g;iters=%zu;random_start=%d;seed=%llu", epsilon, step_size,
                iters, random_start ? 1 : 0, static_cast<unsigned long long>(seed));
  return buf;
}

Tensor pgd(const Model& model, const Tensor& x, std::size_t label, const AttackConfig& cfg) {
  cfg.validate();
  if (label >= model.num_classes())
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(model.num_classes()) + " classes");
  Tensor lo = x, hi = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::max(x[i] - cfg.epsilon, 0.0);
    hi[i] = std::min(x[i] + cfg.epsilon, 1.0);
  }
  Tensor adv = x;
  if (cfg.random_start && cfg.epsilon > 0.0) {
    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < adv.size(); ++i)
      adv[i] = std::clamp(x[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), lo[i], hi[i]);
  }
  if (cfg.epsilon == 0.0) return adv;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    auto fwd = forward(model, adv);
    const auto ce = softmax_cross_entropy(fwd.logits.data(), label);
    const Tensor g = backward(std::move(fwd.tape), ce.grad);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : g[i] < 0.0 ? -1.0 : 0.0;
      adv[i] = std::clamp(adv[i] + cfg.step_size * s, lo[i], hi[i]);
    }
  }
  return adv;
}

double adv_accuracy(const Model& model, const Dataset& ds, Split split, const AttackConfig& cfg) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw std::invalid_argument("split " + std::string(split_name(split)) + " is empty");
  std::size_t correct = 0;
  for (auto i : idx) {
    const auto& s = ds.samples[i];
    AttackConfig local = cfg;
    local.seed = derive_seed(cfg.seed, i);
    const auto label = static_cast<std::size_t>(s.label);
    const Tensor adv = pgd(model, s.image, label, local);
    if (argmax(predict(model, adv).data()) == label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

double delta_acc(double clean_percent, double adv_percent) {
  const auto in_range = [](double v) { return v >= 0.0 && v <= 100.0; };
  if (!in_range(clean_percent) || !in_range(adv_percent))
    throw std::invalid_argument("accuracies must be percentages in [0, 100]");
  return clean_percent - adv_percent;
}

RobustnessReport RobustnessReport::make(std::string model_id, double clean_percent, double adv_percent) {
  return {std::move(model_id), clean_percent, adv_percent, fraclens::delta_acc(clean_percent, adv_percent)};
}

std::vector<RobustnessReport> rank_models(std::vector<RobustnessReport> reports) {
  if (reports.empty()) throw std::invalid_argument("rank_models needs at least one report");
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    if (a.adv_acc != b.adv_acc) return a.adv_acc > b.adv_acc;
    if (a.delta_acc != b.delta_acc) return a.delta_acc < b.delta_acc;
    return a.model_id < b.model_id;
  });
  return reports;
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", percent);
  return buf;
}

void write_robustness_csv(const std::vector<RobustnessReport>& reports, const std::filesystem::path& path,
                          const std::vector<std::string>& comments) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : comments) os << "# " << c << "\n";
  os << "model,clean_acc,adv_acc,delta_acc\n";
  for (const auto& r : reports)
    os << r.model_id << ',' << format_percent(r.clean_acc) << ',' << format_percent(r.adv_acc) << ','
       << format_percent(r.delta_acc) << "\n";
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace fraclens
