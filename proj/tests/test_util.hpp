#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fraclens/autodiff.hpp"
#include "fraclens/model.hpp"
#include "fraclens/rng.hpp"

namespace fraclens::test_support {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// logits = W flatten(x) + b on a [C, H, W] input.
inline Model linear_model(Shape input, const std::vector<std::vector<double>>& rows, std::vector<double> bias = {}) {
  const std::size_t k = rows.size(), n = shape_size(input);
  std::vector<double> w;
  for (const auto& r : rows) w.insert(w.end(), r.begin(), r.end());
  if (bias.empty()) bias.assign(k, 0.0);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
  std::vector<LayerSpec> layers = {{LayerKind::flatten}, {LayerKind::dense, 0, 0, Padding::valid, k}};
  std::vector<Parameter> params = {{"layer1.weight", Tensor({k, n}, w), true},
                                   {"layer1.bias", Tensor({k}, bias), true}};
  return Model::create(std::move(input), layers, params, names);
}

/// conv(same) -> relu -> maxpool -> conv -> relu -> GAP -> dense, with random
/// biases so ReLU kinks do not sit at zero inputs.
inline Model small_cnn(std::size_t c, std::size_t hw, std::uint64_t seed, std::size_t classes = 2) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < classes; ++i) names.push_back("class" + std::to_string(i));
  Model m = ModelBuilder({c, hw, hw})
                .standardize(std::vector<double>(c, 0.4), std::vector<double>(c, 0.3))
                .conv2d(3, 3)
                .relu()
                .maxpool2()
                .conv2d(4, 3, Padding::valid)
                .relu()
                .global_avg_pool()
                .dense(classes)
                .build(names, seed);
  Rng rng(derive_seed(seed, 77));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& p = m.parameters()[i];
    if (p.name.ends_with("bias")) {
      Tensor b = p.value;
      for (auto& v : b.data()) v = rng.uniform(-0.2, 0.2);
      m.set_parameter_value(i, b);
    }
  }
  return m;
}

/// Resamples the input until no ReLU or max-pool sits within margin of a kink.
inline Tensor kink_free_input(const Model& m, std::uint64_t seed, double margin = 1e-4) {
  for (std::uint64_t s = 0;; ++s) {
    Tensor x = random_tensor(m.input_shape(), derive_seed(seed, s));
    if (kink_margin(m, x) >= margin) return x;
  }
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

/// Max of |a - b| / max(|a|, |b|, floor) over elements.
inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fraclens_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace fraclens::test_support
