#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fraclens/model.hpp"
#include "fraclens/tensor.hpp"

namespace fraclens {

enum class Method { saliency, occlusion, deeplift, integrated_gradients };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);
const std::vector<Method>& all_methods();

/// Per-pixel importance for one image and one target class.
struct AttributionMap {
  Tensor values;  // [H, W]
  Method method = Method::saliency;
  std::size_t target_class = 0;
  std::string config_digest;
  /// Signed per-input values before channel reduction ([C, H, W]): the raw
  /// gradient for saliency, contributions for DeepLIFT and IG. Empty for occlusion.
  Tensor signed_values;
  /// Range of values before normalization; set by every generator.
  double raw_min = 0.0;
  double raw_max = 0.0;
  /// Set by normalize() when the map was constant.
  bool degenerate = false;
};

struct OcclusionConfig {
  std::size_t patch_h = 8;
  std::size_t patch_w = 8;
  std::size_t stride_h = 4;
  std::size_t stride_w = 4;
  double baseline_value = 0.0;
  /// Occlude each channel separately and sum the per-channel scores.
  bool per_channel = false;

  void validate() const;
  std::string digest() const;
};

struct PathConfig {
  Tensor baseline;  // same shape as the input
  std::size_t n_steps = 20;
  std::string baseline_name = "zero";  // recorded in the digest

  std::string digest() const;
};

/// Scores at the strided patch positions, row-major.
struct OcclusionGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> scores;
};

/// max over channels of |t|, [C, H, W] -> [H, W].
Tensor reduce_max_abs(const Tensor& t);

/// |d logit_c / dx| reduced by channel max.
AttributionMap saliency(const Model& model, const Tensor& x, std::size_t c);

/// S = logit_c(x) - logit_c(x with the patch set to baseline_value) per patch
/// position; pixels take the mean score of the positions covering them, 0 if none.
OcclusionGrid occlusion_grid(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg);
AttributionMap occlusion(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg);

/// First-order estimate -grad . delta_x of the occlusion score.
OcclusionGrid occlusion_linearized_grid(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg);
AttributionMap occlusion_linearized(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg);

/// DeepLIFT with the linear rule on affine layers and the rescale rule on
/// ReLUs (gradient fallback when |delta in| < 1e-7). A 2x2 max-pool is
/// rewritten as pairwise max(a, b) = a + relu(b - a) so the rescale rule
/// applies there too; signed contributions sum to logit_c(x) - logit_c(ref).
AttributionMap deeplift(const Model& model, const Tensor& x, std::size_t c, const Tensor& reference);

/// Midpoint Riemann sum of the path integral from the baseline to x.
AttributionMap integrated_gradients(const Model& model, const Tensor& x, std::size_t c, const PathConfig& cfg);

/// (S - min) / (max - min); a constant map becomes all zeros with degenerate set.
AttributionMap normalize(const AttributionMap& map);

/// Normalized map quantized to 8 bits as PGM, plus "<stem>.txt" sidecar holding
/// method, class, config digest, pre-normalization min/max and seed.
void write_heatmap(const AttributionMap& map, const std::filesystem::path& pgm_path, std::uint64_t seed);

}  // namespace fraclens
