#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fraclens/attribution.hpp"
#include "fraclens/dataset.hpp"
#include "fraclens/model.hpp"

namespace fraclens {

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;  // row-major, 1 = salient
  double percentile = 0.0;
  std::string source_digest;

  bool at(std::size_t x, std::size_t y) const { return values[y * width + x] != 0; }
  std::size_t count() const;
};

/// Nearest-rank percentile: the smallest sample v such that at least nu% of
/// the samples are <= v (rank ceil(nu/100 * N), clamped to >= 1).
double nearest_rank_percentile(std::vector<double> values, double nu);

/// M(x, y) = S(x, y) >= percentile(S, nu).
BinaryMask threshold_mask(const AttributionMap& map, double nu);

/// Fraction of points that fall on the mask. Throws for an empty list or for
/// a point outside the mask, naming image_id.
double point_coverage(const BinaryMask& mask, const std::vector<Point>& points, const std::string& image_id = "");

struct CoverageRow {
  std::string model_id;
  Method method = Method::saliency;
  double percentile = 0.0;
  std::optional<double> coverage;  // percent; empty means N/A
  std::string na_reason;
  std::size_t images = 0;
};

struct CoverageReport {
  std::vector<CoverageRow> rows;
};

struct NamedModel {
  std::string id;
  const Model* model = nullptr;
};

/// Settings shared by every cell of a coverage table.
struct CoverageSettings {
  std::size_t target_class = 0;  // the fracture logit
  Split split = Split::test;
  OcclusionConfig occlusion;
  std::size_t ig_steps = 20;
  /// Baseline for DeepLIFT and IG; empty means the zero image.
  Tensor reference;
  std::string reference_name = "zero";
};

/// Mean point coverage over the annotated images of the split, one row per
/// (model, method, percentile) in that nesting order. A cell that cannot be
/// computed is reported as N/A with a reason instead of being dropped.
CoverageReport coverage_table(const std::vector<NamedModel>& models, const std::vector<Method>& methods,
                              const std::vector<double>& percentiles, const Dataset& ds, const AnnotationSet& ann,
                              const CoverageSettings& settings = {});

/// Attribution for one method using the shared settings.
AttributionMap compute_attribution(const Model& model, const Tensor& x, Method method,
                                   const CoverageSettings& settings);

/// CSV: model,method,percentile,coverage with two-decimal percentages or "N/A:<reason>".
void write_coverage_csv(const CoverageReport& report, const std::filesystem::path& path,
                        const std::vector<std::string>& comments = {});
std::string format_percentile(double nu);

}  // namespace fraclens
