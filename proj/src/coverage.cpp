#include "fraclens/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "fraclens/attack.hpp"

namespace fraclens {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

double nearest_rank_percentile(std::vector<double> values, double nu) {
  if (!(nu >= 0.0 && nu <= 100.0)) throw std::invalid_argument("percentile must lie in [0, 100]");
  if (values.empty()) throw std::invalid_argument("percentile of an empty map");
  const std::size_t n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(nu * static_cast<double>(n) / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

BinaryMask threshold_mask(const AttributionMap& map, double nu) {
  if (!(nu >= 0.0 && nu <= 100.0)) throw std::invalid_argument("percentile must lie in [0, 100]");
  if (map.values.rank() != 2) throw std::invalid_argument("attribution map must be 2-D");
  const auto& v = map.values.values();
  const double cut = nearest_rank_percentile(v, nu);
  BinaryMask mask{map.values.dim(0), map.values.dim(1), std::vector<std::uint8_t>(v.size()), nu, map.config_digest};
  for (std::size_t i = 0; i < v.size(); ++i) mask.values[i] = v[i] >= cut ? 1 : 0;
  return mask;
}

double point_coverage(const BinaryMask& mask, const std::vector<Point>& points, const std::string& image_id) {
  const std::string label = image_id.empty() ? "" : " of image " + image_id;
  if (points.empty()) throw std::invalid_argument("no annotation points" + label + "; coverage is undefined");
  std::size_t hit = 0;
  for (const auto& p : points) {
    if (p.x < 0 || p.y < 0 || static_cast<std::size_t>(p.x) >= mask.width ||
        static_cast<std::size_t>(p.y) >= mask.height)
      throw std::out_of_range("annotation point (" + std::to_string(p.x) + "," + std::to_string(p.y) + ")" + label +
                              " lies outside the " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                              " map");
    if (mask.at(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y))) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(points.size());
}

AttributionMap compute_attribution(const Model& model, const Tensor& x, Method method,
                                   const CoverageSettings& settings) {
  const Tensor reference = settings.reference.empty() ? Tensor(x.shape(), 0.0) : settings.reference;
  switch (method) {
    case Method::saliency:
      return saliency(model, x, settings.target_class);
    case Method::occlusion:
      return occlusion(model, x, settings.target_class, settings.occlusion);
    case Method::deeplift: {
      auto map = deeplift(model, x, settings.target_class, reference);
      map.config_digest += ";reference=" + settings.reference_name;
      return map;
    }
    case Method::integrated_gradients:
      return integrated_gradients(model, x, settings.target_class,
                                  PathConfig{reference, settings.ig_steps, settings.reference_name});
  }
  throw std::invalid_argument("unknown attribution method");
}

CoverageReport coverage_table(const std::vector<NamedModel>& models, const std::vector<Method>& methods,
                              const std::vector<double>& percentiles, const Dataset& ds, const AnnotationSet& ann,
                              const CoverageSettings& settings) {
  for (double nu : percentiles)
    if (!(nu >= 0.0 && nu <= 100.0)) throw std::invalid_argument("percentile must lie in [0, 100]");
  for (const auto& [id, pts] : ann.entries()) ds.find(id);

  std::vector<std::size_t> images;
  for (auto i : ds.indices(settings.split))
    if (const auto* pts = ann.find(ds.samples[i].id); pts && !pts->empty()) images.push_back(i);

  CoverageReport report;
  for (const auto& nm : models) {
    for (Method method : methods) {
      std::vector<double> sums(percentiles.size(), 0.0);
      std::string failure;
      std::size_t degenerate = 0;
      if (images.empty()) failure = "no annotated images in split " + std::string(split_name(settings.split));
      for (auto i : images) {
        if (!failure.empty()) break;
        const auto& s = ds.samples[i];
        try {
          const auto map = compute_attribution(*nm.model, s.image, method, settings);
          if (map.raw_min == map.raw_max) ++degenerate;
          for (std::size_t p = 0; p < percentiles.size(); ++p)
            sums[p] += point_coverage(threshold_mask(map, percentiles[p]), *ann.find(s.id), s.id);
        } catch (const std::exception& e) {
          failure = e.what();
        }
      }
      if (failure.empty() && !images.empty() && degenerate == images.size())
        failure = "attribution constant on every image";
      for (std::size_t p = 0; p < percentiles.size(); ++p) {
        CoverageRow row{nm.id, method, percentiles[p], std::nullopt, failure, images.size()};
        if (failure.empty()) row.coverage = 100.0 * sums[p] / static_cast<double>(images.size());
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

std::string format_percentile(double nu) {
  char buf[32];
  if (nu == std::floor(nu))
    std::snprintf(buf, sizeof buf, "%.0f", nu);
  else
    std::snprintf(buf, sizeof buf, "%g", nu);
  return buf;
}

void write_coverage_csv(const CoverageReport& report, const std::filesystem::path& path,
                        const std::vector<std::string>& comments) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& c : comments) os << "# " << c << "\n";
  os << "model,method,percentile,coverage\n";
  for (const auto& r : report.rows) {
    os << r.model_id << ',' << method_name(r.method) << ',' << format_percentile(r.percentile) << ',';
    if (r.coverage) {
      os << format_percent(*r.coverage);
    } else {
      std::string reason = r.na_reason;
      std::replace(reason.begin(), reason.end(), ',', ';');
      std::replace(reason.begin(), reason.end(), '\n', ' ');
      os << "N/A:" << reason;
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace fraclens
