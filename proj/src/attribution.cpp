#include "fraclens/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "fraclens/autodiff.hpp"
#include "fraclens/pgm.hpp"
#include "layers.hpp"

namespace fraclens {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::saliency: return "saliency";
    case Method::occlusion: return "occlusion";
    case Method::deeplift: return "deeplift";
    case Method::integrated_gradients: return "integrated_gradients";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (auto m : all_methods())
    if (method_name(m) == name) return m;
  return std::nullopt;
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::saliency, Method::occlusion, Method::deeplift,
                                           Method::integrated_gradients};
  return methods;
}

void OcclusionConfig::validate() const {
  if (patch_h == 0 || patch_w == 0) throw std::invalid_argument("occlusion patch must be positive");
  if (stride_h == 0 || stride_w == 0) throw std::invalid_argument("occlusion stride must be positive");
  if (!(baseline_value >= 0.0 && baseline_value <= 1.0))
    throw std::invalid_argument("occlusion baseline value must lie in [0, 1]");
}

std::string OcclusionConfig::digest() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "occlusion;patch=%zux%zu;stride=%zux%zu;baseline=%.9g;per_channel=%d", patch_h,
                patch_w, stride_h, stride_w, baseline_value, per_channel ? 1 : 0);
  return buf;
}

std::string PathConfig::digest() const {
  return "integrated_gradients;n_steps=" + std::to_string(n_steps) + ";baseline=" + baseline_name + ";rule=midpoint";
}

Tensor reduce_max_abs(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("channel reduction expects [C,H,W], got " + to_string(t.shape()));
  const std::size_t c = t.dim(0), plane = t.dim(1) * t.dim(2);
  Tensor out({t.dim(1), t.dim(2)}, 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    double m = 0.0;
    for (std::size_t k = 0; k < c; ++k) m = std::max(m, std::abs(t[k * plane + p]));
    out[p] = m;
  }
  return out;
}

namespace {

void check_class(const Model& model, std::size_t c) {
  if (c >= model.num_classes())
    throw std::out_of_range("target class " + std::to_string(c) + " out of range for " +
                            std::to_string(model.num_classes()) + " classes");
}

void check_input(const Model& model, const Tensor& x, const char* what) {
  if (x.shape() != model.input_shape())
    throw std::invalid_argument(std::string(what) + " has shape " + to_string(x.shape()) + ", model expects " +
                                to_string(model.input_shape()));
}

void set_range(AttributionMap& map) {
  const auto v = map.values.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  map.raw_min = *lo;
  map.raw_max = *hi;
}

AttributionMap make_map(Tensor values, Method method, std::size_t c, std::string digest, Tensor signed_values = {}) {
  AttributionMap map;
  map.values = std::move(values);
  map.method = method;
  map.target_class = c;
  map.config_digest = std::move(digest);
  map.signed_values = std::move(signed_values);
  set_range(map);
  return map;
}

struct PatchLayout {
  std::size_t rows, cols;
};

PatchLayout patch_layout(const Model& model, const OcclusionConfig& cfg) {
  cfg.validate();
  const auto& in = model.input_shape();
  if (cfg.patch_h > in[1] || cfg.patch_w > in[2])
    throw std::invalid_argument("occlusion patch " + std::to_string(cfg.patch_h) + "x" + std::to_string(cfg.patch_w) +
                                " is larger than the " + std::to_string(in[1]) + "x" + std::to_string(in[2]) +
                                " image");
  return {(in[1] - cfg.patch_h) / cfg.stride_h + 1, (in[2] - cfg.patch_w) / cfg.stride_w + 1};
}

// Calls fn(channel, r, q) for each (patch position, channel) the score at
// (r, q) sums over; channel == npos occludes all channels at once.
template <typename Fn>
void for_each_occluder(const Model& model, const OcclusionConfig& cfg, const PatchLayout& layout, Fn&& fn) {
  const std::size_t channels = model.input_shape()[0];
  for (std::size_t r = 0; r < layout.rows; ++r)
    for (std::size_t q = 0; q < layout.cols; ++q) {
      if (cfg.per_channel && channels > 1) {
        for (std::size_t k = 0; k < channels; ++k) fn(k, r, q);
      } else {
        fn(static_cast<std::size_t>(-1), r, q);
      }
    }
}

// Replaces the patch at grid cell (r, q) in `img` by the baseline, restricted
// to one channel unless channel == npos; returns the applied deltas via visitor.
template <typename Fn>
void visit_patch(const Tensor& x, const OcclusionConfig& cfg, std::size_t channel, std::size_t r, std::size_t q,
                 Fn&& fn) {
  const std::size_t c0 = channel == static_cast<std::size_t>(-1) ? 0 : channel;
  const std::size_t c1 = channel == static_cast<std::size_t>(-1) ? x.dim(0) : channel + 1;
  for (std::size_t k = c0; k < c1; ++k)
    for (std::size_t y = r * cfg.stride_h; y < r * cfg.stride_h + cfg.patch_h; ++y)
      for (std::size_t xx = q * cfg.stride_w; xx < q * cfg.stride_w + cfg.patch_w; ++xx)
        fn((k * x.dim(1) + y) * x.dim(2) + xx);
}

Tensor upsample(const Model& model, const OcclusionConfig& cfg, const OcclusionGrid& grid) {
  const std::size_t h = model.input_shape()[1], w = model.input_shape()[2];
  Tensor sum({h, w}, 0.0), count({h, w}, 0.0);
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t q = 0; q < grid.cols; ++q)
      for (std::size_t y = r * cfg.stride_h; y < r * cfg.stride_h + cfg.patch_h; ++y)
        for (std::size_t x = q * cfg.stride_w; x < q * cfg.stride_w + cfg.patch_w; ++x) {
          sum[y * w + x] += grid.scores[r * grid.cols + q];
          count[y * w + x] += 1.0;
        }
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (count[i] > 0.0) sum[i] /= count[i];
  return sum;
}

}  // namespace

AttributionMap saliency(const Model& model, const Tensor& x, std::size_t c) {
  check_class(model, c);
  check_input(model, x, "input");
  Tensor g = grad_input(model, x, c);
  Tensor reduced = reduce_max_abs(g);
  return make_map(std::move(reduced), Method::saliency, c, "saliency;target=" + std::to_string(c), std::move(g));
}

OcclusionGrid occlusion_grid(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg) {
  check_class(model, c);
  check_input(model, x, "input");
  const auto layout = patch_layout(model, cfg);
  const double base = predict(model, x)[c];
  OcclusionGrid grid{layout.rows, layout.cols, std::vector<double>(layout.rows * layout.cols, 0.0)};
  Tensor occluded = x;
  for_each_occluder(model, cfg, layout, [&](std::size_t channel, std::size_t r, std::size_t q) {
    visit_patch(x, cfg, channel, r, q, [&](std::size_t i) { occluded[i] = cfg.baseline_value; });
    grid.scores[r * layout.cols + q] += base - predict(model, occluded)[c];
    visit_patch(x, cfg, channel, r, q, [&](std::size_t i) { occluded[i] = x[i]; });
  });
  return grid;
}

AttributionMap occlusion(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg) {
  const auto grid = occlusion_grid(model, x, c, cfg);
  return make_map(upsample(model, cfg, grid), Method::occlusion, c, cfg.digest() + ";target=" + std::to_string(c));
}

OcclusionGrid occlusion_linearized_grid(const Model& model, const Tensor& x, std::size_t c,
                                        const OcclusionConfig& cfg) {
  check_class(model, c);
  check_input(model, x, "input");
  const auto layout = patch_layout(model, cfg);
  const Tensor g = grad_input(model, x, c);
  OcclusionGrid grid{layout.rows, layout.cols, std::vector<double>(layout.rows * layout.cols, 0.0)};
  for_each_occluder(model, cfg, layout, [&](std::size_t channel, std::size_t r, std::size_t q) {
    double s = 0.0;
    visit_patch(x, cfg, channel, r, q, [&](std::size_t i) { s -= g[i] * (cfg.baseline_value - x[i]); });
    grid.scores[r * layout.cols + q] += s;
  });
  return grid;
}

AttributionMap occlusion_linearized(const Model& model, const Tensor& x, std::size_t c, const OcclusionConfig& cfg) {
  const auto grid = occlusion_linearized_grid(model, x, c, cfg);
  return make_map(upsample(model, cfg, grid), Method::occlusion, c,
                  cfg.digest() + ";linearized=1;target=" + std::to_string(c));
}

namespace {

constexpr double kRescaleThreshold = 1e-7;

// Rescale multiplier of relu at pre-activations a (input) and b (reference).
double rescale(double a, double b) {
  const double d = a - b;
  if (std::abs(d) < kRescaleThreshold) return a > 0.0 ? 1.0 : 0.0;
  return (std::max(a, 0.0) - std::max(b, 0.0)) / d;
}

// Multipliers of max(p, q) = p + relu(q - p) with respect to p and q.
std::pair<double, double> pair_max_multipliers(double p, double q, double p_ref, double q_ref) {
  const double mu = rescale(q - p, q_ref - p_ref);
  return {1.0 - mu, mu};
}

std::vector<Tensor> layer_inputs(const Model& model, const Tensor& x) {
  std::vector<Tensor> inputs;
  inputs.reserve(model.layers().size());
  Tensor act = x;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    Tensor next = detail::layer_forward(model, i, act, nullptr);
    inputs.push_back(std::move(act));
    act = std::move(next);
  }
  return inputs;
}

}  // namespace

AttributionMap deeplift(const Model& model, const Tensor& x, std::size_t c, const Tensor& reference) {
  check_class(model, c);
  check_input(model, x, "input");
  if (reference.shape() != x.shape())
    throw std::invalid_argument("DeepLIFT reference has shape " + to_string(reference.shape()) + ", input has " +
                                to_string(x.shape()));
  const auto in_x = layer_inputs(model, x);
  const auto in_r = layer_inputs(model, reference);

  Tensor m(model.output_shape(), 0.0);
  m[c] = 1.0;
  const std::vector<std::uint32_t> no_argmax;
  for (std::size_t i = model.layers().size(); i-- > 0;) {
    const auto kind = model.layers()[i].kind;
    const Tensor& a = in_x[i];
    const Tensor& b = in_r[i];
    if (detail::is_affine(kind)) {
      m = detail::layer_backward_input(model, i, a, no_argmax, m);
    } else if (kind == LayerKind::relu) {
      for (std::size_t k = 0; k < m.size(); ++k) m[k] *= rescale(a[k], b[k]);
    } else {  // maxpool2
      Tensor gin(a.shape(), 0.0);
      const auto& out = model.layer_output_shape(i);
      const std::size_t h = a.dim(1), w = a.dim(2);
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < out[0]; ++ch)
        for (std::size_t y = 0; y < out[1]; ++y)
          for (std::size_t xx = 0; xx < out[2]; ++xx, ++k) {
            const std::size_t i0 = (ch * h + 2 * y) * w + 2 * xx, i1 = i0 + 1, i2 = i0 + w, i3 = i2 + 1;
            // top pair, bottom pair, then the two winners; the first operand wins ties
            const auto [m0, m1] = pair_max_multipliers(a[i0], a[i1], b[i0], b[i1]);
            const auto [m2, m3] = pair_max_multipliers(a[i2], a[i3], b[i2], b[i3]);
            const double u = std::max(a[i0], a[i1]), v = std::max(a[i2], a[i3]);
            const double ur = std::max(b[i0], b[i1]), vr = std::max(b[i2], b[i3]);
            const auto [mu, mv] = pair_max_multipliers(u, v, ur, vr);
            gin[i0] += m[k] * mu * m0;
            gin[i1] += m[k] * mu * m1;
            gin[i2] += m[k] * mv * m2;
            gin[i3] += m[k] * mv * m3;
          }
      m = std::move(gin);
    }
  }
  Tensor contrib = x;
  for (std::size_t k = 0; k < contrib.size(); ++k) contrib[k] = m[k] * (x[k] - reference[k]);
  Tensor reduced = reduce_max_abs(contrib);
  return make_map(std::move(reduced), Method::deeplift, c, "deeplift;target=" + std::to_string(c),
                  std::move(contrib));
}

AttributionMap integrated_gradients(const Model& model, const Tensor& x, std::size_t c, const PathConfig& cfg) {
  check_class(model, c);
  check_input(model, x, "input");
  if (cfg.n_steps < 1) throw std::invalid_argument("integrated gradients needs n_steps >= 1");
  const Tensor baseline = cfg.baseline.empty() ? Tensor(x.shape(), 0.0) : cfg.baseline;
  if (baseline.shape() != x.shape())
    throw std::invalid_argument("IG baseline has shape " + to_string(baseline.shape()) + ", input has " +
                                to_string(x.shape()));
  const Tensor delta = x - baseline;
  Tensor avg(x.shape(), 0.0);
  Tensor point(x.shape());
  const double n = static_cast<double>(cfg.n_steps);
  for (std::size_t k = 1; k <= cfg.n_steps; ++k) {
    const double alpha = (static_cast<double>(k) - 0.5) / n;
    for (std::size_t i = 0; i < point.size(); ++i) point[i] = baseline[i] + alpha * delta[i];
    const Tensor g = grad_input(model, point, c);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += g[i];
  }
  Tensor contrib = x;
  for (std::size_t i = 0; i < contrib.size(); ++i) contrib[i] = delta[i] * (avg[i] / n);
  Tensor reduced = reduce_max_abs(contrib);
  return make_map(std::move(reduced), Method::integrated_gradients, c,
                  cfg.digest() + ";target=" + std::to_string(c), std::move(contrib));
}

AttributionMap normalize(const AttributionMap& map) {
  AttributionMap out = map;
  const auto v = map.values.data();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  out.raw_min = lo;
  out.raw_max = hi;
  if (hi == lo) {
    for (auto& e : out.values.data()) e = 0.0;
    out.degenerate = true;
    return out;
  }
  const double span = hi - lo;
  for (auto& e : out.values.data()) e = (e - lo) / span;
  out.degenerate = false;
  return out;
}

void write_heatmap(const AttributionMap& map, const std::filesystem::path& pgm_path, std::uint64_t seed) {
  const auto norm = normalize(map);
  const std::size_t h = norm.values.dim(0), w = norm.values.dim(1);
  const std::string seed_line = "seed=" + std::to_string(seed);
  write_pgm(pgm_path, quantize_gray(norm.values.data(), w, h),
            {seed_line, "method=" + std::string(method_name(map.method)), "config=" + map.config_digest});

  auto sidecar = pgm_path;
  sidecar.replace_extension(".txt");
  std::ofstream os(sidecar, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + sidecar.string());
  char range[96];
  std::snprintf(range, sizeof range, "min=%.17g\nmax=%.17g\n", map.raw_min, map.raw_max);
  os << "method=" << method_name(map.method) << "\n"
     << "class=" << map.target_class << "\n"
     << "config_digest=" << map.config_digest << "\n"
     << range << "degenerate=" << (norm.degenerate ? 1 : 0) << "\n"
     << seed_line << "\n";
  if (!os) throw std::runtime_error("write failed for " + sidecar.string());
}

}  // namespace fraclens
