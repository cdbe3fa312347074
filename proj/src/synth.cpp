#include "fraclens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <stdexcept>

namespace fraclens {

namespace {

constexpr double kPi = std::numbers::pi;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct Vec2 {
  double x, y;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

}  // namespace

SynthImage render_radiograph(Rng& rng, bool fractured, const SynthConfig& cfg) {
  const std::size_t h = cfg.height, w = cfg.width;
  const double cx0 = 0.5 * static_cast<double>(w), cy0 = 0.5 * static_cast<double>(h);
  const double scale = static_cast<double>(std::min(h, w)) / 64.0;

  // background: dark base with low-frequency texture
  const double base = rng.uniform(0.08, 0.18);
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3];
  for (auto& wv : waves) {
    const double f = rng.uniform(0.04, 0.18), ang = rng.uniform(0.0, kPi);
    wv = {f * std::cos(ang), f * std::sin(ang), rng.uniform(0.0, 2 * kPi), rng.uniform(0.01, 0.03)};
  }

  // shaft
  const Vec2 centre{cx0 + rng.uniform(-6, 6) * scale, cy0 + rng.uniform(-6, 6) * scale};
  const double theta = rng.uniform(0.0, kPi);
  const Vec2 axis{std::cos(theta), std::sin(theta)};
  const Vec2 normal{-axis.y, axis.x};
  const double half_len = rng.uniform(22, 28) * scale;
  const double radius = rng.uniform(5.0, 7.5) * scale;
  const double intensity = rng.uniform(0.6, 0.8);

  // distractor: a thin faint bright streak elsewhere, in either class
  const bool streak = rng.uniform() < 0.5;
  const double s_theta = rng.uniform(0.0, kPi);
  const Vec2 s_dir{std::cos(s_theta), std::sin(s_theta)};
  const Vec2 s_point{rng.uniform(0.0, static_cast<double>(w)), rng.uniform(0.0, static_cast<double>(h))};
  const double s_gain = rng.uniform(0.08, 0.15);

  // crack geometry, drawn for every image so both classes consume the stream alike
  const double t0 = rng.uniform(-0.5, 0.5) * half_len;
  const double phi = rng.uniform(-kPi / 6, kPi / 6);
  const Vec2 crack_dir{normal.x * std::cos(phi) - normal.y * std::sin(phi),
                       normal.x * std::sin(phi) + normal.y * std::cos(phi)};
  const Vec2 crack_normal{-crack_dir.y, crack_dir.x};
  const Vec2 crack_origin = centre + t0 * axis;
  // floor keeps a full-intensity core on small renders
  const double crack_half_width = std::max(1.0, rng.uniform(1.5, 2.2) * scale);
  const double depth = rng.uniform(0.6, 0.8);
  const double jag_freq = rng.uniform(0.6, 1.0), jag_phase = rng.uniform(0.0, 2 * kPi);
  const double jag_amp = 0.6 * scale;

  SynthImage out;
  out.bone.assign(h * w, 0);
  out.crack.assign(h * w, 0);
  std::vector<double> plane(h * w);
  std::vector<double> crack_core(h * w, 0.0);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Vec2 p{static_cast<double>(x), static_cast<double>(y)};
      double v = base;
      for (const auto& wv : waves) v += wv.amp * std::sin(wv.fx * p.x + wv.fy * p.y + wv.phase);
      if (streak) {
        const double d = std::abs(dot(p - s_point, {-s_dir.y, s_dir.x}));
        v += s_gain * clamp01(1.0 - d);
      }

      const Vec2 rel = p - centre;
      const double t = dot(rel, axis), d = std::abs(dot(rel, normal));
      const double cover = clamp01(radius + 0.5 - d) * clamp01(half_len + 0.5 - std::abs(t));
      if (cover > 0.0) {
        const double shell = intensity * (1.0 + 0.1 * (d / radius) * (d / radius));
        double bone_v = v + (shell - v) * cover;
        if (fractured) {
          const Vec2 cr = p - crack_origin;
          const double along = dot(cr, crack_dir);
          const double off = std::abs(dot(cr, crack_normal) - jag_amp * std::sin(jag_freq * along + jag_phase));
          const double cf = clamp01(crack_half_width + 0.5 - off);
          bone_v -= depth * intensity * cf * cover;
          crack_core[y * w + x] = cf * cover;
          if (cf >= 0.75 && cover >= 0.99) out.crack[y * w + x] = 1;
        }
        v = bone_v;
        if (cover >= 0.99) out.bone[y * w + x] = 1;
      }
      plane[y * w + x] = v;
    }
  }
  for (auto& v : plane) v = std::round(clamp01(v + 0.015 * rng.normal()) * 255.0) / 255.0;

  if (fractured) {
    // annotation points lie on fully-dark crack core pixels
    const double reach = 0.85 * radius / std::max(std::cos(phi), 0.5);
    std::set<Point> seen;
    for (int attempt = 0; attempt < 500 && out.crack_points.size() < cfg.annotation_points; ++attempt) {
      const double s = rng.uniform(-reach, reach);
      const Vec2 q = crack_origin + s * crack_dir + (jag_amp * std::sin(jag_freq * s + jag_phase)) * crack_normal;
      const long px = std::lround(q.x), py = std::lround(q.y);
      if (px < 0 || py < 0 || px >= static_cast<long>(w) || py >= static_cast<long>(h)) continue;
      const std::size_t k = static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px);
      if (crack_core[k] < 0.999 || !out.bone[k]) continue;
      const Point pt{static_cast<int>(px), static_cast<int>(py)};
      if (seen.insert(pt).second) out.crack_points.push_back(pt);
    }
    if (out.crack_points.empty()) throw std::logic_error("crack rendered without an annotatable pixel");
  }

  out.image = Tensor({cfg.channels, h, w});
  for (std::size_t c = 0; c < cfg.channels; ++c)
    std::copy(plane.begin(), plane.end(), out.image.data().begin() + static_cast<std::ptrdiff_t>(c * h * w));
  return out;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t n, const SynthConfig& cfg) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("dataset size must be even and at least 2, got " + std::to_string(n));
  if (cfg.height < 8 || cfg.width < 8) throw std::invalid_argument("synthetic images must be at least 8x8");
  if (cfg.channels == 0) throw std::invalid_argument("channels must be positive");
  if (cfg.train_fraction < 0 || cfg.val_fraction < 0 || cfg.train_fraction + cfg.val_fraction > 1.0)
    throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");

  const std::size_t per_class = n / 2;
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.train_fraction * per_class + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * per_class + 1e-9));

  Dataset ds;
  ds.channels = cfg.channels;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.seed = seed;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool fractured = i % 2 == 0;
    Rng rng(derive_seed(seed, i));
    auto img = render_radiograph(rng, fractured, cfg);
    const std::size_t rank = i / 2;
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "img_%05zu", i);
    s.id = id;
    s.image = std::move(img.image);
    s.label = fractured ? Label::fractured : Label::healthy;
    s.split = rank < n_train ? Split::train : rank < n_train + n_val ? Split::val : Split::test;
    if (fractured) ds.annotations.add(s.id, std::move(img.crack_points));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace fraclens
