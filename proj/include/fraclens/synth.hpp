#pragma once

#include <cstdint>
#include <vector>

#include "fraclens/dataset.hpp"
#include "fraclens/rng.hpp"

namespace fraclens {

struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  /// 3 replicates the grayscale plane so channel reductions get exercised.
  std::size_t channels = 1;
  /// Per-class split fractions; the test split takes the remainder.
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::size_t annotation_points = 5;
};

/// One rendered radiograph together with its construction masks.
struct SynthImage {
  Tensor image;                       // [C, H, W], multiples of 1/255
  std::vector<std::uint8_t> bone;     // H*W, 1 where the shaft is fully opaque
  std::vector<std::uint8_t> crack;    // H*W, 1 on the crack core inside bone
  std::vector<Point> crack_points;    // annotation points, empty when healthy
};

/// A bright elongated shaft on dark textured background; fractured images get
/// a dark, slightly jagged crack crossing the shaft, with annotation points
/// sampled along it.
SynthImage render_radiograph(Rng& rng, bool fractured, const SynthConfig& cfg);

/// n/2 fractured and n/2 healthy images (even indices fractured), each drawn
/// from its own seed-derived stream. Throws std::invalid_argument for odd or
/// too small n.
Dataset generate_dataset(std::uint64_t seed, std::size_t n, const SynthConfig& cfg = {});

}  // namespace fraclens
