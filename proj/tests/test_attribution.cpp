#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "fraclens/attribution.hpp"
#include "test_util.hpp"

using namespace fraclens;
using test_support::kink_free_input;
using test_support::linear_model;
using test_support::random_tensor;
using test_support::small_cnn;

namespace {

Model constant_model(Shape in) {
  const std::size_t c = in[0];
  std::vector<LayerSpec> layers = {{LayerKind::global_avg_pool}, {LayerKind::dense, 0, 0, Padding::valid, 2}};
  std::vector<Parameter> params = {{"layer1.weight", Tensor({2, c}, 0.0), true},
                                   {"layer1.bias", Tensor({2}, {0.7, -0.1}), true}};
  return Model::create(std::move(in), layers, params, {"a", "b"});
}

// conv 2x2 valid (one filter) -> relu -> GAP -> dense(2)
struct OneConv {
  std::vector<double> k = {0.9, -0.4, 0.3, 0.6};
  double kb = -0.1;
  std::vector<double> head_w = {1.5, -2.0};
  std::vector<double> head_b = {0.2, 0.0};

  Model model() const {
    std::vector<LayerSpec> layers = {{LayerKind::conv2d, 1, 2, Padding::valid, 0},
                                     {LayerKind::relu},
                                     {LayerKind::global_avg_pool},
                                     {LayerKind::dense, 0, 0, Padding::valid, 2}};
    std::vector<Parameter> params = {{"layer0.weight", Tensor({1, 1, 2, 2}, k), true},
                                     {"layer0.bias", Tensor({1}, kb), true},
                                     {"layer3.weight", Tensor({2, 1}, head_w), true},
                                     {"layer3.bias", Tensor({2}, head_b), true}};
    return Model::create({1, 4, 4}, layers, params, {"a", "b"});
  }

  // plain loops, no library code
  double logit(const std::vector<double>& img, std::size_t c) const {
    double acc = 0.0;
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        double v = kb;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) v += k[dy * 2 + dx] * img[(y + dy) * 4 + (x + dx)];
        acc += std::max(v, 0.0);
      }
    return head_w[c] * acc / 9.0 + head_b[c];
  }
};

}  // namespace

TEST(Saliency, LinearModelGivesAbsWeights) {
  const std::vector<double> w = {0.5, -1.5, 0.0, 2.0, -0.25, 3.0};
  const Model m = linear_model({1, 2, 3}, {w, w});
  const auto map = saliency(m, random_tensor({1, 2, 3}, 1), 0);
  EXPECT_EQ(map.values.shape(), Shape({2, 3}));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(map.values[i], std::abs(w[i]));
  EXPECT_EQ(map.method, Method::saliency);
}

TEST(Saliency, ChannelMaxOfAbsoluteGradient) {
  const Model m = linear_model({3, 1, 1}, {{-3, 1, 2}, {0, 0, 0}});
  const auto map = saliency(m, Tensor({3, 1, 1}, 0.5), 0);
  EXPECT_EQ(map.values[0], 3.0);
  EXPECT_EQ(map.signed_values.values(), (std::vector<double>{-3, 1, 2}));
}

TEST(Saliency, MatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const Model m = small_cnn(3, 8, 20 + trial);
    const Tensor x = kink_free_input(m, trial, 1e-3);
    const auto map = saliency(m, x, 1);
    const Tensor ref = reduce_max_abs(numeric_gradient(m, x, 1, 1e-5));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(map.values[i], ref[i], 1e-6);
    for (double v : map.values.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(Saliency, InvalidClassRejected) {
  EXPECT_THROW(saliency(small_cnn(1, 8, 1), random_tensor({1, 8, 8}, 1), 5), std::out_of_range);
}

TEST(Occlusion, ConstantModelGivesZeros) {
  const auto map = occlusion(constant_model({1, 8, 8}), random_tensor({1, 8, 8}, 2), 0, {});
  for (double v : map.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Occlusion, WholeImagePatchEqualsWDotX) {
  const std::vector<double> w = {0.5, -1.5, 0.25, 2.0};
  const Model m = linear_model({1, 2, 2}, {w, w}, {0.3, 0.3});
  const Tensor x = random_tensor({1, 2, 2}, 3);
  OcclusionConfig cfg;
  cfg.patch_h = cfg.patch_w = 2;
  cfg.stride_h = cfg.stride_w = 1;
  const auto grid = occlusion_grid(m, x, 0, cfg);
  ASSERT_EQ(grid.scores.size(), 1u);
  double wx = 0.0;
  for (std::size_t i = 0; i < 4; ++i) wx += w[i] * x[i];
  EXPECT_NEAR(grid.scores[0], wx, 1e-14);
}

TEST(Occlusion, BruteForceFourByFour) {
  const OneConv net;
  const Model m = net.model();
  const Tensor x = random_tensor({1, 4, 4}, 4);
  OcclusionConfig cfg;
  cfg.patch_h = cfg.patch_w = 2;
  cfg.stride_h = cfg.stride_w = 2;
  cfg.baseline_value = 0.25;
  for (std::size_t c = 0; c < 2; ++c) {
    const auto grid = occlusion_grid(m, x, c, cfg);
    ASSERT_EQ(grid.rows, 2u);
    ASSERT_EQ(grid.cols, 2u);
    const double full = net.logit(x.values(), c);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t q = 0; q < 2; ++q) {
        auto img = x.values();
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) img[(2 * r + dy) * 4 + 2 * q + dx] = 0.25;
        const double expect = full - net.logit(img, c);
        EXPECT_NEAR(grid.scores[r * 2 + q], expect, 1e-12);
        const auto map = occlusion(m, x, c, cfg);
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            EXPECT_NEAR(map.values[(2 * r + dy) * 4 + 2 * q + dx], expect, 1e-12);
      }
  }
}

TEST(Occlusion, CoveringAverageAndUncoveredPixels) {
  // 1x5 image, patch 1x2, stride 1x2 -> positions at columns 0 and 2; column 4 uncovered
  const std::vector<double> w = {1, 2, 3, 4, 5};
  const Model m = linear_model({1, 1, 5}, {w, w});
  const Tensor x({1, 1, 5}, 1.0);
  OcclusionConfig cfg;
  cfg.patch_h = 1;
  cfg.patch_w = 2;
  cfg.stride_h = 1;
  cfg.stride_w = 2;
  const auto map = occlusion(m, x, 0, cfg);
  EXPECT_EQ(map.values.values(), (std::vector<double>{3, 3, 7, 7, 0}));
  // overlapping positions average
  cfg.stride_w = 1;
  const auto overlap = occlusion(m, x, 0, cfg);
  EXPECT_EQ(overlap.values.values(), (std::vector<double>{3, 4, 6, 8, 9}));
}

TEST(Occlusion, PerChannelSumsChannelScores) {
  const Model m = linear_model({2, 1, 2}, {{1, 2, 3, 4}, {0, 0, 0, 0}});
  const Tensor x({2, 1, 2}, 1.0);
  OcclusionConfig cfg;
  cfg.patch_h = cfg.patch_w = 1;
  cfg.stride_h = cfg.stride_w = 1;
  cfg.per_channel = true;
  EXPECT_EQ(occlusion(m, x, 0, cfg).values.values(), (std::vector<double>{4, 6}));
}

TEST(Occlusion, PatchLargerThanImageRejected) {
  OcclusionConfig cfg;
  cfg.patch_h = 9;
  EXPECT_THROW(occlusion(small_cnn(1, 8, 1), random_tensor({1, 8, 8}, 1), 0, cfg), std::invalid_argument);
  cfg = {};
  cfg.stride_w = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.baseline_value = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(OcclusionLinearized, ExactForLinearModels) {
  const std::vector<double> w = {0.5, -1.5, 0.25, 2.0, 1.0, -1.0, 0.0, 3.0, 0.5};
  const Model m = linear_model({1, 3, 3}, {w, w});
  const Tensor x = random_tensor({1, 3, 3}, 5);
  OcclusionConfig cfg;
  cfg.patch_h = cfg.patch_w = 2;
  cfg.stride_h = cfg.stride_w = 1;
  cfg.baseline_value = 0.3;
  const auto a = occlusion_grid(m, x, 0, cfg), b = occlusion_linearized_grid(m, x, 0, cfg);
  for (std::size_t i = 0; i < a.scores.size(); ++i) EXPECT_NEAR(a.scores[i], b.scores[i], 1e-14);
  const auto z = occlusion_linearized(constant_model({1, 3, 3}), x, 0, cfg);
  for (double v : z.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(OcclusionLinearized, FirstOrderAgreementOnCnn) {
  const Model m = small_cnn(1, 8, 30);
  const Tensor x = kink_free_input(m, 31, 1e-2);
  const std::size_t p = 27;
  OcclusionConfig cfg;
  cfg.patch_h = cfg.patch_w = 1;
  cfg.stride_h = cfg.stride_w = 1;
  cfg.baseline_value = x[p] - 1e-3;
  const auto exact = occlusion_grid(m, x, 0, cfg), lin = occlusion_linearized_grid(m, x, 0, cfg);
  EXPECT_NEAR(exact.scores[p], lin.scores[p], 1e-6);
}

TEST(DeepLift, LinearModelContributions) {
  const std::vector<double> w = {0.5, -1.5, 0.25, 2.0};
  const Model m = linear_model({1, 2, 2}, {w, w}, {0.4, 0.4});
  const Tensor x = random_tensor({1, 2, 2}, 6), ref = random_tensor({1, 2, 2}, 7);
  const auto map = deeplift(m, x, 0, ref);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(map.signed_values[i], w[i] * (x[i] - ref[i]), 1e-15);
    EXPECT_NEAR(map.values[i], std::abs(w[i] * (x[i] - ref[i])), 1e-15);
  }
}

TEST(DeepLift, ZeroWhenInputEqualsReference) {
  const Model m = small_cnn(3, 8, 8);
  const Tensor x = random_tensor({3, 8, 8}, 9);
  const auto map = deeplift(m, x, 0, x);
  for (double v : map.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(DeepLift, SummationToDelta) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const Model m = trial % 2 ? small_cnn(3, 8, 40 + trial) : make_tiny_cnn({1, 32, 32}, {"a", "b"}, 40 + trial);
    const Tensor x = random_tensor(m.input_shape(), 50 + trial);
    const Tensor ref(m.input_shape(), 0.0);
    for (std::size_t c = 0; c < 2; ++c) {
      const auto map = deeplift(m, x, c, ref);
      const double delta = predict(m, x)[c] - predict(m, ref)[c];
      EXPECT_NEAR(sum(map.signed_values), delta, 1e-8) << "trial " << trial;
      for (double v : map.values.data()) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(DeepLift, ShapeMismatchRejected) {
  const Model m = small_cnn(1, 8, 8);
  EXPECT_THROW(deeplift(m, random_tensor({1, 8, 8}, 1), 0, Tensor({1, 4, 4})), std::invalid_argument);
}

TEST(IntegratedGradients, LinearModelExactAtOneStep) {
  const std::vector<double> w = {0.5, -1.5, 0.25, 2.0};
  const Model m = linear_model({1, 2, 2}, {w, w});
  const Tensor x = random_tensor({1, 2, 2}, 6), base = random_tensor({1, 2, 2}, 7);
  for (std::size_t n : {1u, 7u}) {
    const auto map = integrated_gradients(m, x, 0, {base, n, "custom"});
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(map.signed_values[i], w[i] * (x[i] - base[i]), 1e-15);
  }
}

TEST(IntegratedGradients, IgnoredPixelGetsZero) {
  std::vector<double> w(16, 0.3);
  w[9] = 0.0;
  const Model m = linear_model({1, 4, 4}, {w, w});
  const auto map = integrated_gradients(m, random_tensor({1, 4, 4}, 1), 0, {Tensor({1, 4, 4}, 0.0), 20});
  EXPECT_EQ(map.values[9], 0.0);
}

TEST(IntegratedGradients, BaselineAtInputGivesZeros) {
  const Model m = small_cnn(1, 8, 3);
  const Tensor x = random_tensor({1, 8, 8}, 2);
  const auto map = integrated_gradients(m, x, 0, {x, 20});
  for (double v : map.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(IntegratedGradients, CompletenessImprovesWithSteps) {
  const Model m = small_cnn(1, 8, 60);
  const Tensor x = random_tensor({1, 8, 8}, 61);
  const Tensor zero({1, 8, 8}, 0.0);
  const double delta = predict(m, x)[0] - predict(m, zero)[0];
  ASSERT_GT(std::abs(delta), 1e-6);
  const auto map = integrated_gradients(m, x, 0, {zero, 256});
  EXPECT_LT(std::abs(sum(map.signed_values) - delta), 0.02 * std::abs(delta));
}

TEST(IntegratedGradients, RejectsBadConfig) {
  const Model m = small_cnn(1, 8, 3);
  const Tensor x = random_tensor({1, 8, 8}, 2);
  EXPECT_THROW(integrated_gradients(m, x, 0, {Tensor({1, 8, 8}), 0}), std::invalid_argument);
  EXPECT_THROW(integrated_gradients(m, x, 0, {Tensor({1, 4, 4}), 20}), std::invalid_argument);
}

TEST(Normalize, BasicAndDegenerate) {
  AttributionMap m;
  m.values = Tensor({1, 3}, {2, 4, 6});
  const auto n = normalize(m);
  EXPECT_EQ(n.values.values(), (std::vector<double>{0, 0.5, 1}));
  EXPECT_FALSE(n.degenerate);
  EXPECT_EQ(n.raw_min, 2.0);
  EXPECT_EQ(n.raw_max, 6.0);

  m.values = Tensor({2, 2}, 3.5);
  const auto d = normalize(m);
  EXPECT_TRUE(d.degenerate);
  for (double v : d.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, IdempotentAndOrderPreserving) {
  AttributionMap m;
  m.values = random_tensor({5, 5}, 70, -3.0, 8.0);
  m.values[3] = m.values[4];  // a tie
  const auto n = normalize(m);
  EXPECT_EQ(normalize(n).values, n.values);
  std::vector<std::size_t> a(25), b(25);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  std::stable_sort(a.begin(), a.end(), [&](auto i, auto j) { return m.values[i] < m.values[j]; });
  std::stable_sort(b.begin(), b.end(), [&](auto i, auto j) { return n.values[i] < n.values[j]; });
  EXPECT_EQ(a, b);
  EXPECT_EQ(n.values[3], n.values[4]);
}

TEST(Heatmap, WritesPgmAndSidecar) {
  test_support::TempDir dir;
  const Model m = small_cnn(1, 8, 3);
  const auto map = saliency(m, random_tensor({1, 8, 8}, 2), 1);
  write_heatmap(map, dir / "h.pgm", 42);
  EXPECT_TRUE(std::filesystem::exists(dir / "h.pgm"));
  std::ifstream is(dir / "h.txt");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("method=saliency"), std::string::npos) << text;
  EXPECT_NE(text.find("class=1"), std::string::npos) << text;
  EXPECT_NE(text.find("seed=42"), std::string::npos) << text;
}

TEST(Methods, ParseNames) {
  for (auto m : all_methods()) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_FALSE(parse_method("gradcam"));
}
