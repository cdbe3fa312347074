#include <gtest/gtest.h>

#include "fraclens/autodiff.hpp"
#include "test_util.hpp"

using namespace fraclens;
using test_support::kink_free_input;
using test_support::linear_model;
using test_support::random_tensor;
using test_support::small_cnn;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor({2, 0}), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(sum(t), 9.0);
  EXPECT_EQ(t.reshaped({6}).shape(), Shape({6}));
  EXPECT_THROW(t.reshaped({4}), std::invalid_argument);
}


TEST(Forward, ReluExample) {
  // flatten -> relu -> identity dense
  std::vector<LayerSpec> layers = {{LayerKind::flatten}, {LayerKind::relu}, {LayerKind::dense, 0, 0, Padding::valid, 3}};
  std::vector<Parameter> params = {{"layer2.weight", Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), true},
                                   {"layer2.bias", Tensor({3}, 0.0), true}};
  Model m = Model::create({1, 1, 3}, layers, params, {"a", "b", "c"});
  const Tensor out = predict(m, Tensor({1, 1, 3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(out.values(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(Forward, IdentityDense) {
  Model m = linear_model({1, 1, 4}, {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  const Tensor x({1, 1, 4}, {0.25, -3.0, 7.5, 0.0});
  EXPECT_EQ(predict(m, x).values(), x.values());
}

TEST(Forward, OneByOneConvScales) {
  std::vector<LayerSpec> layers = {{LayerKind::conv2d, 1, 1, Padding::valid, 0},
                                   {LayerKind::flatten},
                                   {LayerKind::dense, 0, 0, Padding::valid, 4}};
  Tensor eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  std::vector<Parameter> params = {{"layer0.weight", Tensor({1, 1, 1, 1}, 2.0), true},
                                   {"layer0.bias", Tensor({1}, 0.0), true},
                                   {"layer2.weight", eye, true},
                                   {"layer2.bias", Tensor({4}, 0.0), true}};
  Model m = Model::create({1, 2, 2}, layers, params, {"a", "b", "c", "d"});
  EXPECT_EQ(predict(m, Tensor({1, 2, 2}, 1.0)).values(), (std::vector<double>{2, 2, 2, 2}));
}

TEST(Forward, ShapeMismatchNamesLayer) {
  Model m = small_cnn(1, 8, 1);
  try {
    (void)forward(m, Tensor({1, 9, 9}));
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
  }
}

TEST(Forward, InconsistentLayersRejectedAtConstruction) {
  std::vector<LayerSpec> layers = {{LayerKind::dense, 0, 0, Padding::valid, 2}};
  EXPECT_THROW(Model::create({1, 4, 4}, layers, {}, {"a", "b"}), ModelError);
}

TEST(Forward, MaxPoolTieGoesToFirstElement) {
  // 2x2 image of equal values: gradient flows only to the top-left pixel
  std::vector<LayerSpec> layers = {{LayerKind::maxpool2}, {LayerKind::flatten}, {LayerKind::dense, 0, 0, Padding::valid, 2}};
  std::vector<Parameter> params = {{"layer2.weight", Tensor({2, 1}, {1.0, -1.0}), true},
                                   {"layer2.bias", Tensor({2}, 0.0), true}};
  Model m = Model::create({1, 2, 2}, layers, params, {"a", "b"});
  const Tensor g = grad_input(m, Tensor({1, 2, 2}, 0.5), 0);
  EXPECT_EQ(g.values(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Forward, ReluSubgradientAtZeroIsZero) {
  std::vector<LayerSpec> layers = {{LayerKind::flatten}, {LayerKind::relu}, {LayerKind::dense, 0, 0, Padding::valid, 2}};
  std::vector<Parameter> params = {{"layer2.weight", Tensor({2, 2}, {1, 1, 0, 0}), true},
                                   {"layer2.bias", Tensor({2}, 0.0), true}};
  Model m = Model::create({1, 1, 2}, layers, params, {"a", "b"});
  EXPECT_EQ(grad_input(m, Tensor({1, 1, 2}, {0.0, 1.0}), 0).values(), (std::vector<double>{0.0, 1.0}));
}

TEST(GradInput, LinearEqualsWeights) {
  const std::vector<double> w = {0.5, -1.25, 3.0, 0.0, 2.0, -0.75};
  Model m = linear_model({1, 2, 3}, {w, std::vector<double>(6, 1.0)});
  const Tensor g = grad_input(m, random_tensor({1, 2, 3}, 4), 0);
  EXPECT_EQ(g.values(), w);
  EXPECT_EQ(g.shape(), Shape({1, 2, 3}));
}

TEST(GradInput, IgnoredPixelHasZeroGradient) {
  std::vector<double> w(16, 0.3);
  w[5] = 0.0;
  Model lin = linear_model({1, 4, 4}, {w, w});
  EXPECT_EQ(grad_input(lin, random_tensor({1, 4, 4}, 2), 0)[5], 0.0);
}

TEST(GradInput, ClassOutOfRange) {
  Model m = small_cnn(1, 8, 3);
  EXPECT_THROW(grad_input(m, random_tensor({1, 8, 8}, 1), 2), std::out_of_range);
}

TEST(NumericGradient, SquareFunction) {
  const auto f = [](const Tensor& t) { return t[0] * t[0]; };
  const Tensor g = numeric_gradient(f, Tensor({1}, 3.0), 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(NumericGradient, LinearModelEqualsWeights) {
  const std::vector<double> w = {0.5, -1.25, 3.0, 0.125};
  Model m = linear_model({1, 2, 2}, {w, w});
  const Tensor g = numeric_gradient(m, random_tensor({1, 2, 2}, 8), 0, 1e-5);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(g[i], w[i], 1e-9);
}

TEST(NumericGradient, RejectsNonPositiveStep) {
  Model m = small_cnn(1, 8, 3);
  EXPECT_THROW(numeric_gradient(m, random_tensor({1, 8, 8}, 1), 0, 0.0), std::invalid_argument);
  EXPECT_THROW(numeric_gradient(m, random_tensor({1, 8, 8}, 1), 0, -1e-5), std::invalid_argument);
}

TEST(GradInput, MatchesFiniteDifferencesOnRandomCnns) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const std::size_t channels = trial % 2 ? 3 : 1;
    Model m = small_cnn(channels, 8, 100 + trial);
    const Tensor x = kink_free_input(m, trial, 1e-3);
    for (std::size_t c = 0; c < 2; ++c) {
      const Tensor g = grad_input(m, x, c);
      const Tensor n = numeric_gradient(m, x, c, 1e-5);
      EXPECT_LT(l2_norm(g - n) / std::max(l2_norm(g), 1e-12), 1e-6) << "trial " << trial << " class " << c;
    }
  }
}

TEST(GradInput, ReversePassIsLinearInOutputGrad) {
  Model m = small_cnn(1, 8, 11, 3);
  const Tensor x = random_tensor({1, 8, 8}, 12);
  const std::vector<double> a = {1, 0, 0}, b = {0, 0, 1}, mix = {2.5, 0, -0.5};
  const Tensor ga = backward(forward(m, x).tape, a);
  const Tensor gb = backward(forward(m, x).tape, b);
  const Tensor gm = backward(forward(m, x).tape, mix);
  const Tensor expect = 2.5 * ga + -0.5 * gb;
  EXPECT_LT(l2_norm(gm - expect), 1e-12 * (1.0 + l2_norm(expect)));
}

TEST(GradInput, Deterministic) {
  Model m = small_cnn(3, 8, 13);
  const Tensor x = random_tensor({3, 8, 8}, 14);
  EXPECT_EQ(predict(m, x), predict(m, x));
  EXPECT_EQ(grad_input(m, x, 1), grad_input(m, x, 1));
}

TEST(Tape, ReplayReproducesOutputBitIdentically) {
  Model m = small_cnn(1, 8, 15);
  auto r = forward(m, random_tensor({1, 8, 8}, 16));
  EXPECT_EQ(r.tape.replay(), r.logits);
  EXPECT_EQ(r.tape.output(), r.logits);
  EXPECT_EQ(r.tape.size(), m.layers().size());
}

TEST(Tape, SingleReversePass) {
  Model m = small_cnn(1, 8, 17);
  auto r = forward(m, random_tensor({1, 8, 8}, 18));
  const std::vector<double> g = {1.0, 0.0};
  (void)backward(std::move(r.tape), g);
  EXPECT_THROW((void)backward(std::move(r.tape), g), std::logic_error);
}

TEST(Tape, OutputGradLengthChecked) {
  Model m = small_cnn(1, 8, 17);
  auto r = forward(m, random_tensor({1, 8, 8}, 18));
  const std::vector<double> g = {1.0, 0.0, 0.0};
  EXPECT_THROW((void)backward(std::move(r.tape), g), std::invalid_argument);
}

TEST(Loss, SoftmaxCrossEntropy) {
  const std::vector<double> logits = {1.0, 1.0};
  const auto ce = softmax_cross_entropy(logits, 0);
  EXPECT_NEAR(ce.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(ce.grad[0], -0.5, 1e-15);
  EXPECT_NEAR(ce.grad[1], 0.5, 1e-15);
  const std::vector<double> big = {1000.0, 0.0};
  EXPECT_TRUE(std::isfinite(softmax_cross_entropy(big, 1).loss));
  EXPECT_EQ(argmax(logits), 0u);
}
