#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "fraclens/autodiff.hpp"
#include "fraclens/dataset.hpp"
#include "fraclens/train.hpp"
#include "fraclens/weight_file.hpp"
#include "test_util.hpp"

using namespace fraclens;
using test_support::TempDir;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::uint32_t read_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

WeightFileError::Kind decode_error_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    (void)decode_model(bytes);
  } catch (const WeightFileError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded unexpectedly";
  return WeightFileError::Kind::io;
}

}  // namespace

TEST(WeightFile, RoundTripEqualsQuantizedModel) {
  TempDir dir;
  const Model m = make_tiny_cnn({3, 16, 16}, {"fractured", "healthy"}, 5, {0.1, 0.2, 0.3}, {0.5, 0.6, 0.7});
  save_model(m, dir / "m.mwf");
  const Model back = load_model(dir / "m.mwf");
  EXPECT_EQ(back, quantize_to_f32(m));
  EXPECT_EQ(back.layers(), m.layers());
  EXPECT_EQ(back.class_names(), m.class_names());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(back.parameters()[i].trainable, m.parameters()[i].trainable);
    for (std::size_t j = 0; j < m.parameters()[i].value.size(); ++j)
      EXPECT_EQ(back.parameters()[i].value[j], static_cast<double>(static_cast<float>(m.parameters()[i].value[j])));
  }
}

TEST(WeightFile, BadMagic) {
  auto bytes = encode_model(make_tiny_cnn({1, 8, 8}, {"a", "b"}, 1));
  std::memcpy(bytes.data(), "XXXX", 4);
  EXPECT_EQ(decode_error_kind(bytes), WeightFileError::Kind::bad_magic);
}

TEST(WeightFile, TruncatedBlob) {
  auto bytes = encode_model(make_tiny_cnn({1, 8, 8}, {"a", "b"}, 1));
  bytes.resize(bytes.size() - 4);
  EXPECT_EQ(decode_error_kind(bytes), WeightFileError::Kind::truncated);
}

TEST(WeightFile, TruncatedHeader) {
  const std::vector<std::uint8_t> bytes = {'M', 'W', 'F', '1', 10};
  EXPECT_EQ(decode_error_kind(bytes), WeightFileError::Kind::truncated);
}

TEST(WeightFile, InconsistentManifest) {
  auto bytes = encode_model(make_tiny_cnn({1, 8, 8}, {"a", "b"}, 1));
  const std::uint32_t len = read_u32le(bytes.data() + 4);
  std::string manifest(bytes.begin() + 8, bytes.begin() + 8 + len);
  const auto pos = manifest.find("param.0.offset=0");
  ASSERT_NE(pos, std::string::npos) << manifest;
  manifest[pos + std::string("param.0.offset=").size()] = '4';
  std::copy(manifest.begin(), manifest.end(), bytes.begin() + 8);
  EXPECT_EQ(decode_error_kind(bytes), WeightFileError::Kind::inconsistent);
}

TEST(WeightFile, DistinctDiagnostics) {
  auto good = encode_model(make_tiny_cnn({1, 8, 8}, {"a", "b"}, 1));
  auto magic = good, trunc = good;
  magic[0] = 'X';
  trunc.resize(trunc.size() - 4);
  std::string m1, m2;
  try {
    (void)decode_model(magic);
  } catch (const WeightFileError& e) {
    m1 = e.what();
  }
  try {
    (void)decode_model(trunc);
  } catch (const WeightFileError& e) {
    m2 = e.what();
  }
  EXPECT_FALSE(m1.empty());
  EXPECT_FALSE(m2.empty());
  EXPECT_NE(m1, m2);
}

TEST(WeightFile, MissingFileIsIoError) {
  TempDir dir;
  try {
    (void)load_model(dir / "absent.mwf");
    FAIL();
  } catch (const WeightFileError& e) {
    EXPECT_EQ(e.kind(), WeightFileError::Kind::io);
  }
}

TEST(WeightFile, DoubleSaveIsByteIdentical) {
  TempDir dir;
  const Model m = make_tiny_cnn({1, 16, 16}, {"a", "b"}, 2);
  save_model(m, dir / "a.mwf");
  save_model(m, dir / "b.mwf");
  EXPECT_EQ(read_bytes(dir / "a.mwf"), read_bytes(dir / "b.mwf"));
}

TEST(WeightFile, ParameterFreeBackboneRoundTrips) {
  // pooling only, so the head holds every parameter
  TempDir dir;
  const Model m = Model::create({2, 4, 4},
                                {{LayerKind::maxpool2},
                                 {LayerKind::global_avg_pool},
                                 {LayerKind::dense, 0, 0, Padding::valid, 2}},
                                {{"layer2.weight", Tensor({2, 2}, {0.5, -1.0, 2.0, 0.25}), true},
                                 {"layer2.bias", Tensor({2}, {0.125, -0.375}), true}},
                                {"a", "b"});
  EXPECT_EQ(m.layer_parameters(0).size() + m.layer_parameters(1).size(), 0u);
  save_model(m, dir / "z.mwf");
  EXPECT_EQ(load_model(dir / "z.mwf"), m);
}

TEST(WeightFile, ConvKernelBytesAreLittleEndianRowMajor) {
  const std::vector<double> k = {1.0, -2.0, 0.5, 3.25, 0.0, -0.125, 7.0, 1e-3, -1e3};
  std::vector<LayerSpec> layers = {{LayerKind::conv2d, 1, 3, Padding::valid, 0},
                                   {LayerKind::global_avg_pool},
                                   {LayerKind::dense, 0, 0, Padding::valid, 2}};
  std::vector<Parameter> params = {{"layer0.weight", Tensor({1, 1, 3, 3}, k), true},
                                   {"layer0.bias", Tensor({1}, 0.0), true},
                                   {"layer2.weight", Tensor({2, 1}, {1.0, -1.0}), true},
                                   {"layer2.bias", Tensor({2}, 0.0), true}};
  const Model m = Model::create({1, 3, 3}, layers, params, {"a", "b"});
  const auto bytes = encode_model(m);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MWF1");
  const std::size_t blob = 8 + read_u32le(bytes.data() + 4);
  std::vector<std::uint8_t> expect;
  for (double v : k) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) expect.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
  }
  ASSERT_GE(bytes.size(), blob + expect.size());
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(blob),
                                      bytes.begin() + static_cast<std::ptrdiff_t>(blob + expect.size())),
            expect);
  // the blob holds exactly 9 + 1 + 2 + 2 floats
  EXPECT_EQ(bytes.size() - blob, 14u * 4u);
}

TEST(ReplaceHead, ThousandClassHeadBecomesTwo) {
  std::vector<std::string> names;
  for (int i = 0; i < 1000; ++i) names.push_back("c" + std::to_string(i));
  const Model big = make_tiny_cnn({1, 16, 16}, names, 3);
  const Model m = replace_head(big, 2, 4);
  EXPECT_EQ(m.num_classes(), 2u);
  EXPECT_EQ(m.output_shape(), Shape({2}));
  for (std::size_t i = 0; i < big.parameters().size(); ++i) {
    if (big.is_head_parameter(i)) continue;
    EXPECT_EQ(m.parameters()[i], big.parameters()[i]) << big.parameters()[i].name;
  }
}

TEST(ReplaceHead, InitWithinBoundAndDeterministic) {
  const Model base = make_tiny_cnn({1, 16, 16}, {"a", "b", "c"}, 3);
  const Model a = replace_head(base, default_class_names(), 9);
  const Model b = replace_head(base, default_class_names(), 9);
  const Model c = replace_head(base, default_class_names(), 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  const std::size_t head = a.head_layer();
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.layer_input_shape(head)[0]));
  for (auto idx : a.layer_parameters(head))
    for (double v : a.parameters()[idx].value.data()) EXPECT_LE(std::abs(v), bound);
  EXPECT_EQ(a.class_names(), default_class_names());
}

TEST(ReplaceHead, RejectsFewerThanTwoClasses) {
  const Model base = make_tiny_cnn({1, 16, 16}, {"a", "b"}, 3);
  EXPECT_THROW(replace_head(base, 1, 0), ModelError);
}

TEST(Freeze, OnlyHeadTrainable) {
  const Model m = freeze_backbone(make_tiny_cnn({1, 16, 16}, {"a", "b"}, 3));
  std::size_t head_count = 0;
  for (auto idx : m.layer_parameters(m.head_layer())) head_count += m.parameters()[idx].value.size();
  EXPECT_EQ(m.trainable_count(), head_count);
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    EXPECT_EQ(m.parameters()[i].trainable, m.is_head_parameter(i));
  EXPECT_EQ(freeze_backbone(m), m);
}

TEST(Freeze, FrozenTensorsUnchangedByTraining) {
  Dataset ds;
  ds.channels = 1;
  ds.height = ds.width = 8;
  for (int i = 0; i < 8; ++i)
    ds.samples.push_back({"s" + std::to_string(i), test_support::random_tensor({1, 8, 8}, static_cast<std::uint64_t>(i)),
                          i % 2 ? Label::healthy : Label::fractured, Split::train});
  const Model m = freeze_backbone(make_tiny_cnn({1, 8, 8}, default_class_names(), 3));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.head_only = true;
  const Model trained = train(m, ds, cfg).model;
  bool head_moved = false;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    if (m.is_head_parameter(i))
      head_moved |= trained.parameters()[i].value != m.parameters()[i].value;
    else
      EXPECT_EQ(trained.parameters()[i].value, m.parameters()[i].value) << m.parameters()[i].name;
  }
  EXPECT_TRUE(head_moved);
}

TEST(Builder, HiddenLayersHeUniformAndStandardizeFrozen) {
  const Model m = make_tiny_cnn({2, 16, 16}, {"a", "b"}, 1, {0.5, 0.25}, {0.2, 0.1});
  const auto& scale = m.parameter("layer0.scale");
  EXPECT_FALSE(scale.trainable);
  EXPECT_DOUBLE_EQ(scale.value[0], 5.0);
  EXPECT_DOUBLE_EQ(m.parameter("layer0.shift").value[1], -2.5);
  const auto& w = m.parameter("layer1.weight");
  const double bound = std::sqrt(6.0 / (2.0 * 9.0));
  for (double v : w.value.data()) EXPECT_LE(std::abs(v), bound);
}
