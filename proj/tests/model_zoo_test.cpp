#include <gtest/gtest.h>

#include <algorithm>

#include "voxcount/experiments.hpp"
#include "voxcount/model_zoo.hpp"

using namespace voxcount;
using nn::LayerKind;
using nn::Shape;

namespace {

std::vector<LayerKind> kinds(const ModelConfig& c) {
  std::vector<LayerKind> out;
  for (const auto& l : c.layers) out.push_back(l.kind);
  return out;
}

}  // namespace

TEST(Hybrid, PaperLayerSequence) {
  const auto c = build_cnn_lstm_fc({256, 128});
  std::vector<LayerKind> expected{LayerKind::reshape};
  for (int b = 0; b < 7; ++b)
    expected.insert(expected.end(), {LayerKind::conv2d, LayerKind::leaky_relu, LayerKind::maxpool2d});
  expected.insert(expected.end(), {LayerKind::reshape, LayerKind::blstm, LayerKind::blstm, LayerKind::blstm,
                                   LayerKind::mean_pool_time, LayerKind::dense, LayerKind::leaky_relu,
                                   LayerKind::dropout, LayerKind::dense, LayerKind::leaky_relu, LayerKind::dropout,
                                   LayerKind::dense});
  EXPECT_EQ(kinds(c), expected);
  for (const auto& l : c.layers) {
    if (l.kind == LayerKind::conv2d) {
      EXPECT_EQ(l.filters, 256u);
      EXPECT_EQ(l.kernel_h, 5u);
      EXPECT_EQ(l.kernel_w, 5u);
    }
    if (l.kind == LayerKind::blstm) {
      EXPECT_EQ(l.units, 128u);
    }
    if (l.kind == LayerKind::leaky_relu) {
      EXPECT_EQ(l.alpha, 0.1);
    }
  }
  EXPECT_EQ(dense_widths(c), (std::vector<std::size_t>{512, 64, 2}));
  EXPECT_EQ(validate_model(c).back(), (Shape{2}));
}

TEST(Hybrid, OneBlockHalvesSpatialDims) {
  const auto c = build_cnn_lstm_fc({64, 64}, 1, 5, 8);
  const auto shapes = validate_model(c);
  // reshape, conv, relu, pool
  EXPECT_EQ(shapes[3], (Shape{8, 32, 32}));
  EXPECT_EQ(shapes[4], (Shape{32, 8 * 32}));
}

TEST(Hybrid, SevenBlocksNeed128) {
  EXPECT_NO_THROW(build_cnn_lstm_fc({128, 128}, 7, 3, 4));
  try {
    build_cnn_lstm_fc({98, 200}, 7, 3, 4);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("conv block 7"), std::string::npos) << e.what();
  }
  EXPECT_THROW(build_cnn_lstm_fc({200, 127}, 7, 3, 4), InputError);
  EXPECT_THROW(build_cnn_lstm_fc({64, 64}, 1, 4, 8), InputError);  // even kernel
}

TEST(FcBaseline, WidthsAndParameterCount) {
  for (std::size_t d : {13u * 98u, 50u, 7u}) {
    const auto c = build_fc_baseline({d, 1});
    EXPECT_EQ(dense_widths(c), (std::vector<std::size_t>{1024, 512, 256, 64, 2}));
    const std::size_t expected =
        d * 1024 + 1024 + 1024 * 512 + 512 + 512 * 256 + 256 + 256 * 64 + 64 + 64 * 2 + 2;
    EXPECT_EQ(parameter_count(c), expected);
    nn::Network<float> net(c.layers, c.input_shape(), 1);
    EXPECT_EQ(net.parameter_count(), expected);
    EXPECT_EQ(net.output_shape(), (Shape{2}));
  }
}

TEST(Builders, SharedConvStageAndTwoOutputs) {
  const InputGeometry g{98, 13};
  const auto p = ArchitectureParams::desk();
  const auto hybrid = build_cnn_lstm_fc(g, p);
  const auto cnn = build_cnn_fc(g, p);
  const auto conv_params = [](const ModelConfig& c) {
    std::size_t n = 0, in = 1;
    for (const auto& l : c.layers)
      if (l.kind == LayerKind::conv2d) {
        n += l.filters * in * l.kernel_h * l.kernel_w + l.filters;
        in = l.filters;
      }
    return n;
  };
  EXPECT_EQ(conv_params(hybrid), conv_params(cnn));
  EXPECT_GT(conv_params(hybrid), 0u);

  const auto lstm = build_lstm_fc(g, p);
  EXPECT_EQ(lstm.layers.front().kind, LayerKind::blstm);
  EXPECT_EQ(validate_model(lstm).front(), (Shape{98, 64}));

  for (Architecture a : {Architecture::fc, Architecture::cnn_fc, Architecture::lstm_fc, Architecture::cnn_lstm_fc}) {
    const auto c = build_model(a, g, p);
    EXPECT_EQ(validate_model(c).back(), (Shape{2}));
    nn::Network<float> net(c.layers, c.input_shape(), 3);
    EXPECT_EQ(net.parameter_count(), parameter_count(c)) << display_name(a);
  }
}

TEST(Builders, AblationGridConstructsAtDeepConvGeometry) {
  ExperimentSpec s;
  use_deep_conv_geometry(s);
  const InputGeometry g = s.geometry();
  EXPECT_GE(g.frames, 128u);
  EXPECT_GE(g.coeffs, 128u);
  int built = 0;
  for (std::size_t channels : {3, 5, 7})
    for (std::size_t kernel : {3, 5, 7})
      for (std::size_t filters : {64, 128, 256}) {
        const auto c = build_cnn_lstm_fc(g, channels, kernel, filters);
        EXPECT_EQ(validate_model(c).back(), (Shape{2}));
        ++built;
      }
  EXPECT_EQ(built, 27);
}

TEST(ModelConfig, JsonRoundTripAndHash) {
  const auto c = build_cnn_lstm_fc({98, 13}, ArchitectureParams::desk());
  const auto back = nlohmann::json(c).get<ModelConfig>();
  EXPECT_EQ(architecture_hash(back), architecture_hash(c));
  EXPECT_NE(architecture_hash(build_cnn_fc({98, 13}, ArchitectureParams::desk())), architecture_hash(c));

  ArchitectureParams p = ArchitectureParams::desk();
  from_json(nlohmann::json{{"conv", {{"filters", 32}}}}, p);
  EXPECT_EQ(p.conv.filters, 32u);
  EXPECT_EQ(p.conv.blocks, 2u);
}

TEST(Aggregate, Examples) {
  const std::array<double, 2> same[] = {{0.3, 0.2}, {0.3, 0.2}, {0.3, 0.2}};
  EXPECT_EQ(aggregate_clip_prediction(same, 10), (ClipCount{3, 2}));
  const std::array<double, 2> avg[] = {{0.31, 0.19}, {0.29, 0.21}};
  EXPECT_EQ(aggregate_clip_prediction(avg, 10), (ClipCount{3, 2}));
  const std::array<double, 2> clamp[] = {{1.2, 0.0}};
  EXPECT_EQ(aggregate_clip_prediction(clamp, 10), (ClipCount{10, 0}));
  const std::array<double, 2> negative[] = {{-0.3, 0.26}};
  EXPECT_EQ(aggregate_clip_prediction(negative, 4), (ClipCount{0, 1}));
  const std::array<double, 2> over[] = {{0.9, 0.9}};
  const auto c = aggregate_clip_prediction(over, 4);
  EXPECT_EQ(c.males + c.females, 4);
  EXPECT_THROW(aggregate_clip_prediction(std::span<const std::array<double, 2>>(), 4), InputError);
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::array<double, 2>> w(1 + rng.below(12));
    for (auto& p : w) p = {rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
    const auto before = aggregate_clip_prediction(w, 4);
    rng.shuffle(w.begin(), w.end());
    EXPECT_EQ(aggregate_clip_prediction(w, 4), before);
  }
}
