#pragma once

// Declarative construction of the four compared architectures (FC, CNN-FC,
// LSTM-FC, CNN-LSTM-FC) and their ablation variants.
//
// The network input is one MFCC window, [frames, coeffs]. Convolutional
// models view it as a one-channel image with time as height; after the conv
// stage, channels and frequency are flattened into features and time is
// kept as the sequence axis for the recurrent stage.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxcount/common.hpp"
#include "voxcount/nn/layer_spec.hpp"
#include "voxcount/nn/network.hpp"

namespace voxcount {

enum class Architecture { fc, cnn_fc, lstm_fc, cnn_lstm_fc };

NLOHMANN_JSON_SERIALIZE_ENUM(Architecture, {
                                               {Architecture::fc, "fc"},
                                               {Architecture::cnn_fc, "cnn_fc"},
                                               {Architecture::lstm_fc, "lstm_fc"},
                                               {Architecture::cnn_lstm_fc, "cnn_lstm_fc"},
                                           })

inline std::string display_name(Architecture a) {
  switch (a) {
    case Architecture::fc: return "FC";
    case Architecture::cnn_fc: return "CNN-FC";
    case Architecture::lstm_fc: return "LSTM-FC";
    case Architecture::cnn_lstm_fc: return "CNN-LSTM-FC";
  }
  return "?";
}

struct InputGeometry {
  std::size_t frames = 0;
  std::size_t coeffs = 0;
  friend bool operator==(const InputGeometry&, const InputGeometry&) = default;
};

struct ConvStage {
  std::size_t blocks = 7;
  std::size_t kernel_h = 5;
  std::size_t kernel_w = 5;
  std::size_t filters = 256;
  /// Optional per-block filter counts; overrides `filters` when non-empty.
  std::vector<std::size_t> filters_per_block;

  std::size_t filters_at(std::size_t block) const {
    return filters_per_block.empty() ? filters : filters_per_block.at(block);
  }
  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct RecurrentStage {
  std::size_t layers = 3;
  std::size_t units = 128;
  friend bool operator==(const RecurrentStage&, const RecurrentStage&) = default;
};

struct HeadSpec {
  std::vector<std::size_t> hidden{512, 64};
  double dropout = 0.3;
  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

inline constexpr double kLeakyAlpha = 0.1;
inline constexpr std::size_t kOutputUnits = 2;

/// Every knob of the four builders. Defaults are the full-size network.
struct ArchitectureParams {
  ConvStage conv;
  RecurrentStage recurrent;
  HeadSpec head;
  std::vector<std::size_t> fc_widths{1024, 512, 256, 64};

  static ArchitectureParams paper() { return {}; }

  /// Reduced geometry that trains in minutes on one core.
  static ArchitectureParams desk() {
    ArchitectureParams p;
    p.conv.blocks = 2;
    p.conv.filters = 16;
    p.recurrent.layers = 1;
    p.recurrent.units = 32;
    return p;
  }

  friend bool operator==(const ArchitectureParams&, const ArchitectureParams&) = default;
};

struct ModelConfig {
  std::string name;
  InputGeometry input;
  std::vector<nn::LayerSpec> layers;

  nn::Shape input_shape() const { return {input.frames, input.coeffs}; }
};

inline void to_json(nlohmann::json& j, const InputGeometry& g) { j = {{"frames", g.frames}, {"coeffs", g.coeffs}}; }
inline void from_json(const nlohmann::json& j, InputGeometry& g) {
  g.frames = j.at("frames").get<std::size_t>();
  g.coeffs = j.at("coeffs").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"name", c.name}, {"input", c.input}, {"layers", c.layers}, {"outputs", kOutputUnits}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.name = j.at("name").get<std::string>();
  c.input = j.at("input").get<InputGeometry>();
  c.layers = j.at("layers").get<std::vector<nn::LayerSpec>>();
}

inline void to_json(nlohmann::json& j, const ArchitectureParams& p) {
  j = {{"conv", {{"blocks", p.conv.blocks},
                 {"kernel", {p.conv.kernel_h, p.conv.kernel_w}},
                 {"filters", p.conv.filters},
                 {"filters_per_block", p.conv.filters_per_block}}},
       {"recurrent", {{"layers", p.recurrent.layers}, {"units", p.recurrent.units}}},
       {"head", {{"hidden", p.head.hidden}, {"dropout", p.head.dropout}}},
       {"fc_widths", p.fc_widths}};
}

/// Missing keys keep the values already in `p`, so a partial JSON object
/// acts as an override on top of a preset.
inline void from_json(const nlohmann::json& j, ArchitectureParams& p) {
  if (auto it = j.find("conv"); it != j.end()) {
    p.conv.blocks = it->value("blocks", p.conv.blocks);
    if (it->contains("kernel")) {
      p.conv.kernel_h = it->at("kernel").at(0).get<std::size_t>();
      p.conv.kernel_w = it->at("kernel").at(1).get<std::size_t>();
    }
    p.conv.filters = it->value("filters", p.conv.filters);
    p.conv.filters_per_block = it->value("filters_per_block", p.conv.filters_per_block);
  }
  if (auto it = j.find("recurrent"); it != j.end()) {
    p.recurrent.layers = it->value("layers", p.recurrent.layers);
    p.recurrent.units = it->value("units", p.recurrent.units);
  }
  if (auto it = j.find("head"); it != j.end()) {
    p.head.hidden = it->value("hidden", p.head.hidden);
    p.head.dropout = it->value("dropout", p.head.dropout);
  }
  p.fc_widths = j.value("fc_widths", p.fc_widths);
}

/// Stable identity of an architecture: FNV-1a over its canonical JSON.
inline std::uint64_t architecture_hash(const ModelConfig& c) { return fnv1a64(nlohmann::json(c).dump()); }

/// Runs the symbolic shape trace and checks the two-unit output.
inline std::vector<nn::Shape> validate_model(const ModelConfig& c) {
  require(c.input.frames > 0 && c.input.coeffs > 0, c.name + ": empty input geometry");
  std::vector<nn::Shape> shapes;
  try {
    shapes = nn::trace_shapes(c.layers, c.input_shape());
  } catch (const InputError& e) {
    throw InputError(c.name + ": " + e.what());
  }
  require(!shapes.empty() && shapes.back() == nn::Shape{kOutputUnits},
          c.name + ": final layer must produce exactly 2 outputs");
  return shapes;
}

namespace zoo_detail {

/// Conv blocks need every spatial dim >= 2^blocks: each 2x2 pool nominally
/// halves it, and a block whose halved size would drop below one is rejected.
inline void append_conv_stage(std::vector<nn::LayerSpec>& layers, const InputGeometry& in, const ConvStage& conv) {
  require(conv.blocks >= 1, "conv stage needs at least one block");
  require(conv.filters_per_block.empty() || conv.filters_per_block.size() == conv.blocks,
          "filters_per_block must list one count per block");
  std::size_t h = in.frames, w = in.coeffs;
  layers.push_back(nn::LayerSpec::reshape(nn::ReshapeMode::add_channel));
  for (std::size_t b = 0; b < conv.blocks; ++b) {
    if (h / 2 < 1 || w / 2 < 1)
      throw InputError("conv block " + std::to_string(b + 1) + " of " + std::to_string(conv.blocks) +
                       ": 2x2 pooling would reduce a " + std::to_string(h) + "x" + std::to_string(w) +
                       " map below 1 (input " + std::to_string(in.frames) + "x" + std::to_string(in.coeffs) +
                       " supports at most " +
                       std::to_string(static_cast<std::size_t>(std::floor(std::log2(std::min(in.frames, in.coeffs))))) +
                       " blocks)");
    h /= 2;
    w /= 2;
    layers.push_back(nn::LayerSpec::conv2d(conv.kernel_h, conv.kernel_w, conv.filters_at(b)));
    layers.push_back(nn::LayerSpec::leaky_relu(kLeakyAlpha));
    layers.push_back(nn::LayerSpec::maxpool2d(2));
  }
}

inline void append_recurrent_stage(std::vector<nn::LayerSpec>& layers, const RecurrentStage& rec) {
  require(rec.layers >= 1, "recurrent stage needs at least one BLSTM layer");
  for (std::size_t i = 0; i < rec.layers; ++i) layers.push_back(nn::LayerSpec::blstm(rec.units));
  layers.push_back(nn::LayerSpec::mean_pool_time());
}

inline void append_head(std::vector<nn::LayerSpec>& layers, const HeadSpec& head) {
  for (std::size_t width : head.hidden) {
    layers.push_back(nn::LayerSpec::dense(width));
    layers.push_back(nn::LayerSpec::leaky_relu(kLeakyAlpha));
    layers.push_back(nn::LayerSpec::dropout(head.dropout));
  }
  layers.push_back(nn::LayerSpec::dense(kOutputUnits));
}

inline ModelConfig finish(std::string name, const InputGeometry& in, std::vector<nn::LayerSpec> layers) {
  ModelConfig c{std::move(name), in, std::move(layers)};
  validate_model(c);
  return c;
}

}  // namespace zoo_detail

/// Conv blocks (same-padded conv, LeakyReLU 0.1, 2x2 max-pool), BLSTM stack,
/// mean over time, FC head, two outputs.
inline ModelConfig build_cnn_lstm_fc(const InputGeometry& in, const ArchitectureParams& p = ArchitectureParams::paper()) {
  std::vector<nn::LayerSpec> layers;
  zoo_detail::append_conv_stage(layers, in, p.conv);
  layers.push_back(nn::LayerSpec::reshape(nn::ReshapeMode::to_sequence));
  zoo_detail::append_recurrent_stage(layers, p.recurrent);
  zoo_detail::append_head(layers, p.head);
  return zoo_detail::finish("cnn_lstm_fc", in, std::move(layers));
}

inline ModelConfig build_cnn_lstm_fc(const InputGeometry& in, std::size_t channels, std::size_t kernel,
                                     std::size_t filters) {
  auto p = ArchitectureParams::paper();
  p.conv.blocks = channels;
  p.conv.kernel_h = p.conv.kernel_w = kernel;
  p.conv.filters = filters;
  return build_cnn_lstm_fc(in, p);
}

inline ModelConfig build_cnn_fc(const InputGeometry& in, const ArchitectureParams& p = ArchitectureParams::paper()) {
  std::vector<nn::LayerSpec> layers;
  zoo_detail::append_conv_stage(layers, in, p.conv);
  layers.push_back(nn::LayerSpec::reshape(nn::ReshapeMode::flatten));
  zoo_detail::append_head(layers, p.head);
  return zoo_detail::finish("cnn_fc", in, std::move(layers));
}

/// MFCC frames feed the BLSTM stack directly as the time axis.
inline ModelConfig build_lstm_fc(const InputGeometry& in, const ArchitectureParams& p = ArchitectureParams::paper()) {
  std::vector<nn::LayerSpec> layers;
  zoo_detail::append_recurrent_stage(layers, p.recurrent);
  zoo_detail::append_head(layers, p.head);
  return zoo_detail::finish("lstm_fc", in, std::move(layers));
}

/// Flattened input through the wide FC stack, LeakyReLU and dropout after
/// each hidden layer.
inline ModelConfig build_fc_baseline(const InputGeometry& in, const ArchitectureParams& p = ArchitectureParams::paper()) {
  std::vector<nn::LayerSpec> layers{nn::LayerSpec::reshape(nn::ReshapeMode::flatten)};
  zoo_detail::append_head(layers, HeadSpec{p.fc_widths, p.head.dropout});
  return zoo_detail::finish("fc", in, std::move(layers));
}

inline ModelConfig build_model(Architecture a, const InputGeometry& in, const ArchitectureParams& p) {
  switch (a) {
    case Architecture::fc: return build_fc_baseline(in, p);
    case Architecture::cnn_fc: return build_cnn_fc(in, p);
    case Architecture::lstm_fc: return build_lstm_fc(in, p);
    case Architecture::cnn_lstm_fc: return build_cnn_lstm_fc(in, p);
  }
  throw InputError("unknown architecture");
}

/// Units of every dense layer in order.
inline std::vector<std::size_t> dense_widths(const ModelConfig& c) {
  std::vector<std::size_t> out;
  for (const auto& l : c.layers)
    if (l.kind == nn::LayerKind::dense) out.push_back(l.units);
  return out;
}

/// Trainable parameter count from the shape trace, without allocating.
inline std::size_t parameter_count(const ModelConfig& c) {
  const auto shapes = validate_model(c);
  std::size_t total = 0;
  nn::Shape in = c.input_shape();
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    const auto& l = c.layers[i];
    switch (l.kind) {
      case nn::LayerKind::conv2d:
        total += l.filters * in[0] * l.kernel_h * l.kernel_w + l.filters;
        break;
      case nn::LayerKind::dense:
        total += in[0] * l.units + l.units;
        break;
      case nn::LayerKind::blstm:
        total += 2 * (in[1] * 4 * l.units + l.units * 4 * l.units + 4 * l.units);
        break;
      default:
        break;
    }
    in = shapes[i];
  }
  return total;
}

struct ClipCount {
  int males = 0;
  int females = 0;
  friend bool operator==(const ClipCount&, const ClipCount&) = default;
};

/// Mean of the per-window normalized predictions, scaled by n_max, rounded
/// half away from zero and clamped to [0, n_max]. When the two counts sum to
/// more than n_max they are reduced proportionally.
inline ClipCount aggregate_clip_prediction(std::span<const std::array<double, 2>> window_preds, int n_max) {
  require(!window_preds.empty(), "aggregate_clip_prediction: no window predictions");
  require(n_max >= 1, "aggregate_clip_prediction: n_max must be >= 1");
  double sum_m = 0.0, sum_f = 0.0;
  for (const auto& p : window_preds) {
    sum_m += p[0];
    sum_f += p[1];
  }
  const double n = static_cast<double>(window_preds.size());
  const auto to_count = [n_max](double normalized) {
    const double r = std::round(normalized * n_max);
    return static_cast<int>(std::clamp(r, 0.0, static_cast<double>(n_max)));
  };
  ClipCount c{to_count(sum_m / n), to_count(sum_f / n)};
  if (c.males + c.females > n_max) {
    const int total = c.males + c.females;
    c.males = static_cast<int>(std::round(static_cast<double>(c.males) * n_max / total));
    c.females = n_max - c.males;
  }
  return c;
}

}  // namespace voxcount
