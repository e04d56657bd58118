#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "voxcount/common.hpp"
#include "voxcount/nn/layer_spec.hpp"
#include "voxcount/nn/layers.hpp"
#include "voxcount/nn/tensor.hpp"

namespace voxcount::nn {

/// Per-layer output shapes for a per-sample input shape. Any inconsistency is
/// reported with the index and kind of the offending layer.
inline std::vector<Shape> trace_shapes(const std::vector<LayerSpec>& specs, const Shape& input) {
  std::vector<Shape> shapes;
  Shape current = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      auto layer = make_layer<float>(specs[i], current, 0);
      current = layer->output_shape(current);
    } catch (const InputError& e) {
      throw InputError("layer " + std::to_string(i) + " (" + nlohmann::json(specs[i].kind).get<std::string>() +
                       "): " + e.what());
    }
    shapes.push_back(current);
  }
  return shapes;
}

/// Static chain of layers built from a LayerSpec list.
template <class T>
class Network {
 public:
  Network(const std::vector<LayerSpec>& specs, Shape input_shape, std::uint64_t seed)
      : specs_(specs), input_shape_(std::move(input_shape)) {
    Shape current = input_shape_;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto layer = make_layer<T>(specs[i], current, derive_seed(seed, "dropout", i));
      current = layer->output_shape(current);
      Rng init_rng(derive_seed(seed, "init", i));
      layer->initialize(init_rng);
      layers_.push_back(std::move(layer));
    }
    if (!layers_.empty()) layers_.front()->set_needs_input_grad(false);
    output_shape_ = current;
  }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  /// `input` is [B, ...input_shape].
  Tensor<T> forward(const Tensor<T>& input, bool training) {
    Tensor<T> x = input;
    for (auto& layer : layers_) x = layer->forward(x, training);
    return x;
  }

  void backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  }

  /// Parameters in a stable order, named "<layer index>.<kind>.<param>".
  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& p : layers_[i]->parameters())
        out.push_back({std::to_string(i) + "." + nlohmann::json(layers_[i]->kind()).get<std::string>() + "." + p.name,
                       p.tensor});
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += p.tensor->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
  }

  void reseed_dropout(std::uint64_t seed) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (auto* d = dynamic_cast<Dropout<T>*>(layers_[i].get())) d->reseed(derive_seed(seed, "dropout", i));
  }

 private:
  std::vector<LayerSpec> specs_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <class T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
};

/// Mean of squared differences over all elements; grad = 2 (pred - target) / n.
template <class T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.shape == target.shape,
          "mse_loss: shape mismatch " + to_string(pred.shape) + " vs " + to_string(target.shape));
  require(pred.size() > 0, "mse_loss: empty tensors");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape);
  const double n = static_cast<double>(pred.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    acc += d * d;
    r.grad.data[i] = static_cast<T>(2.0 * d / n);
  }
  r.value = acc / n;
  return r;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// order the parameter list is first seen.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

  void step(const std::vector<ParamRef<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.tensor->size(), 0.0);
        v_.emplace_back(p.tensor->size(), 0.0);
      }
    }
    require(m_.size() == params.size(), "Adam: parameter list changed between steps");
    for (const auto& p : params)
      for (T g : p.tensor->grad)
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("Adam: non-finite gradient in " + p.name);
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& t = *params[k].tensor;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double g = static_cast<double>(t.grad[i]);
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        t.data[i] -= static_cast<T>(config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon));
      }
    }
  }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace voxcount::nn
