#pragma once

// Layers for static feed-forward chains. Every tensor passed between layers
// carries a leading batch dimension; shapes elsewhere are per sample.
// Each layer caches what its backward pass needs during forward, so a
// forward call must be followed by at most one backward call.

#include <algorithm>
#include <array>
#include <span>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "voxcount/common.hpp"
#include "voxcount/nn/layer_spec.hpp"
#include "voxcount/nn/tensor.hpp"

namespace voxcount::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Uniform Glorot bound sqrt(6 / (fan_in + fan_out)).
inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <class T>
void xavier_fill(std::span<T> out, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  require(fan_in >= 1 && fan_out >= 1, "xavier_init: fan_in and fan_out must be >= 1");
  const double b = xavier_bound(fan_in, fan_out);
  for (T& v : out) v = static_cast<T>(rng.uniform(-b, b));
}

/// fan_in * fan_out samples from U[-b, b], b = sqrt(6 / (fan_in + fan_out)).
inline std::vector<double> xavier_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  std::vector<double> w(fan_in * fan_out);
  Rng rng(seed);
  xavier_fill<double>(w, fan_in, fan_out, rng);
  return w;
}

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& in, bool training) = 0;
  /// Accumulates parameter gradients and returns d loss / d input.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<ParamRef<T>> parameters() { return {}; }
  virtual void initialize(Rng&) {}

  /// The first layer of a network never needs d loss / d input.
  void set_needs_input_grad(bool v) { needs_input_grad_ = v; }

 protected:
  bool needs_input_grad_ = true;
};

namespace detail {

template <class T>
Shape batched(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

template <class T>
Shape sample_shape(const Tensor<T>& t) {
  require(t.rank() >= 1, "layer input must have a batch dimension");
  return Shape(t.shape.begin() + 1, t.shape.end());
}

inline void expect_rank(const Shape& in, std::size_t rank, const char* layer) {
  require(in.size() == rank, std::string(layer) + ": expected rank-" + std::to_string(rank) +
                                 " input, got " + to_string(in));
}

}  // namespace detail

/// Cross-correlation with zero "same" padding. Weights [C_out, C_in, kh, kw].
template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t filters, std::size_t kh, std::size_t kw)
      : weight_({filters, in_channels, kh, kw}), bias_({filters}) {
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: same padding needs an odd-sized kernel");
    weight_.enable_grad();
    bias_.enable_grad();
  }

  LayerKind kind() const override { return LayerKind::conv2d; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "conv2d");
    require(in[0] == in_channels(), "conv2d: input has " + std::to_string(in[0]) + " channels, kernels expect " +
                                        std::to_string(in_channels()) + " (input " + to_string(in) +
                                        ", kernels " + to_string(weight_.shape) + ")");
    return {filters(), in[1], in[2]};
  }

  void initialize(Rng& rng) override {
    const std::size_t area = weight_.dim(2) * weight_.dim(3);
    xavier_fill<T>(weight_.data, in_channels() * area, filters() * area, rng);
    std::fill(bias_.data.begin(), bias_.data.end(), T(0));
  }

  std::vector<ParamRef<T>> parameters() override { return {{"weight", &weight_}, {"bias", &bias_}}; }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    const Shape s = output_shape(detail::sample_shape(in));
    batch_ = in.dim(0);
    height_ = s[1];
    width_ = s[2];
    const std::size_t k = patch_size(), hw = height_ * width_;
    cols_.resize(batch_ * k * hw);
    Tensor<T> out(detail::batched<T>(batch_, s));
    const ConstMatMap<T> w(weight_.ptr(), filters(), k);
    const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.ptr(), filters());
    for (std::size_t n = 0; n < batch_; ++n) {
      T* cols = cols_.data() + n * k * hw;
      im2col(in.ptr() + n * in_channels() * hw, cols);
      MatMap<T> y(out.ptr() + n * filters() * hw, filters(), hw);
      y.noalias() = w * ConstMatMap<T>(cols, k, hw);
      y.colwise() += b;
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const std::size_t k = patch_size(), hw = height_ * width_;
    MatMap<T> gw(weight_.grad.data(), filters(), k);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(bias_.grad.data(), filters());
    const ConstMatMap<T> w(weight_.ptr(), filters(), k);
    Tensor<T> grad_in;
    if (this->needs_input_grad_) grad_in = Tensor<T>({batch_, in_channels(), height_, width_});
    RowMat<T> dcols;
    for (std::size_t n = 0; n < batch_; ++n) {
      const ConstMatMap<T> g(grad_out.ptr() + n * filters() * hw, filters(), hw);
      const ConstMatMap<T> cols(cols_.data() + n * k * hw, k, hw);
      gw.noalias() += g * cols.transpose();
      gb += g.rowwise().sum();
      if (this->needs_input_grad_) {
        dcols.noalias() = w.transpose() * g;
        col2im(dcols.data(), grad_in.ptr() + n * in_channels() * hw);
      }
    }
    return grad_in;
  }

  std::size_t in_channels() const { return weight_.dim(1); }
  std::size_t filters() const { return weight_.dim(0); }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::size_t patch_size() const { return in_channels() * weight_.dim(2) * weight_.dim(3); }

  void im2col(const T* in, T* cols) const {
    const std::size_t kh = weight_.dim(2), kw = weight_.dim(3);
    const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
    const auto h = static_cast<std::ptrdiff_t>(height_), w = static_cast<std::ptrdiff_t>(width_);
    for (std::size_t c = 0; c < in_channels(); ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          T* row = cols + ((c * kh + i) * kw + j) * height_ * width_;
          for (std::ptrdiff_t y = 0; y < h; ++y) {
            const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(i) - ph;
            T* dst = row + y * w;
            if (yy < 0 || yy >= h) {
              std::fill(dst, dst + w, T(0));
              continue;
            }
            const T* src = in + (static_cast<std::ptrdiff_t>(c) * h + yy) * w;
            for (std::ptrdiff_t x = 0; x < w; ++x) {
              const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(j) - pw;
              dst[x] = (xx < 0 || xx >= w) ? T(0) : src[xx];
            }
          }
        }
  }

  void col2im(const T* cols, T* in) const {
    const std::size_t kh = weight_.dim(2), kw = weight_.dim(3);
    const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
    const auto h = static_cast<std::ptrdiff_t>(height_), w = static_cast<std::ptrdiff_t>(width_);
    for (std::size_t c = 0; c < in_channels(); ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          const T* row = cols + ((c * kh + i) * kw + j) * height_ * width_;
          for (std::ptrdiff_t y = 0; y < h; ++y) {
            const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(i) - ph;
            if (yy < 0 || yy >= h) continue;
            T* dst = in + (static_cast<std::ptrdiff_t>(c) * h + yy) * w;
            const T* src = row + y * w;
            for (std::ptrdiff_t x = 0; x < w; ++x) {
              const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(j) - pw;
              if (xx >= 0 && xx < w) dst[xx] += src[x];
            }
          }
        }
  }

  Tensor<T> weight_;
  Tensor<T> bias_;
  Buffer<T> cols_;
  std::size_t batch_ = 0, height_ = 0, width_ = 0;
};

/// 2x2 max pooling, stride 2. Odd spatial sizes are padded with -inf, so
/// the output is ceil(H/2) x ceil(W/2).
template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::maxpool2d; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "maxpool2d");
    return {in[0], (in[1] + 1) / 2, (in[2] + 1) / 2};
  }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    in_shape_ = in.shape;
    const Shape s = output_shape(detail::sample_shape(in));
    const std::size_t b = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    Tensor<T> out(detail::batched<T>(b, s));
    argmax_.resize(out.size());
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < b * c; ++plane) {
      const std::size_t base = plane * h * w;
      for (std::size_t y = 0; y < s[1]; ++y)
        for (std::size_t x = 0; x < s[2]; ++x, ++o) {
          std::size_t best = base + 2 * y * w + 2 * x;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t yy = 2 * y + dy, xx = 2 * x + dx;
              if (yy >= h || xx >= w) continue;
              const std::size_t idx = base + yy * w + xx;
              if (in.data[idx] > in.data[best]) best = idx;
            }
          argmax_[o] = best;
          out.data[o] = in.data[best];
        }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> grad_in(in_shape_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in.data[argmax_[o]] += grad_out.data[o];
    return grad_in;
  }

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <class T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(double alpha = 0.1) : alpha_(static_cast<T>(alpha)) {
    require(alpha > 0.0, "leaky_relu: alpha must be positive");
  }

  LayerKind kind() const override { return LayerKind::leaky_relu; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    input_ = in.data;
    Tensor<T> out = in;
    for (T& v : out.data) v = v >= T(0) ? v : alpha_ * v;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (input_[i] < T(0)) g.data[i] *= alpha_;
    return g;
  }

 private:
  T alpha_;
  Buffer<T> input_;
};

template <class T>
class Reshape final : public Layer<T> {
 public:
  explicit Reshape(ReshapeMode mode) : mode_(mode) {}

  LayerKind kind() const override { return LayerKind::reshape; }

  Shape output_shape(const Shape& in) const override {
    switch (mode_) {
      case ReshapeMode::add_channel:
        detail::expect_rank(in, 2, "reshape(add_channel)");
        return {1, in[0], in[1]};
      case ReshapeMode::to_sequence:
        detail::expect_rank(in, 3, "reshape(to_sequence)");
        return {in[1], in[0] * in[2]};
      case ReshapeMode::flatten:
        return {shape_size(in)};
    }
    return in;
  }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    in_shape_ = in.shape;
    const Shape s = output_shape(detail::sample_shape(in));
    if (mode_ != ReshapeMode::to_sequence) return Tensor<T>(detail::batched<T>(in.dim(0), s), in.data);
    const std::size_t b = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
    Tensor<T> out(detail::batched<T>(b, s));
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            out.data[((n * h + y) * c + ch) * w + x] = in.data[((n * c + ch) * h + y) * w + x];
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    if (mode_ != ReshapeMode::to_sequence) return Tensor<T>(in_shape_, grad_out.data);
    const std::size_t b = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    Tensor<T> g(in_shape_);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            g.data[((n * c + ch) * h + y) * w + x] = grad_out.data[((n * h + y) * c + ch) * w + x];
    return g;
  }

 private:
  ReshapeMode mode_;
  Shape in_shape_;
};

/// [T, F] -> [F], averaging over time.
template <class T>
class MeanPoolTime final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::mean_pool_time; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 2, "mean_pool_time");
    return {in[1]};
  }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    in_shape_ = in.shape;
    const std::size_t b = in.dim(0), t = in.dim(1), f = in.dim(2);
    Tensor<T> out({b, f});
    for (std::size_t n = 0; n < b; ++n)
      MatMap<T>(out.ptr() + n * f, 1, f) = ConstMatMap<T>(in.ptr() + n * t * f, t, f).colwise().sum() / T(t);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const std::size_t b = in_shape_[0], t = in_shape_[1], f = in_shape_[2];
    Tensor<T> g(in_shape_);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < f; ++j) g.data[(n * t + s) * f + j] = grad_out.data[n * f + j] / T(t);
    return g;
  }

 private:
  Shape in_shape_;
};

/// Affine map y = x W + b with W of shape [F, U].
template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t units) : weight_({in_features, units}), bias_({units}) {
    weight_.enable_grad();
    bias_.enable_grad();
  }

  LayerKind kind() const override { return LayerKind::dense; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 1, "dense");
    require(in[0] == weight_.dim(0), "dense: input " + to_string(in) + " does not match weights " +
                                         to_string(weight_.shape));
    return {weight_.dim(1)};
  }

  void initialize(Rng& rng) override {
    xavier_fill<T>(weight_.data, weight_.dim(0), weight_.dim(1), rng);
    std::fill(bias_.data.begin(), bias_.data.end(), T(0));
  }

  std::vector<ParamRef<T>> parameters() override { return {{"weight", &weight_}, {"bias", &bias_}}; }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    output_shape(detail::sample_shape(in));
    input_ = in;
    const std::size_t b = in.dim(0), f = weight_.dim(0), u = weight_.dim(1);
    Tensor<T> out({b, u});
    MatMap<T> y(out.ptr(), b, u);
    y.noalias() = ConstMatMap<T>(in.ptr(), b, f) * ConstMatMap<T>(weight_.ptr(), f, u);
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.ptr(), u);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const std::size_t b = input_.dim(0), f = weight_.dim(0), u = weight_.dim(1);
    const ConstMatMap<T> g(grad_out.ptr(), b, u);
    const ConstMatMap<T> x(input_.ptr(), b, f);
    MatMap<T>(weight_.grad.data(), f, u).noalias() += x.transpose() * g;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), u) += g.colwise().sum();
    if (!this->needs_input_grad_) return {};
    Tensor<T> grad_in({b, f});
    MatMap<T>(grad_in.ptr(), b, f).noalias() = g * ConstMatMap<T>(weight_.ptr(), f, u).transpose();
    return grad_in;
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  Tensor<T> input_;
};

/// Inverted dropout: survivors are scaled by 1 / (1 - rate) during training,
/// inference is the identity.
template <class T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate, std::uint64_t seed = 0) : rate_(rate), rng_(seed) {
    require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  }

  LayerKind kind() const override { return LayerKind::dropout; }
  Shape output_shape(const Shape& in) const override { return in; }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

  Tensor<T> forward(const Tensor<T>& in, bool training) override {
    mask_.clear();
    if (!training || rate_ == 0.0) return in;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.resize(in.size());
    Tensor<T> out = in;
    for (std::size_t i = 0; i < out.size(); ++i) {
      mask_[i] = rng_.bernoulli(rate_) ? T(0) : keep_scale;
      out.data[i] *= mask_[i];
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    if (mask_.empty()) return grad_out;
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= mask_[i];
    return g;
  }

 private:
  double rate_;
  Rng rng_;
  Buffer<T> mask_;
};

/// Bidirectional LSTM, [T, F] -> [T, 2U]. Gate order in the 4U blocks is
/// input, forget, candidate, output. Forward-direction outputs occupy the
/// first U features of each step, backward-direction outputs the last U.
/// Initial hidden and cell states are zero.
template <class T>
class Blstm final : public Layer<T> {
 public:
  Blstm(std::size_t in_features, std::size_t units) : in_features_(in_features), units_(units) {
    for (auto& d : dirs_) {
      d.wx = Tensor<T>({in_features, 4 * units});
      d.wh = Tensor<T>({units, 4 * units});
      d.b = Tensor<T>({4 * units});
      d.wx.enable_grad();
      d.wh.enable_grad();
      d.b.enable_grad();
    }
  }

  LayerKind kind() const override { return LayerKind::blstm; }

  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 2, "blstm");
    require(in[0] >= 1, "blstm: sequence must have at least one step");
    require(in[1] == in_features_, "blstm: input " + to_string(in) + " has " + std::to_string(in[1]) +
                                       " features, layer expects " + std::to_string(in_features_));
    return {in[0], 2 * units_};
  }

  void initialize(Rng& rng) override {
    for (auto& d : dirs_) {
      xavier_fill<T>(d.wx.data, in_features_, 4 * units_, rng);
      xavier_fill<T>(d.wh.data, units_, 4 * units_, rng);
      std::fill(d.b.data.begin(), d.b.data.end(), T(0));
      // Forget-gate bias of one keeps early gradients flowing through time.
      std::fill(d.b.data.begin() + static_cast<std::ptrdiff_t>(units_),
                d.b.data.begin() + static_cast<std::ptrdiff_t>(2 * units_), T(1));
    }
  }

  std::vector<ParamRef<T>> parameters() override {
    return {{"wx_fwd", &dirs_[0].wx}, {"wh_fwd", &dirs_[0].wh}, {"b_fwd", &dirs_[0].b},
            {"wx_bwd", &dirs_[1].wx}, {"wh_bwd", &dirs_[1].wh}, {"b_bwd", &dirs_[1].b}};
  }

  Tensor<T> forward(const Tensor<T>& in, bool) override {
    output_shape(detail::sample_shape(in));
    for (T v : in.data)
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("blstm: non-finite value in input");
    input_ = in;
    batch_ = in.dim(0);
    steps_ = in.dim(1);
    Tensor<T> out({batch_, steps_, 2 * units_});
    for (std::size_t d = 0; d < 2; ++d) run_direction(d, out);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> grad_in;
    if (this->needs_input_grad_) grad_in = Tensor<T>(input_.shape);
    for (std::size_t d = 0; d < 2; ++d) backprop_direction(d, grad_out, grad_in);
    return grad_in;
  }

  Tensor<T>& param(std::size_t direction, std::size_t which) {
    auto& d = dirs_.at(direction);
    return which == 0 ? d.wx : which == 1 ? d.wh : d.b;
  }

 private:
  struct Direction {
    Tensor<T> wx, wh, b;
    // Time-major caches, [T, B, *].
    Buffer<T> gates, cell, tanh_cell, hidden;
  };

  static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

  std::size_t time_at(std::size_t d, std::size_t step) const { return d == 0 ? step : steps_ - 1 - step; }

  void run_direction(std::size_t di, Tensor<T>& out) {
    Direction& d = dirs_[di];
    const std::size_t u = units_, g4 = 4 * units_, bt = batch_ * steps_;
    RowMat<T> xproj = ConstMatMap<T>(input_.ptr(), bt, in_features_) * ConstMatMap<T>(d.wx.ptr(), in_features_, g4);
    xproj.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(d.b.ptr(), g4);
    d.gates.assign(steps_ * batch_ * g4, T(0));
    d.cell.assign(steps_ * batch_ * u, T(0));
    d.tanh_cell.assign(steps_ * batch_ * u, T(0));
    d.hidden.assign(steps_ * batch_ * u, T(0));
    const ConstMatMap<T> wh(d.wh.ptr(), u, g4);
    RowMat<T> z(batch_, g4);
    for (std::size_t s = 0; s < steps_; ++s) {
      const std::size_t t = time_at(di, s);
      z = ConstStridedMap<T>(xproj.data() + t * g4, batch_, g4, Eigen::OuterStride<>(static_cast<Eigen::Index>(steps_ * g4)));
      const T* c_prev = nullptr;
      if (s > 0) {
        const std::size_t tp = time_at(di, s - 1);
        z.noalias() += ConstMatMap<T>(d.hidden.data() + tp * batch_ * u, batch_, u) * wh;
        c_prev = d.cell.data() + tp * batch_ * u;
      }
      T* gates = d.gates.data() + t * batch_ * g4;
      T* cell = d.cell.data() + t * batch_ * u;
      T* tc = d.tanh_cell.data() + t * batch_ * u;
      T* h = d.hidden.data() + t * batch_ * u;
      for (std::size_t n = 0; n < batch_; ++n) {
        const T* zr = z.data() + n * g4;
        T* gr = gates + n * g4;
        for (std::size_t j = 0; j < u; ++j) {
          const T i = sigmoid(zr[j]);
          const T f = sigmoid(zr[u + j]);
          const T g = std::tanh(zr[2 * u + j]);
          const T o = sigmoid(zr[3 * u + j]);
          gr[j] = i;
          gr[u + j] = f;
          gr[2 * u + j] = g;
          gr[3 * u + j] = o;
          const T c = i * g + (c_prev ? f * c_prev[n * u + j] : T(0));
          cell[n * u + j] = c;
          tc[n * u + j] = std::tanh(c);
          h[n * u + j] = o * tc[n * u + j];
          out.data[(n * steps_ + t) * 2 * u + di * u + j] = h[n * u + j];
        }
      }
    }
  }

  void backprop_direction(std::size_t di, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
    Direction& d = dirs_[di];
    const std::size_t u = units_, g4 = 4 * units_, bt = batch_ * steps_;
    RowMat<T> dz_all(bt, g4);
    RowMat<T> dh_next = RowMat<T>::Zero(batch_, u);
    RowMat<T> dc_next = RowMat<T>::Zero(batch_, u);
    const ConstMatMap<T> wh(d.wh.ptr(), u, g4);
    MatMap<T> gwh(d.wh.grad.data(), u, g4);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(steps_ * g4));
    for (std::size_t s = steps_; s-- > 0;) {
      const std::size_t t = time_at(di, s);
      const T* gates = d.gates.data() + t * batch_ * g4;
      const T* tc = d.tanh_cell.data() + t * batch_ * u;
      const T* c_prev = s > 0 ? d.cell.data() + time_at(di, s - 1) * batch_ * u : nullptr;
      StridedMap<T> dz(dz_all.data() + t * g4, batch_, g4, stride);
      for (std::size_t n = 0; n < batch_; ++n) {
        const T* gr = gates + n * g4;
        for (std::size_t j = 0; j < u; ++j) {
          const T i = gr[j], f = gr[u + j], g = gr[2 * u + j], o = gr[3 * u + j];
          const T tcv = tc[n * u + j];
          const T dh = grad_out.data[(n * steps_ + t) * 2 * u + di * u + j] + dh_next(n, j);
          const T dc = dh * o * (T(1) - tcv * tcv) + dc_next(n, j);
          const T cp = c_prev ? c_prev[n * u + j] : T(0);
          dz(n, j) = dc * g * i * (T(1) - i);
          dz(n, u + j) = dc * cp * f * (T(1) - f);
          dz(n, 2 * u + j) = dc * i * (T(1) - g * g);
          dz(n, 3 * u + j) = dh * tcv * o * (T(1) - o);
          dc_next(n, j) = dc * f;
        }
      }
      if (s > 0) {
        const ConstMatMap<T> h_prev(d.hidden.data() + time_at(di, s - 1) * batch_ * u, batch_, u);
        gwh.noalias() += h_prev.transpose() * dz;
        dh_next.noalias() = dz * wh.transpose();
      } else {
        dh_next.setZero();
      }
    }
    const ConstMatMap<T> x(input_.ptr(), bt, in_features_);
    MatMap<T>(d.wx.grad.data(), in_features_, g4).noalias() += x.transpose() * dz_all;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(d.b.grad.data(), g4) += dz_all.colwise().sum();
    if (this->needs_input_grad_)
      MatMap<T>(grad_in.ptr(), bt, in_features_).noalias() +=
          dz_all * ConstMatMap<T>(d.wx.ptr(), in_features_, g4).transpose();
  }

  std::size_t in_features_, units_;
  std::array<Direction, 2> dirs_;
  Tensor<T> input_;
  std::size_t batch_ = 0, steps_ = 0;
};

/// Instantiates one layer for a per-sample input shape.
template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, std::uint64_t dropout_seed) {
  spec.validate();
  switch (spec.kind) {
    case LayerKind::conv2d:
      detail::expect_rank(in, 3, "conv2d");
      return std::make_unique<Conv2d<T>>(in[0], spec.filters, spec.kernel_h, spec.kernel_w);
    case LayerKind::maxpool2d:
      return std::make_unique<MaxPool2d<T>>();
    case LayerKind::leaky_relu:
      return std::make_unique<LeakyRelu<T>>(spec.alpha);
    case LayerKind::blstm:
      detail::expect_rank(in, 2, "blstm");
      return std::make_unique<Blstm<T>>(in[1], spec.units);
    case LayerKind::dense:
      detail::expect_rank(in, 1, "dense");
      return std::make_unique<Dense<T>>(in[0], spec.units);
    case LayerKind::dropout:
      return std::make_unique<Dropout<T>>(spec.rate, dropout_seed);
    case LayerKind::reshape:
      return std::make_unique<Reshape<T>>(spec.mode);
    case LayerKind::mean_pool_time:
      return std::make_unique<MeanPoolTime<T>>();
  }
  throw InputError("unknown layer kind");
}

}  // namespace voxcount::nn
