#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "voxcount/common.hpp"

namespace voxcount::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Storage for anything Eigen maps over. A fixed alignment keeps the
/// vectorized reductions summing in the same order on every run.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major array. `grad` is either empty or has the same length as
/// `data`; parameters carry one, activations usually do not.
template <class T>
struct Tensor {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
    require(data.size() == shape_size(shape),
            "Tensor: " + std::to_string(data.size()) + " values for shape " + to_string(shape));
  }
  Tensor(Shape s, const std::vector<T>& values) : Tensor(std::move(s), Buffer<T>(values.begin(), values.end())) {}

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  bool has_grad() const { return !grad.empty(); }
  void enable_grad() { grad.assign(data.size(), T(0)); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
};

/// Named handle on a trainable tensor, used by optimizers and checkpoints.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

}  // namespace voxcount::nn
