#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "voxcount/common.hpp"

namespace voxcount {

inline constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Iterative radix-2 decimation-in-time FFT with precomputed twiddles and
/// bit-reversal table. A plan is immutable after construction and can be
/// shared across threads.
class FftPlan {
 public:
  explicit FftPlan(std::size_t size) : size_(size) {
    require(is_power_of_two(size), "FFT size must be a power of two (got " + std::to_string(size) + ")");
    bitrev_.resize(size);
    std::size_t log2n = 0;
    while ((std::size_t{1} << log2n) < size) ++log2n;
    for (std::size_t i = 0; i < size; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < log2n; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2n - 1 - b);
      bitrev_[i] = r;
    }
    twiddle_.resize(size / 2);
    constexpr double kTwoPi = 6.283185307179586476925;
    for (std::size_t k = 0; k < size / 2; ++k) {
      const double angle = -kTwoPi * static_cast<double>(k) / static_cast<double>(size);
      twiddle_[k] = {std::cos(angle), std::sin(angle)};
    }
  }

  std::size_t size() const { return size_; }

  /// Forward transform in place: X_k = sum_n x_n e^{-2 pi i k n / N}.
  void forward(std::span<std::complex<double>> data) const {
    require(data.size() == size_, "FftPlan::forward: buffer size mismatch");
    for (std::size_t i = 0; i < size_; ++i)
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    for (std::size_t len = 2; len <= size_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = size_ / len;
      for (std::size_t start = 0; start < size_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const std::complex<double> t = twiddle_[j * stride] * data[start + j + half];
          const std::complex<double> u = data[start + j];
          data[start + j] = u + t;
          data[start + j + half] = u - t;
        }
      }
    }
  }

 private:
  std::size_t size_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddle_;
};

}  // namespace voxcount
