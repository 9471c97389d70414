#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "mscdt/numerics/autograd.hpp"
#include "mscdt/numerics/rng.hpp"

namespace testutil {

using mscdt::CounterRng;
using mscdt::Shape;
using mscdt::Tensor;

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  CounterRng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

// Naive stride-1 convolutions over {H, W, C}, zero padding for 3x3.
inline Tensor<double> naive_pointwise(const Tensor<double>& x, const Tensor<double>& k) {
  const std::size_t H = x.extent(0), W = x.extent(1), Ci = x.extent(2), Co = k.extent(1);
  Tensor<double> y(Shape{H, W, Co});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t o = 0; o < Co; ++o) {
        double s = 0.0;
        for (std::size_t c = 0; c < Ci; ++c) s += x.at(i, j, c) * k.at(c, o);
        y.at(i, j, o) = s;
      }
  return y;
}

inline double padded(const Tensor<double>& x, long i, long j, std::size_t c) {
  if (i < 0 || j < 0 || i >= static_cast<long>(x.extent(0)) ||
      j >= static_cast<long>(x.extent(1))) {
    return 0.0;
  }
  return x.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j), c);
}

inline Tensor<double> naive_depthwise(const Tensor<double>& x, const Tensor<double>& k) {
  const std::size_t H = x.extent(0), W = x.extent(1), C = x.extent(2);
  Tensor<double> y(Shape{H, W, C});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx)
            s += padded(x, static_cast<long>(i) + dy, static_cast<long>(j) + dx, c) *
                 k.at(static_cast<std::size_t>(dy + 1), static_cast<std::size_t>(dx + 1), c);
        y.at(i, j, c) = s;
      }
  return y;
}

inline Tensor<double> naive_full3x3(const Tensor<double>& x, const Tensor<double>& k) {
  const std::size_t H = x.extent(0), W = x.extent(1), Ci = x.extent(2), Co = k.extent(3);
  Tensor<double> y(Shape{H, W, Co});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t o = 0; o < Co; ++o) {
        double s = 0.0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx)
            for (std::size_t c = 0; c < Ci; ++c)
              s += padded(x, static_cast<long>(i) + dy, static_cast<long>(j) + dx, c) *
                   k[((static_cast<std::size_t>(dy + 1) * 3 + static_cast<std::size_t>(dx + 1)) *
                          Ci + c) * Co + o];
        y.at(i, j, o) = s;
      }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Population layer norm over the last axis.
inline Tensor<double> naive_layer_norm(const Tensor<double>& x, double eps) {
  const std::size_t C = x.shape().back();
  Tensor<double> y(x.shape());
  for (std::size_t base = 0; base < x.size(); base += C) {
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += x[base + c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (x[base + c] - mu) * (x[base + c] - mu);
    var /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) y[base + c] = (x[base + c] - mu) / std::sqrt(var + eps);
  }
  return y;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mscdt_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
