#include "mscdt/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mscdt::ops {
namespace {

template <typename T>
Node<T>* grad_target(Node<T>& self, std::size_t i) {
  Node<T>* in = self.inputs[i].get();
  return in->requires_grad ? in : nullptr;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  require(axis < s.size(), std::string(op) + ": axis " +
                               std::to_string(axis) + " invalid for shape " +
                               shape_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
void require_hwc(const Var<T>& x, const char* op) {
  require(x.shape().size() == 3,
          std::string(op) + ": expected {H, W, C}, got " +
              shape_string(x.shape()));
}

inline std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* in = grad_target(self, k)) in->accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* in = grad_target(self, 0)) in->accumulate(self.grad);
    if (auto* in = grad_target(self, 1)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& va = self.inputs[0]->value;
    const auto& vb = self.inputs[1]->value;
    if (auto* in = grad_target(self, 0)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * vb[i];
    }
    if (auto* in = grad_target(self, 1)) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * va[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return make_op<T>("scale", std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms) {
  require(!terms.empty(), "add_n: no terms");
  Tensor<T> out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    require_same(terms[0], terms[t], "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += terms[t].value()[i];
  }
  return make_op<T>("add_n", std::move(out), terms, [](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (auto* in = grad_target(self, k)) in->accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  return make_op<T>("sum", Tensor<T>(Shape{}, s), {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& v : g.data()) v += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  require(x.value().size() > 0, "mean: empty tensor");
  const T inv = T{1} / static_cast<T>(x.value().size());
  return scale(sum(x), inv);
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mean_abs_diff");
  const std::size_t n = a.value().size();
  require(n > 0, "mean_abs_diff: empty tensor");
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
  const T inv = T{1} / static_cast<T>(n);
  return make_op<T>(
      "mean_abs_diff", Tensor<T>(Shape{}, s * inv), {a, b},
      [inv](Node<T>& self) {
        const auto& va = self.inputs[0]->value;
        const auto& vb = self.inputs[1]->value;
        const T g0 = self.grad[0] * inv;
        auto* ga = grad_target(self, 0);
        auto* gb = grad_target(self, 1);
        for (std::size_t i = 0; i < va.size(); ++i) {
          const T d = va[i] - vb[i];
          const T sgn = d > 0 ? T{1} : (d < 0 ? T{-1} : T{0});
          if (ga) ga->grad_buffer()[i] += g0 * sgn;
          if (gb) gb->grad_buffer()[i] -= g0 * sgn;
        }
      });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w) {
  require(x.shape() == w.shape(), "weighted_sum: shape mismatch");
  T s{0};
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
  return make_op<T>("weighted_sum", Tensor<T>(Shape{}, s), {x},
                    [w](Node<T>& self) {
                      auto& g = self.inputs[0]->grad_buffer();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        g[i] += self.grad[0] * w[i];
                      }
                    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape_size(shape) == x.value().size(),
          "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_op<T>("reshape", std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, "softmax");
  const auto& in = x.value();
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t r = 0; r < sp.inner; ++r) {
      const std::size_t base = o * sp.n * sp.inner + r;
      T mx = in[base];
      for (std::size_t j = 1; j < sp.n; ++j) {
        mx = std::max(mx, in[base + j * sp.inner]);
      }
      T z{0};
      for (std::size_t j = 0; j < sp.n; ++j) {
        const T e = std::exp(in[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= z;
    }
  }
  return make_op<T>("softmax", std::move(out), {x}, [sp](Node<T>& self) {
    const auto& y = self.value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t r = 0; r < sp.inner; ++r) {
        const std::size_t base = o * sp.n * sp.inner + r;
        T dot{0};
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t i = base + j * sp.inner;
          dot += y[i] * self.grad[i];
        }
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t i = base + j * sp.inner;
          g[i] += y[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
  return make_op<T>("gelu", std::move(out), {x}, [](Node<T>& self) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi =
        std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    const auto& in = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = in[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v >= T(0) ? v : slope * v;
  return make_op<T>("leaky_relu", std::move(out), {x}, [slope](Node<T>& self) {
    const auto& in = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * (in[i] >= T(0) ? T(1) : slope);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, std::size_t axis, T epsilon) {
  const auto sp = split_axis(x.shape(), axis, "layer_norm");
  require(sp.n >= 1, "layer_norm: needs at least one channel");
  const auto& in = x.value();
  Tensor<T> out(x.shape());
  // inv_std per (outer, inner) position, kept for the backward pass.
  std::vector<T> inv_std(sp.outer * sp.inner);
  const T inv_n = T(1) / static_cast<T>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t r = 0; r < sp.inner; ++r) {
      const std::size_t base = o * sp.n * sp.inner + r;
      T mu{0};
      for (std::size_t j = 0; j < sp.n; ++j) mu += in[base + j * sp.inner];
      mu *= inv_n;
      T var{0};
      for (std::size_t j = 0; j < sp.n; ++j) {
        const T d = in[base + j * sp.inner] - mu;
        var += d * d;
      }
      var *= inv_n;
      const T is = T(1) / std::sqrt(var + epsilon);
      inv_std[o * sp.inner + r] = is;
      for (std::size_t j = 0; j < sp.n; ++j) {
        out[base + j * sp.inner] = (in[base + j * sp.inner] - mu) * is;
      }
    }
  }
  return make_op<T>(
      "layer_norm", std::move(out), {x},
      [sp, inv_n, inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& y = self.value;
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t r = 0; r < sp.inner; ++r) {
            const std::size_t base = o * sp.n * sp.inner + r;
            T mean_dy{0};
            T mean_dy_y{0};
            for (std::size_t j = 0; j < sp.n; ++j) {
              const std::size_t i = base + j * sp.inner;
              mean_dy += self.grad[i];
              mean_dy_y += self.grad[i] * y[i];
            }
            mean_dy *= inv_n;
            mean_dy_y *= inv_n;
            const T is = inv_std[o * sp.inner + r];
            for (std::size_t j = 0; j < sp.n; ++j) {
              const std::size_t i = base + j * sp.inner;
              g[i] += is * (self.grad[i] - mean_dy - y[i] * mean_dy_y);
            }
          }
        }
      });
}

namespace {

// Index map shared by shuffle and unshuffle: for each low-resolution
// element, the flat offset of its source in the high-resolution tensor.
std::vector<std::size_t> unshuffle_map(std::size_t h, std::size_t w,
                                       std::size_t c, std::size_t r) {
  const std::size_t ho = h / r, wo = w / r, co = c * r * r;
  std::vector<std::size_t> map(h * w * c);
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x = 0; x < wo; ++x) {
      for (std::size_t dy = 0; dy < r; ++dy) {
        for (std::size_t dx = 0; dx < r; ++dx) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t o = (y * wo + x) * co + (dy * r + dx) * c + ch;
            map[o] = ((y * r + dy) * w + (x * r + dx)) * c + ch;
          }
        }
      }
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x, std::size_t r) {
  require_hwc(x, "pixel_unshuffle");
  const auto& s = x.shape();
  require(r >= 1 && s[0] % r == 0 && s[1] % r == 0,
          "pixel_unshuffle: factor " + std::to_string(r) +
              " does not divide " + shape_string(s));
  auto map = unshuffle_map(s[0], s[1], s[2], r);
  Tensor<T> out(Shape{s[0] / r, s[1] / r, s[2] * r * r});
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = x.value()[map[i]];
  return make_op<T>("pixel_unshuffle", std::move(out), {x},
                    [map = std::move(map)](Node<T>& self) {
                      auto& g = self.inputs[0]->grad_buffer();
                      for (std::size_t i = 0; i < map.size(); ++i) {
                        g[map[i]] += self.grad[i];
                      }
                    });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
  require_hwc(x, "pixel_shuffle");
  const auto& s = x.shape();
  require(r >= 1 && s[2] % (r * r) == 0,
          "pixel_shuffle: channels of " + shape_string(s) +
              " not divisible by r^2");
  const std::size_t c = s[2] / (r * r);
  auto map = unshuffle_map(s[0] * r, s[1] * r, c, r);
  Tensor<T> out(Shape{s[0] * r, s[1] * r, c});
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] = x.value()[i];
  return make_op<T>("pixel_shuffle", std::move(out), {x},
                    [map = std::move(map)](Node<T>& self) {
                      auto& g = self.inputs[0]->grad_buffer();
                      for (std::size_t i = 0; i < map.size(); ++i) {
                        g[i] += self.grad[map[i]];
                      }
                    });
}

namespace {

template <typename T>
void pointwise_forward(const T* x, const T* w, T* y, std::size_t pixels,
                       std::size_t cin, std::size_t cout) {
  for (std::size_t p = 0; p < pixels; ++p) {
    T* yr = y + p * cout;
    const T* xr = x + p * cin;
    for (std::size_t i = 0; i < cin; ++i) {
      const T xv = xr[i];
      const T* wr = w + i * cout;
      for (std::size_t o = 0; o < cout; ++o) yr[o] += xv * wr[o];
    }
  }
}

// Source offset of tap (ky, kx) for output pixel (y, x); -1 outside a
// zero-padded border.
inline long tap_source(long y, long x, int ky, int kx, std::size_t h,
                       std::size_t w, Padding pad) {
  long sy = y + ky - 1, sx = x + kx - 1;
  if (pad == Padding::replicate) {
    return static_cast<long>(clamp_index(sy, h) * w + clamp_index(sx, w));
  }
  if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) ||
      sx >= static_cast<long>(w)) {
    return -1;
  }
  return sy * static_cast<long>(w) + sx;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, ConvMode mode,
              Padding padding) {
  require_hwc(x, "conv2d");
  const std::size_t h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
  const auto& ks = kernel.shape();
  const std::size_t pixels = h * w;

  switch (mode) {
    case ConvMode::pointwise_1x1: {
      require(ks.size() == 2 && ks[0] == cin,
              "conv2d pointwise: kernel " + shape_string(ks) +
                  " incompatible with input " + shape_string(x.shape()));
      const std::size_t cout = ks[1];
      Tensor<T> out(Shape{h, w, cout});
      pointwise_forward(x.value().data().data(), kernel.value().data().data(),
                        out.data().data(), pixels, cin, cout);
      return make_op<T>(
          "conv2d_1x1", std::move(out), {x, kernel},
          [pixels, cin, cout](Node<T>& self) {
            const T* dy = self.grad.data().data();
            if (auto* in = grad_target(self, 0)) {
              const T* wt = self.inputs[1]->value.data().data();
              T* dx = in->grad_buffer().data().data();
              for (std::size_t p = 0; p < pixels; ++p) {
                for (std::size_t i = 0; i < cin; ++i) {
                  T acc{0};
                  const T* wr = wt + i * cout;
                  const T* dyr = dy + p * cout;
                  for (std::size_t o = 0; o < cout; ++o) acc += dyr[o] * wr[o];
                  dx[p * cin + i] += acc;
                }
              }
            }
            if (auto* kn = grad_target(self, 1)) {
              const T* xv = self.inputs[0]->value.data().data();
              T* dw = kn->grad_buffer().data().data();
              for (std::size_t p = 0; p < pixels; ++p) {
                for (std::size_t i = 0; i < cin; ++i) {
                  const T xi = xv[p * cin + i];
                  T* dwr = dw + i * cout;
                  const T* dyr = dy + p * cout;
                  for (std::size_t o = 0; o < cout; ++o) dwr[o] += xi * dyr[o];
                }
              }
            }
          });
    }

    case ConvMode::depthwise_3x3: {
      require(ks == Shape({3, 3, cin}),
              "conv2d depthwise: kernel " + shape_string(ks) +
                  " incompatible with input " + shape_string(x.shape()));
      Tensor<T> out(Shape{h, w, cin});
      const T* xv = x.value().data().data();
      const T* kv = kernel.value().data().data();
      T* yv = out.data().data();
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          T* yr = yv + (y * w + xx) * cin;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const long src = tap_source(y, xx, ky, kx, h, w, padding);
              if (src < 0) continue;
              const T* xr = xv + src * cin;
              const T* kr = kv + (ky * 3 + kx) * cin;
              for (std::size_t c = 0; c < cin; ++c) yr[c] += xr[c] * kr[c];
            }
          }
        }
      }
      return make_op<T>(
          "conv2d_dw3x3", std::move(out), {x, kernel},
          [h, w, cin, padding](Node<T>& self) {
            const T* dy = self.grad.data().data();
            const T* xv = self.inputs[0]->value.data().data();
            const T* kv = self.inputs[1]->value.data().data();
            auto* in = grad_target(self, 0);
            auto* kn = grad_target(self, 1);
            T* dx = in ? in->grad_buffer().data().data() : nullptr;
            T* dk = kn ? kn->grad_buffer().data().data() : nullptr;
            for (std::size_t y = 0; y < h; ++y) {
              for (std::size_t xx = 0; xx < w; ++xx) {
                const T* dyr = dy + (y * w + xx) * cin;
                for (int ky = 0; ky < 3; ++ky) {
                  for (int kx = 0; kx < 3; ++kx) {
                    const long src = tap_source(y, xx, ky, kx, h, w, padding);
                    if (src < 0) continue;
                    const std::size_t koff = (ky * 3 + kx) * cin;
                    if (dx) {
                      T* dxr = dx + src * cin;
                      for (std::size_t c = 0; c < cin; ++c) {
                        dxr[c] += dyr[c] * kv[koff + c];
                      }
                    }
                    if (dk) {
                      const T* xr = xv + src * cin;
                      for (std::size_t c = 0; c < cin; ++c) {
                        dk[koff + c] += dyr[c] * xr[c];
                      }
                    }
                  }
                }
              }
            }
          });
    }

    case ConvMode::full_3x3: {
      require(ks.size() == 4 && ks[0] == 3 && ks[1] == 3 && ks[2] == cin,
              "conv2d full: kernel " + shape_string(ks) +
                  " incompatible with input " + shape_string(x.shape()));
      const std::size_t cout = ks[3];
      Tensor<T> out(Shape{h, w, cout});
      const T* xv = x.value().data().data();
      const T* kv = kernel.value().data().data();
      T* yv = out.data().data();
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          T* yr = yv + (y * w + xx) * cout;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const long src = tap_source(y, xx, ky, kx, h, w, padding);
              if (src < 0) continue;
              const T* xr = xv + src * cin;
              const T* kt = kv + (ky * 3 + kx) * cin * cout;
              for (std::size_t i = 0; i < cin; ++i) {
                const T xi = xr[i];
                const T* kr = kt + i * cout;
                for (std::size_t o = 0; o < cout; ++o) yr[o] += xi * kr[o];
              }
            }
          }
        }
      }
      return make_op<T>(
          "conv2d_3x3", std::move(out), {x, kernel},
          [h, w, cin, cout, padding](Node<T>& self) {
            const T* dy = self.grad.data().data();
            const T* xv = self.inputs[0]->value.data().data();
            const T* kv = self.inputs[1]->value.data().data();
            auto* in = grad_target(self, 0);
            auto* kn = grad_target(self, 1);
            T* dx = in ? in->grad_buffer().data().data() : nullptr;
            T* dk = kn ? kn->grad_buffer().data().data() : nullptr;
            for (std::size_t y = 0; y < h; ++y) {
              for (std::size_t xx = 0; xx < w; ++xx) {
                const T* dyr = dy + (y * w + xx) * cout;
                for (int ky = 0; ky < 3; ++ky) {
                  for (int kx = 0; kx < 3; ++kx) {
                    const long src = tap_source(y, xx, ky, kx, h, w, padding);
                    if (src < 0) continue;
                    const std::size_t koff = (ky * 3 + kx) * cin * cout;
                    for (std::size_t i = 0; i < cin; ++i) {
                      const T* kr = kv + koff + i * cout;
                      if (dx) {
                        T acc{0};
                        for (std::size_t o = 0; o < cout; ++o) {
                          acc += dyr[o] * kr[o];
                        }
                        dx[src * cin + i] += acc;
                      }
                      if (dk) {
                        const T xi = xv[src * cin + i];
                        T* dkr = dk + koff + i * cout;
                        for (std::size_t o = 0; o < cout; ++o) {
                          dkr[o] += xi * dyr[o];
                        }
                      }
                    }
                  }
                }
              }
            }
          });
    }
  }
  throw ShapeError("conv2d: unknown mode");
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require(xs.size() == 1 || xs.size() == 2,
          "linear: input must be {in} or {n, in}, got " + shape_string(xs));
  const std::size_t in = xs.back();
  const std::size_t rows = xs.size() == 2 ? xs[0] : 1;
  require(ws.size() == 2 && ws[0] == in,
          "linear: weight " + shape_string(ws) + " incompatible with input " +
              shape_string(xs));
  const std::size_t outn = ws[1];
  require(bias.shape() == Shape{outn},
          "linear: bias " + shape_string(bias.shape()) + " expected {" +
              std::to_string(outn) + "}");
  Shape os = xs.size() == 2 ? Shape{rows, outn} : Shape{outn};
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bias.value().data().begin(), bias.value().data().end(),
              out.data().begin() + r * outn);
  }
  pointwise_forward(x.value().data().data(), weight.value().data().data(),
                    out.data().data(), rows, in, outn);
  return make_op<T>(
      "linear", std::move(out), {x, weight, bias},
      [rows, in, outn](Node<T>& self) {
        const T* dy = self.grad.data().data();
        if (auto* xn = grad_target(self, 0)) {
          const T* wt = self.inputs[1]->value.data().data();
          T* dx = xn->grad_buffer().data().data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < in; ++i) {
              T acc{0};
              for (std::size_t o = 0; o < outn; ++o) {
                acc += dy[r * outn + o] * wt[i * outn + o];
              }
              dx[r * in + i] += acc;
            }
          }
        }
        if (auto* wn = grad_target(self, 1)) {
          const T* xv = self.inputs[0]->value.data().data();
          T* dw = wn->grad_buffer().data().data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < in; ++i) {
              const T xi = xv[r * in + i];
              for (std::size_t o = 0; o < outn; ++o) {
                dw[i * outn + o] += xi * dy[r * outn + o];
              }
            }
          }
        }
        if (auto* bn = grad_target(self, 2)) {
          auto& db = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < outn; ++o) db[o] += dy[r * outn + o];
          }
        }
      });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
  require(!x.shape().empty() && b.shape() == Shape{x.shape().back()},
          "add_channel_bias: bias " + shape_string(b.shape()) +
              " vs input " + shape_string(x.shape()));
  const std::size_t c = x.shape().back();
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i % c];
  return make_op<T>("add_channel_bias", std::move(out), {x, b},
                    [c](Node<T>& self) {
                      if (auto* xn = grad_target(self, 0)) {
                        xn->accumulate(self.grad);
                      }
                      if (auto* bn = grad_target(self, 1)) {
                        auto& g = bn->grad_buffer();
                        for (std::size_t i = 0; i < self.grad.size(); ++i) {
                          g[i % c] += self.grad[i];
                        }
                      }
                    });
}

template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& scale_v,
                      const Var<T>& shift_v) {
  require(!x.shape().empty(), "channel_affine: scalar input");
  const std::size_t c = x.shape().back();
  require(scale_v.shape() == Shape{c} && shift_v.shape() == Shape{c},
          "channel_affine: scale/shift must be {" + std::to_string(c) +
              "}, got " + shape_string(scale_v.shape()) + " and " +
              shape_string(shift_v.shape()));
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] * scale_v.value()[i % c] + shift_v.value()[i % c];
  }
  return make_op<T>(
      "channel_affine", std::move(out), {x, scale_v, shift_v},
      [c](Node<T>& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& sv = self.inputs[1]->value;
        if (auto* xn = grad_target(self, 0)) {
          auto& g = xn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * sv[i % c];
          }
        }
        if (auto* sn = grad_target(self, 1)) {
          auto& g = sn->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i % c] += self.grad[i] * xv[i];
          }
        }
        if (auto* tn = grad_target(self, 2)) {
          auto& g = tn->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i % c] += self.grad[i];
          }
        }
      });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  Shape lead = parts[0].shape();
  require(!lead.empty(), "concat_last: scalar input");
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(!s.empty(), "concat_last: scalar input");
    widths.push_back(s.back());
    total += s.back();
    s.pop_back();
    require(s == lead, "concat_last: leading extents differ");
  }
  const std::size_t positions = shape_size(lead);
  Shape os = lead;
  os.push_back(total);
  Tensor<T> out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t c = 0; c < widths[k]; ++c) {
        out[p * total + off + c] = v[p * widths[k] + c];
      }
    }
    off += widths[k];
  }
  return make_op<T>(
      "concat_last", std::move(out), parts,
      [widths, total, positions](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (auto* in = grad_target(self, k)) {
            auto& g = in->grad_buffer();
            for (std::size_t p = 0; p < positions; ++p) {
              for (std::size_t c = 0; c < widths[k]; ++c) {
                g[p * widths[k] + c] += self.grad[p * total + off + c];
              }
            }
          }
          off += widths[k];
        }
      });
}

template <typename T>
Var<T> stack_last(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "stack_last: no inputs");
  Shape s = parts[0].shape();
  for (const auto& p : parts) {
    require(p.shape() == s, "stack_last: shape mismatch");
  }
  std::vector<Var<T>> reshaped;
  reshaped.reserve(parts.size());
  Shape with_axis = s;
  with_axis.push_back(1);
  for (const auto& p : parts) reshaped.push_back(reshape(p, with_axis));
  return concat_last(reshaped);
}

template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t index) {
  Shape s = x.shape();
  require(!s.empty() && index < s.back(),
          "slice_last: index " + std::to_string(index) + " out of range for " +
              shape_string(s));
  const std::size_t c = s.back();
  s.pop_back();
  Tensor<T> out(s);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = x.value()[p * c + index];
  return make_op<T>("slice_last", std::move(out), {x},
                    [c, index](Node<T>& self) {
                      auto& g = self.inputs[0]->grad_buffer();
                      for (std::size_t p = 0; p < self.grad.size(); ++p) {
                        g[p * c + index] += self.grad[p];
                      }
                    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_hwc(x, "global_avg_pool");
  const std::size_t pixels = x.shape()[0] * x.shape()[1];
  const std::size_t c = x.shape()[2];
  const T inv = T(1) / static_cast<T>(pixels);
  Tensor<T> out(Shape{c});
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < c; ++k) out[k] += x.value()[p * c + k];
  }
  for (auto& v : out.data()) v *= inv;
  return make_op<T>("global_avg_pool", std::move(out), {x},
                    [pixels, c, inv](Node<T>& self) {
                      auto& g = self.inputs[0]->grad_buffer();
                      for (std::size_t p = 0; p < pixels; ++p) {
                        for (std::size_t k = 0; k < c; ++k) {
                          g[p * c + k] += self.grad[k] * inv;
                        }
                      }
                    });
}

template <typename T>
Var<T> channel_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                         const Var<T>& gamma, std::size_t heads,
                         std::vector<Tensor<T>>* maps) {
  require_hwc(q, "channel_attention");
  require_same(q, k, "channel_attention");
  require_same(q, v, "channel_attention");
  const std::size_t pixels = q.shape()[0] * q.shape()[1];
  const std::size_t channels = q.shape()[2];
  require(heads >= 1 && channels % heads == 0,
          "channel_attention: " + std::to_string(heads) +
              " heads do not divide " + std::to_string(channels) +
              " channels");
  require(gamma.shape() == Shape{heads},
          "channel_attention: gamma must be {heads}");
  const std::size_t ch = channels / heads;

  // attn holds A for every head, {heads, ch, ch}; logits are K Q^T.
  std::vector<T> attn(heads * ch * ch);
  std::vector<T> logits(heads * ch * ch);
  Tensor<T> out(q.shape());
  const T* qv = q.value().data().data();
  const T* kv = k.value().data().data();
  const T* vv = v.value().data().data();
  for (std::size_t g = 0; g < heads; ++g) {
    const std::size_t c0 = g * ch;
    T* gl = logits.data() + g * ch * ch;
    T* ga = attn.data() + g * ch * ch;
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* kr = kv + p * channels + c0;
      const T* qr = qv + p * channels + c0;
      for (std::size_t i = 0; i < ch; ++i) {
        const T ki = kr[i];
        for (std::size_t j = 0; j < ch; ++j) gl[i * ch + j] += ki * qr[j];
      }
    }
    const T denom = std::abs(gamma.value()[g]) + T(1e-8);
    for (std::size_t i = 0; i < ch; ++i) {
      T mx = gl[i * ch] / denom;
      for (std::size_t j = 1; j < ch; ++j) mx = std::max(mx, gl[i * ch + j] / denom);
      T z{0};
      for (std::size_t j = 0; j < ch; ++j) {
        const T e = std::exp(gl[i * ch + j] / denom - mx);
        ga[i * ch + j] = e;
        z += e;
      }
      for (std::size_t j = 0; j < ch; ++j) ga[i * ch + j] /= z;
    }
    T* ov = out.data().data();
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* vr = vv + p * channels + c0;
      T* orow = ov + p * channels + c0;
      for (std::size_t i = 0; i < ch; ++i) {
        T acc{0};
        for (std::size_t j = 0; j < ch; ++j) acc += ga[i * ch + j] * vr[j];
        orow[i] = acc;
      }
    }
    if (maps != nullptr) {
      maps->emplace_back(Shape{ch, ch},
                         std::vector<T>(ga, ga + ch * ch));
    }
  }

  return make_op<T>(
      "channel_attention", std::move(out), {q, k, v, gamma},
      [pixels, channels, heads, ch, attn = std::move(attn),
       logits = std::move(logits)](Node<T>& self) {
        const T* qv = self.inputs[0]->value.data().data();
        const T* kv = self.inputs[1]->value.data().data();
        const T* vv = self.inputs[2]->value.data().data();
        const T* gv = self.inputs[3]->value.data().data();
        const T* dy = self.grad.data().data();
        auto* qn = grad_target(self, 0);
        auto* kn = grad_target(self, 1);
        auto* vn = grad_target(self, 2);
        auto* gn = grad_target(self, 3);
        T* dq = qn ? qn->grad_buffer().data().data() : nullptr;
        T* dk = kn ? kn->grad_buffer().data().data() : nullptr;
        T* dv = vn ? vn->grad_buffer().data().data() : nullptr;
        std::vector<T> dA(ch * ch), dG(ch * ch);
        for (std::size_t g = 0; g < heads; ++g) {
          const std::size_t c0 = g * ch;
          const T* ga = attn.data() + g * ch * ch;
          const T* gl = logits.data() + g * ch * ch;
          std::fill(dA.begin(), dA.end(), T{0});
          for (std::size_t p = 0; p < pixels; ++p) {
            const T* dyr = dy + p * channels + c0;
            const T* vr = vv + p * channels + c0;
            for (std::size_t i = 0; i < ch; ++i) {
              const T d = dyr[i];
              for (std::size_t j = 0; j < ch; ++j) dA[i * ch + j] += d * vr[j];
            }
            if (dv) {
              T* dvr = dv + p * channels + c0;
              for (std::size_t i = 0; i < ch; ++i) {
                const T d = dyr[i];
                for (std::size_t j = 0; j < ch; ++j) dvr[j] += ga[i * ch + j] * d;
              }
            }
          }
          const T gval = gv[g];
          const T denom = std::abs(gval) + T(1e-8);
          T dDenom{0};
          for (std::size_t i = 0; i < ch; ++i) {
            T dot{0};
            for (std::size_t j = 0; j < ch; ++j) dot += dA[i * ch + j] * ga[i * ch + j];
            for (std::size_t j = 0; j < ch; ++j) {
              const T dS = ga[i * ch + j] * (dA[i * ch + j] - dot);
              dG[i * ch + j] = dS / denom;
              dDenom -= dS * gl[i * ch + j] / (denom * denom);
            }
          }
          if (gn) gn->grad_buffer()[g] += dDenom * (gval >= T(0) ? T(1) : T(-1));
          if (dk || dq) {
            for (std::size_t p = 0; p < pixels; ++p) {
              const T* kr = kv + p * channels + c0;
              const T* qr = qv + p * channels + c0;
              for (std::size_t i = 0; i < ch; ++i) {
                T acc{0};
                for (std::size_t j = 0; j < ch; ++j) {
                  acc += dG[i * ch + j] * qr[j];
                  if (dq) dq[p * channels + c0 + j] += dG[i * ch + j] * kr[i];
                }
                if (dk) dk[p * channels + c0 + i] += acc;
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

#define MSCDT_INSTANTIATE_OPS(T)                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                          \
  template Var<T> scale(const Var<T>&, T);                                    \
  template Var<T> add_n(const std::vector<Var<T>>&);                          \
  template Var<T> sum(const Var<T>&);                                         \
  template Var<T> mean(const Var<T>&);                                        \
  template Var<T> mean_abs_diff(const Var<T>&, const Var<T>&);                \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);              \
  template Var<T> reshape(const Var<T>&, Shape);                              \
  template Var<T> softmax(const Var<T>&, std::size_t);                        \
  template Var<T> gelu(const Var<T>&);                                        \
  template Var<T> leaky_relu(const Var<T>&, T);                               \
  template Var<T> layer_norm(const Var<T>&, std::size_t, T);                  \
  template Var<T> pixel_unshuffle(const Var<T>&, std::size_t);                \
  template Var<T> pixel_shuffle(const Var<T>&, std::size_t);                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, ConvMode, Padding);    \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);             \
  template Var<T> channel_affine(const Var<T>&, const Var<T>&, const Var<T>&); \
  template Var<T> concat_last(const std::vector<Var<T>>&);                    \
  template Var<T> stack_last(const std::vector<Var<T>>&);                     \
  template Var<T> slice_last(const Var<T>&, std::size_t);                     \
  template Var<T> global_avg_pool(const Var<T>&);                             \
  template Var<T> channel_attention(const Var<T>&, const Var<T>&,             \
                                    const Var<T>&, const Var<T>&,             \
                                    std::size_t, std::vector<Tensor<T>>*);    \
  template Var<T> detach(const Var<T>&);

MSCDT_INSTANTIATE_OPS(float)
MSCDT_INSTANTIATE_OPS(double)

#undef MSCDT_INSTANTIATE_OPS

}  // namespace mscdt::ops
