#include "mscdt/texture/texture.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mscdt::texture {

void TextureConfig::validate() const {
  if (tau < 0 || tau > 255) {
    throw std::invalid_argument("texture: tau " + std::to_string(tau) +
                                " outside [0, 255]");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("texture: alpha " + std::to_string(alpha) +
                                " outside [0, 1]");
  }
}

double TextureMask::density() const {
  if (grid.data.empty()) return 0.0;
  std::size_t ones = 0;
  for (auto v : grid.data) ones += v;
  return static_cast<double>(ones) / static_cast<double>(grid.data.size());
}

template <typename T>
Tensor<T> TextureMask::as_tensor() const {
  Tensor<T> out(Shape{grid.rows, grid.cols});
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    out[i] = static_cast<T>(grid.data[i]);
  }
  return out;
}

namespace {

void require_image(const Tensor<double>& image, const char* op) {
  if (image.rank() != 2 || image.empty()) {
    throw ShapeError(std::string(op) + ": expected a non-empty {H, W} image, got " +
                     shape_string(image.shape()));
  }
}

}  // namespace

ByteGrid quantize(const Tensor<double>& image) {
  require_image(image, "quantize");
  ByteGrid g{image.extent(0), image.extent(1),
             std::vector<std::uint8_t>(image.size(), 0)};
  const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  const double range = *hi - *lo;
  if (range <= 0.0) return g;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double q = std::round((image[i] - *lo) / range * 255.0);
    g.data[i] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
  }
  return g;
}

ByteGrid lbp_codes(const ByteGrid& q) {
  if (q.rows == 0 || q.cols == 0) throw ShapeError("lbp: empty image");
  ByteGrid out{q.rows, q.cols, std::vector<std::uint8_t>(q.data.size())};
  const long h = static_cast<long>(q.rows), w = static_cast<long>(q.cols);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const int center = q.data[y * w + x];
      unsigned code = 0;
      for (int p = 0; p < 8; ++p) {
        const long ny = std::clamp(y + kNeighbors[p][0], 0L, h - 1);
        const long nx = std::clamp(x + kNeighbors[p][1], 0L, w - 1);
        if (static_cast<int>(q.data[ny * w + nx]) - center >= 0) code |= 1u << p;
      }
      out.data[y * w + x] = static_cast<std::uint8_t>(code);
    }
  }
  return out;
}

ByteGrid lbp_map(const Tensor<double>& image) {
  return lbp_codes(quantize(image));
}

TextureMask texture_mask(const ByteGrid& lbp, int tau) {
  TextureMask m{ByteGrid{lbp.rows, lbp.cols,
                         std::vector<std::uint8_t>(lbp.data.size())}};
  for (std::size_t i = 0; i < lbp.data.size(); ++i) {
    m.grid.data[i] = static_cast<int>(lbp.data[i]) >= tau ? 1 : 0;
  }
  return m;
}

TextureMask mask_of(const Tensor<double>& image, int tau) {
  return texture_mask(lbp_map(image), tau);
}

template <typename T>
Tensor<T> masked_texture(const Tensor<T>& image, const TextureMask& mask) {
  if (image.rank() != 2 || image.extent(0) != mask.grid.rows ||
      image.extent(1) != mask.grid.cols) {
    throw ShapeError("masked_texture: image " + shape_string(image.shape()) +
                     " vs mask [" + std::to_string(mask.grid.rows) + "x" +
                     std::to_string(mask.grid.cols) + "]");
  }
  Tensor<T> out = image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask.grid.data[i] == 0) out[i] = T{0};
  }
  return out;
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& separated, const Tensor<T>& masked,
               double alpha) {
  require_same_shape(separated, masked, "fuse");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("fuse: alpha outside [0, 1]");
  }
  // alpha == 1 must reproduce the input bit for bit.
  if (alpha == 1.0) return separated;
  const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
  Tensor<T> out(separated.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a * separated[i] + b * masked[i];
  }
  return out;
}

template Tensor<float> TextureMask::as_tensor() const;
template Tensor<double> TextureMask::as_tensor() const;
template Tensor<float> masked_texture(const Tensor<float>&, const TextureMask&);
template Tensor<double> masked_texture(const Tensor<double>&, const TextureMask&);
template Tensor<float> fuse(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> fuse(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace mscdt::texture
