#pragma once

#include <cstdint>
#include <vector>

#include "mscdt/numerics/tensor.hpp"

namespace mscdt::texture {

struct TextureConfig {
  int tau = 180;        // LBP threshold in [0, 255]
  double alpha = 0.9;   // fusion weight of the network output
  void validate() const;
};

/// Row-major 8-bit grid (LBP codes or quantized intensities).
struct ByteGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const ByteGrid&, const ByteGrid&) = default;
};

/// Binary mask with the same extents as its source image.
struct TextureMask {
  ByteGrid grid;  // values in {0, 1}

  double density() const;
  template <typename T>
  Tensor<T> as_tensor() const;
};

/// Affine min-max rescale to [0, 255], rounded; constant images map to 0.
ByteGrid quantize(const Tensor<double>& image);

/// The eight neighbour offsets (dy, dx), clockwise from the top-left.
/// Neighbour p (1-based) carries weight 2^(p-1).
inline constexpr int kNeighbors[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1},
                                         {1, 1},   {1, 0},  {1, -1}, {0, -1}};

/// LBP codes of an already quantized grid with replicate-padded borders.
ByteGrid lbp_codes(const ByteGrid& quantized);

/// LBP map of a float image: quantize, then lbp_codes.
ByteGrid lbp_map(const Tensor<double>& image);

/// mask = 1 where code >= tau.
TextureMask texture_mask(const ByteGrid& lbp, int tau);

/// texture_mask(lbp_map(image), tau)
TextureMask mask_of(const Tensor<double>& image, int tau);

/// U = I (.) mask
template <typename T>
Tensor<T> masked_texture(const Tensor<T>& image, const TextureMask& mask);

/// alpha * separated + (1 - alpha) * masked
template <typename T>
Tensor<T> fuse(const Tensor<T>& separated, const Tensor<T>& masked,
               double alpha);

}  // namespace mscdt::texture
