#pragma once

#include <filesystem>

#include "mscdt/texture/texture.hpp"

namespace mscdt::cli {

/// 16-bit binary PGM (big-endian samples), linearly scaled so the image
/// maximum maps to 65535. Negative values clamp to 0.
void write_pgm16(const std::filesystem::path& path, const Image& image);

/// 8-bit binary PGM of raw byte values.
void write_pgm8(const std::filesystem::path& path, const texture::ByteGrid& grid);

/// Reads an 8- or 16-bit P5 file, values divided by maxval.
Image read_pgm(const std::filesystem::path& path);

/// .tsr (exact) or .pgm by extension; the result must be 2-D.
Image read_image(const std::filesystem::path& path);

}  // namespace mscdt::cli
