#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mscdt/numerics/tensor.hpp"

namespace mscdt {

// .tsr layout: "MSCDTTSR", u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x little-endian u64 extents, then little-endian values.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<std::uint8_t> encode_tsr(const Tensor<T>& t);

/// Decodes any .tsr payload, converting values to T.
template <typename T>
Tensor<T> decode_tsr(std::span<const std::uint8_t> bytes);

DType tsr_dtype(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

template <typename T>
void write_tsr(const std::filesystem::path& path, const Tensor<T>& t) {
  write_file_bytes(path, encode_tsr(t));
}
template <typename T>
Tensor<T> read_tsr(const std::filesystem::path& path) {
  return decode_tsr<T>(read_file_bytes(path));
}

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace mscdt
