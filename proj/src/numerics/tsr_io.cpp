#include "mscdt/numerics/tsr_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mscdt {
namespace {

constexpr char kMagic[8] = {'M', 'S', 'C', 'D', 'T', 'T', 'S', 'R'};
constexpr std::size_t kHeader = 8 + 1 + 1;

static_assert(std::endian::native == std::endian::little,
              ".tsr I/O assumes a little-endian host");

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t raw[sizeof(U)];
  std::memcpy(raw, &v, sizeof(U));
  out.insert(out.end(), raw, raw + sizeof(U));
}

template <typename U>
U get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + sizeof(U) > bytes.size()) {
    throw FormatError(".tsr: truncated payload");
  }
  U v;
  std::memcpy(&v, bytes.data() + offset, sizeof(U));
  return v;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_tsr(const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  out.push_back(static_cast<std::uint8_t>(std::is_same_v<T, float> ? DType::f32
                                                                    : DType::f64));
  if (t.rank() > 255) throw FormatError(".tsr: rank above 255");
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
  out.insert(out.end(), raw, raw + t.size() * sizeof(T));
  return out;
}

DType tsr_dtype(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError(".tsr: bad magic");
  }
  const auto tag = bytes[8];
  if (tag > 1) throw FormatError(".tsr: unknown dtype tag " + std::to_string(tag));
  return static_cast<DType>(tag);
}

template <typename T>
Tensor<T> decode_tsr(std::span<const std::uint8_t> bytes) {
  const DType dtype = tsr_dtype(bytes);
  const std::size_t rank = bytes[9];
  Shape shape(rank);
  std::size_t off = kHeader;
  for (std::size_t i = 0; i < rank; ++i, off += 8) {
    shape[i] = static_cast<std::size_t>(get<std::uint64_t>(bytes, off));
  }
  const std::size_t n = shape_size(shape);
  const std::size_t width = dtype == DType::f32 ? 4 : 8;
  if (bytes.size() != off + n * width) {
    throw FormatError(".tsr: payload length " + std::to_string(bytes.size()) +
                      " does not match shape " + shape_string(shape));
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = dtype == DType::f32
                  ? static_cast<T>(get<float>(bytes, off + i * 4))
                  : static_cast<T>(get<double>(bytes, off + i * 8));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

template std::vector<std::uint8_t> encode_tsr(const Tensor<float>&);
template std::vector<std::uint8_t> encode_tsr(const Tensor<double>&);
template Tensor<float> decode_tsr(std::span<const std::uint8_t>);
template Tensor<double> decode_tsr(std::span<const std::uint8_t>);

}  // namespace mscdt
