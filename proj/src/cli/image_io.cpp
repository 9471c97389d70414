#include "mscdt/cli/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mscdt/numerics/tsr_io.hpp"

namespace mscdt::cli {

namespace fs = std::filesystem;

namespace {

std::string header(std::size_t rows, std::size_t cols, int maxval) {
  return "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n" +
         std::to_string(maxval) + "\n";
}

void write_bytes(const fs::path& path, const std::string& head,
                 const std::vector<std::uint8_t>& body) {
  std::vector<std::uint8_t> all(head.begin(), head.end());
  all.insert(all.end(), body.begin(), body.end());
  write_file_bytes(path, all);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string out;
  while (pos < b.size() && !std::isspace(b[pos])) out.push_back(static_cast<char>(b[pos++]));
  return out;
}

}  // namespace

void write_pgm16(const fs::path& path, const Image& image) {
  if (image.rank() != 2) throw std::invalid_argument("pgm: image must be 2-D");
  double peak = 0.0;
  for (double v : image.data()) peak = std::max(peak, v);
  const double scale = peak > 0.0 ? 65535.0 / peak : 0.0;
  std::vector<std::uint8_t> body;
  body.reserve(image.size() * 2);
  for (double v : image.data()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v * scale, 0.0, 65535.0)));
    body.push_back(static_cast<std::uint8_t>(q >> 8));
    body.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  write_bytes(path, header(image.extent(0), image.extent(1), 65535), body);
}

void write_pgm8(const fs::path& path, const texture::ByteGrid& grid) {
  write_bytes(path, header(grid.rows, grid.cols, 255), grid.data);
}

Image read_pgm(const fs::path& path) {
  const auto b = read_file_bytes(path);
  std::size_t pos = 0;
  if (token(b, pos) != "P5") throw FormatError("pgm: " + path.string() + " is not binary P5");
  std::size_t cols = 0, rows = 0;
  long maxval = 0;
  try {
    cols = std::stoul(token(b, pos));
    rows = std::stoul(token(b, pos));
    maxval = std::stol(token(b, pos));
  } catch (const std::exception&) {
    throw FormatError("pgm: malformed header in " + path.string());
  }
  if (maxval <= 0 || maxval > 65535 || rows == 0 || cols == 0) {
    throw FormatError("pgm: unsupported header in " + path.string());
  }
  ++pos;  // single whitespace before the raster
  const std::size_t width = maxval > 255 ? 2 : 1;
  if (b.size() < pos + rows * cols * width) throw FormatError("pgm: truncated " + path.string());
  Image out(Shape{rows, cols});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t at = pos + i * width;
    const unsigned v = width == 2 ? (unsigned{b[at]} << 8) | b[at + 1] : b[at];
    out[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return out;
}

Image read_image(const fs::path& path) {
  Image img = path.extension() == ".pgm" ? read_pgm(path) : read_tsr<double>(path);
  if (img.rank() != 2) {
    throw std::invalid_argument("image " + path.string() + " has shape " +
                                shape_string(img.shape()) + ", expected 2-D");
  }
  return img;
}

}  // namespace mscdt::cli
