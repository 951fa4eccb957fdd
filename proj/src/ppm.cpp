#include "ia/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace ia {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
  return tok;
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("ppm: expected a [3,H,W] image, got " + to_string(image.shape()));
  const Index H = image.dim(1), W = image.dim(2);
  const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * H * W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
      }
  return out;
}

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw std::runtime_error("ppm: not a P6 file");
  const long W = std::stol(header_token(bytes, pos));
  const long H = std::stol(header_token(bytes, pos));
  const long maxval = std::stol(header_token(bytes, pos));
  if (W <= 0 || H <= 0 || maxval != 255)
    throw std::runtime_error("ppm: unsupported header (need positive size and maxval 255)");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + static_cast<std::size_t>(3 * W * H))
    throw std::runtime_error("ppm: truncated pixel data");
  Tensor image({3, H, W});
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) image.at(c, y, x) = bytes[pos++] / 255.0;
  return image;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("ppm: write failed for " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ppm: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

}  // namespace ia
