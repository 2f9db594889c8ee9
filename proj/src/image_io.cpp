// SPDX-License-Identifier: Apache-2.0
#include "drnet/image_io.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "drnet/error.hpp"

namespace drnet {

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != std::size_t(img.width) * std::size_t(img.height))
    throw ConfigError("pgm: pixel buffer does not match " + std::to_string(img.width) + "x" +
                      std::to_string(img.height));
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

namespace {

// Reads one whitespace-delimited header integer, skipping '#' comments.
int header_int(std::span<const std::uint8_t> b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos]) && v < 1 << 20) v = v * 10 + (b[pos++] - '0');
  if (pos == start) throw FormatError("pgm: expected integer in header", start);
  return int(v);
}

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError("pgm: missing P5 magic", 0);
  std::size_t pos = 2;
  GrayImage img;
  img.width = header_int(bytes, pos);
  img.height = header_int(bytes, pos);
  if (img.width == 0 || img.height == 0) throw FormatError("pgm: zero image dimension", pos);
  const int maxval = header_int(bytes, pos);
  if (maxval != 255) throw FormatError("pgm: only maxval 255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw FormatError("pgm: expected whitespace after header", pos);
  ++pos;
  const std::size_t n = std::size_t(img.width) * std::size_t(img.height);
  if (bytes.size() - pos != n)
    throw FormatError("pgm: expected " + std::to_string(n) + " pixel bytes", pos);
  img.pixels.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.end());
  return img;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace drnet
