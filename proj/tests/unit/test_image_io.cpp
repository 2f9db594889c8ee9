// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <string>

#include "doctest.h"
#include "drnet/error.hpp"
#include "drnet/image_io.hpp"

using namespace drnet;

namespace {

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("pgm encodes the P5 header followed by raw pixels") {
  const GrayImage img{3, 2, {0, 1, 2, 253, 254, 255}};
  const auto b = encode_pgm(img);
  const std::string head = "P5\n3 2\n255\n";
  REQUIRE(b.size() == head.size() + 6);
  CHECK(std::string(b.begin(), b.begin() + long(head.size())) == head);
  const auto back = decode_pgm(b);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("pgm decoder accepts comments and rejects bad input") {
  auto b = bytes("P5 # made by hand\n2 # w\n1\n255\n");
  b.push_back(7);
  b.push_back(9);
  CHECK(decode_pgm(b).pixels == std::vector<std::uint8_t>{7, 9});
  CHECK_THROWS_AS(decode_pgm(bytes("P2\n1 1\n255\n0")), FormatError);
  CHECK_THROWS_AS(decode_pgm(bytes("P5\n2 2\n255\n")), FormatError);
  CHECK_THROWS_AS(decode_pgm(bytes("P5\n1 1\n65535\n\x01\x02")), FormatError);
  CHECK_THROWS_AS(decode_pgm(bytes("P5\n0 1\n255\n")), FormatError);
  CHECK_THROWS_AS(encode_pgm(GrayImage{2, 2, {1, 2, 3}}), ConfigError);
}

TEST_CASE("pgm files round trip") {
  const auto path = std::filesystem::temp_directory_path() / "drnet_test_img.pgm";
  GrayImage img{4, 4, {}};
  for (int i = 0; i < 16; ++i) img.pixels.push_back(std::uint8_t(i * 16));
  write_pgm(img, path);
  CHECK(std::filesystem::file_size(path) == 11 + 16);
  CHECK(read_pgm(path).pixels == img.pixels);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_pgm(path), IoError);
  CHECK_THROWS_AS(write_pgm(img, "/nonexistent/dir/x.pgm"), IoError);
}
