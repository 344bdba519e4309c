#pragma once

// Binary PGM (P5, maxval 255) read/write.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"

namespace cdiff {

inline std::uint8_t to_gray8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<std::uint8_t> encode_pgm(const Latent& image) {
  const std::string header = "P5\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size());
  for (double v : image.data) out.push_back(to_gray8(v));
  return out;
}

inline Latent decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<pgm>") {
  std::size_t pos = 0;
  auto bad = [&](const std::string& msg) -> void { fail(ErrorKind::config, source + ": " + msg); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> int {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) bad("malformed PGM header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1'000'000) bad("PGM dimension too large");
    }
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') bad("not a binary PGM (P5)");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (w <= 0 || h <= 0) bad("PGM dimensions must be positive");
  if (maxval != 255) bad("only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) bad("malformed PGM header");
  ++pos;
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos != n) bad("PGM payload length does not match dimensions");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = bytes[pos + i] / 255.0;
  return Latent(std::move(data), w, h, 0);
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_pgm(const std::string& path, const Latent& image) {
  write_file(path, encode_pgm(image));
}

inline Latent read_pgm(const std::string& path) { return decode_pgm(read_file(path), path); }

}  // namespace cdiff
