#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "segattack/error.hpp"

namespace segattack::io {

// 8-bit raster as read from or written to disk. channels is 1 (gray or
// palette index) or 3 (RGB); pixels are interleaved, row-major.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  // Set when the file was an indexed-colour PNG; pixels then hold indices.
  bool indexed = false;
  std::vector<std::uint8_t> pixels;
};

// Gray and palette images keep one channel (palette entries are not
// expanded); gray+alpha and RGBA drop alpha. 16-bit samples are reduced to 8.
Raster read_png(const std::filesystem::path& path);

// Width and height from the header only.
std::pair<int, int> png_size(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Raster& raster);

}  // namespace segattack::io
