// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// 8/16-bit grayscale and 8-bit RGB PNG files. Output bytes depend only on the pixel data.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace restpose::io {

struct PngImage {
  int channels = 1;   // 1 (gray) or 3 (RGB)
  int height = 0;
  int width = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;  // HWC, interleaved
};

// Throws kIo when the file cannot be written and kInvalidParameter on an unsupported format.
void write_png(const std::filesystem::path& path, const PngImage& image);
// Throws kData when the file is missing and kFormat when it is not a supported PNG.
PngImage read_png(const std::filesystem::path& path);

}  // namespace restpose::io
