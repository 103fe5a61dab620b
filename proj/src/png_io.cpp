// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "restpose/errors.hpp"

namespace restpose::io {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void on_png_error(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text != nullptr) *text = msg;
  std::longjmp(png_jmpbuf(png), 1);
}

void on_png_warning(png_structp, png_const_charp) {}

std::vector<std::uint8_t> pack_rows(const PngImage& im) {
  const std::size_t n = im.samples.size();
  std::vector<std::uint8_t> bytes(im.bit_depth == 16 ? 2 * n : n);
  for (std::size_t i = 0; i < n; ++i) {
    if (im.bit_depth == 16) {
      bytes[2 * i] = static_cast<std::uint8_t>(im.samples[i] >> 8);  // PNG is big-endian
      bytes[2 * i + 1] = static_cast<std::uint8_t>(im.samples[i] & 0xff);
    } else {
      bytes[i] = static_cast<std::uint8_t>(im.samples[i]);
    }
  }
  return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const PngImage& image) {
  require(image.channels == 1 || image.channels == 3, ErrorKind::kInvalidParameter, "PNG: 1 or 3 channels");
  require(image.bit_depth == 8 || image.bit_depth == 16, ErrorKind::kInvalidParameter, "PNG: 8 or 16 bits");
  require(image.height > 0 && image.width > 0 &&
              image.samples.size() == static_cast<std::size_t>(image.channels) * image.height * image.width,
          ErrorKind::kInvalidParameter, "PNG: sample count does not match the image size");
  if (image.bit_depth == 8) {
    for (auto s : image.samples) require(s <= 255, ErrorKind::kInvalidParameter, "PNG: 8-bit sample out of range");
  }

  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  require(file != nullptr, ErrorKind::kIo, "cannot write " + path.string());
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  require(png != nullptr, ErrorKind::kIo, "libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  const std::vector<std::uint8_t> bytes = pack_rows(image);
  const std::size_t stride = bytes.size() / image.height;
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = const_cast<png_bytep>(bytes.data() + y * stride);

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "libpng: writing " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.width, image.height, image.bit_depth,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PngImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  require(file != nullptr, ErrorKind::kData, "missing image file " + path.string());
  png_byte sig[8];
  require(std::fread(sig, 1, 8, file.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, ErrorKind::kFormat,
          path.string() + " is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  require(png != nullptr, ErrorKind::kIo, "libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  PngImage out;
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kFormat, "libpng: reading " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  const bool supported = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_RGB) &&
                         (out.bit_depth == 8 || out.bit_depth == 16) &&
                         png_get_interlace_type(png, info) == PNG_INTERLACE_NONE;
  if (!supported) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kFormat, path.string() + ": only non-interlaced 8/16-bit gray or RGB PNG is supported");
  }
  out.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  const std::size_t stride = png_get_rowbytes(png, info);
  bytes.resize(stride * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(out.channels) * out.height * out.width;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = out.bit_depth == 16 ? static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1])
                                         : bytes[i];
  }
  return out;
}

}  // namespace restpose::io
