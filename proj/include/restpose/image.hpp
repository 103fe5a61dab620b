// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace restpose {

// Side of the square network input crop.
inline constexpr int kCropSize = 224;

// Dense CHW image of floats. Row 0 is the top of the frame; pixel (x, y) covers [x, x+1) x [y, y+1),
// so its centre sits at (x + 0.5, y + 0.5) in crop coordinates.
template <typename T>
struct BasicImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  BasicImage() = default;
  BasicImage(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const BasicImage& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  const T& at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  std::span<T> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

  bool operator==(const BasicImage&) const = default;
};

using Image = BasicImage<float>;
using ImageD = BasicImage<double>;

}  // namespace restpose
