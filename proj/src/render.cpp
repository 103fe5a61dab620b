// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "restpose/errors.hpp"

namespace restpose::render {
namespace {

struct FaceSetup {
  double x[3], y[3], z[3];
  double area = 0.0;  // twice the signed area
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

FaceSetup setup_face(const body::Points2& px, const Eigen::VectorXd& z, const body::Faces& faces, int f, int height,
                     int width) {
  FaceSetup s;
  for (int k = 0; k < 3; ++k) {
    const int v = faces(f, k);
    s.x[k] = px(v, 0);
    s.y[k] = px(v, 1);
    s.z[k] = z(v);
  }
  s.area = (s.x[1] - s.x[0]) * (s.y[2] - s.y[0]) - (s.x[2] - s.x[0]) * (s.y[1] - s.y[0]);
  if (!(std::abs(s.area) > 1e-12)) return s;  // empty pixel range
  const double lo_x = std::min({s.x[0], s.x[1], s.x[2]}), hi_x = std::max({s.x[0], s.x[1], s.x[2]});
  const double lo_y = std::min({s.y[0], s.y[1], s.y[2]}), hi_y = std::max({s.y[0], s.y[1], s.y[2]});
  // Pixel centres x + 0.5 inside [lo, hi].
  s.x0 = std::max(0, static_cast<int>(std::ceil(lo_x - 0.5)));
  s.x1 = std::min(width - 1, static_cast<int>(std::floor(hi_x - 0.5)));
  s.y0 = std::max(0, static_cast<int>(std::ceil(lo_y - 0.5)));
  s.y1 = std::min(height - 1, static_cast<int>(std::floor(hi_y - 0.5)));
  return s;
}

inline void shade_pixel(const FaceSetup& s, int f, int px_x, int px_y, int width, DepthBuffers& out) {
  const double cx = px_x + 0.5, cy = px_y + 0.5;
  const double inv = 1.0 / s.area;
  const double w0 = ((s.x[1] - cx) * (s.y[2] - cy) - (s.x[2] - cx) * (s.y[1] - cy)) * inv;
  const double w1 = ((s.x[2] - cx) * (s.y[0] - cy) - (s.x[0] - cx) * (s.y[2] - cy)) * inv;
  const double w2 = 1.0 - w0 - w1;
  if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) return;
  const double depth = w0 * s.z[0] + w1 * s.z[1] + w2 * s.z[2];
  const std::size_t i = static_cast<std::size_t>(px_y) * width + px_x;
  out.covered[i] = 1;
  if (depth > out.top[i]) {
    out.top[i] = depth;
    out.top_face[i] = f;
  }
  out.bottom[i] = std::min(out.bottom[i], depth);
}

DepthBuffers empty_buffers(const body::Points2& px, const Eigen::VectorXd& z, const body::Faces& faces, int height,
                           int width) {
  require(height > 0 && width > 0, ErrorKind::kInvalidParameter, "zbuffer: empty frame");
  require(px.rows() == z.size(), ErrorKind::kDimension, "zbuffer: vertex and depth counts differ");
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      require(faces(f, k) >= 0 && faces(f, k) < px.rows(), ErrorKind::kDimension, "zbuffer: face index out of range");
    }
  }
  DepthBuffers out;
  out.height = height;
  out.width = width;
  const std::size_t n = static_cast<std::size_t>(height) * width;
  out.covered.assign(n, 0);
  out.top.assign(n, -std::numeric_limits<double>::infinity());
  out.bottom.assign(n, std::numeric_limits<double>::infinity());
  out.top_face.assign(n, -1);
  return out;
}

}  // namespace

namespace ref {

DepthBuffers zbuffer(const body::Points2& px, const Eigen::VectorXd& z, const body::Faces& faces, int height,
                     int width) {
  DepthBuffers out = empty_buffers(px, z, faces, height, width);
  for (int f = 0; f < faces.rows(); ++f) {
    const FaceSetup s = setup_face(px, z, faces, f, height, width);
    for (int y = s.y0; y <= s.y1; ++y) {
      for (int x = s.x0; x <= s.x1; ++x) shade_pixel(s, f, x, y, width, out);
    }
  }
  return out;
}

}  // namespace ref

namespace omp {

DepthBuffers zbuffer(const body::Points2& px, const Eigen::VectorXd& z, const body::Faces& faces, int height,
                     int width) {
  DepthBuffers out = empty_buffers(px, z, faces, height, width);
  const int nf = static_cast<int>(faces.rows());
  std::vector<FaceSetup> setups(nf);
  for (int f = 0; f < nf; ++f) setups[f] = setup_face(px, z, faces, f, height, width);
  // Each row sees the faces in increasing order, as in the serial loop.
#pragma omp parallel for schedule(dynamic, 4)
  for (int y = 0; y < height; ++y) {
    for (int f = 0; f < nf; ++f) {
      const FaceSetup& s = setups[f];
      if (y < s.y0 || y > s.y1) continue;
      for (int x = s.x0; x <= s.x1; ++x) shade_pixel(s, f, x, y, width, out);
    }
  }
  return out;
}

}  // namespace omp

ImageD gaussian_blur(const ImageD& image, double sigma) {
  require(image.channels == 1, ErrorKind::kDimension, "gaussian_blur: single-channel image expected");
  if (sigma <= 0.0) return image;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  const int h = image.height, w = image.width;
  ImageD tmp(1, h, w), out(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = std::max(-r, -x); i <= std::min(r, w - 1 - x); ++i) acc += k[i + r] * image.at(0, y, x + i);
      tmp.at(0, y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = std::max(-r, -y); i <= std::min(r, h - 1 - y); ++i) acc += k[i + r] * tmp.at(0, y + i, x);
      out.at(0, y, x) = acc;
    }
  }
  return out;
}

ImageD moving_max(const ImageD& image, int radius) {
  require(image.channels == 1, ErrorKind::kDimension, "moving_max: single-channel image expected");
  require(radius >= 0, ErrorKind::kInvalidParameter, "moving_max: negative radius");
  const int h = image.height, w = image.width;
  ImageD tmp(1, h, w), out(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = image.at(0, y, x);
      for (int i = std::max(0, x - radius); i <= std::min(w - 1, x + radius); ++i) m = std::max(m, image.at(0, y, i));
      tmp.at(0, y, x) = m;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = tmp.at(0, y, x);
      for (int i = std::max(0, y - radius); i <= std::min(h - 1, y + radius); ++i) m = std::max(m, tmp.at(0, i, x));
      out.at(0, y, x) = m;
    }
  }
  return out;
}

}  // namespace restpose::render
