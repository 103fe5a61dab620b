// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Soft silhouette rasterizer. Each pixel centre p gets
//   soft(p) = sigmoid(sharpness * max_f sd_f(p))
// where sd_f is the signed distance (pixels, positive inside) from p to projected triangle f.
// Faces whose screen box, grown by a margin where the sigmoid is below 1e-17, misses p are
// skipped; a pixel no face reaches gets exactly 0. The hard mask is soft > 0.5, i.e. the pixel
// centre lies strictly inside some triangle. Zero-area triangles are ignored.

#pragma once

#include <vector>

#include "restpose/bodymodel.hpp"
#include "restpose/image.hpp"

namespace restpose::raster {

struct RasterResult {
  ImageD soft;                     // 1 x H x W
  std::vector<int> winning_face;   // per pixel, -1 when no face reaches it
};

namespace ref {
RasterResult rasterize(const body::Points2& verts, const body::Faces& faces, int height, int width,
                       double sharpness);
}  // namespace ref

namespace omp {
RasterResult rasterize(const body::Points2& verts, const body::Faces& faces, int height, int width,
                       double sharpness);
}  // namespace omp

// Gradient with respect to the projected vertices, given d(loss)/d(soft).
body::Points2 rasterize_backward(const body::Points2& verts, const body::Faces& faces, const RasterResult& result,
                                 double sharpness, const ImageD& d_soft);

// Projects the mesh with `cam` and rasterizes it into a size x size frame.
RasterResult rasterize_silhouette(const body::Mesh& mesh, const body::Faces& faces, const body::CameraParams& cam,
                                  int size, double sharpness);

ImageD hard_mask(const ImageD& soft, double threshold = 0.5);

// Silhouette attention: every channel of `image` multiplied element-wise by the 1 x H x W mask.
template <typename T>
BasicImage<T> apply_mask(const BasicImage<T>& mask, const BasicImage<T>& image);

// Reverse of apply_mask. Either output may be null.
template <typename T>
void apply_mask_backward(const BasicImage<T>& mask, const BasicImage<T>& image, const BasicImage<T>& d_out,
                         BasicImage<T>* d_mask, BasicImage<T>* d_image);

// Signed distance from p to triangle (a, b, c), positive inside, with its gradient with respect to
// the three corners. Returns false for a zero-area triangle.
bool signed_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const Eigen::Vector2d& c, double* sd, Eigen::Matrix<double, 3, 2>* grad = nullptr);

}  // namespace restpose::raster
