// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Orthographic z-buffer over projected triangles. A pixel is covered when its centre lies inside
// a triangle (edge functions all >= 0, degenerate faces skipped); depth is interpolated
// barycentrically. `top` keeps the largest z (nearest the camera), `bottom` the smallest.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "restpose/bodymodel.hpp"
#include "restpose/image.hpp"

namespace restpose::render {

struct DepthBuffers {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> covered;  // 1 where any face covers the pixel centre
  std::vector<double> top;            // -inf where uncovered
  std::vector<double> bottom;         // +inf where uncovered
  std::vector<int> top_face;          // face providing `top`, -1 where uncovered
};

namespace ref {
DepthBuffers zbuffer(const body::Points2& px, const Eigen::VectorXd& z, const body::Faces& faces, int height,
                     int width);
}  // namespace ref

namespace omp {
// Row-parallel; identical output to ref::zbuffer.
DepthBuffers zbuffer(const body::Points2& px, const Eigen::VectorXd& z, const body::Faces& faces, int height,
                     int width);
}  // namespace omp

// Separable Gaussian blur of a single-channel image, zero outside the frame; sigma <= 0 copies.
ImageD gaussian_blur(const ImageD& image, double sigma);
// Max over a (2r+1) x (2r+1) window, clipped at the frame.
ImageD moving_max(const ImageD& image, int radius);

}  // namespace restpose::render
