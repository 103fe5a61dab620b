// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Data-parallel kernels. Every kernel exists twice: `ref::` is the plain serial loop nest
// kept as the test oracle, `omp::` is the OpenMP version used by the library. The OpenMP
// versions partition work so that every output element is produced by exactly one thread
// in a fixed order, so their results do not depend on the thread count.

#pragma once

#include <span>

namespace restpose::kernels {

struct Conv2dShape {
  int in_c = 1;
  int out_c = 1;
  int in_h = 1;
  int in_w = 1;
  int k = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
  long long weight_count() const { return static_cast<long long>(out_c) * in_c * k * k; }
  // Multiply-adds of one forward pass.
  long long macs() const { return weight_count() * out_h() * out_w(); }
};

// Linear blend skinning in displacement form:
//   out_i = in_i + sum_j w_ij (A_j (in_i - J_j) + d_j)
// with A_j = R_j - I (row-major 3x3 per joint), J_j the rest joints and d_j the joint offsets.
struct SkinningInputs {
  std::span<const double> vertices;     // N*3
  std::span<const double> weights;      // N*J
  std::span<const double> rot_minus_i;  // J*9
  std::span<const double> rest_joints;  // J*3
  std::span<const double> offsets;      // J*3
  int joints = 24;
};

namespace ref {

// Layouts are CHW; weights are [out_c][in_c][k][k].
template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y);
// dx is overwritten.
template <typename T>
void conv2d_backward_input(const Conv2dShape& s, std::span<const T> w, std::span<const T> dy, std::span<T> dx);
// dw and db are accumulated into.
template <typename T>
void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x, std::span<const T> dy, std::span<T> dw,
                            std::span<T> db);

// y[c, h*r+i, w*r+j] = x[c*r*r + i*r + j, h, w]; x has c_out*r*r channels of h x w.
template <typename T>
void pixel_shuffle(std::span<const T> x, int c_out, int h, int w, int r, std::span<T> y);
template <typename T>
void pixel_unshuffle(std::span<const T> y, int c_out, int h, int w, int r, std::span<T> x);

void skin(const SkinningInputs& in, std::span<double> out);

}  // namespace ref

namespace omp {

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y);
template <typename T>
void conv2d_backward_input(const Conv2dShape& s, std::span<const T> w, std::span<const T> dy, std::span<T> dx);
template <typename T>
void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x, std::span<const T> dy, std::span<T> dw,
                            std::span<T> db);

template <typename T>
void pixel_shuffle(std::span<const T> x, int c_out, int h, int w, int r, std::span<T> y);
template <typename T>
void pixel_unshuffle(std::span<const T> y, int c_out, int h, int w, int r, std::span<T> x);

void skin(const SkinningInputs& in, std::span<double> out);

}  // namespace omp

}  // namespace restpose::kernels
