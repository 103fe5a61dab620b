// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace restpose::kernels {
namespace {

// Output columns ox for which ix = ox*stride - pad + kx lies inside [0, in_w).
struct ColumnRange {
  int lo;
  int hi;  // inclusive; empty when hi < lo
};

ColumnRange valid_columns(int kx, int stride, int pad, int in_w, int out_w) {
  const int first = pad - kx;  // smallest ox*stride allowed
  int lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const int last = in_w - 1 + pad - kx;
  int hi = last < 0 ? -1 : std::min(out_w - 1, last / stride);
  return {lo, hi};
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Serial reference implementations.

namespace ref {

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y) {
  const int oh = s.out_h(), ow = s.out_w();
  for (int oc = 0; oc < s.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T acc = b.empty() ? T(0) : b[oc];
        for (int ic = 0; ic < s.in_c; ++ic) {
          for (int ky = 0; ky < s.k; ++ky) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.in_w) continue;
              acc += w[((static_cast<std::size_t>(oc) * s.in_c + ic) * s.k + ky) * s.k + kx] *
                     x[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix];
            }
          }
        }
        y[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const Conv2dShape& s, std::span<const T> w, std::span<const T> dy, std::span<T> dx) {
  const int oh = s.out_h(), ow = s.out_w();
  std::fill(dx.begin(), dx.end(), T(0));
  for (int oc = 0; oc < s.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T g = dy[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
        for (int ic = 0; ic < s.in_c; ++ic) {
          for (int ky = 0; ky < s.k; ++ky) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.in_w) continue;
              dx[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix] +=
                  g * w[((static_cast<std::size_t>(oc) * s.in_c + ic) * s.k + ky) * s.k + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x, std::span<const T> dy, std::span<T> dw,
                            std::span<T> db) {
  const int oh = s.out_h(), ow = s.out_w();
  for (int oc = 0; oc < s.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T g = dy[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
        if (!db.empty()) db[oc] += g;
        for (int ic = 0; ic < s.in_c; ++ic) {
          for (int ky = 0; ky < s.k; ++ky) {
            const int iy = oy * s.stride - s.pad + ky;
            if (iy < 0 || iy >= s.in_h) continue;
            for (int kx = 0; kx < s.k; ++kx) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix < 0 || ix >= s.in_w) continue;
              dw[((static_cast<std::size_t>(oc) * s.in_c + ic) * s.k + ky) * s.k + kx] +=
                  g * x[(static_cast<std::size_t>(ic) * s.in_h + iy) * s.in_w + ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void pixel_shuffle(std::span<const T> x, int c_out, int h, int w, int r, std::span<T> y) {
  const int oh = h * r, ow = w * r;
  for (int c = 0; c < c_out; ++c)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            y[(static_cast<std::size_t>(c) * oh + yy * r + i) * ow + xx * r + j] =
                x[(static_cast<std::size_t>(c * r * r + i * r + j) * h + yy) * w + xx];
}

template <typename T>
void pixel_unshuffle(std::span<const T> y, int c_out, int h, int w, int r, std::span<T> x) {
  const int oh = h * r, ow = w * r;
  for (int c = 0; c < c_out; ++c)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            x[(static_cast<std::size_t>(c * r * r + i * r + j) * h + yy) * w + xx] =
                y[(static_cast<std::size_t>(c) * oh + yy * r + i) * ow + xx * r + j];
}

void skin(const SkinningInputs& in, std::span<double> out) {
  const std::size_t n = in.vertices.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    double acc[3] = {0.0, 0.0, 0.0};
    for (int j = 0; j < in.joints; ++j) {
      const double wij = in.weights[i * in.joints + j];
      if (wij == 0.0) continue;
      const double* a = &in.rot_minus_i[9 * j];
      const double rel[3] = {in.vertices[3 * i] - in.rest_joints[3 * j],
                             in.vertices[3 * i + 1] - in.rest_joints[3 * j + 1],
                             in.vertices[3 * i + 2] - in.rest_joints[3 * j + 2]};
      for (int r = 0; r < 3; ++r) {
        acc[r] += wij * (a[3 * r] * rel[0] + a[3 * r + 1] * rel[1] + a[3 * r + 2] * rel[2] + in.offsets[3 * j + r]);
      }
    }
    for (int r = 0; r < 3; ++r) out[3 * i + r] = in.vertices[3 * i + r] + acc[r];
  }
}

}  // namespace ref

// ---------------------------------------------------------------------------------------------
// OpenMP implementations.

namespace omp {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// GEMMs are split into fixed row blocks, each computed serially by one thread, so the
// floating-point evaluation order does not depend on the thread count.
constexpr int kRowBlock = 32;

bool is_pointwise(const Conv2dShape& s) { return s.k == 1 && s.stride == 1 && s.pad == 0; }

// cols[(ic*k + ky)*k + kx, oy*ow + ox] = x[ic, oy*stride - pad + ky, ox*stride - pad + kx] (0 outside).
template <typename T>
void im2col(const Conv2dShape& s, const T* x, T* cols) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.k;
  const int rows = s.in_c * k * k;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ic = r / (k * k), ky = (r / k) % k, kx = r % k;
    T* out = cols + r * p;
    const T* plane = x + static_cast<std::size_t>(ic) * s.in_h * s.in_w;
    const ColumnRange cr = valid_columns(kx, s.stride, s.pad, s.in_w, ow);
    for (int oy = 0; oy < oh; ++oy) {
      T* orow = out + static_cast<std::size_t>(oy) * ow;
      const int iy = oy * s.stride - s.pad + ky;
      if (iy < 0 || iy >= s.in_h) {
        std::fill(orow, orow + ow, T(0));
        continue;
      }
      const T* xrow = plane + static_cast<std::size_t>(iy) * s.in_w;
      for (int ox = 0; ox < cr.lo; ++ox) orow[ox] = T(0);
      for (int ox = cr.lo; ox <= cr.hi; ++ox) orow[ox] = xrow[ox * s.stride - s.pad + kx];
      for (int ox = std::max(cr.lo, cr.hi + 1); ox < ow; ++ox) orow[ox] = T(0);
    }
  }
}

// Adjoint of im2col; each input channel is owned by one thread.
template <typename T>
void col2im(const Conv2dShape& s, const T* cols, T* dx) {
  const int oh = s.out_h(), ow = s.out_w(), k = s.k;
  const std::size_t p = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < s.in_c; ++ic) {
    T* plane = dx + static_cast<std::size_t>(ic) * s.in_h * s.in_w;
    std::fill(plane, plane + static_cast<std::size_t>(s.in_h) * s.in_w, T(0));
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* in = cols + static_cast<std::size_t>((ic * k + ky) * k + kx) * p;
        const ColumnRange cr = valid_columns(kx, s.stride, s.pad, s.in_w, ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.in_h) continue;
          T* xrow = plane + static_cast<std::size_t>(iy) * s.in_w;
          const T* crow = in + static_cast<std::size_t>(oy) * ow;
          for (int ox = cr.lo; ox <= cr.hi; ++ox) xrow[ox * s.stride - s.pad + kx] += crow[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const Conv2dShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y) {
  const Eigen::Index kk = static_cast<Eigen::Index>(s.in_c) * s.k * s.k;
  const Eigen::Index p = static_cast<Eigen::Index>(s.out_h()) * s.out_w();
  std::vector<T> buffer;
  const T* cols = x.data();
  if (!is_pointwise(s)) {
    buffer.resize(static_cast<std::size_t>(kk * p));
    im2col(s, x.data(), buffer.data());
    cols = buffer.data();
  }
  const Eigen::Map<const RowMat<T>> C(cols, kk, p);
  const Eigen::Map<const RowMat<T>> W(w.data(), s.out_c, kk);
  Eigen::Map<RowMat<T>> Y(y.data(), s.out_c, p);
  const int blocks = (s.out_c + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < blocks; ++bi) {
    const int r0 = bi * kRowBlock, len = std::min(kRowBlock, s.out_c - r0);
    Y.middleRows(r0, len).noalias() = W.middleRows(r0, len) * C;
    if (!b.empty()) {
      for (int r = r0; r < r0 + len; ++r) Y.row(r).array() += b[r];
    }
  }
}

template <typename T>
void conv2d_backward_input(const Conv2dShape& s, std::span<const T> w, std::span<const T> dy, std::span<T> dx) {
  const Eigen::Index kk = static_cast<Eigen::Index>(s.in_c) * s.k * s.k;
  const Eigen::Index p = static_cast<Eigen::Index>(s.out_h()) * s.out_w();
  std::vector<T> buffer;
  T* dcols = dx.data();
  if (!is_pointwise(s)) {
    buffer.resize(static_cast<std::size_t>(kk * p));
    dcols = buffer.data();
  }
  const Eigen::Map<const RowMat<T>> W(w.data(), s.out_c, kk);
  const Eigen::Map<const RowMat<T>> DY(dy.data(), s.out_c, p);
  Eigen::Map<RowMat<T>> DC(dcols, kk, p);
  const int rows = static_cast<int>(kk);
  const int blocks = (rows + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < blocks; ++bi) {
    const int r0 = bi * kRowBlock, len = std::min(kRowBlock, rows - r0);
    DC.middleRows(r0, len).noalias() = W.middleCols(r0, len).transpose() * DY;
  }
  if (!is_pointwise(s)) col2im(s, dcols, dx.data());
}

template <typename T>
void conv2d_backward_weight(const Conv2dShape& s, std::span<const T> x, std::span<const T> dy, std::span<T> dw,
                            std::span<T> db) {
  const Eigen::Index kk = static_cast<Eigen::Index>(s.in_c) * s.k * s.k;
  const Eigen::Index p = static_cast<Eigen::Index>(s.out_h()) * s.out_w();
  std::vector<T> buffer;
  const T* cols = x.data();
  if (!is_pointwise(s)) {
    buffer.resize(static_cast<std::size_t>(kk * p));
    im2col(s, x.data(), buffer.data());
    cols = buffer.data();
  }
  const Eigen::Map<const RowMat<T>> C(cols, kk, p);
  const Eigen::Map<const RowMat<T>> DY(dy.data(), s.out_c, p);
  Eigen::Map<RowMat<T>> DW(dw.data(), s.out_c, kk);
  const int blocks = (s.out_c + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (int bi = 0; bi < blocks; ++bi) {
    const int r0 = bi * kRowBlock, len = std::min(kRowBlock, s.out_c - r0);
    DW.middleRows(r0, len).noalias() += DY.middleRows(r0, len) * C.transpose();
    if (!db.empty()) {
      // Plain loop: a vectorised sum would peel by buffer alignment and change the order.
      for (int r = r0; r < r0 + len; ++r) {
        const T* row = dy.data() + static_cast<std::size_t>(r) * p;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < p; ++i) acc += row[i];
        db[r] += static_cast<T>(acc);
      }
    }
  }
}

template <typename T>
void pixel_shuffle(std::span<const T> x, int c_out, int h, int w, int r, std::span<T> y) {
  const int oh = h * r, ow = w * r;
  const T* xp = x.data();
  T* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < c_out; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      const int yy = oy / r, i = oy % r;
      T* yrow = yp + (static_cast<std::size_t>(c) * oh + oy) * ow;
      for (int j = 0; j < r; ++j) {
        const T* xrow = xp + (static_cast<std::size_t>(c * r * r + i * r + j) * h + yy) * w;
        for (int xx = 0; xx < w; ++xx) yrow[xx * r + j] = xrow[xx];
      }
    }
  }
}

template <typename T>
void pixel_unshuffle(std::span<const T> y, int c_out, int h, int w, int r, std::span<T> x) {
  const int oh = h * r, ow = w * r;
  const T* yp = y.data();
  T* xp = x.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < c_out; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      const int yy = oy / r, i = oy % r;
      const T* yrow = yp + (static_cast<std::size_t>(c) * oh + oy) * ow;
      for (int j = 0; j < r; ++j) {
        T* xrow = xp + (static_cast<std::size_t>(c * r * r + i * r + j) * h + yy) * w;
        for (int xx = 0; xx < w; ++xx) xrow[xx] = yrow[xx * r + j];
      }
    }
  }
}

void skin(const SkinningInputs& in, std::span<double> out) {
  const long long n = static_cast<long long>(in.vertices.size() / 3);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    double acc[3] = {0.0, 0.0, 0.0};
    for (int j = 0; j < in.joints; ++j) {
      const double wij = in.weights[i * in.joints + j];
      if (wij == 0.0) continue;
      const double* a = &in.rot_minus_i[9 * j];
      const double rel[3] = {in.vertices[3 * i] - in.rest_joints[3 * j],
                             in.vertices[3 * i + 1] - in.rest_joints[3 * j + 1],
                             in.vertices[3 * i + 2] - in.rest_joints[3 * j + 2]};
      for (int r = 0; r < 3; ++r) {
        acc[r] += wij * (a[3 * r] * rel[0] + a[3 * r + 1] * rel[1] + a[3 * r + 2] * rel[2] + in.offsets[3 * j + r]);
      }
    }
    for (int r = 0; r < 3; ++r) out[3 * i + r] = in.vertices[3 * i + r] + acc[r];
  }
}

}  // namespace omp

#define RESTPOSE_INSTANTIATE(NS, T)                                                                         \
  template void NS::conv2d_forward<T>(const Conv2dShape&, std::span<const T>, std::span<const T>,          \
                                      std::span<const T>, std::span<T>);                                   \
  template void NS::conv2d_backward_input<T>(const Conv2dShape&, std::span<const T>, std::span<const T>,   \
                                             std::span<T>);                                                \
  template void NS::conv2d_backward_weight<T>(const Conv2dShape&, std::span<const T>, std::span<const T>,  \
                                              std::span<T>, std::span<T>);                                 \
  template void NS::pixel_shuffle<T>(std::span<const T>, int, int, int, int, std::span<T>);                \
  template void NS::pixel_unshuffle<T>(std::span<const T>, int, int, int, int, std::span<T>);

RESTPOSE_INSTANTIATE(ref, float)
RESTPOSE_INSTANTIATE(ref, double)
RESTPOSE_INSTANTIATE(omp, float)
RESTPOSE_INSTANTIATE(omp, double)

#undef RESTPOSE_INSTANTIATE

}  // namespace restpose::kernels
