// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "restpose/errors.hpp"

namespace restpose::raster {
namespace {

using Vec2 = Eigen::Vector2d;

double cross2(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Gradients of s * cross(e, w) / |e| with e = v - u, w = p - u, with respect to u and v.
void line_distance_grad(const Vec2& e, const Vec2& w, double s, Vec2* du, Vec2* dv) {
  const double len = e.norm();
  const double c = cross2(e, w);
  const Vec2 de = s * (Vec2(w.y(), -w.x()) / len - c * e / (len * len * len));
  const Vec2 dw = s * Vec2(-e.y(), e.x()) / len;
  *du = -dw - de;
  *dv = de;
}

// Pixel rectangle a face can influence.
struct Box {
  int x0, x1, y0, y1;  // inclusive; empty when x1 < x0 or y1 < y0
};

Box face_box(const body::Points2& v, const body::Faces& f, Eigen::Index i, int h, int w, double margin) {
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x, hi_x = -lo_x, hi_y = -lo_x;
  for (int k = 0; k < 3; ++k) {
    const auto idx = f(i, k);
    lo_x = std::min(lo_x, v(idx, 0));
    hi_x = std::max(hi_x, v(idx, 0));
    lo_y = std::min(lo_y, v(idx, 1));
    hi_y = std::max(hi_y, v(idx, 1));
  }
  // Pixel x has its centre at x + 0.5.
  auto lo = [](double a) { return static_cast<int>(std::ceil(a - 0.5)); };
  auto hi = [](double a) { return static_cast<int>(std::floor(a - 0.5)); };
  if (!std::isfinite(lo_x + hi_x + lo_y + hi_y)) return {0, -1, 0, -1};
  Box b{lo(lo_x - margin), hi(hi_x + margin), lo(lo_y - margin), hi(hi_y + margin)};
  b.x0 = std::max(b.x0, 0);
  b.y0 = std::max(b.y0, 0);
  b.x1 = std::min(b.x1, w - 1);
  b.y1 = std::min(b.y1, h - 1);
  return b;
}

double cull_margin(double sharpness) { return 40.0 / sharpness; }

void check_inputs(const body::Points2& verts, const body::Faces& faces, int height, int width, double sharpness) {
  require(height > 0 && width > 0, ErrorKind::kInvalidParameter, "rasterize: frame must be non-empty");
  require(sharpness > 0.0 && std::isfinite(sharpness), ErrorKind::kInvalidParameter,
          "rasterize: sharpness must be positive");
  for (Eigen::Index i = 0; i < faces.rows(); ++i) {
    for (int k = 0; k < 3; ++k) {
      require(faces(i, k) >= 0 && faces(i, k) < verts.rows(), ErrorKind::kDimension,
              "rasterize: face index out of range");
    }
  }
}

Vec2 corner(const body::Points2& v, const body::Faces& f, Eigen::Index i, int k) {
  return {v(f(i, k), 0), v(f(i, k), 1)};
}

void finish(RasterResult& r, const std::vector<double>& best, double sharpness) {
  for (std::size_t p = 0; p < best.size(); ++p) {
    r.soft.data[p] = r.winning_face[p] >= 0 ? sigmoid(sharpness * best[p]) : 0.0;
  }
}

}  // namespace

bool signed_distance(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c, double* sd,
                     Eigen::Matrix<double, 3, 2>* grad) {
  const double area2 = cross2(b - a, c - a);
  if (!(std::abs(area2) > 1e-12)) return false;
  const double o = area2 > 0.0 ? 1.0 : -1.0;
  const Vec2* pts[3] = {&a, &b, &c};

  double line[3];
  bool inside = true;
  for (int k = 0; k < 3; ++k) {
    const Vec2& u = *pts[k];
    const Vec2& v = *pts[(k + 1) % 3];
    const Vec2 e = v - u;
    line[k] = o * cross2(e, p - u) / e.norm();
    inside = inside && line[k] >= 0.0;
  }

  if (inside) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (line[k] < line[best]) best = k;
    }
    *sd = line[best];
    if (grad != nullptr) {
      grad->setZero();
      const Vec2& u = *pts[best];
      const Vec2& v = *pts[(best + 1) % 3];
      Vec2 du, dv;
      line_distance_grad(v - u, p - u, o, &du, &dv);
      grad->row(best) = du.transpose();
      grad->row((best + 1) % 3) = dv.transpose();
    }
    return true;
  }

  // Outside: distance to the nearest edge segment.
  double best_dist = std::numeric_limits<double>::infinity();
  int best = 0;
  double best_t = 0.0;
  for (int k = 0; k < 3; ++k) {
    const Vec2& u = *pts[k];
    const Vec2& v = *pts[(k + 1) % 3];
    const Vec2 e = v - u;
    const double t = std::clamp((p - u).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const double dist = (p - (u + t * e)).norm();
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
      best_t = t;
    }
  }
  *sd = -best_dist;
  if (grad != nullptr) {
    grad->setZero();
    const int k0 = best, k1 = (best + 1) % 3;
    const Vec2& u = *pts[k0];
    const Vec2& v = *pts[k1];
    if (best_dist > 0.0) {
      if (best_t <= 0.0) {
        grad->row(k0) = ((p - u) / best_dist).transpose();  // d(-|p-u|)/du
      } else if (best_t >= 1.0) {
        grad->row(k1) = ((p - v) / best_dist).transpose();
      } else {
        // -|cross(e, w)| / |e|
        const Vec2 e = v - u;
        const double s = cross2(e, p - u) >= 0.0 ? -1.0 : 1.0;
        Vec2 du, dv;
        line_distance_grad(e, p - u, s, &du, &dv);
        grad->row(k0) = du.transpose();
        grad->row(k1) = dv.transpose();
      }
    }
  }
  return true;
}

namespace ref {

RasterResult rasterize(const body::Points2& verts, const body::Faces& faces, int height, int width,
                       double sharpness) {
  check_inputs(verts, faces, height, width, sharpness);
  RasterResult r;
  r.soft = ImageD(1, height, width);
  r.winning_face.assign(static_cast<std::size_t>(height) * width, -1);
  std::vector<double> best(r.winning_face.size(), -std::numeric_limits<double>::infinity());
  const double margin = cull_margin(sharpness);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Box box = face_box(verts, faces, f, height, width, margin);
    const Vec2 a = corner(verts, faces, f, 0), b = corner(verts, faces, f, 1), c = corner(verts, faces, f, 2);
    double probe;
    if (!signed_distance(a, a, b, c, &probe)) continue;
    for (int y = box.y0; y <= box.y1; ++y) {
      for (int x = box.x0; x <= box.x1; ++x) {
        double sd = 0.0;
        signed_distance(Vec2(x + 0.5, y + 0.5), a, b, c, &sd);
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        if (sd > best[p]) {
          best[p] = sd;
          r.winning_face[p] = static_cast<int>(f);
        }
      }
    }
  }
  finish(r, best, sharpness);
  return r;
}

}  // namespace ref

namespace omp {

RasterResult rasterize(const body::Points2& verts, const body::Faces& faces, int height, int width,
                       double sharpness) {
  check_inputs(verts, faces, height, width, sharpness);
  RasterResult r;
  r.soft = ImageD(1, height, width);
  r.winning_face.assign(static_cast<std::size_t>(height) * width, -1);
  std::vector<double> best(r.winning_face.size(), -std::numeric_limits<double>::infinity());
  const double margin = cull_margin(sharpness);

  // Bucket faces by pixel row, in face order, so every pixel sees its candidates in the same
  // order as the serial loop.
  std::vector<Box> boxes(static_cast<std::size_t>(faces.rows()));
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(height));
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    boxes[f] = face_box(verts, faces, f, height, width, margin);
    double probe;
    const Vec2 a = corner(verts, faces, f, 0);
    if (!signed_distance(a, a, corner(verts, faces, f, 1), corner(verts, faces, f, 2), &probe)) continue;
    for (int y = boxes[f].y0; y <= boxes[f].y1; ++y) rows[y].push_back(static_cast<int>(f));
  }
#pragma omp parallel for schedule(dynamic, 4)
  for (int y = 0; y < height; ++y) {
    for (int f : rows[y]) {
      const Box& box = boxes[f];
      const Vec2 a = corner(verts, faces, f, 0), b = corner(verts, faces, f, 1), c = corner(verts, faces, f, 2);
      for (int x = box.x0; x <= box.x1; ++x) {
        double sd = 0.0;
        signed_distance(Vec2(x + 0.5, y + 0.5), a, b, c, &sd);
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        if (sd > best[p]) {
          best[p] = sd;
          r.winning_face[p] = f;
        }
      }
    }
  }
  finish(r, best, sharpness);
  return r;
}

}  // namespace omp

body::Points2 rasterize_backward(const body::Points2& verts, const body::Faces& faces, const RasterResult& result,
                                 double sharpness, const ImageD& d_soft) {
  require(d_soft.same_shape(result.soft), ErrorKind::kDimension, "rasterize_backward: gradient shape mismatch");
  body::Points2 g = body::Points2::Zero(verts.rows(), 2);
  const int width = result.soft.width;
  for (std::size_t p = 0; p < result.winning_face.size(); ++p) {
    const int f = result.winning_face[p];
    if (f < 0 || d_soft.data[p] == 0.0) continue;
    const double s = result.soft.data[p];
    const double dsd = d_soft.data[p] * sharpness * s * (1.0 - s);
    if (dsd == 0.0) continue;
    const int y = static_cast<int>(p / width), x = static_cast<int>(p % width);
    double sd;
    Eigen::Matrix<double, 3, 2> grad;
    if (!signed_distance(Vec2(x + 0.5, y + 0.5), corner(verts, faces, f, 0), corner(verts, faces, f, 1),
                         corner(verts, faces, f, 2), &sd, &grad)) {
      continue;
    }
    for (int k = 0; k < 3; ++k) g.row(faces(f, k)) += dsd * grad.row(k);
  }
  return g;
}

RasterResult rasterize_silhouette(const body::Mesh& mesh, const body::Faces& faces, const body::CameraParams& cam,
                                  int size, double sharpness) {
  return omp::rasterize(body::project(mesh.vertices, cam), faces, size, size, sharpness);
}

ImageD hard_mask(const ImageD& soft, double threshold) {
  ImageD m(soft.channels, soft.height, soft.width);
  for (std::size_t i = 0; i < soft.size(); ++i) m.data[i] = soft.data[i] > threshold ? 1.0 : 0.0;
  return m;
}

template <typename T>
BasicImage<T> apply_mask(const BasicImage<T>& mask, const BasicImage<T>& image) {
  require(mask.channels == 1 && mask.height == image.height && mask.width == image.width, ErrorKind::kDimension,
          "apply_mask: mask and image frames differ");
  BasicImage<T> out = image;
  for (int c = 0; c < image.channels; ++c) {
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < mask.size(); ++i) dst[i] *= mask.data[i];
  }
  return out;
}

template <typename T>
void apply_mask_backward(const BasicImage<T>& mask, const BasicImage<T>& image, const BasicImage<T>& d_out,
                         BasicImage<T>* d_mask, BasicImage<T>* d_image) {
  require(d_out.same_shape(image), ErrorKind::kDimension, "apply_mask_backward: gradient shape mismatch");
  require(mask.channels == 1 && mask.height == image.height && mask.width == image.width, ErrorKind::kDimension,
          "apply_mask_backward: mask and image frames differ");
  const std::size_t n = mask.size();
  if (d_mask != nullptr) {
    *d_mask = BasicImage<T>(1, mask.height, mask.width);
    for (int c = 0; c < image.channels; ++c) {
      const T* g = d_out.data.data() + c * n;
      const T* x = image.data.data() + c * n;
      for (std::size_t i = 0; i < n; ++i) d_mask->data[i] += g[i] * x[i];
    }
  }
  if (d_image != nullptr) {
    *d_image = d_out;
    for (int c = 0; c < image.channels; ++c) {
      T* g = d_image->data.data() + c * n;
      for (std::size_t i = 0; i < n; ++i) g[i] *= mask.data[i];
    }
  }
}

template Image apply_mask<float>(const Image&, const Image&);
template ImageD apply_mask<double>(const ImageD&, const ImageD&);
template void apply_mask_backward<float>(const Image&, const Image&, const Image&, Image*, Image*);
template void apply_mask_backward<double>(const ImageD&, const ImageD&, const ImageD&, ImageD*, ImageD*);

}  // namespace restpose::raster
