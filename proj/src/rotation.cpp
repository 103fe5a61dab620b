// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/rotation.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace restpose::body {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d k;
  k << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return k;
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& v) {
  const double angle = v.norm();
  const Eigen::Matrix3d k = skew(v);
  if (angle < kSmallAngle) {
    return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

std::array<Eigen::Matrix3d, 3> axis_angle_jacobian(const Eigen::Vector3d& v) {
  std::array<Eigen::Matrix3d, 3> d;
  const double sq = v.squaredNorm();
  if (std::sqrt(sq) < kSmallAngle) {
    const Eigen::Matrix3d k = skew(v);
    for (int i = 0; i < 3; ++i) {
      const Eigen::Matrix3d e = skew(Eigen::Vector3d::Unit(i));
      d[i] = e + 0.5 * (e * k + k * e);
    }
    return d;
  }
  // dR/dv_i = (v_i [v]x + [v x (I - R) e_i]x) R / |v|^2
  const Eigen::Matrix3d R = axis_angle_to_matrix(v);
  const Eigen::Matrix3d k = skew(v);
  const Eigen::Matrix3d i_minus_r = Eigen::Matrix3d::Identity() - R;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d c = v.cross(i_minus_r.col(i));
    d[i] = (v[i] * k + skew(c)) * R / sq;
  }
  return d;
}

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

}  // namespace restpose::body
