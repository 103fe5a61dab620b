// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>

#include <Eigen/Core>

namespace restpose::body {

// Below this norm the axis-angle map switches to its second-order series.
inline constexpr double kSmallAngle = 1e-8;

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// Rodrigues' formula.
Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& v);

// Partial derivatives dR/dv_i, i = 0..2.
std::array<Eigen::Matrix3d, 3> axis_angle_jacobian(const Eigen::Vector3d& v);

Eigen::Vector3d matrix_to_axis_angle(const Eigen::Matrix3d& R);

}  // namespace restpose::body
