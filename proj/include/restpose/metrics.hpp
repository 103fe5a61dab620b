// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation metrics. Joint sets are K x 3 (mm) or K x 2 (px) row-major matrices in LSP order.

#pragma once

#include <Eigen/Core>

#include "restpose/bodymodel.hpp"
#include "restpose/image.hpp"

namespace restpose::metrics {

using JointSet3D = body::Points3;
using JointSet2D = body::Points2;

// Mean per-joint Euclidean distance. Throws kDimension on a count mismatch.
double mpjpe(const JointSet3D& pred, const JointSet3D& gt);
double mpjpe_2d(const JointSet2D& pred, const JointSet2D& gt);

struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Similarity transform s R p + t minimising sum ||s R pred_i + t - gt_i||^2, with det R = +1.
// Throws kDegenerate when either set has rank < 2 after centering.
Similarity procrustes(const JointSet3D& pred, const JointSet3D& gt);
JointSet3D apply(const Similarity& sim, const JointSet3D& pts);
JointSet3D procrustes_align(const JointSet3D& pred, const JointSet3D& gt);

// MPJPE after Procrustes alignment.
double reconstruction_error(const JointSet3D& pred, const JointSet3D& gt);

struct SegScores {
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Hard masks (values exactly 0 or 1). F1 is 1 when both masks are empty.
SegScores seg_scores(const Image& pred, const Image& gt);

}  // namespace restpose::metrics
