// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/metrics.hpp"

#include <string>

#include <Eigen/Dense>

#include "restpose/errors.hpp"

namespace restpose::metrics {

double mpjpe(const JointSet3D& pred, const JointSet3D& gt) {
  require(pred.rows() == gt.rows(), ErrorKind::kDimension,
          "joint count mismatch: " + std::to_string(pred.rows()) + " vs " + std::to_string(gt.rows()));
  require(pred.rows() > 0, ErrorKind::kEmptyInput, "mpjpe of an empty joint set");
  return (pred - gt).rowwise().norm().mean();
}

double mpjpe_2d(const JointSet2D& pred, const JointSet2D& gt) {
  require(pred.rows() == gt.rows(), ErrorKind::kDimension,
          "joint count mismatch: " + std::to_string(pred.rows()) + " vs " + std::to_string(gt.rows()));
  require(pred.rows() > 0, ErrorKind::kEmptyInput, "mpjpe of an empty joint set");
  return (pred - gt).rowwise().norm().mean();
}

Similarity procrustes(const JointSet3D& pred, const JointSet3D& gt) {
  require(pred.rows() == gt.rows(), ErrorKind::kDimension, "procrustes: joint count mismatch");
  require(pred.rows() >= 3, ErrorKind::kDegenerate, "procrustes: need at least 3 points");
  const Eigen::RowVector3d mu_p = pred.colwise().mean();
  const Eigen::RowVector3d mu_g = gt.colwise().mean();
  const JointSet3D p = pred.rowwise() - mu_p;
  const JointSet3D g = gt.rowwise() - mu_g;

  // Rank check: both centred sets must span at least a plane.
  const double scale_ref = std::max({1.0, p.cwiseAbs().maxCoeff(), g.cwiseAbs().maxCoeff()});
  for (const JointSet3D* m : {&p, &g}) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(*m);
    const auto sv = svd.singularValues();
    require(sv.size() >= 2 && sv[1] > 1e-9 * scale_ref, ErrorKind::kDegenerate,
            "procrustes: point set is collinear or coincident");
  }

  const Eigen::Matrix3d cov = g.transpose() * p;  // sum g_i p_i^T
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Similarity sim;
  sim.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  const double var_p = p.squaredNorm();
  sim.scale = (svd.singularValues().asDiagonal() * d).trace() / var_p;
  sim.translation = mu_g.transpose() - sim.scale * sim.rotation * mu_p.transpose();
  return sim;
}

JointSet3D apply(const Similarity& sim, const JointSet3D& pts) {
  JointSet3D out = (sim.scale * (pts * sim.rotation.transpose()));
  out.rowwise() += sim.translation.transpose();
  return out;
}

JointSet3D procrustes_align(const JointSet3D& pred, const JointSet3D& gt) { return apply(procrustes(pred, gt), pred); }

double reconstruction_error(const JointSet3D& pred, const JointSet3D& gt) {
  return mpjpe(procrustes_align(pred, gt), gt);
}

SegScores seg_scores(const Image& pred, const Image& gt) {
  require(pred.same_shape(gt), ErrorKind::kDimension, "seg_scores: mask shapes differ");
  require(!gt.empty(), ErrorKind::kEmptyInput, "seg_scores: empty masks");
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const float a = pred.data[i], b = gt.data[i];
    require((a == 0.f || a == 1.f) && (b == 0.f || b == 1.f), ErrorKind::kInvalidParameter,
            "seg_scores: masks must be binary");
    if (a == 1.f && b == 1.f) ++tp;
    else if (a == 0.f && b == 0.f) ++tn;
    else if (a == 1.f) ++fp;
    else ++fn;
  }
  SegScores s;
  s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(gt.size());
  const long long denom = 2 * tp + fp + fn;
  s.f1 = denom == 0 ? 1.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
  return s;
}

}  // namespace restpose::metrics
