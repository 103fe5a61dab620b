// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/losses.hpp"

#include <cmath>
#include <string>

#include "restpose/errors.hpp"

namespace restpose::losses {
namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

template <typename M>
double mean_sq_joint(const M& pred, const M& gt, M* d_pred) {
  require(pred.rows() == gt.rows() && pred.cols() == gt.cols(), ErrorKind::kDimension,
          "joint loss: shape mismatch (" + std::to_string(pred.rows()) + " vs " + std::to_string(gt.rows()) + ")");
  require(pred.rows() > 0, ErrorKind::kEmptyInput, "joint loss: no joints");
  const double k = static_cast<double>(pred.rows());
  const M diff = pred - gt;
  if (d_pred != nullptr) *d_pred = (2.0 / k) * diff;
  return diff.squaredNorm() / k;
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {w_2d, w_3d, w_smpl, w_mask, w_recon}) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::kConfig, "loss weights must be finite and non-negative");
  }
}

double loss_2d(const body::Points2& pred, const body::Points2& gt, body::Points2* d_pred) {
  return mean_sq_joint(pred, gt, d_pred);
}

double loss_3d(const body::Points3& pred, const body::Points3& gt, body::Points3* d_pred) {
  return mean_sq_joint(pred, gt, d_pred);
}

double loss_smpl(const body::BodyParams& pred, const body::Points3& pred_vertices, const body::BodyParams& opt,
                 const body::Points3& opt_vertices, SmplGrad* grad) {
  require(pred_vertices.rows() == opt_vertices.rows(), ErrorKind::kDimension, "loss_smpl: vertex count mismatch");
  require(pred_vertices.rows() > 0, ErrorKind::kEmptyInput, "loss_smpl: empty mesh");
  const double count = static_cast<double>(pred_vertices.size());
  const body::Points3 diff = pred_vertices - opt_vertices;
  const double l1 = diff.cwiseAbs().sum() / count;

  constexpr double kParams = body::kNumPoseParams + body::kNumBetas;
  double l2 = 0.0;
  for (int i = 0; i < body::kNumPoseParams; ++i) {
    const double d = pred.pose.theta[i] - opt.pose.theta[i];
    l2 += d * d;
  }
  for (int k = 0; k < body::kNumBetas; ++k) {
    const double d = pred.shape.beta[k] - opt.shape.beta[k];
    l2 += d * d;
  }
  l2 /= kParams;

  if (grad != nullptr) {
    grad->d_vertices = diff.unaryExpr([&](double v) { return sign(v) / count; });
    for (int i = 0; i < body::kNumPoseParams; ++i)
      grad->d_params.theta[i] = 2.0 * (pred.pose.theta[i] - opt.pose.theta[i]) / kParams;
    for (int k = 0; k < body::kNumBetas; ++k)
      grad->d_params.beta[k] = 2.0 * (pred.shape.beta[k] - opt.shape.beta[k]) / kParams;
  }
  return l1 + l2;
}

RegressorLoss loss_regressor_total(const std::array<const StagePrediction*, 2>& stages, const StageTargets& targets,
                                   const LossWeights& w, std::array<StageGrad, 2>* grads) {
  w.validate();
  require(targets.fit.has_value() == targets.fit_vertices.has_value(), ErrorKind::kInvalidParameter,
          "loss_regressor_total: fit parameters and fit mesh must be given together");
  RegressorLoss out;
  for (int i = 0; i < 2; ++i) {
    const StagePrediction& s = *stages[i];
    StageGrad* g = grads ? &(*grads)[i] : nullptr;
    out.l2d[i] = loss_2d(s.joints14_2d, targets.joints2d, g ? &g->d_joints2d : nullptr);
    out.l3d[i] = loss_3d(s.joints14_3d, targets.joints3d, g ? &g->d_joints3d : nullptr);
    if (g) {
      g->d_joints2d *= w.w_2d;
      g->d_joints3d *= w.w_3d;
      g->d_vertices = body::Points3::Zero(s.mesh.vertices.rows(), 3);
      g->d_params = {};
    }
    if (targets.fit) {
      SmplGrad sg;
      out.lsmpl[i] = loss_smpl(s.params, s.mesh.vertices, *targets.fit, *targets.fit_vertices, g ? &sg : nullptr);
      if (g) {
        g->d_vertices = w.w_smpl * sg.d_vertices;
        for (int k = 0; k < body::kNumPoseParams; ++k) g->d_params.theta[k] = w.w_smpl * sg.d_params.theta[k];
        for (int k = 0; k < body::kNumBetas; ++k) g->d_params.beta[k] = w.w_smpl * sg.d_params.beta[k];
      }
    }
    out.total += w.w_2d * out.l2d[i] + w.w_3d * out.l3d[i] + w.w_smpl * out.lsmpl[i];
  }
  return out;
}

template <typename T>
double loss_mask(const BasicImage<T>& pred, const BasicImage<T>& gt, BasicImage<T>* d_pred) {
  require(pred.same_shape(gt), ErrorKind::kDimension, "loss_mask: shape mismatch");
  require(!gt.empty(), ErrorKind::kEmptyInput, "loss_mask: empty masks");
  const double n = static_cast<double>(gt.size());
  double acc = 0.0;
  if (d_pred != nullptr) *d_pred = BasicImage<T>(pred.channels, pred.height, pred.width);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    acc += std::abs(d);
    if (d_pred != nullptr) d_pred->data[i] = static_cast<T>(sign(d) / n);
  }
  return acc / n;
}

template <typename T>
DecoderLoss loss_decoder(const BasicImage<T>& recon_depth, const BasicImage<T>& recon_ir,
                         const BasicImage<T>& target_depth, const BasicImage<T>& target_ir,
                         const BasicImage<T>& mask_pred, const BasicImage<T>& mask_gt, const LossWeights& w,
                         BasicImage<T>* d_depth, BasicImage<T>* d_ir, BasicImage<T>* d_mask) {
  for (const BasicImage<T>* im : {&recon_depth, &recon_ir, &target_depth, &target_ir, &mask_pred}) {
    require(im->same_shape(mask_gt), ErrorKind::kDimension, "loss_decoder: image shapes differ");
  }
  require(mask_gt.channels == 1, ErrorKind::kDimension, "loss_decoder: expected single-channel images");
  DecoderLoss out;
  out.mask = loss_mask(mask_pred, mask_gt, d_mask);
  if (d_mask != nullptr) {
    for (auto& v : d_mask->data) v = static_cast<T>(w.w_mask * v);
  }
  std::size_t support = 0;
  for (T m : mask_gt.data) support += (m == T(1)) ? 1 : 0;

  auto masked_l1 = [&](const BasicImage<T>& recon, const BasicImage<T>& target, BasicImage<T>* d) {
    if (d != nullptr) *d = BasicImage<T>(recon.channels, recon.height, recon.width);
    if (support == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(support);
    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
      if (mask_gt.data[i] != T(1)) continue;
      const double diff = static_cast<double>(recon.data[i]) - static_cast<double>(target.data[i]);
      acc += std::abs(diff);
      if (d != nullptr) d->data[i] = static_cast<T>(w.w_recon * sign(diff) * inv);
    }
    return acc * inv;
  };
  out.recon_depth = masked_l1(recon_depth, target_depth, d_depth);
  out.recon_ir = masked_l1(recon_ir, target_ir, d_ir);
  out.total = w.w_mask * out.mask + w.w_recon * (out.recon_depth + out.recon_ir);
  return out;
}

template double loss_mask<float>(const Image&, const Image&, Image*);
template double loss_mask<double>(const ImageD&, const ImageD&, ImageD*);
template DecoderLoss loss_decoder<float>(const Image&, const Image&, const Image&, const Image&, const Image&,
                                         const Image&, const LossWeights&, Image*, Image*, Image*);
template DecoderLoss loss_decoder<double>(const ImageD&, const ImageD&, const ImageD&, const ImageD&, const ImageD&,
                                          const ImageD&, const LossWeights&, ImageD*, ImageD*, ImageD*);

}  // namespace restpose::losses
