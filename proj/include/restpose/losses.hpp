// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Training objectives with analytic gradients. Reductions are means: squared-L2 terms average
// over joints (2D/3D) or parameters, L1 terms over elements. The L1 subgradient at 0 is 0.
// Gradient outputs are optional; when given they are overwritten.

#pragma once

#include <array>
#include <optional>

#include "restpose/bodymodel.hpp"
#include "restpose/image.hpp"

namespace restpose::losses {

struct LossWeights {
  double w_2d = 1.0;
  double w_3d = 1.0;
  double w_smpl = 1.0;
  double w_mask = 1.0;
  double w_recon = 1.0;

  // Throws kConfig on a negative weight.
  void validate() const;
};

enum class Stage { kCoarse = 0, kFine = 1 };

struct StagePrediction {
  body::BodyParams params;
  body::CameraParams cam;
  body::Mesh mesh;
  body::Points3 joints14_3d;
  body::Points2 joints14_2d;
  Stage stage = Stage::kCoarse;
};

// Mean over joints of the squared Euclidean distance.
double loss_2d(const body::Points2& pred, const body::Points2& gt, body::Points2* d_pred = nullptr);
double loss_3d(const body::Points3& pred, const body::Points3& gt, body::Points3* d_pred = nullptr);

struct SmplGrad {
  body::Points3 d_vertices;
  body::ParamGradient d_params;
};

// mean |M - M_opt| over vertex coordinates + mean squared difference over the 82 (theta, beta) values.
double loss_smpl(const body::BodyParams& pred, const body::Points3& pred_vertices, const body::BodyParams& opt,
                 const body::Points3& opt_vertices, SmplGrad* grad = nullptr);

struct StageTargets {
  body::Points2 joints2d;
  body::Points3 joints3d;
  // Fitted parameters and their mesh; absent before the first fitter pass (term skipped).
  std::optional<body::BodyParams> fit;
  std::optional<body::Points3> fit_vertices;
};

struct StageGrad {
  body::Points2 d_joints2d;
  body::Points3 d_joints3d;
  body::Points3 d_vertices;
  body::ParamGradient d_params;
};

struct RegressorLoss {
  double total = 0.0;
  std::array<double, 2> l2d{};
  std::array<double, 2> l3d{};
  std::array<double, 2> lsmpl{};
};

// Sum over both stages of w_2d L2D + w_3d L3D + w_smpl Lsmpl.
RegressorLoss loss_regressor_total(const std::array<const StagePrediction*, 2>& stages, const StageTargets& targets,
                                   const LossWeights& w, std::array<StageGrad, 2>* grads = nullptr);

// Mean absolute per-pixel difference.
template <typename T>
double loss_mask(const BasicImage<T>& pred, const BasicImage<T>& gt, BasicImage<T>* d_pred = nullptr);

struct DecoderLoss {
  double total = 0.0;
  double mask = 0.0;
  double recon_depth = 0.0;
  double recon_ir = 0.0;
};

// w_mask * loss_mask(mask_pred, mask_gt) + w_recon * sum over {D, IR} of the mean |recon - target|
// over pixels where mask_gt is 1 (0 when the mask is empty). All images are 1 x H x W.
template <typename T>
DecoderLoss loss_decoder(const BasicImage<T>& recon_depth, const BasicImage<T>& recon_ir,
                         const BasicImage<T>& target_depth, const BasicImage<T>& target_ir,
                         const BasicImage<T>& mask_pred, const BasicImage<T>& mask_gt, const LossWeights& w = {},
                         BasicImage<T>* d_depth = nullptr, BasicImage<T>* d_ir = nullptr,
                         BasicImage<T>* d_mask = nullptr);

}  // namespace restpose::losses
