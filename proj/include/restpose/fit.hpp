// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Optimisation-based fitting of the body model to 14 target joints (a light SMPLify).
//
// Objective:
//   E = sum_j ||project(J14_j) - x_j||^2 + lambda_3d sum_j ||J14_j - X_j||^2
//       + lambda_reg (||beta||^2 + sum_{j>0} ||theta_j||^2)
// The 3D term is present only when 3D targets are given. Minimised over theta, beta and the
// camera scale/translation with Levenberg-Marquardt: each step solves
//   (J^T J + mu diag(J^T J)) delta = -J^T r,
// so mu acts as a per-parameter adaptive step (large mu is scaled gradient descent). Steps are
// accepted only when E decreases.

#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "restpose/bodymodel.hpp"

namespace restpose::fit {

struct FitConfig {
  int max_iters = 200;
  double step_size = 1e-3;  // initial damping mu
  double tol = 1e-12;       // stop once an accepted step lowers E by less than this
  double lambda_3d = 1.0;
  double lambda_reg = 1e-3;
  bool fit_camera = true;

  // Throws kConfig.
  void validate() const;
};

struct FitInit {
  body::BodyParams params;
  body::CameraParams cam;
};

struct FitResult {
  body::BodyPoseParams theta;
  body::BodyShapeParams beta;
  body::CameraParams cam;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int iterations_used = 0;
  std::vector<double> trace;  // objective after every accepted step, starting with the initial value

  body::BodyParams params() const { return {theta, beta}; }
};

// Throws OptimizationError when the objective or its Jacobian becomes non-finite.
FitResult fit_body_to_joints(const body::BodyTemplate& tmpl, const body::Points2& targets_2d,
                             const std::optional<body::Points3>& targets_3d, const FitInit& init,
                             const FitConfig& config = {});

// Objective value at a given parameter set (same terms as the fitter).
double fit_objective(const body::BodyTemplate& tmpl, const body::Points2& targets_2d,
                     const std::optional<body::Points3>& targets_3d, const body::BodyParams& params,
                     const body::CameraParams& cam, const FitConfig& config);

nlohmann::json to_json(const FitResult& r);
FitResult fit_result_from_json(const nlohmann::json& j);

nlohmann::json camera_to_json(const body::CameraParams& cam);
body::CameraParams camera_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const body::BodyParams& p);
body::BodyParams params_from_json(const nlohmann::json& j);

}  // namespace restpose::fit
