// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/fit.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "restpose/errors.hpp"

namespace restpose::fit {

using body::kNumBetas;
using body::kNumJoints14;
using body::kNumPoseParams;

namespace {

constexpr int kNumCam = 3;  // s, tx, ty
constexpr int kNumUnknowns = kNumPoseParams + kNumBetas + kNumCam;

using Vec = Eigen::Matrix<double, kNumUnknowns, 1>;

struct Problem {
  const body::BodyTemplate& tmpl;
  const body::Points2& x2;
  const std::optional<body::Points3>& x3;
  const body::CameraParams& cam0;  // rotation is held fixed
  const FitConfig& cfg;

  int residual_count() const {
    return 2 * kNumJoints14 + (x3 ? 3 * kNumJoints14 : 0) + kNumBetas + (kNumPoseParams - 3);
  }

  Vec pack(const body::BodyParams& p, const body::CameraParams& c) const {
    Vec v;
    for (int i = 0; i < kNumPoseParams; ++i) v[i] = p.pose.theta[i];
    for (int k = 0; k < kNumBetas; ++k) v[kNumPoseParams + k] = p.shape.beta[k];
    v[kNumPoseParams + kNumBetas] = c.s;
    v[kNumPoseParams + kNumBetas + 1] = c.t.x();
    v[kNumPoseParams + kNumBetas + 2] = c.t.y();
    return v;
  }

  void unpack(const Vec& v, body::BodyParams& p, body::CameraParams& c) const {
    for (int i = 0; i < kNumPoseParams; ++i) p.pose.theta[i] = v[i];
    for (int k = 0; k < kNumBetas; ++k) p.shape.beta[k] = v[kNumPoseParams + k];
    c = cam0;
    c.s = v[kNumPoseParams + kNumBetas];
    c.t = {v[kNumPoseParams + kNumBetas + 1], v[kNumPoseParams + kNumBetas + 2]};
  }

  // Residuals r with E = ||r||^2; optionally the Jacobian dr/dv.
  Eigen::VectorXd residuals(const Vec& v, Eigen::MatrixXd* jac) const {
    body::BodyParams p;
    body::CameraParams c;
    unpack(v, p, c);
    body::ForwardCache cache;
    const body::Mesh mesh = body::forward(tmpl, p.pose, p.shape, jac ? &cache : nullptr);
    const body::Points3 j3 = body::regress_joints14(tmpl, mesh);
    const body::Points2 j2 = body::project(j3, c);

    Eigen::VectorXd r(residual_count());
    int row = 0;
    for (int j = 0; j < kNumJoints14; ++j)
      for (int a = 0; a < 2; ++a) r[row++] = j2(j, a) - x2(j, a);
    const double w3 = std::sqrt(cfg.lambda_3d);
    if (x3) {
      for (int j = 0; j < kNumJoints14; ++j)
        for (int a = 0; a < 3; ++a) r[row++] = w3 * (j3(j, a) - (*x3)(j, a));
    }
    const double wr = std::sqrt(cfg.lambda_reg);
    for (int k = 0; k < kNumBetas; ++k) r[row++] = wr * p.shape.beta[k];
    for (int i = 3; i < kNumPoseParams; ++i) r[row++] = wr * p.pose.theta[i];

    if (jac != nullptr) {
      // d joints14 / d(theta, beta), one reverse pass per joint coordinate.
      Eigen::Matrix<double, 3 * kNumJoints14, kNumPoseParams + kNumBetas> dj;
      body::Points3 seed = body::Points3::Zero(tmpl.vertex_count(), 3);
      for (int j = 0; j < kNumJoints14; ++j) {
        for (int a = 0; a < 3; ++a) {
          seed.col(a) = tmpl.j14.row(j).transpose();
          const body::ParamGradient g = body::backward(tmpl, p.pose, cache, seed);
          seed.col(a).setZero();
          for (int i = 0; i < kNumPoseParams; ++i) dj(3 * j + a, i) = g.theta[i];
          for (int k = 0; k < kNumBetas; ++k) dj(3 * j + a, kNumPoseParams + k) = g.beta[k];
        }
      }
      jac->setZero(residual_count(), kNumUnknowns);
      row = 0;
      for (int j = 0; j < kNumJoints14; ++j) {
        const Eigen::Vector3d q = c.R * j3.row(j).transpose();
        for (int a = 0; a < 2; ++a, ++row) {
          // x_a = s (R X)_a + t_a
          for (int b = 0; b < 3; ++b)
            jac->row(row).head(kNumPoseParams + kNumBetas) += c.s * c.R(a, b) * dj.row(3 * j + b);
          if (cfg.fit_camera) {
            (*jac)(row, kNumPoseParams + kNumBetas) = q[a];
            (*jac)(row, kNumPoseParams + kNumBetas + 1 + a) = 1.0;
          }
        }
      }
      if (x3) {
        for (int j = 0; j < kNumJoints14; ++j)
          for (int a = 0; a < 3; ++a, ++row) jac->row(row).head(kNumPoseParams + kNumBetas) = w3 * dj.row(3 * j + a);
      }
      for (int k = 0; k < kNumBetas; ++k, ++row) (*jac)(row, kNumPoseParams + k) = wr;
      for (int i = 3; i < kNumPoseParams; ++i, ++row) (*jac)(row, i) = wr;
    }
    return r;
  }
};

}  // namespace

void FitConfig::validate() const {
  require(max_iters >= 1, ErrorKind::kConfig, "fit: max_iters must be >= 1");
  require(step_size > 0.0 && std::isfinite(step_size), ErrorKind::kConfig, "fit: step_size must be positive");
  require(tol >= 0.0, ErrorKind::kConfig, "fit: tol must be non-negative");
  require(lambda_3d >= 0.0 && lambda_reg >= 0.0, ErrorKind::kConfig, "fit: weights must be non-negative");
}

double fit_objective(const body::BodyTemplate& tmpl, const body::Points2& targets_2d,
                     const std::optional<body::Points3>& targets_3d, const body::BodyParams& params,
                     const body::CameraParams& cam, const FitConfig& config) {
  const Problem prob{tmpl, targets_2d, targets_3d, cam, config};
  return prob.residuals(prob.pack(params, cam), nullptr).squaredNorm();
}

FitResult fit_body_to_joints(const body::BodyTemplate& tmpl, const body::Points2& targets_2d,
                             const std::optional<body::Points3>& targets_3d, const FitInit& init,
                             const FitConfig& config) {
  config.validate();
  init.cam.validate();
  require(targets_2d.rows() == kNumJoints14, ErrorKind::kDimension, "fit: expected 14 2D targets");
  require(!targets_3d || targets_3d->rows() == kNumJoints14, ErrorKind::kDimension, "fit: expected 14 3D targets");
  require(targets_2d.allFinite() && (!targets_3d || targets_3d->allFinite()), ErrorKind::kInvalidParameter,
          "fit: targets must be finite");

  const Problem prob{tmpl, targets_2d, targets_3d, init.cam, config};
  Vec v = prob.pack(init.params, init.cam);
  Eigen::MatrixXd jac;
  Eigen::VectorXd r = prob.residuals(v, &jac);
  double e = r.squaredNorm();
  if (!std::isfinite(e)) throw OptimizationError(0, "fit: initial objective is not finite");

  FitResult out;
  out.initial_objective = e;
  out.trace.push_back(e);
  double mu = config.step_size;
  int it = 0;
  while (it < config.max_iters && e > 0.0) {
    ++it;
    if (!jac.allFinite()) throw OptimizationError(it, "fit: Jacobian is not finite");
    const Eigen::MatrixXd a = jac.transpose() * jac;
    const Vec g = jac.transpose() * r;
    if (g.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + e)) break;  // stationary
    const Vec diag = a.diagonal().cwiseMax(1e-9);
    Eigen::MatrixXd damped = a;
    damped.diagonal() += mu * diag;
    const Vec delta = damped.ldlt().solve(-g);
    if (!delta.allFinite()) throw OptimizationError(it, "fit: step is not finite");

    const Vec cand = v + delta;
    double e_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd r_new;
    if (cand[kNumPoseParams + kNumBetas] > 0.0) {
      r_new = prob.residuals(cand, nullptr);
      e_new = r_new.squaredNorm();
    }
    if (std::isfinite(e_new) && e_new < e) {
      const double decrease = e - e_new;
      v = cand;
      r = prob.residuals(v, &jac);
      e = r.squaredNorm();
      out.trace.push_back(e);
      mu = std::max(mu / 3.0, 1e-12);
      if (decrease < config.tol) break;
    } else {
      mu *= 4.0;
      if (mu > 1e16) break;  // no descent direction left at this precision
    }
  }
  if (!std::isfinite(e)) throw OptimizationError(it, "fit: objective diverged");

  body::BodyParams p;
  prob.unpack(v, p, out.cam);
  out.theta = p.pose;
  out.beta = p.shape;
  out.final_objective = e;
  out.iterations_used = it;
  return out;
}

nlohmann::json camera_to_json(const body::CameraParams& cam) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[3 * r + c] = cam.R(r, c);
  return {{"s", cam.s}, {"t", {cam.t.x(), cam.t.y()}}, {"R", rot}};
}

body::CameraParams camera_from_json(const nlohmann::json& j) {
  body::CameraParams cam;
  cam.s = j.at("s").get<double>();
  cam.t = {j.at("t").at(0).get<double>(), j.at("t").at(1).get<double>()};
  if (j.contains("R")) {
    const auto& rot = j.at("R");
    require(rot.size() == 9, ErrorKind::kParse, "camera R must have 9 entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.R(r, c) = rot.at(3 * r + c).get<double>();
  }
  return cam;
}

nlohmann::json params_to_json(const body::BodyParams& p) {
  return {{"theta", p.pose.theta}, {"beta", p.shape.beta}};
}

body::BodyParams params_from_json(const nlohmann::json& j) {
  body::BodyParams p;
  const auto theta = j.at("theta").get<std::vector<double>>();
  const auto beta = j.at("beta").get<std::vector<double>>();
  require(theta.size() == static_cast<std::size_t>(kNumPoseParams), ErrorKind::kParse, "theta must have 72 values");
  require(beta.size() == static_cast<std::size_t>(kNumBetas), ErrorKind::kParse, "beta must have 10 values");
  std::copy(theta.begin(), theta.end(), p.pose.theta.begin());
  std::copy(beta.begin(), beta.end(), p.shape.beta.begin());
  return p;
}

nlohmann::json to_json(const FitResult& r) {
  nlohmann::json j = params_to_json(r.params());
  j["cam"] = camera_to_json(r.cam);
  j["initial_objective"] = r.initial_objective;
  j["final_objective"] = r.final_objective;
  j["iterations_used"] = r.iterations_used;
  return j;
}

FitResult fit_result_from_json(const nlohmann::json& j) {
  FitResult r;
  const body::BodyParams p = params_from_json(j);
  r.theta = p.pose;
  r.beta = p.shape;
  r.cam = camera_from_json(j.at("cam"));
  r.initial_objective = j.value("initial_objective", 0.0);
  r.final_objective = j.at("final_objective").get<double>();
  r.iterations_used = j.value("iterations_used", 0);
  require(r.final_objective >= 0.0, ErrorKind::kParse, "fit record has a negative objective");
  return r;
}

}  // namespace restpose::fit
