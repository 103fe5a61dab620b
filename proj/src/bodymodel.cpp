// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/bodymodel.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "restpose/archive.hpp"
#include "restpose/errors.hpp"
#include "restpose/kernels.hpp"
#include "restpose/rotation.hpp"

namespace restpose::body {
namespace {

constexpr double kSumTol = 1e-6;

template <typename Range>
bool all_finite(const Range& r) {
  for (double v : r) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool matrix_finite(const RowMatrix& m) { return m.allFinite(); }

}  // namespace

const char* joint14_name(int j) {
  static constexpr const char* kNames[kNumJoints14] = {
      "right_ankle", "right_knee", "right_hip", "left_hip", "left_knee", "left_ankle", "right_wrist",
      "right_elbow", "right_shoulder", "left_shoulder", "left_elbow", "left_wrist", "neck", "head_top"};
  return (j >= 0 && j < kNumJoints14) ? kNames[j] : "?";
}

const std::array<int, kNumJoints14>& lsp_flip_pairs() {
  static constexpr std::array<int, kNumJoints14> kPairs = {5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6, 12, 13};
  return kPairs;
}

void CameraParams::validate() const {
  require(std::isfinite(s) && s > 0.0, ErrorKind::kInvalidParameter, "camera scale must be positive and finite");
  require(t.allFinite() && R.allFinite(), ErrorKind::kInvalidParameter, "camera parameters must be finite");
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  require(ortho <= 1e-6, ErrorKind::kInvalidParameter, "camera rotation is not orthonormal");
  require(std::abs(R.determinant() - 1.0) <= 1e-6, ErrorKind::kInvalidParameter,
          "camera rotation determinant is not +1");
}

std::array<int, kNumJoints> topological_order(const std::array<int, kNumJoints>& parent) {
  std::array<int, kNumJoints> order{};
  std::array<bool, kNumJoints> placed{};
  int count = 0;
  // Repeated sweeps place a joint once its parent is placed; at most kNumJoints sweeps.
  for (int sweep = 0; sweep < kNumJoints && count < kNumJoints; ++sweep) {
    for (int j = 0; j < kNumJoints; ++j) {
      if (placed[j]) continue;
      const int p = parent[j];
      if (p < 0 || (p < kNumJoints && placed[p])) {
        placed[j] = true;
        order[count++] = j;
      }
    }
  }
  require(count == kNumJoints, ErrorKind::kFormat, "kinematic tree is not a single rooted tree");
  return order;
}

void BodyTemplate::validate() const {
  const auto n = rest_vertices.rows();
  require(n >= kNumJoints, ErrorKind::kFormat, "rest_vertices: need at least 24 vertices");
  require(rest_vertices.allFinite(), ErrorKind::kFormat, "rest_vertices: non-finite values");
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      require(faces(f, c) >= 0 && faces(f, c) < n, ErrorKind::kFormat,
              "faces: index out of range at face " + std::to_string(f));
    }
  }
  require(shape_basis.rows() == 3 * n && shape_basis.cols() == kNumBetas, ErrorKind::kFormat,
          "shape_basis: expected N x 3 x 10");
  require(matrix_finite(shape_basis), ErrorKind::kFormat, "shape_basis: non-finite values");
  require(pose_basis.size() == 0 || (pose_basis.rows() == 3 * n && pose_basis.cols() == kNumPoseBlend),
          ErrorKind::kFormat, "pose_basis: expected N x 3 x 207 or absent");
  require(weights.rows() == n && weights.cols() == kNumJoints, ErrorKind::kFormat, "weights: expected N x 24");
  for (Eigen::Index i = 0; i < n; ++i) {
    require(weights.row(i).minCoeff() >= 0.0, ErrorKind::kFormat,
            "weights: negative skinning weight at vertex " + std::to_string(i));
    require(std::abs(weights.row(i).sum() - 1.0) <= kSumTol, ErrorKind::kFormat,
            "weights: row " + std::to_string(i) + " does not sum to 1");
  }
  require(j24.rows() == kNumJoints && j24.cols() == n, ErrorKind::kFormat, "J24: expected 24 x N");
  require(j14.rows() == kNumJoints14 && j14.cols() == n, ErrorKind::kFormat, "J14: expected 14 x N");
  for (int j = 0; j < kNumJoints; ++j) {
    require(std::abs(j24.row(j).sum() - 1.0) <= kSumTol, ErrorKind::kFormat,
            "J24: row " + std::to_string(j) + " does not sum to 1");
  }
  for (int j = 0; j < kNumJoints14; ++j) {
    require(std::abs(j14.row(j).sum() - 1.0) <= kSumTol, ErrorKind::kFormat,
            "J14: row " + std::to_string(j) + " does not sum to 1");
  }
  require(parent[0] < 0, ErrorKind::kFormat, "parent: joint 0 must be the root");
  for (int j = 1; j < kNumJoints; ++j) {
    require(parent[j] >= 0 && parent[j] < kNumJoints && parent[j] != j, ErrorKind::kFormat,
            "parent: joint " + std::to_string(j) + " has an invalid parent");
  }
  (void)topological_order(parent);
}

Mesh forward(const BodyTemplate& tmpl, const BodyPoseParams& pose, const BodyShapeParams& shape,
             ForwardCache* cache) {
  require(all_finite(pose.theta) && all_finite(shape.beta), ErrorKind::kInvalidParameter,
          "pose and shape parameters must be finite");
  const Eigen::Index n = tmpl.rest_vertices.rows();

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;

  const Eigen::Map<const Eigen::Matrix<double, kNumBetas, 1>> beta(shape.beta.data());
  const Eigen::VectorXd offsets = tmpl.shape_basis * beta;
  c.shaped = tmpl.rest_vertices + Eigen::Map<const Points3>(offsets.data(), n, 3);
  c.rest_joints = tmpl.j24 * c.shaped;

  const auto order = topological_order(tmpl.parent);
  for (int j = 0; j < kNumJoints; ++j) c.local_rot[j] = axis_angle_to_matrix(pose.joint(j));
  for (int j : order) {
    const int p = tmpl.parent[j];
    if (p < 0) {
      c.global_rot[j] = c.local_rot[j];
      c.joint_offset[j].setZero();
    } else {
      c.global_rot[j] = c.global_rot[p] * c.local_rot[j];
      c.joint_offset[j] = c.joint_offset[p] + (c.global_rot[p] - Eigen::Matrix3d::Identity()) *
                                                  (c.rest_joints.row(j) - c.rest_joints.row(p)).transpose();
    }
  }

  if (tmpl.pose_basis.size() > 0) {
    Eigen::Matrix<double, kNumPoseBlend, 1> feat;
    for (int j = 1; j < kNumJoints; ++j) {
      const Eigen::Matrix3d d = c.local_rot[j] - Eigen::Matrix3d::Identity();
      for (int r = 0; r < 3; ++r)
        for (int q = 0; q < 3; ++q) feat[9 * (j - 1) + 3 * r + q] = d(r, q);
    }
    const Eigen::VectorXd pose_offsets = tmpl.pose_basis * feat;
    c.skin_input = c.shaped + Eigen::Map<const Points3>(pose_offsets.data(), n, 3);
  } else {
    c.skin_input = c.shaped;
  }

  std::array<double, kNumJoints * 9> a{};
  std::array<double, kNumJoints * 3> d{};
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Matrix3d m = c.global_rot[j] - Eigen::Matrix3d::Identity();
    for (int r = 0; r < 3; ++r) {
      for (int q = 0; q < 3; ++q) a[9 * j + 3 * r + q] = m(r, q);
      d[3 * j + r] = c.joint_offset[j][r];
    }
  }

  Mesh mesh;
  mesh.vertices.resize(n, 3);
  const kernels::SkinningInputs in{
      std::span<const double>(c.skin_input.data(), static_cast<std::size_t>(n) * 3),
      std::span<const double>(tmpl.weights.data(), static_cast<std::size_t>(n) * kNumJoints),
      a, std::span<const double>(c.rest_joints.data(), kNumJoints * 3), d, kNumJoints};
  kernels::omp::skin(in, std::span<double>(mesh.vertices.data(), static_cast<std::size_t>(n) * 3));

  mesh.joints24 = c.rest_joints;
  for (int j = 0; j < kNumJoints; ++j) mesh.joints24.row(j) += c.joint_offset[j].transpose();
  return mesh;
}

ParamGradient backward(const BodyTemplate& tmpl, const BodyPoseParams& pose, const ForwardCache& c,
                       const Points3& d_vertices, const Points3* d_joints24) {
  const Eigen::Index n = tmpl.rest_vertices.rows();
  require(d_vertices.rows() == n, ErrorKind::kDimension, "vertex gradient has wrong row count");

  std::array<Eigen::Matrix3d, kNumJoints> a;
  for (int j = 0; j < kNumJoints; ++j) a[j] = c.global_rot[j] - Eigen::Matrix3d::Identity();

  // Skinning: v'_i = v_i + sum_j w_ij (A_j (v_i - J_j) + d_j)
  std::array<Eigen::Matrix3d, kNumJoints> g_global;
  std::array<Eigen::Vector3d, kNumJoints> g_offset;
  Points3 g_joints = Points3::Zero(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j) {
    g_global[j].setZero();
    g_offset[j].setZero();
  }
  Points3 g_skin_input = d_vertices;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d gv = d_vertices.row(i).transpose();
    const Eigen::Vector3d v = c.skin_input.row(i).transpose();
    Eigen::Vector3d gin = Eigen::Vector3d::Zero();
    for (int j = 0; j < kNumJoints; ++j) {
      const double w = tmpl.weights(i, j);
      if (w == 0.0) continue;
      const Eigen::Vector3d wg = w * gv;
      g_global[j] += wg * (v - c.rest_joints.row(j).transpose()).transpose();
      g_offset[j] += wg;
      gin += a[j].transpose() * wg;
    }
    g_skin_input.row(i) += gin.transpose();
  }
  for (int j = 0; j < kNumJoints; ++j) {
    g_joints.row(j) -= (a[j].transpose() * g_offset[j]).transpose();
  }
  if (d_joints24 != nullptr) {
    for (int j = 0; j < kNumJoints; ++j) {
      g_offset[j] += d_joints24->row(j).transpose();
      g_joints.row(j) += d_joints24->row(j);
    }
  }

  // Kinematic chain, children before parents.
  std::array<Eigen::Matrix3d, kNumJoints> g_local;
  const auto order = topological_order(tmpl.parent);
  for (int idx = kNumJoints - 1; idx >= 0; --idx) {
    const int j = order[idx];
    const int p = tmpl.parent[j];
    if (p < 0) {
      g_local[j] = g_global[j];
      continue;
    }
    g_global[p] += g_global[j] * c.local_rot[j].transpose();
    g_local[j] = c.global_rot[p].transpose() * g_global[j];
    const Eigen::Vector3d bone = (c.rest_joints.row(j) - c.rest_joints.row(p)).transpose();
    g_offset[p] += g_offset[j];
    g_global[p] += g_offset[j] * bone.transpose();
    const Eigen::Vector3d e = a[p].transpose() * g_offset[j];
    g_joints.row(j) += e.transpose();
    g_joints.row(p) -= e.transpose();
  }

  Points3 g_shaped = g_skin_input;
  if (tmpl.pose_basis.size() > 0) {
    const Eigen::VectorXd gfeat =
        tmpl.pose_basis.transpose() * Eigen::Map<const Eigen::VectorXd>(g_skin_input.data(), 3 * n);
    for (int j = 1; j < kNumJoints; ++j) {
      for (int r = 0; r < 3; ++r)
        for (int q = 0; q < 3; ++q) g_local[j](r, q) += gfeat[9 * (j - 1) + 3 * r + q];
    }
  }
  g_shaped += tmpl.j24.transpose() * g_joints;

  ParamGradient out;
  const Eigen::VectorXd gbeta =
      tmpl.shape_basis.transpose() * Eigen::Map<const Eigen::VectorXd>(g_shaped.data(), 3 * n);
  for (int k = 0; k < kNumBetas; ++k) out.beta[k] = gbeta[k];
  for (int j = 0; j < kNumJoints; ++j) {
    const auto dr = axis_angle_jacobian(pose.joint(j));
    for (int i = 0; i < 3; ++i) out.theta[3 * j + i] = dr[i].cwiseProduct(g_local[j]).sum();
  }
  return out;
}

Points3 regress_joints14(const BodyTemplate& tmpl, const Mesh& mesh) {
  require(mesh.vertices.rows() == tmpl.j14.cols(), ErrorKind::kDimension,
          "mesh has " + std::to_string(mesh.vertices.rows()) + " vertices, template expects " +
              std::to_string(tmpl.j14.cols()));
  return tmpl.j14 * mesh.vertices;
}

Points2 project(const Points3& points, const CameraParams& cam) {
  require(points.allFinite() && std::isfinite(cam.s) && cam.t.allFinite() && cam.R.allFinite(),
          ErrorKind::kInvalidParameter, "projection inputs must be finite");
  Points2 out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d q = cam.R * points.row(i).transpose();
    out(i, 0) = cam.s * q.x() + cam.t.x();
    out(i, 1) = cam.s * q.y() + cam.t.y();
  }
  return out;
}

ProjectGradient project_backward(const Points3& points, const CameraParams& cam, const Points2& d_out) {
  require(points.rows() == d_out.rows(), ErrorKind::kDimension, "projection gradient size mismatch");
  ProjectGradient g;
  g.d_points.resize(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d q = cam.R * points.row(i).transpose();
    const Eigen::Vector3d gq(d_out(i, 0), d_out(i, 1), 0.0);
    g.d_points.row(i) = (cam.s * (cam.R.transpose() * gq)).transpose();
    g.d_s += d_out(i, 0) * q.x() + d_out(i, 1) * q.y();
    g.d_t += d_out.row(i).transpose();
  }
  return g;
}

MeanParams mean_params(std::span<const BodyParams> dataset) {
  require(!dataset.empty(), ErrorKind::kEmptyInput, "mean_params needs at least one sample");
  MeanParams m;
  for (const auto& p : dataset) {
    for (int i = 0; i < kNumPoseParams; ++i) m.pose.theta[i] += p.pose.theta[i];
    for (int k = 0; k < kNumBetas; ++k) m.shape.beta[k] += p.shape.beta[k];
  }
  const double inv = 1.0 / static_cast<double>(dataset.size());
  for (auto& v : m.pose.theta) v *= inv;
  for (auto& v : m.shape.beta) v *= inv;
  return m;
}

BodyTemplate load_template(const std::filesystem::path& path) {
  const io::Archive ar = io::Archive::load(path);
  BodyTemplate t;
  const auto rest = ar.get_f64("rest_vertices", {-1, 3});
  const Eigen::Index n = static_cast<Eigen::Index>(rest.size() / 3);
  t.rest_vertices = Eigen::Map<const Points3>(rest.data(), n, 3);
  const auto faces = ar.get_i32("faces", {-1, 3});
  t.faces = Eigen::Map<const Faces>(faces.data(), static_cast<Eigen::Index>(faces.size() / 3), 3);
  const auto basis = ar.get_f64("shape_basis", {n, 3, kNumBetas});
  t.shape_basis = Eigen::Map<const RowMatrix>(basis.data(), 3 * n, kNumBetas);
  if (ar.contains("pose_basis")) {
    const auto pb = ar.get_f64("pose_basis", {n, 3, kNumPoseBlend});
    t.pose_basis = Eigen::Map<const RowMatrix>(pb.data(), 3 * n, kNumPoseBlend);
  }
  const auto w = ar.get_f64("weights", {n, kNumJoints});
  t.weights = Eigen::Map<const RowMatrix>(w.data(), n, kNumJoints);
  const auto j24 = ar.get_f64("J24", {kNumJoints, n});
  t.j24 = Eigen::Map<const RowMatrix>(j24.data(), kNumJoints, n);
  const auto j14 = ar.get_f64("J14", {kNumJoints14, n});
  t.j14 = Eigen::Map<const RowMatrix>(j14.data(), kNumJoints14, n);
  const auto parent = ar.get_i32("parent", {kNumJoints});
  for (int j = 0; j < kNumJoints; ++j) t.parent[j] = parent[j];
  t.validate();
  return t;
}

void save_template(const BodyTemplate& t, const std::filesystem::path& path) {
  io::Archive ar;
  const std::int64_t n = t.vertex_count();
  ar.meta = {{"kind", "body_template"}, {"vertices", n}, {"faces", t.faces.rows()}};
  ar.put_f64("rest_vertices", {t.rest_vertices.data(), static_cast<std::size_t>(3 * n)}, {n, 3});
  ar.put_i32("faces", {t.faces.data(), static_cast<std::size_t>(t.faces.size())}, {t.faces.rows(), 3});
  ar.put_f64("shape_basis", {t.shape_basis.data(), static_cast<std::size_t>(t.shape_basis.size())},
             {n, 3, kNumBetas});
  if (t.pose_basis.size() > 0) {
    ar.put_f64("pose_basis", {t.pose_basis.data(), static_cast<std::size_t>(t.pose_basis.size())},
               {n, 3, kNumPoseBlend});
  }
  ar.put_f64("weights", {t.weights.data(), static_cast<std::size_t>(t.weights.size())}, {n, kNumJoints});
  ar.put_f64("J24", {t.j24.data(), static_cast<std::size_t>(t.j24.size())}, {kNumJoints, n});
  ar.put_f64("J14", {t.j14.data(), static_cast<std::size_t>(t.j14.size())}, {kNumJoints14, n});
  std::array<std::int32_t, kNumJoints> parent{};
  for (int j = 0; j < kNumJoints; ++j) parent[j] = t.parent[j];
  ar.put_i32("parent", parent, {kNumJoints});
  ar.save(path);
}

}  // namespace restpose::body
