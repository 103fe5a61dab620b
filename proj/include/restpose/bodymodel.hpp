// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace restpose::body {

inline constexpr int kNumJoints = 24;
inline constexpr int kNumBetas = 10;
inline constexpr int kNumPoseParams = kNumJoints * 3;
inline constexpr int kNumJoints14 = 14;
inline constexpr int kNumPoseBlend = (kNumJoints - 1) * 9;

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Faces = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// SMPL kinematic tree joint indices used by the toy template and the LSP mapping.
enum Joint24 : int {
  kPelvis = 0, kLHip, kRHip, kSpine1, kLKnee, kRKnee, kSpine2, kLAnkle, kRAnkle, kSpine3,
  kLFoot, kRFoot, kNeck, kLCollar, kRCollar, kHead, kLShoulder, kRShoulder, kLElbow,
  kRElbow, kLWrist, kRWrist, kLHand, kRHand,
};

// LSP 14-joint order.
enum Joint14 : int {
  kRAnkle14 = 0, kRKnee14, kRHip14, kLHip14, kLKnee14, kLAnkle14, kRWrist14, kRElbow14,
  kRShoulder14, kLShoulder14, kLElbow14, kLWrist14, kNeck14, kHeadTop14,
};

const char* joint14_name(int j);

// Left/right partner of each LSP joint (self for neck and head top).
const std::array<int, kNumJoints14>& lsp_flip_pairs();

struct BodyShapeParams {
  std::array<double, kNumBetas> beta{};
};

struct BodyPoseParams {
  std::array<double, kNumPoseParams> theta{};

  Eigen::Vector3d joint(int j) const { return {theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]}; }
  void set_joint(int j, const Eigen::Vector3d& v) {
    theta[3 * j] = v.x();
    theta[3 * j + 1] = v.y();
    theta[3 * j + 2] = v.z();
  }
};

struct BodyParams {
  BodyPoseParams pose;
  BodyShapeParams shape;
};

// Orthographic camera: x_img = s * drop_z(R p) + t.
struct CameraParams {
  double s = 1.0;
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();

  // Throws kInvalidParameter when s <= 0 or R is not a proper rotation.
  void validate() const;
};

// Rotation of the overhead camera rig. The body frame has +Y towards the head and +Z out of
// the chest; a supine body (zero root rotation) is seen from above with the head at the top of
// the image and its left side on the image right.
inline Eigen::Matrix3d rig_rotation() { return Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal(); }

struct BodyTemplate {
  Points3 rest_vertices;   // N x 3
  Faces faces;             // F x 3
  RowMatrix shape_basis;   // 3N x 10, row 3*i + c
  RowMatrix pose_basis;    // 3N x 207 or empty (zero pose correctives)
  RowMatrix weights;       // N x 24
  RowMatrix j24;           // 24 x N
  RowMatrix j14;           // 14 x N
  std::array<int, kNumJoints> parent{};

  int vertex_count() const { return static_cast<int>(rest_vertices.rows()); }

  // Throws kFormat naming the failed check.
  void validate() const;
};

struct Mesh {
  Points3 vertices;  // N x 3
  Points3 joints24;  // 24 x 3
};

// Intermediates kept for the reverse pass.
struct ForwardCache {
  Points3 shaped;      // rest + shape offsets
  Points3 skin_input;  // shaped + pose correctives
  Points3 rest_joints; // J24 * shaped
  std::array<Eigen::Matrix3d, kNumJoints> local_rot;
  std::array<Eigen::Matrix3d, kNumJoints> global_rot;
  std::array<Eigen::Vector3d, kNumJoints> joint_offset;  // posed joint minus rest joint
};

struct ParamGradient {
  std::array<double, kNumPoseParams> theta{};
  std::array<double, kNumBetas> beta{};
};

// Topological order of the kinematic tree (parents before children).
std::array<int, kNumJoints> topological_order(const std::array<int, kNumJoints>& parent);

// M(theta, beta). Throws kInvalidParameter on non-finite parameters.
Mesh forward(const BodyTemplate& tmpl, const BodyPoseParams& pose, const BodyShapeParams& shape,
             ForwardCache* cache = nullptr);

// Reverse pass: gradients of a scalar with respect to pose and shape given its gradients with
// respect to the posed vertices and (optionally) the posed joints.
ParamGradient backward(const BodyTemplate& tmpl, const BodyPoseParams& pose, const ForwardCache& cache,
                       const Points3& d_vertices, const Points3* d_joints24 = nullptr);

// J14 * vertices. Throws kDimension on a vertex count mismatch.
Points3 regress_joints14(const BodyTemplate& tmpl, const Mesh& mesh);

Points2 project(const Points3& points, const CameraParams& cam);

struct ProjectGradient {
  Points3 d_points;
  double d_s = 0.0;
  Eigen::Vector2d d_t = Eigen::Vector2d::Zero();
};

ProjectGradient project_backward(const Points3& points, const CameraParams& cam, const Points2& d_out);

struct MeanParams {
  BodyPoseParams pose;
  BodyShapeParams shape;
};

// Component-wise mean. Throws kEmptyInput on an empty dataset.
MeanParams mean_params(std::span<const BodyParams> dataset);

struct ToyTemplateConfig {
  int n_vertices = 600;
  std::uint64_t seed = 7;
};

// Cylinder-limbed humanoid on the SMPL 24-joint tree. Deterministic in (n_vertices, seed).
BodyTemplate make_toy_template(const ToyTemplateConfig& config = {});

BodyTemplate load_template(const std::filesystem::path& path);
void save_template(const BodyTemplate& tmpl, const std::filesystem::path& path);

}  // namespace restpose::body
