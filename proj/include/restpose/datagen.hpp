// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic in-bed multimodal data, the on-disk dataset layout, and the shared image-space
// augmentations.
//
// Conventions. All modalities are aligned 224 x 224 crops with values in [0, 1]. Depth is the
// height above the bed: depth = clamp((z - z_bed) / 1000 mm, 0, 1), so larger is nearer the
// camera and the bed itself reads 0. 2D joints are crop pixels, 3D joints are millimetres in
// the body frame (pelvis at the origin, root rotation applied). The camera is the rig camera:
// x = s * drop_z(R_rig p) + t.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "restpose/bodymodel.hpp"
#include "restpose/image.hpp"

namespace restpose::data {

enum class CoverType { kUncover, kCover1, kCover2 };

const char* to_string(CoverType c);  // "uncover", "cover1", "cover2"
// Throws kParse on an unknown name.
CoverType cover_from_string(const std::string& s);

inline constexpr double kDepthRangeMm = 1000.0;

struct MultimodalSample {
  Image rgb;              // 3 x 224 x 224
  Image ir;               // 1 x 224 x 224
  Image depth;
  Image pm;
  Image uncovered_depth;  // targets of the reconstruction decoder
  Image uncovered_ir;
  Image mask_gt;          // body silhouette without cover, values 0 or 1
  body::Points2 joints14_2d = body::Points2::Zero(body::kNumJoints14, 2);
  body::Points3 joints14_3d = body::Points3::Zero(body::kNumJoints14, 3);
  std::optional<body::BodyParams> gt_params;
  std::optional<body::CameraParams> gt_camera;
  CoverType cover = CoverType::kUncover;
  std::string subject_id;
  std::string pose_id;

  // Throws kDimension or kData naming the first violated shape or range check.
  void validate() const;
};

using Dataset = std::vector<MultimodalSample>;

// Samples of one cover type.
std::vector<const MultimodalSample*> stratum(const Dataset& ds, CoverType c);

struct SynthConfig {
  int n_subjects = 4;
  int poses_per_subject = 8;
  std::uint64_t seed = 7;
  std::vector<CoverType> covers{CoverType::kUncover, CoverType::kCover1, CoverType::kCover2};
  double beta_sigma = 0.6;
  double sink_mm = 100.0;        // mattress compression; contact where the body is below z_bed + sink
  double cover1_mm = 12.0;       // blanket thickness
  double cover2_mm = 45.0;
  // Modality edge cases: PM loses one raised forearm, IR keeps a ghost of a shifted pose.
  bool pm_dropout = false;
  bool ir_ghost = false;

  // Throws kConfig.
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Seeded lying pose: pose_id % 3 selects supine, left side, right side.
body::BodyParams sample_lying_pose(const body::BodyShapeParams& shape, int pose_index, std::mt19937_64& rng);

// All cover variants of one (subject, pose). Deterministic in (config, template, subject, pose).
std::vector<MultimodalSample> synthesize_pose(const SynthConfig& config, const body::BodyTemplate& tmpl, int subject,
                                              int pose);

// In-memory dataset: subjects x poses x covers, in that nesting order.
Dataset generate_dataset(const SynthConfig& config, const body::BodyTemplate& tmpl);

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> eval_ids;

  // Throws kInvariant when a subject appears in both lists.
  void validate() const;
};

// Subject-disjoint split: the last quarter of the subjects (at least one when there are two or
// more) go to evaluation.
DatasetSplit split_subjects(const std::vector<std::string>& subjects);

// Writes the dataset directory:
//   <root>/manifest.json, split.json, mean_params.json, synth_config.json
//   <root>/<subject>/<pose>/<cover>/{rgb,ir,depth,pm,uncovered_depth,uncovered_ir,mask}.png + meta.json
// Returns the samples as they read back from disk (quantized). Throws kIo when unwritable.
Dataset generate_synthetic(const SynthConfig& config, const body::BodyTemplate& tmpl,
                           const std::filesystem::path& root);

// Writes one sample in the layout above. Images are quantized to the file bit depth.
void write_sample(const MultimodalSample& s, const std::filesystem::path& dir);
// Rounds every modality to the precision it has on disk.
void quantize(MultimodalSample& s);

// Loads every <subject>/<pose>/<cover>/meta.json below root (sorted). Images not at 224 x 224
// are resampled with crop_resize over the full frame. Throws kData on a missing directory,
// an empty dataset or a missing image (with its path), kParse on a malformed meta.json
// (with the line number).
Dataset load_slp(const std::filesystem::path& root);
MultimodalSample load_sample(const std::filesystem::path& dir);

// Mean body parameters and camera over the samples carrying ground truth.
struct MeanParamsFile {
  body::BodyParams params;
  body::CameraParams camera;
  int count = 0;
};
MeanParamsFile compute_mean_params(const Dataset& ds, const std::vector<std::string>& subjects);
void save_mean_params(const MeanParamsFile& m, const std::filesystem::path& path);
MeanParamsFile load_mean_params(const std::filesystem::path& path);

// Axis-aligned box in frame pixels.
struct BBox {
  double x0 = 0.0, y0 = 0.0, w = 0.0, h = 0.0;
};

// Mask bounding box grown by `pad` of its size on every side.
BBox body_bbox(const Image& mask, double pad = 0.2);

// Crops the square of side max(w, h) centred on bbox and resizes it to 224 x 224, zero outside
// the frame. Continuous images are sampled bilinearly, the mask by nearest neighbour. Joints and
// camera follow the affine map p' = k (p - o).
MultimodalSample crop_resize(const MultimodalSample& s, const BBox& bbox);

struct AugmentConfig {
  double scale_min = 0.8;
  double scale_max = 1.2;
  double max_rotation_deg = 30.0;
  double flip_probability = 0.5;
};

struct AugmentTransform {
  double scale = 1.0;
  double rotation_deg = 0.0;  // image-plane rotation about the crop centre
  bool flip = false;          // horizontal, applied before scale and rotation
};

AugmentTransform draw_transform(std::mt19937_64& rng, const AugmentConfig& config);
// One shared transform for every modality, mask and joint set. A flip mirrors x and swaps left
// and right joint labels; 3D joints and ground-truth parameters follow the same motion.
MultimodalSample apply_transform(const MultimodalSample& s, const AugmentTransform& t);
MultimodalSample augment(const MultimodalSample& s, std::mt19937_64& rng, const AugmentConfig& config = {});

// Image-plane map of a transform: p' = A p + b.
struct Affine2 {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
};
Affine2 transform_affine(const AugmentTransform& t);

// Mirror of body parameters across the body's sagittal plane (x -> -x).
body::BodyParams mirror_params(const body::BodyParams& p);

}  // namespace restpose::data
