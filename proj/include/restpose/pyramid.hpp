// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Pyramid fusion. Level k regresses body parameters from a growing modality stack
// (k=0: D, IR; k=1: + PM; k=2: + RGB). Inside a level, one coarse-to-fine cycle runs:
//   coarse = g(stack, init)
//   mask   = rasterize(M(coarse))
//   recon  = d(mask * [D, IR], features(coarse))
//   fine   = g(stack with D, IR replaced by recon, coarse)
// Levels train one at a time with all lower levels frozen; level k starts from the fine output
// of level k-1 (level 0 from the dataset mean parameters).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "restpose/datagen.hpp"
#include "restpose/fit.hpp"
#include "restpose/losses.hpp"
#include "restpose/networks.hpp"
#include "restpose/raster.hpp"

namespace restpose::pyramid {

inline constexpr int kNumLevels = 3;

enum class InitSource { kMeanParams, kPreviousLevel };

struct FusionLevelConfig {
  int k = 0;
  std::vector<std::string> modalities{"D", "IR"};
  InitSource init_source = InitSource::kMeanParams;
  // Empty for pyramid levels. Ablation models ("single_D", "single_IR", "single_PM",
  // "single_RGB", "early_fusion", "no_recon") are stand-alone level-0 models on their own layout.
  std::string variant;

  static FusionLevelConfig for_level(int k);
  static FusionLevelConfig for_variant(const std::string& name);
  // Throws kConfig unless the modalities and init source are the ones prescribed for k (or for
  // the variant).
  void validate() const;
};

const std::vector<std::string>& ablation_variants();

// Stacks the sample's modalities in `layout` order. Throws kData naming a missing channel.
net::ImageStack make_stack(const data::MultimodalSample& s, const std::vector<std::string>& layout);

struct EpochLog {
  int epoch = 0;
  int steps = 0;        // optimizer steps so far
  double loss = 0.0;    // mean total loss over the epoch's samples
  double loss_g = 0.0;  // regressor part
  double loss_d = 0.0;  // decoder part
};

struct FusionLevelState {
  FusionLevelConfig config;
  net::Regressor g;
  net::Decoder d;
  bool frozen = false;
  std::vector<EpochLog> log;

  FusionLevelState(FusionLevelConfig config, const net::RegressorConfig& g_config, const net::DecoderConfig& d_config);

  // Weights-only archive; its bytes are what the freeze contract compares.
  io::Archive checkpoint(std::uint64_t seed = 0);
  std::string weight_hash();
  static FusionLevelState from_checkpoint(const io::Archive& ar);
};

// Fresh level-k state; g and d seeds derive from `seed` and k.
FusionLevelState make_level(int k, std::uint64_t seed, const std::string& encoder_scale = "toy");
FusionLevelState make_variant(const std::string& variant, std::uint64_t seed, const std::string& encoder_scale = "toy");

enum class ReconMode {
  kDecoder,  // fine pass on reconstructed D/IR
  kBypass,   // ablation: fine pass on the covered inputs
};

struct CycleOptions {
  double sharpness = 4.0;  // silhouette sigmoid sharpness, 1/px
  ReconMode recon = ReconMode::kDecoder;
};

struct CycleOutput {
  losses::StagePrediction coarse;
  losses::StagePrediction fine;
  net::HeadVector coarse_head{};
  net::HeadVector fine_head{};
  net::DecoderOutput recon;
  raster::RasterResult mask;  // soft silhouette of the coarse mesh
};

// Intermediates for the reverse pass.
struct CycleCache {
  net::ImageStack stack;
  net::ImageStack fine_stack;
  net::Regressor::Cache g_coarse;
  net::Regressor::Cache g_fine;
  net::Decoder::Cache dec;
  body::ForwardCache body_coarse;
  body::ForwardCache body_fine;
  body::Points2 verts2d;
  Image mask;     // float copy of the soft mask
  Image dir_pair; // covered D and IR, 2 x 224 x 224 (zero planes for a layout without them)
};

CycleOutput coarse_to_fine_forward(const FusionLevelState& state, const body::BodyTemplate& tmpl,
                                   const data::MultimodalSample& sample, const net::HeadVector& init,
                                   const CycleOptions& options = {}, CycleCache* cache = nullptr);

// Supervision of one sample.
struct SampleTargets {
  losses::StageTargets stage;        // 2D/3D joints and the fitted parameters
  double fit_objective = 0.0;        // fitter objective of stage.fit
  const Image* uncovered_depth = nullptr;
  const Image* uncovered_ir = nullptr;
  const Image* mask_gt = nullptr;
};

struct CycleLoss {
  losses::RegressorLoss g;
  losses::DecoderLoss d;
  double total = 0.0;
};

// L_g + L_d of one cycle. When `state` is non-null and not frozen, accumulates parameter
// gradients of both networks through the whole cycle (fine stage into the decoder and the
// coarse features, mask loss through the rasterizer into the coarse parameters). `d_init`
// receives the gradient with respect to the initial head vector when given.
CycleLoss cycle_loss(FusionLevelState* state, const body::BodyTemplate& tmpl, const CycleOutput& out,
                     const CycleCache& cache, const SampleTargets& targets, const losses::LossWeights& w,
                     const CycleOptions& options, net::HeadVector* d_init = nullptr);

struct TrainConfig {
  int max_steps = 500;             // B: optimizer steps
  int max_epochs = 0;              // 0: no limit
  int batch = 8;
  double lr = 1e-4;
  double loss_change_tol = 1e-4;   // T: stop when the relative change of the epoch loss is below
  losses::LossWeights weights{1.0, 0.01, 1.0, 1.0, 1.0};
  CycleOptions cycle;
  std::uint64_t seed = 7;
  bool augment = false;
  data::AugmentConfig augment_config;
  int fit_refresh_every = 1;       // epochs between improve-or-keep fitter passes; 0 disables
  fit::FitConfig fit_config;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Head vector of the dataset mean parameters and camera.
net::HeadVector mean_head(const data::MeanParamsFile& m);

// Runs levels 0..K, each initialised from the previous fine output; returns every level's
// output (back() is level K).
std::vector<CycleOutput> predict_chain(const std::vector<const FusionLevelState*>& states,
                                       const body::BodyTemplate& tmpl, const data::MultimodalSample& sample,
                                       const net::HeadVector& mean, int K, const CycleOptions& options = {});

struct Prediction {
  body::BodyParams params;
  body::CameraParams cam;
  body::Mesh mesh;
};

Prediction predict(const std::vector<const FusionLevelState*>& states, const body::BodyTemplate& tmpl,
                   const data::MultimodalSample& sample, const net::HeadVector& mean, int K,
                   const CycleOptions& options = {});

// Level-wise training with the lower levels frozen (Algorithm-style loop: stop after
// max_steps optimizer steps or once the epoch loss settles).
class LevelTrainer {
 public:
  // `initial` defaults to make_level(k, config.seed); pass a variant state to train an ablation
  // model (k = 0, no lower levels).
  LevelTrainer(int k, const data::Dataset& train, std::vector<const FusionLevelState*> lower,
               const net::HeadVector& mean, const body::BodyTemplate& tmpl, TrainConfig config,
               std::optional<FusionLevelState> initial = std::nullopt);

  // One pass over the training set; returns false once a stop condition holds.
  bool run_epoch();
  void run();

  bool finished() const { return finished_; }
  const std::string& stop_reason() const { return stop_reason_; }
  int steps() const { return steps_; }
  int epoch() const { return epoch_; }
  FusionLevelState& state() { return state_; }
  const std::vector<double>& step_losses() const { return step_losses_; }

  // Optimizer moments, counters, fitted targets and logs, for an exact resume.
  io::Archive training_state();
  void resume(const io::Archive& training_state);

 private:
  void refresh_fits();
  const net::HeadVector& init_for(std::size_t i);
  double close_epoch(bool complete);

  int k_;
  const data::Dataset& train_;
  std::vector<const FusionLevelState*> lower_;
  net::HeadVector mean_;
  const body::BodyTemplate& tmpl_;
  TrainConfig config_;
  FusionLevelState state_;
  nn::Adam opt_;
  std::vector<std::optional<body::BodyParams>> fits_;
  std::vector<body::Points3> fit_vertices_;
  std::vector<double> fit_objective_;
  std::vector<std::optional<net::HeadVector>> init_cache_;
  std::vector<double> step_losses_;
  int epoch_ = 0;
  std::size_t batch_pos_ = 0;  // next batch within the current epoch
  int steps_ = 0;
  double epoch_sum_ = 0.0, epoch_sum_g_ = 0.0, epoch_sum_d_ = 0.0;
  int epoch_count_ = 0;
  std::optional<double> prev_epoch_loss_;
  bool finished_ = false;
  std::string stop_reason_;
};

// Throws kInvariant when `lower` is not exactly k frozen states.
FusionLevelState train_level(int k, const data::Dataset& train, const std::vector<const FusionLevelState*>& lower,
                             const net::HeadVector& mean, const body::BodyTemplate& tmpl, const TrainConfig& config);
// Trains an ablation model from the mean parameters; the result is frozen.
FusionLevelState train_variant(const std::string& variant, const data::Dataset& train, const net::HeadVector& mean,
                               const body::BodyTemplate& tmpl, const TrainConfig& config);

// Per-sample evaluation record.
struct SampleRecord {
  std::string subject_id;
  std::string pose_id;
  data::CoverType cover = data::CoverType::kUncover;
  double mpjpe = 0.0;                // mm
  double reconstruction_error = 0.0; // mm, after Procrustes alignment
  double seg_accuracy = 0.0;
  double seg_f1 = 0.0;
};

SampleRecord score_prediction(const data::MultimodalSample& sample, const body::BodyTemplate& tmpl,
                              const Prediction& pred, double sharpness = 4.0);

// Strata in report order: cover2, cover1, uncover. Absent strata have count 0 and no values.
struct StratumSummary {
  data::CoverType cover;
  int count = 0;
  double mpjpe = 0.0;
  double reconstruction_error = 0.0;
  double seg_accuracy = 0.0;
  double seg_f1 = 0.0;
};

struct EvalReport {
  int K = 0;
  std::vector<SampleRecord> records;
  std::array<StratumSummary, 3> strata;
  StratumSummary overall;
  std::size_t parameter_count = 0;
};

inline constexpr std::array<data::CoverType, 3> kStratumOrder = {data::CoverType::kCover2, data::CoverType::kCover1,
                                                                 data::CoverType::kUncover};

EvalReport summarize(std::vector<SampleRecord> records, int K);
EvalReport evaluate(const std::vector<const FusionLevelState*>& states, const body::BodyTemplate& tmpl,
                    const data::Dataset& dataset, const net::HeadVector& mean, int K,
                    const CycleOptions& options = {});

nlohmann::json to_json(const SampleRecord& r);
SampleRecord sample_record_from_json(const nlohmann::json& j);
// metrics.json body; absent strata are {"count": 0, "absent": true}.
nlohmann::json to_json(const EvalReport& r);

// Run directory: <run>/level{k}/checkpoint.arc, train_state.arc, train_log.csv,
// freeze_hashes.json; <run>/ablation/<variant>/...; <run>/mean_params.json, metrics.json,
// per_sample.jsonl.
std::filesystem::path level_dir(const std::filesystem::path& run, int k);
std::filesystem::path variant_dir(const std::filesystem::path& run, const std::string& variant);
std::filesystem::path state_dir(const std::filesystem::path& run, const FusionLevelConfig& config);
void save_level(FusionLevelState& state, const std::filesystem::path& run, std::uint64_t seed);
// Throws kDependency when the checkpoint is missing.
FusionLevelState load_level(const std::filesystem::path& run, int k);
FusionLevelState load_variant(const std::filesystem::path& run, const std::string& variant);
void write_train_log(const FusionLevelState& state, const std::filesystem::path& path);

}  // namespace restpose::pyramid
