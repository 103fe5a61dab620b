// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// The shared regressor g (image stack -> 85 body/camera values) and the reconstruction
// decoder d (masked D/IR + encoder features -> uncovered D/IR).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "restpose/bodymodel.hpp"
#include "restpose/nn.hpp"

namespace restpose::net {

// theta (72), beta (10), camera head (3).
inline constexpr int kHeadSize = body::kNumPoseParams + body::kNumBetas + 3;
inline constexpr int kCamOffset = body::kNumPoseParams + body::kNumBetas;
using HeadVector = std::array<double, kHeadSize>;

// Camera head (c0, c1, c2) -> s = kCamScale * exp(c0), t = (kCropSize / 2) * (1 + (c1, c2)),
// R = rig rotation. The head is zero for a body centred in the crop at the reference scale.
inline constexpr double kCamScale = 0.1;

body::BodyParams head_params(const HeadVector& h);
body::CameraParams head_camera(const HeadVector& h);
HeadVector make_head(const body::BodyParams& p, const body::CameraParams& cam);
// Chain rule through head_params / head_camera: fills d_head from gradients on parameters and
// on (s, t).
HeadVector head_gradient(const HeadVector& h, const body::ParamGradient& d_params, double d_s,
                         const Eigen::Vector2d& d_t);

// Channels per modality: D, IR, PM are single-channel, RGB has three.
int modality_channels(const std::string& modality);
int layout_channels(const std::vector<std::string>& layout);

struct ImageStack {
  nn::Tensor data;                  // C x 224 x 224
  std::vector<std::string> layout;  // e.g. {"D", "IR", "PM"}

  // Throws kDimension unless the stack is 224 x 224 with the layout's channel count.
  void validate() const;
  // First channel of a modality; throws kData when it is absent.
  int channel_of(const std::string& modality) const;
};

struct EncoderConfig {
  std::string scale = "toy";
  int stem = 32;                       // 4x4 stride-4 stem
  std::vector<int> widths{48, 96, 192};  // stride-2 residual stages
  int features = 512;                  // 1x1 projection, 7 x 7 x features

  static EncoderConfig toy();
  static EncoderConfig paper();
  static EncoderConfig by_name(const std::string& scale);
};

struct RegressorConfig {
  std::vector<std::string> layout{"D", "IR"};
  EncoderConfig encoder;
  int iterations = 3;
  int hidden = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RegressorConfig& c);
RegressorConfig regressor_config_from_json(const nlohmann::json& j);

struct RegressorOutput {
  HeadVector params{};
  nn::Tensor features;  // features x 7 x 7
};

class Regressor {
 public:
  struct Cache {
    nn::Tensor input;
    nn::Tensor stem;
    std::vector<nn::ResidualBlock::Cache> blocks;
    nn::Tensor features;
    std::vector<float> pooled;
    std::vector<std::vector<float>> iter_in, iter_h1, iter_h2;
  };

  explicit Regressor(RegressorConfig config = {});

  const RegressorConfig& config() const { return config_; }
  RegressorOutput forward(const ImageStack& input, const HeadVector& init, Cache* cache = nullptr) const;
  // Accumulates parameter gradients. `d_features` is an optional extra gradient on the feature
  // map (from the decoder). d_input and d_init are written when given.
  void backward(const Cache& cache, const HeadVector& d_out, const nn::Tensor* d_features, nn::Tensor* d_input,
                HeadVector* d_init);
  nn::ParamList params();
  // Zeroes the last head layer, so every iteration predicts a zero update.
  void zero_head();

 private:
  RegressorConfig config_;
  nn::Conv2d stem_;
  std::vector<nn::ResidualBlock> blocks_;
  nn::Conv2d proj_;
  nn::Linear fc1_, fc2_, fc3_;
};

struct DecoderConfig {
  int width = 8;          // channels of each 112 x 112 branch
  int features = 512;     // encoder feature channels
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DecoderConfig& c);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

struct DecoderOutput {
  nn::Tensor depth;  // 1 x 224 x 224
  nn::Tensor ir;
};

// Branch 1: residual block, stride 2, on the masked D/IR pair. Branch 2: four convolution +
// pixel-shuffle stages lift the 7 x 7 features to 112 x 112. The branches are concatenated,
// passed through a residual block, pixel-shuffled to 224 x 224 and mapped to two channels.
class Decoder {
 public:
  struct Cache {
    nn::Tensor masked;
    nn::Tensor features;
    nn::ResidualBlock::Cache branch1;
    std::vector<nn::Tensor> stage_in;   // input of each branch-2 convolution
    std::vector<nn::Tensor> stage_out;  // after shuffle and ReLU
    nn::ResidualBlock::Cache fuse;
    nn::Tensor shuffled;
  };

  explicit Decoder(DecoderConfig config = {});

  const DecoderConfig& config() const { return config_; }
  DecoderOutput forward(const nn::Tensor& masked, const nn::Tensor& features, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const nn::Tensor& d_depth, const nn::Tensor& d_ir, nn::Tensor* d_masked,
                nn::Tensor* d_features);
  nn::ParamList params();

 private:
  DecoderConfig config_;
  nn::ResidualBlock branch1_;
  std::vector<nn::Conv2d> stages_;
  nn::ResidualBlock fuse_;
  nn::Conv2d out_;
};

// Checkpoint: named-array archive holding both networks' weights (prefixes "g." and "d.") with
// a JSON header {level, channel_layout, encoder_config, decoder_config, seed, epoch, ...}.
struct CheckpointHeader {
  int level = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};

io::Archive make_checkpoint(const CheckpointHeader& header, Regressor& g, Decoder& d);
struct LoadedCheckpoint {
  CheckpointHeader header;
  Regressor regressor;
  Decoder decoder;
};
LoadedCheckpoint read_checkpoint(const io::Archive& ar);

}  // namespace restpose::net
