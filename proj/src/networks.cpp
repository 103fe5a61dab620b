// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/networks.hpp"

#include <algorithm>
#include <cmath>

#include "restpose/errors.hpp"

namespace restpose::net {
namespace {

constexpr double kHalfCrop = kCropSize / 2.0;
constexpr int kFeatureSide = 7;

}  // namespace

body::BodyParams head_params(const HeadVector& h) {
  body::BodyParams p;
  std::copy(h.begin(), h.begin() + body::kNumPoseParams, p.pose.theta.begin());
  std::copy(h.begin() + body::kNumPoseParams, h.begin() + kCamOffset, p.shape.beta.begin());
  return p;
}

body::CameraParams head_camera(const HeadVector& h) {
  body::CameraParams cam;
  cam.s = kCamScale * std::exp(h[kCamOffset]);
  cam.t = {kHalfCrop * (1.0 + h[kCamOffset + 1]), kHalfCrop * (1.0 + h[kCamOffset + 2])};
  cam.R = body::rig_rotation();
  return cam;
}

HeadVector make_head(const body::BodyParams& p, const body::CameraParams& cam) {
  require(cam.s > 0.0, ErrorKind::kInvalidParameter, "make_head: camera scale must be positive");
  HeadVector h{};
  std::copy(p.pose.theta.begin(), p.pose.theta.end(), h.begin());
  std::copy(p.shape.beta.begin(), p.shape.beta.end(), h.begin() + body::kNumPoseParams);
  h[kCamOffset] = std::log(cam.s / kCamScale);
  h[kCamOffset + 1] = cam.t.x() / kHalfCrop - 1.0;
  h[kCamOffset + 2] = cam.t.y() / kHalfCrop - 1.0;
  return h;
}

HeadVector head_gradient(const HeadVector& h, const body::ParamGradient& d_params, double d_s,
                         const Eigen::Vector2d& d_t) {
  HeadVector g{};
  std::copy(d_params.theta.begin(), d_params.theta.end(), g.begin());
  std::copy(d_params.beta.begin(), d_params.beta.end(), g.begin() + body::kNumPoseParams);
  g[kCamOffset] = d_s * kCamScale * std::exp(h[kCamOffset]);
  g[kCamOffset + 1] = d_t.x() * kHalfCrop;
  g[kCamOffset + 2] = d_t.y() * kHalfCrop;
  return g;
}

int modality_channels(const std::string& modality) {
  if (modality == "D" || modality == "IR" || modality == "PM") return 1;
  if (modality == "RGB") return 3;
  fail(ErrorKind::kConfig, "unknown modality '" + modality + "'");
}

int layout_channels(const std::vector<std::string>& layout) {
  int c = 0;
  for (const auto& m : layout) c += modality_channels(m);
  return c;
}

void ImageStack::validate() const {
  require(data.height == kCropSize && data.width == kCropSize, ErrorKind::kDimension,
          "image stack must be 224 x 224");
  require(data.channels == layout_channels(layout), ErrorKind::kDimension,
          "image stack channel count does not match its layout");
}

int ImageStack::channel_of(const std::string& modality) const {
  int c = 0;
  for (const auto& m : layout) {
    if (m == modality) return c;
    c += modality_channels(m);
  }
  fail(ErrorKind::kData, "image stack has no '" + modality + "' channel");
}

// ---------------------------------------------------------------------------------------------

EncoderConfig EncoderConfig::toy() { return {}; }

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.scale = "paper";
  c.stem = 64;
  c.widths = {256, 512, 1024};
  c.features = 2048;
  return c;
}

EncoderConfig EncoderConfig::by_name(const std::string& scale) {
  if (scale == "toy") return toy();
  if (scale == "paper") return paper();
  fail(ErrorKind::kConfig, "encoder scale must be 'toy' or 'paper', got '" + scale + "'");
}

void RegressorConfig::validate() const {
  require(!layout.empty(), ErrorKind::kConfig, "regressor layout must not be empty");
  layout_channels(layout);
  require(encoder.widths.size() == 3, ErrorKind::kConfig, "encoder needs three residual stages");
  require(encoder.stem > 0 && encoder.features > 0 && hidden > 0, ErrorKind::kConfig,
          "encoder and head widths must be positive");
  for (int w : encoder.widths) require(w > 0, ErrorKind::kConfig, "encoder widths must be positive");
  require(iterations >= 1, ErrorKind::kConfig, "regressor needs at least one feedback iteration");
}

nlohmann::json to_json(const RegressorConfig& c) {
  return {{"channel_layout", c.layout},
          {"encoder_config",
           {{"scale", c.encoder.scale}, {"stem", c.encoder.stem}, {"widths", c.encoder.widths},
            {"features", c.encoder.features}}},
          {"iterations", c.iterations},
          {"hidden", c.hidden},
          {"seed", c.seed}};
}

RegressorConfig regressor_config_from_json(const nlohmann::json& j) {
  RegressorConfig c;
  try {
    c.layout = j.at("channel_layout").get<std::vector<std::string>>();
    const auto& e = j.at("encoder_config");
    c.encoder.scale = e.at("scale").get<std::string>();
    c.encoder.stem = e.at("stem").get<int>();
    c.encoder.widths = e.at("widths").get<std::vector<int>>();
    c.encoder.features = e.at("features").get<int>();
    c.iterations = j.at("iterations").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kFormat, std::string("regressor config: ") + ex.what());
  }
  c.validate();
  return c;
}

Regressor::Regressor(RegressorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& e = config_.encoder;
  stem_ = nn::Conv2d("g.stem", layout_channels(config_.layout), e.stem, 4, 4, 0);
  int c = e.stem;
  for (std::size_t i = 0; i < e.widths.size(); ++i) {
    blocks_.emplace_back("g.block" + std::to_string(i), c, e.widths[i], 2);
    c = e.widths[i];
  }
  proj_ = nn::Conv2d("g.proj", c, e.features, 1, 1, 0);
  fc1_ = nn::Linear("g.fc1", e.features + kHeadSize, config_.hidden);
  fc2_ = nn::Linear("g.fc2", config_.hidden, config_.hidden);
  fc3_ = nn::Linear("g.fc3", config_.hidden, kHeadSize);

  std::mt19937_64 rng(config_.seed);
  stem_.init(rng);
  for (auto& b : blocks_) b.init(rng);
  proj_.init(rng);
  fc1_.init(rng);
  fc2_.init(rng);
  fc3_.init(rng, 0.01f);
}

void Regressor::zero_head() { fc3_.zero(); }

nn::ParamList Regressor::params() {
  nn::ParamList p;
  stem_.collect(p);
  for (auto& b : blocks_) b.collect(p);
  proj_.collect(p);
  fc1_.collect(p);
  fc2_.collect(p);
  fc3_.collect(p);
  return p;
}

RegressorOutput Regressor::forward(const ImageStack& input, const HeadVector& init, Cache* cache) const {
  input.validate();
  require(input.layout == config_.layout, ErrorKind::kConfig, "image stack layout does not match the regressor");
  for (double v : init) require(std::isfinite(v), ErrorKind::kInvalidParameter, "regressor init must be finite");

  nn::Tensor h = stem_.forward(input.data);
  nn::relu_inplace(h);
  if (cache != nullptr) {
    cache->input = input.data;
    cache->stem = h;
    cache->blocks.assign(blocks_.size(), {});
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].forward(h, cache ? &cache->blocks[i] : nullptr);
  }
  RegressorOutput out;
  out.features = proj_.forward(h);
  nn::relu_inplace(out.features);
  require(out.features.height == kFeatureSide && out.features.width == kFeatureSide, ErrorKind::kDimension,
          "encoder features must be 7 x 7");

  const std::vector<float> pooled = nn::global_avg_pool(out.features);
  // The iterate stays in double so a zero update returns the initialisation exactly.
  HeadVector x = init;
  if (cache != nullptr) {
    cache->features = out.features;
    cache->pooled = pooled;
    cache->iter_in.clear();
    cache->iter_h1.clear();
    cache->iter_h2.clear();
  }
  for (int t = 0; t < config_.iterations; ++t) {
    std::vector<float> in(pooled);
    for (double v : x) in.push_back(static_cast<float>(v));
    std::vector<float> h1 = fc1_.forward(in);
    nn::relu_inplace(h1);
    std::vector<float> h2 = fc2_.forward(h1);
    nn::relu_inplace(h2);
    const std::vector<float> delta = fc3_.forward(h2);
    for (int k = 0; k < kHeadSize; ++k) x[k] += delta[k];
    if (cache != nullptr) {
      cache->iter_in.push_back(std::move(in));
      cache->iter_h1.push_back(std::move(h1));
      cache->iter_h2.push_back(std::move(h2));
    }
  }
  out.params = x;
  return out;
}

void Regressor::backward(const Cache& cache, const HeadVector& d_out, const nn::Tensor* d_features,
                         nn::Tensor* d_input, HeadVector* d_init) {
  require(static_cast<int>(cache.iter_in.size()) == config_.iterations, ErrorKind::kInvalidParameter,
          "regressor backward needs a cache from forward");
  const int f = config_.encoder.features;
  std::vector<float> dx(d_out.begin(), d_out.end());
  std::vector<float> d_pooled(static_cast<std::size_t>(f), 0.0f);
  for (int t = config_.iterations - 1; t >= 0; --t) {
    std::vector<float> dh2, dh1, din;
    fc3_.backward(cache.iter_h2[t], dx, &dh2);
    nn::relu_backward(cache.iter_h2[t], dh2);
    fc2_.backward(cache.iter_h1[t], dh2, &dh1);
    nn::relu_backward(cache.iter_h1[t], dh1);
    fc1_.backward(cache.iter_in[t], dh1, &din);
    for (int k = 0; k < f; ++k) d_pooled[k] += din[k];
    for (int k = 0; k < kHeadSize; ++k) dx[k] += din[f + k];
  }
  if (d_init != nullptr) std::copy(dx.begin(), dx.end(), d_init->begin());

  nn::Tensor g = nn::global_avg_pool_backward(d_pooled, f, cache.features.height, cache.features.width);
  if (d_features != nullptr) {
    require(d_features->same_shape(g), ErrorKind::kDimension, "regressor backward: feature gradient shape");
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += d_features->data[i];
  }
  nn::relu_backward(cache.features, g);
  const nn::Tensor& proj_in = cache.blocks.empty() ? cache.stem : cache.blocks.back().out;
  nn::Tensor dh;
  proj_.backward(proj_in, g, &dh);
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) dh = blocks_[i].backward(cache.blocks[i], dh);
  nn::relu_backward(cache.stem, dh);
  stem_.backward(cache.input, dh, d_input);
}

// ---------------------------------------------------------------------------------------------

void DecoderConfig::validate() const {
  require(width >= 4 && width % 4 == 0, ErrorKind::kConfig, "decoder width must be a positive multiple of 4");
  require(features > 0, ErrorKind::kConfig, "decoder feature channels must be positive");
}

nlohmann::json to_json(const DecoderConfig& c) {
  return {{"width", c.width}, {"features", c.features}, {"seed", c.seed}};
}

DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  try {
    c.width = j.at("width").get<int>();
    c.features = j.at("features").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::kFormat, std::string("decoder config: ") + ex.what());
  }
  c.validate();
  return c;
}

Decoder::Decoder(DecoderConfig config) : config_(config) {
  config_.validate();
  const int w = config_.width, f = config_.features;
  branch1_ = nn::ResidualBlock("d.branch1", 2, w, 2);
  const int c[4] = {std::max(w, f >> 4), std::max(w, f >> 5), std::max(w, f >> 6), w};
  stages_.emplace_back("d.up0", f, 4 * c[0], 1, 1, 0);
  for (int i = 1; i < 4; ++i) stages_.emplace_back("d.up" + std::to_string(i), c[i - 1], 4 * c[i], 3, 1, 1);
  fuse_ = nn::ResidualBlock("d.fuse", 2 * w, w, 1);
  out_ = nn::Conv2d("d.out", w / 4, 2, 3, 1, 1);

  std::mt19937_64 rng(config_.seed);
  branch1_.init(rng);
  for (auto& s : stages_) s.init(rng);
  fuse_.init(rng);
  out_.init(rng, 0.5f);
}

nn::ParamList Decoder::params() {
  nn::ParamList p;
  branch1_.collect(p);
  for (auto& s : stages_) s.collect(p);
  fuse_.collect(p);
  out_.collect(p);
  return p;
}

DecoderOutput Decoder::forward(const nn::Tensor& masked, const nn::Tensor& features, Cache* cache) const {
  require(masked.channels == 2 && masked.height == kCropSize && masked.width == kCropSize, ErrorKind::kDimension,
          "decoder input must be the 2 x 224 x 224 masked D/IR pair");
  require(features.channels == config_.features && features.height == kFeatureSide &&
              features.width == kFeatureSide,
          ErrorKind::kDimension, "decoder features must be " + std::to_string(config_.features) + " x 7 x 7");
  if (cache != nullptr) {
    cache->masked = masked;
    cache->features = features;
    cache->stage_in.clear();
    cache->stage_out.clear();
  }
  const nn::Tensor b1 = branch1_.forward(masked, cache ? &cache->branch1 : nullptr);
  nn::Tensor s = features;
  for (const auto& stage : stages_) {
    nn::Tensor up = nn::pixel_shuffle(stage.forward(s), 2);
    nn::relu_inplace(up);
    if (cache != nullptr) {
      cache->stage_in.push_back(std::move(s));
      cache->stage_out.push_back(up);
    }
    s = std::move(up);
  }
  const nn::Tensor fused = fuse_.forward(nn::concat(b1, s), cache ? &cache->fuse : nullptr);
  nn::Tensor shuffled = nn::pixel_shuffle(fused, 2);
  const nn::Tensor y = out_.forward(shuffled);
  if (cache != nullptr) cache->shuffled = std::move(shuffled);
  DecoderOutput out;
  nn::split(y, 1, &out.depth, &out.ir);
  return out;
}

void Decoder::backward(const Cache& cache, const nn::Tensor& d_depth, const nn::Tensor& d_ir, nn::Tensor* d_masked,
                       nn::Tensor* d_features) {
  require(cache.stage_in.size() == stages_.size(), ErrorKind::kInvalidParameter,
          "decoder backward needs a cache from forward");
  nn::Tensor d_sh;
  out_.backward(cache.shuffled, nn::concat(d_depth, d_ir), &d_sh);
  const nn::Tensor d_cat = fuse_.backward(cache.fuse, nn::pixel_shuffle_backward(d_sh, 2));
  nn::Tensor d_b1, d_s;
  nn::split(d_cat, config_.width, &d_b1, &d_s);
  for (int i = static_cast<int>(stages_.size()) - 1; i >= 0; --i) {
    nn::relu_backward(cache.stage_out[i], d_s);
    nn::Tensor d_prev;
    stages_[i].backward(cache.stage_in[i], nn::pixel_shuffle_backward(d_s, 2), &d_prev);
    d_s = std::move(d_prev);
  }
  if (d_features != nullptr) *d_features = std::move(d_s);
  const nn::Tensor dm = branch1_.backward(cache.branch1, d_b1);
  if (d_masked != nullptr) *d_masked = dm;
}

// ---------------------------------------------------------------------------------------------

io::Archive make_checkpoint(const CheckpointHeader& header, Regressor& g, Decoder& d) {
  io::Archive ar;
  nlohmann::json meta = header.extra;
  const nlohmann::json gj = to_json(g.config());
  meta["level"] = header.level;
  meta["seed"] = header.seed;
  meta["epoch"] = header.epoch;
  meta["channel_layout"] = gj["channel_layout"];
  meta["encoder_config"] = gj["encoder_config"];
  meta["regressor"] = gj;
  meta["decoder_config"] = to_json(d.config());
  ar.meta = meta;
  nn::store(g.params(), ar);
  nn::store(d.params(), ar);
  return ar;
}

LoadedCheckpoint read_checkpoint(const io::Archive& ar) {
  const auto& m = ar.meta;
  require(m.contains("regressor") && m.contains("decoder_config") && m.contains("level"), ErrorKind::kFormat,
          "checkpoint header is missing network configuration");
  LoadedCheckpoint c{{}, Regressor(regressor_config_from_json(m.at("regressor"))),
                     Decoder(decoder_config_from_json(m.at("decoder_config")))};
  c.header.level = m.at("level").get<int>();
  c.header.seed = m.value("seed", std::uint64_t{0});
  c.header.epoch = m.value("epoch", 0);
  c.header.extra = m;
  nn::restore(c.regressor.params(), ar);
  nn::restore(c.decoder.params(), ar);
  return c;
}

}  // namespace restpose::net
