// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <limits>

#include "restpose/errors.hpp"
#include "restpose/metrics.hpp"

namespace restpose::pyramid {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xc2b2ae3d27d4eb4fULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

const char* init_source_name(InitSource s) { return s == InitSource::kMeanParams ? "mean_params" : "previous_level"; }

const Image& modality_image(const data::MultimodalSample& s, const std::string& m) {
  if (m == "D") return s.depth;
  if (m == "IR") return s.ir;
  if (m == "PM") return s.pm;
  if (m == "RGB") return s.rgb;
  fail(ErrorKind::kConfig, "unknown modality '" + m + "'");
}

losses::StagePrediction make_stage(const body::BodyTemplate& tmpl, const net::HeadVector& h, losses::Stage stage,
                                   body::ForwardCache* fc) {
  losses::StagePrediction p;
  p.stage = stage;
  p.params = net::head_params(h);
  p.cam = net::head_camera(h);
  p.mesh = body::forward(tmpl, p.params.pose, p.params.shape, fc);
  p.joints14_3d = body::regress_joints14(tmpl, p.mesh);
  p.joints14_2d = body::project(p.joints14_3d, p.cam);
  return p;
}

// Head gradient of one stage from its loss gradients (and, for the coarse stage, the gradient on
// the projected vertices that reaches it through the silhouette).
net::HeadVector stage_head_gradient(const body::BodyTemplate& tmpl, const net::HeadVector& h,
                                    const losses::StagePrediction& pred, const body::ForwardCache& fc,
                                    const losses::StageGrad& g, const body::Points2* d_verts2d) {
  body::Points3 dj3 = g.d_joints3d;
  const body::ProjectGradient pj = body::project_backward(pred.joints14_3d, pred.cam, g.d_joints2d);
  dj3 += pj.d_points;
  double d_s = pj.d_s;
  Eigen::Vector2d d_t = pj.d_t;
  body::Points3 dv = g.d_vertices;
  dv.noalias() += tmpl.j14.transpose() * dj3;
  if (d_verts2d != nullptr) {
    const body::ProjectGradient pv = body::project_backward(pred.mesh.vertices, pred.cam, *d_verts2d);
    dv += pv.d_points;
    d_s += pv.d_s;
    d_t += pv.d_t;
  }
  body::ParamGradient pg = body::backward(tmpl, pred.params.pose, fc, dv);
  for (int k = 0; k < body::kNumPoseParams; ++k) pg.theta[k] += g.d_params.theta[k];
  for (int k = 0; k < body::kNumBetas; ++k) pg.beta[k] += g.d_params.beta[k];
  return net::head_gradient(h, pg, d_s, d_t);
}

Image to_float(const ImageD& im) {
  Image out(im.channels, im.height, im.width);
  for (std::size_t i = 0; i < im.size(); ++i) out.data[i] = static_cast<float>(im.data[i]);
  return out;
}

ImageD to_double(const Image& im) {
  ImageD out(im.channels, im.height, im.width);
  for (std::size_t i = 0; i < im.size(); ++i) out.data[i] = im.data[i];
  return out;
}

Image channel_pair(const Image& a, const Image& b) {
  Image out(2, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::vector<std::string> layout_for(int k) {
  static const std::vector<std::string> all{"D", "IR", "PM", "RGB"};
  return {all.begin(), all.begin() + 2 + k};
}

std::vector<std::string> variant_layout(const std::string& v) {
  if (v == "single_D") return {"D"};
  if (v == "single_IR") return {"IR"};
  if (v == "single_PM") return {"PM"};
  if (v == "single_RGB") return {"RGB"};
  if (v == "early_fusion") return {"D", "IR", "PM", "RGB"};
  if (v == "no_recon") return {"D", "IR"};
  fail(ErrorKind::kConfig, "unknown ablation variant '" + v + "'");
}

int find_channel(const std::vector<std::string>& layout, const std::string& m) {
  int c = 0;
  for (const auto& x : layout) {
    if (x == m) return c;
    c += net::modality_channels(x);
  }
  return -1;
}

// The no_recon ablation model is trained and evaluated with the decoder bypassed.
bool uses_decoder(const FusionLevelState& state, const CycleOptions& options) {
  return options.recon == ReconMode::kDecoder && state.config.variant != "no_recon";
}

}  // namespace

FusionLevelConfig FusionLevelConfig::for_level(int k) {
  require(k >= 0 && k < kNumLevels, ErrorKind::kConfig, "fusion level must be 0, 1 or 2, got " + std::to_string(k));
  FusionLevelConfig c;
  c.k = k;
  c.modalities = layout_for(k);
  c.init_source = k == 0 ? InitSource::kMeanParams : InitSource::kPreviousLevel;
  return c;
}

FusionLevelConfig FusionLevelConfig::for_variant(const std::string& name) {
  FusionLevelConfig c;
  c.modalities = variant_layout(name);
  c.variant = name;
  return c;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"single_D", "single_IR", "single_PM", "single_RGB", "early_fusion",
                                          "no_recon"};
  return v;
}

void FusionLevelConfig::validate() const {
  if (!variant.empty()) {
    require(modalities == variant_layout(variant), ErrorKind::kConfig,
            "variant " + variant + " has the wrong modalities");
    require(k == 0 && init_source == InitSource::kMeanParams, ErrorKind::kConfig,
            "ablation variants are single models started from the mean parameters");
    return;
  }
  require(k >= 0 && k < kNumLevels, ErrorKind::kConfig, "fusion level must be 0, 1 or 2, got " + std::to_string(k));
  require(modalities == layout_for(k), ErrorKind::kConfig,
          "level " + std::to_string(k) + " modalities do not match the pyramid order D, IR, PM, RGB");
  require((k == 0) == (init_source == InitSource::kMeanParams), ErrorKind::kConfig,
          "level 0 starts from the mean parameters, higher levels from the previous level");
}

net::ImageStack make_stack(const data::MultimodalSample& s, const std::vector<std::string>& layout) {
  net::ImageStack st;
  st.layout = layout;
  st.data = nn::Tensor(net::layout_channels(layout), kCropSize, kCropSize);
  auto out = st.data.data.begin();
  for (const auto& m : layout) {
    const Image& im = modality_image(s, m);
    require(!im.empty(), ErrorKind::kData, "sample " + s.subject_id + "/" + s.pose_id + " lacks the " + m + " channel");
    require(im.height == kCropSize && im.width == kCropSize && im.channels == net::modality_channels(m),
            ErrorKind::kDimension, "modality " + m + " has the wrong shape");
    out = std::copy(im.data.begin(), im.data.end(), out);
  }
  return st;
}

FusionLevelState::FusionLevelState(FusionLevelConfig cfg, const net::RegressorConfig& g_config,
                                   const net::DecoderConfig& d_config)
    : config(std::move(cfg)), g(g_config), d(d_config) {
  config.validate();
  require(g_config.layout == config.modalities, ErrorKind::kConfig, "regressor layout differs from the level modalities");
}

io::Archive FusionLevelState::checkpoint(std::uint64_t seed) {
  net::CheckpointHeader h;
  h.level = config.k;
  h.seed = seed;
  h.epoch = log.empty() ? 0 : log.back().epoch;
  h.extra["frozen"] = frozen;
  h.extra["init_source"] = init_source_name(config.init_source);
  if (!config.variant.empty()) h.extra["variant"] = config.variant;
  nlohmann::json lj = nlohmann::json::array();
  for (const auto& e : log) {
    lj.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"loss", e.loss}, {"loss_g", e.loss_g}, {"loss_d", e.loss_d}});
  }
  h.extra["training_log"] = lj;
  return net::make_checkpoint(h, g, d);
}

std::string FusionLevelState::weight_hash() {
  const auto bytes = checkpoint().serialize();
  return io::sha256_hex(bytes);
}

FusionLevelState FusionLevelState::from_checkpoint(const io::Archive& ar) {
  net::LoadedCheckpoint c = net::read_checkpoint(ar);
  const std::string variant = ar.meta.value("variant", std::string());
  FusionLevelState s(variant.empty() ? FusionLevelConfig::for_level(c.header.level) : FusionLevelConfig::for_variant(variant),
                     c.regressor.config(), c.decoder.config());
  s.g = std::move(c.regressor);
  s.d = std::move(c.decoder);
  s.frozen = ar.meta.value("frozen", false);
  if (ar.meta.contains("training_log")) {
    for (const auto& e : ar.meta.at("training_log")) {
      s.log.push_back({e.at("epoch").get<int>(), e.at("steps").get<int>(), e.at("loss").get<double>(),
                       e.at("loss_g").get<double>(), e.at("loss_d").get<double>()});
    }
  }
  return s;
}

FusionLevelState make_level(int k, std::uint64_t seed, const std::string& encoder_scale) {
  const FusionLevelConfig cfg = FusionLevelConfig::for_level(k);
  net::RegressorConfig gc;
  gc.layout = cfg.modalities;
  gc.encoder = net::EncoderConfig::by_name(encoder_scale);
  gc.seed = mix_seed(seed, 1, static_cast<std::uint64_t>(k));
  net::DecoderConfig dc;
  dc.features = gc.encoder.features;
  dc.seed = mix_seed(seed, 2, static_cast<std::uint64_t>(k));
  return FusionLevelState(cfg, gc, dc);
}

FusionLevelState make_variant(const std::string& variant, std::uint64_t seed, const std::string& encoder_scale) {
  const FusionLevelConfig cfg = FusionLevelConfig::for_variant(variant);
  const auto& names = ablation_variants();
  const auto slot = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), variant) - names.begin());
  net::RegressorConfig gc;
  gc.layout = cfg.modalities;
  gc.encoder = net::EncoderConfig::by_name(encoder_scale);
  gc.seed = mix_seed(seed, 3, slot);
  net::DecoderConfig dc;
  dc.features = gc.encoder.features;
  dc.seed = mix_seed(seed, 4, slot);
  return FusionLevelState(cfg, gc, dc);
}

CycleOutput coarse_to_fine_forward(const FusionLevelState& state, const body::BodyTemplate& tmpl,
                                   const data::MultimodalSample& sample, const net::HeadVector& init,
                                   const CycleOptions& options, CycleCache* cache) {
  CycleCache local;
  CycleCache& c = cache != nullptr ? *cache : local;
  CycleOutput out;

  c.stack = make_stack(sample, state.config.modalities);
  const net::RegressorOutput coarse = state.g.forward(c.stack, init, &c.g_coarse);
  out.coarse_head = coarse.params;
  out.coarse = make_stage(tmpl, coarse.params, losses::Stage::kCoarse, &c.body_coarse);

  c.verts2d = body::project(out.coarse.mesh.vertices, out.coarse.cam);
  out.mask = raster::omp::rasterize(c.verts2d, tmpl.faces, kCropSize, kCropSize, options.sharpness);
  c.mask = to_float(out.mask.soft);

  const int ch_d = find_channel(c.stack.layout, "D"), ch_ir = find_channel(c.stack.layout, "IR");
  Image d_plane(1, kCropSize, kCropSize), ir_plane(1, kCropSize, kCropSize);
  if (ch_d >= 0) std::copy(c.stack.data.plane(ch_d).begin(), c.stack.data.plane(ch_d).end(), d_plane.data.begin());
  if (ch_ir >= 0) std::copy(c.stack.data.plane(ch_ir).begin(), c.stack.data.plane(ch_ir).end(), ir_plane.data.begin());
  c.dir_pair = channel_pair(d_plane, ir_plane);
  const nn::Tensor masked = raster::apply_mask(c.mask, c.dir_pair);
  out.recon = state.d.forward(masked, coarse.features, &c.dec);

  c.fine_stack = c.stack;
  if (uses_decoder(state, options)) {
    if (ch_d >= 0) std::copy(out.recon.depth.data.begin(), out.recon.depth.data.end(), c.fine_stack.data.plane(ch_d).begin());
    if (ch_ir >= 0) std::copy(out.recon.ir.data.begin(), out.recon.ir.data.end(), c.fine_stack.data.plane(ch_ir).begin());
  }
  const net::RegressorOutput fine = state.g.forward(c.fine_stack, coarse.params, &c.g_fine);
  out.fine_head = fine.params;
  out.fine = make_stage(tmpl, fine.params, losses::Stage::kFine, &c.body_fine);
  return out;
}

CycleLoss cycle_loss(FusionLevelState* state, const body::BodyTemplate& tmpl, const CycleOutput& out,
                     const CycleCache& cache, const SampleTargets& targets, const losses::LossWeights& w,
                     const CycleOptions& options, net::HeadVector* d_init) {
  require(targets.uncovered_depth && targets.uncovered_ir && targets.mask_gt, ErrorKind::kInvalidParameter,
          "cycle_loss: decoder targets missing");
  const bool grads = state != nullptr && !state->frozen;
  const bool want_grad = grads || d_init != nullptr;
  CycleLoss loss;
  std::array<losses::StageGrad, 2> sg;
  loss.g = losses::loss_regressor_total({&out.coarse, &out.fine}, targets.stage, w, want_grad ? &sg : nullptr);
  Image d_depth, d_ir, d_mask;
  loss.d = losses::loss_decoder(out.recon.depth, out.recon.ir, *targets.uncovered_depth, *targets.uncovered_ir,
                                cache.mask, *targets.mask_gt, w, want_grad ? &d_depth : nullptr,
                                want_grad ? &d_ir : nullptr, want_grad ? &d_mask : nullptr);
  loss.total = loss.g.total + loss.d.total;
  if (!want_grad) return loss;
  require(state != nullptr, ErrorKind::kInvalidParameter, "cycle_loss: gradients need the level state");

  // The shared regressor accumulates from both passes; with a frozen state only d_init is wanted,
  // so parameter gradients are written to scratch copies that are discarded.
  FusionLevelState* s = state;
  std::optional<FusionLevelState> scratch;
  if (state->frozen) {
    scratch.emplace(*state);
    s = &*scratch;
  }

  // Fine pass.
  const net::HeadVector d_fine =
      stage_head_gradient(tmpl, out.fine_head, out.fine, cache.body_fine, sg[1], nullptr);
  const bool through_recon = uses_decoder(*state, options) &&
                            (find_channel(cache.fine_stack.layout, "D") >= 0 || find_channel(cache.fine_stack.layout, "IR") >= 0);
  nn::Tensor d_fine_input;
  net::HeadVector d_coarse_from_fine{};
  s->g.backward(cache.g_fine, d_fine, nullptr, through_recon ? &d_fine_input : nullptr, &d_coarse_from_fine);

  // Decoder: its own loss plus, with reconstruction on, the fine pass's demand on the D/IR inputs.
  if (through_recon) {
    const int ch_d = find_channel(cache.fine_stack.layout, "D"), ch_ir = find_channel(cache.fine_stack.layout, "IR");
    if (ch_d >= 0) {
      const auto pd = d_fine_input.plane(ch_d);
      for (std::size_t i = 0; i < d_depth.size(); ++i) d_depth.data[i] += pd[i];
    }
    if (ch_ir >= 0) {
      const auto pi = d_fine_input.plane(ch_ir);
      for (std::size_t i = 0; i < d_ir.size(); ++i) d_ir.data[i] += pi[i];
    }
  }
  nn::Tensor d_masked, d_features;
  s->d.backward(cache.dec, d_depth, d_ir, &d_masked, &d_features);
  Image d_mask_att;
  raster::apply_mask_backward(cache.mask, cache.dir_pair, d_masked, &d_mask_att, static_cast<Image*>(nullptr));
  for (std::size_t i = 0; i < d_mask.size(); ++i) d_mask.data[i] += d_mask_att.data[i];
  const body::Points2 d_verts2d =
      raster::rasterize_backward(cache.verts2d, tmpl.faces, out.mask, options.sharpness, to_double(d_mask));

  // Coarse pass.
  net::HeadVector d_coarse =
      stage_head_gradient(tmpl, out.coarse_head, out.coarse, cache.body_coarse, sg[0], &d_verts2d);
  for (int k = 0; k < net::kHeadSize; ++k) d_coarse[k] += d_coarse_from_fine[k];
  net::HeadVector d_init_local{};
  s->g.backward(cache.g_coarse, d_coarse, &d_features, nullptr, &d_init_local);
  if (d_init != nullptr) *d_init = d_init_local;
  return loss;
}

void TrainConfig::validate() const {
  require(max_steps >= 0, ErrorKind::kConfig, "max_steps must be non-negative");
  require(max_epochs >= 0, ErrorKind::kConfig, "max_epochs must be non-negative");
  require(batch >= 1, ErrorKind::kConfig, "batch must be at least 1");
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::kConfig, "learning rate must be positive");
  require(loss_change_tol >= 0.0, ErrorKind::kConfig, "loss_change_tol must be non-negative");
  require(cycle.sharpness > 0.0, ErrorKind::kConfig, "sharpness must be positive");
  require(fit_refresh_every >= 0, ErrorKind::kConfig, "fit_refresh_every must be non-negative");
  weights.validate();
  fit_config.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_steps", c.max_steps},
          {"max_epochs", c.max_epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"loss_change_tol", c.loss_change_tol},
          {"w_2d", c.weights.w_2d},
          {"w_3d", c.weights.w_3d},
          {"w_smpl", c.weights.w_smpl},
          {"w_mask", c.weights.w_mask},
          {"w_recon", c.weights.w_recon},
          {"sharpness", c.cycle.sharpness},
          {"recon", c.cycle.recon == ReconMode::kDecoder ? "decoder" : "bypass"},
          {"seed", c.seed},
          {"augment", c.augment},
          {"fit_refresh_every", c.fit_refresh_every},
          {"fit_max_iters", c.fit_config.max_iters},
          {"fit_lambda_reg", c.fit_config.lambda_reg},
          {"fit_lambda_3d", c.fit_config.lambda_3d}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kConfig, "training config must be a JSON object");
  TrainConfig c;
  const nlohmann::json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorKind::kConfig, "unknown training config key '" + key + "'");
  }
  try {
    c.max_steps = j.value("max_steps", c.max_steps);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.loss_change_tol = j.value("loss_change_tol", c.loss_change_tol);
    c.weights.w_2d = j.value("w_2d", c.weights.w_2d);
    c.weights.w_3d = j.value("w_3d", c.weights.w_3d);
    c.weights.w_smpl = j.value("w_smpl", c.weights.w_smpl);
    c.weights.w_mask = j.value("w_mask", c.weights.w_mask);
    c.weights.w_recon = j.value("w_recon", c.weights.w_recon);
    c.cycle.sharpness = j.value("sharpness", c.cycle.sharpness);
    const std::string recon = j.value("recon", std::string("decoder"));
    require(recon == "decoder" || recon == "bypass", ErrorKind::kConfig, "recon must be 'decoder' or 'bypass'");
    c.cycle.recon = recon == "decoder" ? ReconMode::kDecoder : ReconMode::kBypass;
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.fit_refresh_every = j.value("fit_refresh_every", c.fit_refresh_every);
    c.fit_config.max_iters = j.value("fit_max_iters", c.fit_config.max_iters);
    c.fit_config.lambda_reg = j.value("fit_lambda_reg", c.fit_config.lambda_reg);
    c.fit_config.lambda_3d = j.value("fit_lambda_3d", c.fit_config.lambda_3d);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

net::HeadVector mean_head(const data::MeanParamsFile& m) { return net::make_head(m.params, m.camera); }

std::vector<CycleOutput> predict_chain(const std::vector<const FusionLevelState*>& states,
                                       const body::BodyTemplate& tmpl, const data::MultimodalSample& sample,
                                       const net::HeadVector& mean, int K, const CycleOptions& options) {
  require(K >= 0 && K < kNumLevels, ErrorKind::kConfig, "K must be 0, 1 or 2");
  require(static_cast<int>(states.size()) > K, ErrorKind::kDependency,
          "prediction at K=" + std::to_string(K) + " needs " + std::to_string(K + 1) + " levels");
  std::vector<CycleOutput> outs;
  net::HeadVector init = mean;
  for (int j = 0; j <= K; ++j) {
    require(states[j] != nullptr && states[j]->config.k == j, ErrorKind::kInvariant,
            "level states must be ordered 0..K");
    require(states[j]->config.variant.empty() || K == 0, ErrorKind::kInvariant,
            "an ablation model cannot be chained with pyramid levels");
    outs.push_back(coarse_to_fine_forward(*states[j], tmpl, sample, init, options));
    init = outs.back().fine_head;
  }
  return outs;
}

Prediction predict(const std::vector<const FusionLevelState*>& states, const body::BodyTemplate& tmpl,
                   const data::MultimodalSample& sample, const net::HeadVector& mean, int K,
                   const CycleOptions& options) {
  auto outs = predict_chain(states, tmpl, sample, mean, K, options);
  auto& f = outs.back().fine;
  return {f.params, f.cam, std::move(f.mesh)};
}

// ---------------------------------------------------------------------------------------------
// Training.

LevelTrainer::LevelTrainer(int k, const data::Dataset& train, std::vector<const FusionLevelState*> lower,
                           const net::HeadVector& mean, const body::BodyTemplate& tmpl, TrainConfig config,
                           std::optional<FusionLevelState> initial)
    : k_(k),
      train_(train),
      lower_(std::move(lower)),
      mean_(mean),
      tmpl_(tmpl),
      config_(std::move(config)),
      state_(initial ? std::move(*initial) : make_level(k, config_.seed)),
      opt_(nn::AdamConfig{config_.lr}) {
  config_.validate();
  require(k >= 0 && k < kNumLevels, ErrorKind::kConfig, "fusion level must be 0, 1 or 2");
  require(static_cast<int>(lower_.size()) == k, ErrorKind::kInvariant,
          "level " + std::to_string(k) + " needs exactly " + std::to_string(k) + " lower levels");
  for (int j = 0; j < k; ++j) {
    require(lower_[j] != nullptr && lower_[j]->config.k == j, ErrorKind::kInvariant, "lower levels must be ordered");
    require(lower_[j]->frozen, ErrorKind::kInvariant, "lower level " + std::to_string(j) + " is not frozen");
  }
  require(state_.config.k == k, ErrorKind::kInvariant, "initial state belongs to another level");
  require(state_.config.variant.empty() || k == 0, ErrorKind::kInvariant, "ablation variants have no lower levels");
  require(!state_.frozen, ErrorKind::kInvariant, "cannot train a frozen level");
  require(!train.empty(), ErrorKind::kEmptyInput, "training set is empty");
  const std::size_t n = train.size();
  fits_.assign(n, std::nullopt);
  fit_vertices_.assign(n, body::Points3());
  fit_objective_.assign(n, std::numeric_limits<double>::infinity());
  init_cache_.assign(n, std::nullopt);
  refresh_fits();
}

const net::HeadVector& LevelTrainer::init_for(std::size_t i) {
  if (!init_cache_[i]) {
    init_cache_[i] = k_ == 0 ? mean_ : predict_chain(lower_, tmpl_, train_[i], mean_, k_ - 1, config_.cycle).back().fine_head;
  }
  return *init_cache_[i];
}

// Improve-or-keep pseudo ground truth. Ground-truth parameters, where the data has them, are
// the exact minimiser of the joint terms and are kept as they are.
void LevelTrainer::refresh_fits() {
  const std::size_t n = train_.size();
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = train_[i];
    if (s.gt_params) {
      if (!fits_[i]) {
        fits_[i] = *s.gt_params;
        fit_vertices_[i] = body::forward(tmpl_, s.gt_params->pose, s.gt_params->shape).vertices;
        fit_objective_[i] = 0.0;
      }
      continue;
    }
    todo.push_back(i);
  }
  if (todo.empty()) return;
  // Starting point: the current fine prediction (the mean before any training).
  std::vector<fit::FitInit> starts(todo.size());
  for (std::size_t t = 0; t < todo.size(); ++t) {
    const std::size_t i = todo[t];
    const net::HeadVector& init = init_for(i);
    if (steps_ == 0) {
      starts[t] = {net::head_params(init), net::head_camera(init)};
    } else {
      const CycleOutput o = coarse_to_fine_forward(state_, tmpl_, train_[i], init, config_.cycle);
      starts[t] = {o.fine.params, o.fine.cam};
    }
  }
  std::vector<std::exception_ptr> errors(todo.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(todo.size()); ++t) {
    const std::size_t i = todo[t];
    try {
      const auto& s = train_[i];
      const fit::FitResult r = fit::fit_body_to_joints(tmpl_, s.joints14_2d, s.joints14_3d, starts[t], config_.fit_config);
      if (r.final_objective < fit_objective_[i]) {
        fits_[i] = r.params();
        fit_vertices_[i] = body::forward(tmpl_, r.theta, r.beta).vertices;
        fit_objective_[i] = r.final_objective;
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

bool LevelTrainer::run_epoch() {
  if (finished_) return false;
  if (steps_ >= config_.max_steps) {
    finished_ = true;
    stop_reason_ = "max_steps";
    return false;
  }
  const std::size_t n = train_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(mix_seed(config_.seed, 100 + static_cast<std::uint64_t>(k_),
                                       static_cast<std::uint64_t>(epoch_)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const nn::ParamList params = [&] {
    nn::ParamList p = state_.g.params();
    const nn::ParamList pd = state_.d.params();
    p.insert(p.end(), pd.begin(), pd.end());
    return p;
  }();

  const std::size_t batches = (n + config_.batch - 1) / config_.batch;
  for (; batch_pos_ < batches && steps_ < config_.max_steps; ++batch_pos_) {
    const std::size_t b0 = batch_pos_ * config_.batch, b1 = std::min(n, b0 + config_.batch);
    nn::zero_grad(params);
    double batch_loss = 0.0;
    for (std::size_t bi = b0; bi < b1; ++bi) {
      const std::size_t i = order[bi];
      data::MultimodalSample aug;
      const data::MultimodalSample* sample = &train_[i];
      if (config_.augment) {
        std::mt19937_64 arng(mix_seed(config_.seed, 200 + static_cast<std::uint64_t>(k_),
                                      (static_cast<std::uint64_t>(epoch_) << 32) | i));
        aug = data::augment(train_[i], arng, config_.augment_config);
        sample = &aug;
      }
      const net::HeadVector init =
          config_.augment ? (k_ == 0 ? mean_
                                     : predict_chain(lower_, tmpl_, *sample, mean_, k_ - 1, config_.cycle).back().fine_head)
                          : init_for(i);
      SampleTargets t;
      t.stage.joints2d = sample->joints14_2d;
      t.stage.joints3d = sample->joints14_3d;
      if (config_.augment) {
        // Pseudo ground truth only follows the transform when it is the true parameter set.
        if (sample->gt_params) {
          t.stage.fit = *sample->gt_params;
          t.stage.fit_vertices = body::forward(tmpl_, sample->gt_params->pose, sample->gt_params->shape).vertices;
        }
      } else if (fits_[i]) {
        t.stage.fit = *fits_[i];
        t.stage.fit_vertices = fit_vertices_[i];
      }
      t.uncovered_depth = &sample->uncovered_depth;
      t.uncovered_ir = &sample->uncovered_ir;
      t.mask_gt = &sample->mask_gt;
      CycleCache cache;
      const CycleOutput out = coarse_to_fine_forward(state_, tmpl_, *sample, init, config_.cycle, &cache);
      const CycleLoss l = cycle_loss(&state_, tmpl_, out, cache, t, config_.weights, config_.cycle);
      require(std::isfinite(l.total), ErrorKind::kOptimization,
              "non-finite training loss at step " + std::to_string(steps_));
      batch_loss += l.total;
      epoch_sum_ += l.total;
      epoch_sum_g_ += l.g.total;
      epoch_sum_d_ += l.d.total;
      ++epoch_count_;
    }
    opt_.step(params, static_cast<int>(b1 - b0));
    ++steps_;
    step_losses_.push_back(batch_loss / static_cast<double>(b1 - b0));
  }
  if (batch_pos_ < batches) {
    // Step budget ran out inside the epoch.
    finished_ = true;
    stop_reason_ = "max_steps";
    close_epoch(false);
    return false;
  }
  const double loss = close_epoch(true);
  batch_pos_ = 0;
  ++epoch_;
  if (config_.fit_refresh_every > 0 && epoch_ % config_.fit_refresh_every == 0) refresh_fits();
  if (prev_epoch_loss_ && std::abs(loss - *prev_epoch_loss_) <= config_.loss_change_tol * std::abs(*prev_epoch_loss_)) {
    finished_ = true;
    stop_reason_ = "loss_change";
  }
  prev_epoch_loss_ = loss;
  if (!finished_ && steps_ >= config_.max_steps) {
    finished_ = true;
    stop_reason_ = "max_steps";
  }
  if (!finished_ && config_.max_epochs > 0 && epoch_ >= config_.max_epochs) {
    finished_ = true;
    stop_reason_ = "max_epochs";
  }
  return !finished_;
}

// Logs the epoch's mean loss. An interrupted epoch keeps its running sums for a resume.
double LevelTrainer::close_epoch(bool complete) {
  const double c = std::max(1, epoch_count_);
  const double loss = epoch_sum_ / c;
  state_.log.push_back({epoch_, steps_, loss, epoch_sum_g_ / c, epoch_sum_d_ / c});
  if (complete) {
    epoch_sum_ = epoch_sum_g_ = epoch_sum_d_ = 0.0;
    epoch_count_ = 0;
  }
  return loss;
}

void LevelTrainer::run() {
  while (run_epoch()) {
  }
}

io::Archive LevelTrainer::training_state() {
  io::Archive ar;
  nn::ParamList p = state_.g.params();
  const nn::ParamList pd = state_.d.params();
  p.insert(p.end(), pd.begin(), pd.end());
  nn::store(p, ar, true);
  ar.put_f64("step_losses", step_losses_, {static_cast<std::int64_t>(step_losses_.size())});
  nlohmann::json fits = nlohmann::json::array();
  for (std::size_t i = 0; i < fits_.size(); ++i) {
    if (fits_[i] && !train_[i].gt_params) {
      fits.push_back({{"index", i}, {"params", fit::params_to_json(*fits_[i])}, {"objective", fit_objective_[i]}});
    }
  }
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : state_.log) {
    log.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"loss", e.loss}, {"loss_g", e.loss_g}, {"loss_d", e.loss_d}});
  }
  ar.meta = {{"level", k_},
             {"train_config", to_json(config_)},
             {"samples", train_.size()},
             {"epoch", epoch_},
             {"batch_pos", batch_pos_},
             {"steps", steps_},
             {"adam_steps", opt_.steps()},
             {"epoch_sum", epoch_sum_},
             {"epoch_sum_g", epoch_sum_g_},
             {"epoch_sum_d", epoch_sum_d_},
             {"epoch_count", epoch_count_},
             {"prev_epoch_loss", prev_epoch_loss_ ? nlohmann::json(*prev_epoch_loss_) : nlohmann::json(nullptr)},
             {"finished", finished_},
             {"stop_reason", stop_reason_},
             {"log", log},
             {"fits", fits}};
  return ar;
}

void LevelTrainer::resume(const io::Archive& ar) {
  const auto& m = ar.meta;
  require(m.value("level", -1) == k_, ErrorKind::kDependency, "training state belongs to another level");
  require(m.value("samples", std::size_t{0}) == train_.size(), ErrorKind::kDependency,
          "training state was recorded on a different training set");
  nn::ParamList p = state_.g.params();
  const nn::ParamList pd = state_.d.params();
  p.insert(p.end(), pd.begin(), pd.end());
  nn::restore(p, ar, true);
  step_losses_ = ar.get_f64("step_losses");
  epoch_ = m.at("epoch").get<int>();
  batch_pos_ = m.at("batch_pos").get<std::size_t>();
  steps_ = m.at("steps").get<int>();
  opt_.set_steps(m.at("adam_steps").get<std::int64_t>());
  epoch_sum_ = m.at("epoch_sum").get<double>();
  epoch_sum_g_ = m.at("epoch_sum_g").get<double>();
  epoch_sum_d_ = m.at("epoch_sum_d").get<double>();
  epoch_count_ = m.at("epoch_count").get<int>();
  prev_epoch_loss_.reset();
  if (!m.at("prev_epoch_loss").is_null()) prev_epoch_loss_ = m.at("prev_epoch_loss").get<double>();
  // A run stopped by its step budget continues when the budget has grown.
  finished_ = m.at("finished").get<bool>();
  stop_reason_ = m.at("stop_reason").get<std::string>();
  if (finished_ && ((stop_reason_ == "max_steps" && steps_ < config_.max_steps) ||
                    (stop_reason_ == "max_epochs" && (config_.max_epochs == 0 || epoch_ < config_.max_epochs)))) {
    finished_ = false;
    stop_reason_.clear();
  }
  state_.log.clear();
  for (const auto& e : m.at("log")) {
    state_.log.push_back({e.at("epoch").get<int>(), e.at("steps").get<int>(), e.at("loss").get<double>(),
                          e.at("loss_g").get<double>(), e.at("loss_d").get<double>()});
  }
  // The entry of an interrupted epoch is rewritten when that epoch completes.
  if (!finished_ && !state_.log.empty() && state_.log.back().epoch == epoch_) state_.log.pop_back();
  for (const auto& f : m.at("fits")) {
    const std::size_t i = f.at("index").get<std::size_t>();
    require(i < fits_.size(), ErrorKind::kFormat, "training state fit index out of range");
    fits_[i] = fit::params_from_json(f.at("params"));
    fit_vertices_[i] = body::forward(tmpl_, fits_[i]->pose, fits_[i]->shape).vertices;
    fit_objective_[i] = f.at("objective").get<double>();
  }
}

FusionLevelState train_level(int k, const data::Dataset& train, const std::vector<const FusionLevelState*>& lower,
                             const net::HeadVector& mean, const body::BodyTemplate& tmpl, const TrainConfig& config) {
  LevelTrainer t(k, train, lower, mean, tmpl, config);
  t.run();
  FusionLevelState s = std::move(t.state());
  s.frozen = true;
  return s;
}

FusionLevelState train_variant(const std::string& variant, const data::Dataset& train, const net::HeadVector& mean,
                               const body::BodyTemplate& tmpl, const TrainConfig& config) {
  LevelTrainer t(0, train, {}, mean, tmpl, config, make_variant(variant, config.seed));
  t.run();
  FusionLevelState s = std::move(t.state());
  s.frozen = true;
  return s;
}

// ---------------------------------------------------------------------------------------------
// Evaluation.

SampleRecord score_prediction(const data::MultimodalSample& sample, const body::BodyTemplate& tmpl,
                              const Prediction& pred, double sharpness) {
  SampleRecord r;
  r.subject_id = sample.subject_id;
  r.pose_id = sample.pose_id;
  r.cover = sample.cover;
  const body::Points3 j3 = body::regress_joints14(tmpl, pred.mesh);
  r.mpjpe = metrics::mpjpe(j3, sample.joints14_3d);
  r.reconstruction_error = metrics::reconstruction_error(j3, sample.joints14_3d);
  const raster::RasterResult sil = raster::rasterize_silhouette(pred.mesh, tmpl.faces, pred.cam, kCropSize, sharpness);
  const metrics::SegScores seg = metrics::seg_scores(to_float(raster::hard_mask(sil.soft)), sample.mask_gt);
  r.seg_accuracy = seg.accuracy;
  r.seg_f1 = seg.f1;
  return r;
}

EvalReport summarize(std::vector<SampleRecord> records, int K) {
  EvalReport rep;
  rep.K = K;
  rep.records = std::move(records);
  auto accumulate = [](StratumSummary& s, const SampleRecord& r) {
    ++s.count;
    s.mpjpe += r.mpjpe;
    s.reconstruction_error += r.reconstruction_error;
    s.seg_accuracy += r.seg_accuracy;
    s.seg_f1 += r.seg_f1;
  };
  auto finish = [](StratumSummary& s) {
    if (s.count == 0) return;
    s.mpjpe /= s.count;
    s.reconstruction_error /= s.count;
    s.seg_accuracy /= s.count;
    s.seg_f1 /= s.count;
  };
  for (std::size_t i = 0; i < kStratumOrder.size(); ++i) rep.strata[i].cover = kStratumOrder[i];
  rep.overall.cover = data::CoverType::kUncover;
  for (const auto& r : rep.records) {
    for (auto& s : rep.strata) {
      if (s.cover == r.cover) accumulate(s, r);
    }
    accumulate(rep.overall, r);
  }
  for (auto& s : rep.strata) finish(s);
  finish(rep.overall);
  return rep;
}

EvalReport evaluate(const std::vector<const FusionLevelState*>& states, const body::BodyTemplate& tmpl,
                    const data::Dataset& dataset, const net::HeadVector& mean, int K, const CycleOptions& options) {
  require(!dataset.empty(), ErrorKind::kEmptyInput, "evaluation set is empty");
  std::vector<SampleRecord> records(dataset.size());
  std::vector<std::exception_ptr> errors(dataset.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(dataset.size()); ++i) {
    try {
      const Prediction p = predict(states, tmpl, dataset[i], mean, K, options);
      records[i] = score_prediction(dataset[i], tmpl, p, options.sharpness);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EvalReport rep = summarize(std::move(records), K);
  for (int j = 0; j <= K && j < static_cast<int>(states.size()); ++j) {
    auto& s = const_cast<FusionLevelState&>(*states[j]);
    rep.parameter_count += nn::count_parameters(s.g.params()) + nn::count_parameters(s.d.params());
  }
  return rep;
}

nlohmann::json to_json(const SampleRecord& r) {
  return {{"subject", r.subject_id},
          {"pose", r.pose_id},
          {"cover_type", data::to_string(r.cover)},
          {"mpjpe_mm", r.mpjpe},
          {"reconstruction_error_mm", r.reconstruction_error},
          {"seg_accuracy", r.seg_accuracy},
          {"seg_f1", r.seg_f1}};
}

SampleRecord sample_record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  try {
    r.subject_id = j.at("subject").get<std::string>();
    r.pose_id = j.at("pose").get<std::string>();
    r.cover = data::cover_from_string(j.at("cover_type").get<std::string>());
    r.mpjpe = j.at("mpjpe_mm").get<double>();
    r.reconstruction_error = j.at("reconstruction_error_mm").get<double>();
    r.seg_accuracy = j.at("seg_accuracy").get<double>();
    r.seg_f1 = j.at("seg_f1").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("per-sample record: ") + e.what());
  }
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  auto stratum = [](const StratumSummary& s) {
    if (s.count == 0) return nlohmann::json{{"count", 0}, {"absent", true}};
    return nlohmann::json{{"count", s.count},
                          {"mpjpe_mm", s.mpjpe},
                          {"reconstruction_error_mm", s.reconstruction_error},
                          {"seg_accuracy", s.seg_accuracy},
                          {"seg_f1", s.seg_f1}};
  };
  nlohmann::json strata = nlohmann::json::object();
  nlohmann::json order = nlohmann::json::array();
  for (const auto& s : r.strata) {
    strata[data::to_string(s.cover)] = stratum(s);
    order.push_back(data::to_string(s.cover));
  }
  return {{"K", r.K},
          {"strata_order", order},
          {"strata", strata},
          {"overall", stratum(r.overall)},
          {"parameter_count", r.parameter_count}};
}

// ---------------------------------------------------------------------------------------------
// Run directory.

std::filesystem::path level_dir(const std::filesystem::path& run, int k) { return run / ("level" + std::to_string(k)); }

std::filesystem::path variant_dir(const std::filesystem::path& run, const std::string& variant) {
  return run / "ablation" / variant;
}

std::filesystem::path state_dir(const std::filesystem::path& run, const FusionLevelConfig& config) {
  return config.variant.empty() ? level_dir(run, config.k) : variant_dir(run, config.variant);
}

void write_train_log(const FusionLevelState& state, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << "epoch,steps,loss,loss_g,loss_d\n";
  out.precision(17);
  for (const auto& e : state.log) out << e.epoch << ',' << e.steps << ',' << e.loss << ',' << e.loss_g << ',' << e.loss_d << '\n';
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
}

void save_level(FusionLevelState& state, const std::filesystem::path& run, std::uint64_t seed) {
  const auto dir = state_dir(run, state.config);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create " + dir.string());
  state.checkpoint(seed).save(dir / "checkpoint.arc");
  write_train_log(state, dir / "train_log.csv");
}

FusionLevelState load_level(const std::filesystem::path& run, int k) {
  const auto path = level_dir(run, k) / "checkpoint.arc";
  require(std::filesystem::exists(path), ErrorKind::kDependency,
          "level " + std::to_string(k) + " checkpoint not found: " + path.string());
  FusionLevelState s = FusionLevelState::from_checkpoint(io::Archive::load(path));
  require(s.config.k == k && s.config.variant.empty(), ErrorKind::kFormat,
          path.string() + " does not hold pyramid level " + std::to_string(k));
  return s;
}

FusionLevelState load_variant(const std::filesystem::path& run, const std::string& variant) {
  FusionLevelConfig::for_variant(variant);
  const auto path = variant_dir(run, variant) / "checkpoint.arc";
  require(std::filesystem::exists(path), ErrorKind::kDependency, "ablation model not found: " + path.string());
  FusionLevelState s = FusionLevelState::from_checkpoint(io::Archive::load(path));
  require(s.config.variant == variant, ErrorKind::kFormat, path.string() + " holds another model");
  return s;
}

}  // namespace restpose::pyramid
