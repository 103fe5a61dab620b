// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <doctest.h>

#include "restpose/errors.hpp"
#include "restpose/losses.hpp"
#include "restpose/raster.hpp"
#include "test_util.hpp"

using namespace restpose;
using namespace restpose::body;
using namespace restpose::losses;

namespace {

constexpr int kSeeds = 10;
constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

const BodyTemplate& toy() {
  static const BodyTemplate t = make_toy_template();
  return t;
}

// ||analytic - numeric|| / ||numeric|| with numeric = central differences of f at x.
double grad_check(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                  const std::vector<double>& analytic, double step = kStep) {
  REQUIRE(analytic.size() == x.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    x[i] = x0;
    const double fd = (fp - fm) / (2.0 * step);
    num += (analytic[i] - fd) * (analytic[i] - fd);
    den += fd * fd;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

template <typename M>
std::vector<double> flat(const M& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), m.rows(), m.cols()) = m;
  return v;
}

template <typename M>
M unflat(const std::vector<double>& v, Eigen::Index rows) {
  M m(rows, M::ColsAtCompileTime);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = v[static_cast<std::size_t>(i)];
  return m;
}

template <typename M>
M random_points(Eigen::Index rows, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  M m(rows, M::ColsAtCompileTime);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ImageD random_image(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageD im(c, h, w);
  for (auto& v : im.data) v = u(rng);
  return im;
}

ImageD random_binary(int h, int w, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.5);
  ImageD im(1, h, w);
  for (auto& v : im.data) v = b(rng) ? 1.0 : 0.0;
  return im;
}

BodyParams random_params(std::mt19937_64& rng, double pose_sd = 0.3) {
  std::normal_distribution<double> n(0.0, 1.0);
  BodyParams p;
  for (auto& v : p.pose.theta) v = pose_sd * n(rng);
  for (auto& v : p.shape.beta) v = n(rng);
  return p;
}

std::vector<double> pack(const BodyParams& p) {
  std::vector<double> v(p.pose.theta.begin(), p.pose.theta.end());
  v.insert(v.end(), p.shape.beta.begin(), p.shape.beta.end());
  return v;
}

BodyParams unpack(const std::vector<double>& v) {
  BodyParams p;
  std::copy(v.begin(), v.begin() + kNumPoseParams, p.pose.theta.begin());
  std::copy(v.begin() + kNumPoseParams, v.end(), p.shape.beta.begin());
  return p;
}

StagePrediction predict_stage(const BodyParams& p, const CameraParams& cam, Stage stage) {
  StagePrediction s;
  s.params = p;
  s.cam = cam;
  s.mesh = forward(toy(), p.pose, p.shape);
  s.joints14_3d = regress_joints14(toy(), s.mesh);
  s.joints14_2d = project(s.joints14_3d, cam);
  s.stage = stage;
  return s;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("joint losses: examples") {
  Points2 a = Points2::Zero(14, 2);
  CHECK(loss_2d(a, a) == 0.0);
  Points2 b = a;
  b.row(5) << 3.0, 4.0;
  CHECK(loss_2d(b, a) == doctest::Approx(25.0 / 14.0).epsilon(1e-15));

  Points3 c = Points3::Zero(14, 3);
  CHECK(loss_3d(c, c) == 0.0);
  Points3 d = c;
  d.row(0) << 3.0, 4.0, 12.0;
  CHECK(loss_3d(d, c) == doctest::Approx(169.0 / 14.0).epsilon(1e-15));

  std::mt19937_64 rng(11);
  const Points2 p = random_points<Points2>(14, rng, 30.0), q = random_points<Points2>(14, rng, 30.0);
  double acc = 0.0;
  for (int j = 0; j < 14; ++j) {
    const double dx = p(j, 0) - q(j, 0), dy = p(j, 1) - q(j, 1);
    acc += dx * dx + dy * dy;
  }
  CHECK(std::abs(loss_2d(p, q) - acc / 14.0) < 1e-12 * std::max(1.0, acc));

  const Points3 r = random_points<Points3>(14, rng, 300.0), s = random_points<Points3>(14, rng, 300.0);
  acc = 0.0;
  for (int j = 0; j < 14; ++j)
    for (int k = 0; k < 3; ++k) acc += (r(j, k) - s(j, k)) * (r(j, k) - s(j, k));
  CHECK(testutil::rel_err(loss_3d(r, s), acc / 14.0) < 1e-12);

  CHECK_THROWS_AS(loss_2d(Points2::Zero(14, 2), Points2::Zero(13, 2)), Error);
}

TEST_CASE("smpl loss: examples") {
  std::mt19937_64 rng(12);
  const BodyParams p = random_params(rng);
  const Points3 v = random_points<Points3>(40, rng, 100.0);
  CHECK(loss_smpl(p, v, p, v) == 0.0);
  const Points3 shifted = (v.array() + 1.0).matrix();
  CHECK(loss_smpl(p, shifted, p, v) == doctest::Approx(1.0).epsilon(1e-14));

  const BodyParams q = random_params(rng);
  const Points3 w = random_points<Points3>(40, rng, 100.0);
  double l1 = 0.0;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (int k = 0; k < 3; ++k) l1 += std::abs(v(i, k) - w(i, k));
  l1 /= static_cast<double>(v.size());
  const auto pv = pack(p), qv = pack(q);
  double l2 = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) l2 += (pv[i] - qv[i]) * (pv[i] - qv[i]);
  l2 /= static_cast<double>(pv.size());
  CHECK(testutil::rel_err(loss_smpl(p, v, q, w), l1 + l2) < 1e-12);
}

TEST_CASE("regressor total: examples and weight linearity") {
  std::mt19937_64 rng(13);
  CameraParams cam;
  cam.s = 0.1;
  cam.t = {112.0, 112.0};
  const BodyParams truth = random_params(rng);
  const StagePrediction perfect = predict_stage(truth, cam, Stage::kCoarse);
  StageTargets tgt{perfect.joints14_2d, perfect.joints14_3d, truth, perfect.mesh.vertices};
  CHECK(loss_regressor_total({&perfect, &perfect}, tgt, {}).total == 0.0);

  const StagePrediction s0 = predict_stage(random_params(rng), cam, Stage::kCoarse);
  const StagePrediction s1 = predict_stage(random_params(rng), cam, Stage::kFine);
  LossWeights zero{0, 0, 0, 0, 0};
  CHECK(loss_regressor_total({&s0, &s1}, tgt, zero).total == 0.0);

  const RegressorLoss unit = loss_regressor_total({&s0, &s1}, tgt, {});
  double hand = 0.0;
  for (const StagePrediction* s : {&s0, &s1}) {
    hand += loss_2d(s->joints14_2d, tgt.joints2d) + loss_3d(s->joints14_3d, tgt.joints3d) +
            loss_smpl(s->params, s->mesh.vertices, truth, tgt.fit_vertices.value());
  }
  CHECK(testutil::rel_err(unit.total, hand) < 1e-12);

  const LossWeights wa{0.3, 2.0, 0.7, 1, 1}, wb{1.1, 0.2, 4.0, 1, 1};
  const LossWeights wab{2 * 0.3 + 3 * 1.1, 2 * 2.0 + 3 * 0.2, 2 * 0.7 + 3 * 4.0, 1, 1};
  const double la = loss_regressor_total({&s0, &s1}, tgt, wa).total;
  const double lb = loss_regressor_total({&s0, &s1}, tgt, wb).total;
  CHECK(testutil::rel_err(loss_regressor_total({&s0, &s1}, tgt, wab).total, 2 * la + 3 * lb) < 1e-12);

  // Without a fit the smpl term is skipped.
  StageTargets no_fit{tgt.joints2d, tgt.joints3d, std::nullopt, std::nullopt};
  const RegressorLoss nf = loss_regressor_total({&s0, &s1}, no_fit, {});
  CHECK(nf.lsmpl[0] == 0.0);
  CHECK(nf.lsmpl[1] == 0.0);

  LossWeights neg;
  neg.w_3d = -1.0;
  CHECK_THROWS_AS(loss_regressor_total({&s0, &s1}, tgt, neg), Error);
}

TEST_CASE("mask loss: examples") {
  ImageD gt(1, 20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 5; ++x) gt.at(0, y, x) = 1.0;  // p = 0.25
  CHECK(loss_mask(gt, gt) == 0.0);
  ImageD shifted(1, 20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 10; x < 15; ++x) shifted.at(0, y, x) = 1.0;
  CHECK(loss_mask(shifted, gt) == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 rng(14);
  const ImageD soft = random_image(1, 17, 23, rng);
  const ImageD bin = random_binary(17, 23, rng);
  double acc = 0.0;
  for (int y = 0; y < 17; ++y)
    for (int x = 0; x < 23; ++x) acc += std::abs(soft.at(0, y, x) - bin.at(0, y, x));
  CHECK(std::abs(loss_mask(soft, bin) - acc / (17.0 * 23.0)) < 1e-12);
  CHECK_THROWS_AS(loss_mask(soft, ImageD(1, 17, 22)), Error);
}

TEST_CASE("decoder loss: examples") {
  std::mt19937_64 rng(15);
  const ImageD td = random_image(1, 16, 16, rng), tir = random_image(1, 16, 16, rng);
  const ImageD mask = random_binary(16, 16, rng);
  CHECK(loss_decoder(td, tir, td, tir, mask, mask).total == 0.0);

  ImageD rd = td, rir = tir;
  for (auto& v : rd.data) v += 0.5;
  for (auto& v : rir.data) v += 0.5;
  const DecoderLoss off = loss_decoder(rd, rir, td, tir, mask, mask);
  CHECK(off.recon_depth == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(off.recon_ir == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(off.mask == 0.0);

  // Outside the mask the reconstruction is free.
  ImageD wild = td;
  for (std::size_t i = 0; i < wild.size(); ++i)
    if (mask.data[i] == 0.0) wild.data[i] = 7.0;
  CHECK(loss_decoder(wild, tir, td, tir, mask, mask).total == 0.0);

  const ImageD empty(1, 16, 16);
  CHECK(loss_decoder(rd, rir, td, tir, empty, empty).total == 0.0);

  const ImageD ad = random_image(1, 16, 16, rng), air = random_image(1, 16, 16, rng);
  const ImageD mp = random_image(1, 16, 16, rng);
  double m = 0.0, d = 0.0, ir = 0.0;
  int support = 0;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      m += std::abs(mp.at(0, y, x) - mask.at(0, y, x));
      if (mask.at(0, y, x) == 1.0) {
        ++support;
        d += std::abs(ad.at(0, y, x) - td.at(0, y, x));
        ir += std::abs(air.at(0, y, x) - tir.at(0, y, x));
      }
    }
  }
  const double oracle = m / 256.0 + d / support + ir / support;
  CHECK(std::abs(loss_decoder(ad, air, td, tir, mp, mask).total - oracle) < 1e-10);

  CHECK_THROWS_AS(loss_decoder(ad, air, td, tir, mp, ImageD(1, 16, 15)), Error);
}

TEST_CASE("float and double decoder losses agree") {
  std::mt19937_64 rng(16);
  const ImageD a = random_image(1, 12, 12, rng), b = random_image(1, 12, 12, rng);
  const ImageD c = random_image(1, 12, 12, rng), d = random_image(1, 12, 12, rng);
  const ImageD mp = random_image(1, 12, 12, rng), mg = random_binary(12, 12, rng);
  auto to_f = [](const ImageD& x) {
    Image y(x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = static_cast<float>(x.data[i]);
    return y;
  };
  const double ld = loss_decoder(a, b, c, d, mp, mg).total;
  const double lf = loss_decoder(to_f(a), to_f(b), to_f(c), to_f(d), to_f(mp), to_f(mg)).total;
  CHECK(std::abs(ld - lf) < 1e-5);
}

TEST_CASE("losses are non-negative and vanish only on agreement") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Points2 p = random_points<Points2>(14, rng, 10.0), q = random_points<Points2>(14, rng, 10.0);
    CHECK(loss_2d(p, q) > 0.0);
    const ImageD a = random_image(1, 8, 8, rng), b = random_image(1, 8, 8, rng);
    CHECK(loss_mask(a, b) > 0.0);
    CHECK(loss_mask(a, a) == 0.0);
  }
}

// Gradient fidelity: central differences, step 1e-5, 10 seeds per loss.

TEST_CASE("gradient: 2D and 3D joint losses") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Points2 p = random_points<Points2>(14, rng, 50.0), q = random_points<Points2>(14, rng, 50.0);
    Points2 g2;
    loss_2d(p, q, &g2);
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_2d(unflat<Points2>(x, 14), q); }, flat(p),
                     flat(g2)) < kTol);

    const Points3 r = random_points<Points3>(14, rng, 500.0), s = random_points<Points3>(14, rng, 500.0);
    Points3 g3;
    loss_3d(r, s, &g3);
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_3d(unflat<Points3>(x, 14), s); }, flat(r),
                     flat(g3)) < kTol);
  }
}

TEST_CASE("gradient: smpl loss with respect to vertices and parameters") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(200 + seed);
    const BodyParams p = random_params(rng), q = random_params(rng);
    const Points3 v = random_points<Points3>(30, rng, 100.0), w = random_points<Points3>(30, rng, 100.0);
    SmplGrad g;
    loss_smpl(p, v, q, w, &g);
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_smpl(p, unflat<Points3>(x, 30), q, w); },
                     flat(v), flat(g.d_vertices)) < kTol);
    std::vector<double> gp(g.d_params.theta.begin(), g.d_params.theta.end());
    gp.insert(gp.end(), g.d_params.beta.begin(), g.d_params.beta.end());
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_smpl(unpack(x), v, q, w); }, pack(p), gp) <
          kTol);
  }
}

TEST_CASE("gradient: smpl loss composed with the body model") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(300 + seed);
    const BodyParams p = random_params(rng), q = random_params(rng);
    const Points3 w = forward(toy(), q.pose, q.shape).vertices;
    auto f = [&](const std::vector<double>& x) {
      const BodyParams bp = unpack(x);
      return loss_smpl(bp, forward(toy(), bp.pose, bp.shape).vertices, q, w);
    };
    ForwardCache cache;
    const Mesh m = forward(toy(), p.pose, p.shape, &cache);
    SmplGrad g;
    loss_smpl(p, m.vertices, q, w, &g);
    const ParamGradient chain = backward(toy(), p.pose, cache, g.d_vertices);
    std::vector<double> total(kNumPoseParams + kNumBetas);
    for (int i = 0; i < kNumPoseParams; ++i) total[i] = chain.theta[i] + g.d_params.theta[i];
    for (int k = 0; k < kNumBetas; ++k) total[kNumPoseParams + k] = chain.beta[k] + g.d_params.beta[k];
    CHECK(grad_check(f, pack(p), total) < kTol);
  }
}

TEST_CASE("gradient: regressor total through both stages") {
  CameraParams cam;
  cam.s = 0.1;
  cam.t = {112.0, 112.0};
  const LossWeights w{0.8, 1e-3, 2.5, 1, 1};
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(400 + seed);
    const BodyParams truth = random_params(rng);
    const StagePrediction gt = predict_stage(truth, cam, Stage::kCoarse);
    const StageTargets tgt{gt.joints14_2d, gt.joints14_3d, truth, gt.mesh.vertices};
    const BodyParams p0 = random_params(rng), p1 = random_params(rng);

    auto total = [&](const std::vector<double>& x) {
      const std::vector<double> a(x.begin(), x.begin() + 82), b(x.begin() + 82, x.end());
      const StagePrediction s0 = predict_stage(unpack(a), cam, Stage::kCoarse);
      const StagePrediction s1 = predict_stage(unpack(b), cam, Stage::kFine);
      return loss_regressor_total({&s0, &s1}, tgt, w).total;
    };

    std::vector<double> x = pack(p0), analytic;
    const auto x1 = pack(p1);
    x.insert(x.end(), x1.begin(), x1.end());
    const StagePrediction s0 = predict_stage(p0, cam, Stage::kCoarse);
    const StagePrediction s1 = predict_stage(p1, cam, Stage::kFine);
    std::array<StageGrad, 2> g;
    loss_regressor_total({&s0, &s1}, tgt, w, &g);
    for (int i = 0; i < 2; ++i) {
      const StagePrediction& s = i == 0 ? s0 : s1;
      ForwardCache cache;
      forward(toy(), s.params.pose, s.params.shape, &cache);
      const Points3 dj3 = g[i].d_joints3d + project_backward(s.joints14_3d, cam, g[i].d_joints2d).d_points;
      const Points3 dv = g[i].d_vertices + toy().j14.transpose() * dj3;
      const ParamGradient pg = backward(toy(), s.params.pose, cache, dv);
      for (int k = 0; k < kNumPoseParams; ++k) analytic.push_back(pg.theta[k] + g[i].d_params.theta[k]);
      for (int k = 0; k < kNumBetas; ++k) analytic.push_back(pg.beta[k] + g[i].d_params.beta[k]);
    }
    CHECK(grad_check(total, x, analytic) < kTol);
  }
}

TEST_CASE("gradient: mask loss") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(500 + seed);
    const ImageD pred = random_image(1, 9, 11, rng), gt = random_binary(9, 11, rng);
    ImageD g;
    loss_mask(pred, gt, &g);
    auto f = [&](const std::vector<double>& x) {
      ImageD p = pred;
      p.data = x;
      return loss_mask(p, gt);
    };
    CHECK(grad_check(f, pred.data, g.data) < kTol);
  }
}

TEST_CASE("gradient: silhouette attention product") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(600 + seed);
    const ImageD mask = random_image(1, 7, 8, rng), img = random_image(2, 7, 8, rng);
    const ImageD gt = random_image(2, 7, 8, rng);
    // Scalar probe: L1 distance of the masked stack to a fixed target.
    auto probe = [&](const ImageD& m, const ImageD& x) { return loss_mask(raster::apply_mask(m, x), gt); };
    ImageD d_out, d_mask, d_img;
    loss_mask(raster::apply_mask(mask, img), gt, &d_out);
    raster::apply_mask_backward(mask, img, d_out, &d_mask, &d_img);
    CHECK(grad_check(
              [&](const std::vector<double>& x) {
                ImageD m = mask;
                m.data = x;
                return probe(m, img);
              },
              mask.data, d_mask.data) < kTol);
    CHECK(grad_check(
              [&](const std::vector<double>& x) {
                ImageD i = img;
                i.data = x;
                return probe(mask, i);
              },
              img.data, d_img.data) < kTol);
  }
}

TEST_CASE("gradient: decoder loss") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(700 + seed);
    const ImageD rd = random_image(1, 10, 10, rng), rir = random_image(1, 10, 10, rng);
    const ImageD td = random_image(1, 10, 10, rng), tir = random_image(1, 10, 10, rng);
    const ImageD mp = random_image(1, 10, 10, rng), mg = random_binary(10, 10, rng);
    const LossWeights w{1, 1, 1, 0.7, 1.9};
    ImageD gd, gir, gm;
    loss_decoder(rd, rir, td, tir, mp, mg, w, &gd, &gir, &gm);
    auto with = [](const ImageD& base, const std::vector<double>& x) {
      ImageD out = base;
      out.data = x;
      return out;
    };
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_decoder(with(rd, x), rir, td, tir, mp, mg, w).total; },
                     rd.data, gd.data) < kTol);
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_decoder(rd, with(rir, x), td, tir, mp, mg, w).total; },
                     rir.data, gir.data) < kTol);
    CHECK(grad_check([&](const std::vector<double>& x) { return loss_decoder(rd, rir, td, tir, with(mp, x), mg, w).total; },
                     mp.data, gm.data) < kTol);
  }
}

}  // TEST_SUITE
