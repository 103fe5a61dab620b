// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include <omp.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <doctest.h>

#include "restpose/datagen.hpp"
#include "restpose/errors.hpp"
#include "restpose/png_io.hpp"
#include "restpose/render.hpp"
#include "test_util.hpp"

using namespace restpose;
using namespace restpose::data;
namespace fs = std::filesystem;

namespace {

const body::BodyTemplate& toy() {
  static const body::BodyTemplate t = body::make_toy_template();
  return t;
}

SynthConfig small_config() {
  SynthConfig c;
  c.n_subjects = 2;
  c.poses_per_subject = 3;
  c.seed = 7;
  return c;
}

const Dataset& small_dataset() {
  static const Dataset ds = generate_dataset(small_config(), toy());
  return ds;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_bytes(e.path());
  }
  return out;
}

Eigen::Vector2d centroid(const Image& im, int channel, const std::function<bool(float)>& on) {
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  double n = 0.0;
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      if (on(im.at(channel, y, x))) {
        sum += Eigen::Vector2d(x + 0.5, y + 0.5);
        n += 1.0;
      }
    }
  }
  REQUIRE(n > 0.0);
  return sum / n;
}

bool same_sample(const MultimodalSample& a, const MultimodalSample& b) {
  return a.rgb == b.rgb && a.ir == b.ir && a.depth == b.depth && a.pm == b.pm &&
         a.uncovered_depth == b.uncovered_depth && a.uncovered_ir == b.uncovered_ir && a.mask_gt == b.mask_gt &&
         a.joints14_2d == b.joints14_2d && a.joints14_3d == b.joints14_3d && a.cover == b.cover &&
         a.subject_id == b.subject_id && a.pose_id == b.pose_id;
}

void expect_error(const std::function<void()>& f, ErrorKind kind, const std::string& fragment = "") {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
    if (!fragment.empty()) CHECK(std::string(e.what()).find(fragment) != std::string::npos);
  }
}

// A tilted triangle and a smaller one in front of it.
struct TwoTriangles {
  body::Points2 px{6, 2};
  Eigen::VectorXd z{6};
  body::Faces faces{2, 3};
  TwoTriangles() {
    px << 2.0, 3.0, 28.0, 5.0, 9.0, 27.0, 8.0, 8.0, 20.0, 9.0, 12.0, 20.0;
    z << 0.0, 10.0, 20.0, 50.0, 50.0, 50.0;
    faces << 0, 1, 2, 3, 4, 5;
  }
};

bool inside(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  auto edge = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v, const Eigen::Vector2d& q) {
    return (v.x() - u.x()) * (q.y() - u.y()) - (v.y() - u.y()) * (q.x() - u.x());
  };
  const double e0 = edge(a, b, p), e1 = edge(b, c, p), e2 = edge(c, a, p);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

}  // namespace

TEST_SUITE("render") {

TEST_CASE("z-buffer coverage and depth match plane oracles") {
  TwoTriangles t;
  const render::DepthBuffers zb = render::ref::zbuffer(t.px, t.z, t.faces, 32, 32);
  // Plane through the first triangle: z = a x + b y + c.
  Eigen::Matrix3d A;
  for (int k = 0; k < 3; ++k) A.row(k) << t.px(k, 0), t.px(k, 1), 1.0;
  const Eigen::Vector3d plane = A.colPivHouseholderQr().solve(t.z.head<3>());
  int in_big = 0, in_small = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const Eigen::Vector2d p(x + 0.5, y + 0.5);
      const bool big = inside(p, t.px.row(0), t.px.row(1), t.px.row(2));
      const bool small = inside(p, t.px.row(3), t.px.row(4), t.px.row(5));
      const std::size_t i = y * 32 + x;
      CHECK(static_cast<bool>(zb.covered[i]) == (big || small));
      if (big && small) {
        CHECK(zb.top[i] == doctest::Approx(50.0));
        CHECK(zb.top_face[i] == 1);
        CHECK(zb.bottom[i] == doctest::Approx(plane.dot(Eigen::Vector3d(p.x(), p.y(), 1.0))).epsilon(1e-9));
        ++in_small;
      } else if (big) {
        CHECK(zb.top[i] == doctest::Approx(plane.dot(Eigen::Vector3d(p.x(), p.y(), 1.0))).epsilon(1e-9));
        CHECK(zb.top[i] == zb.bottom[i]);
        ++in_big;
      } else if (!small) {
        CHECK(std::isinf(zb.top[i]));
        CHECK(zb.top_face[i] == -1);
      }
    }
  }
  CHECK(in_big > 100);
  CHECK(in_small > 10);
}

TEST_CASE("serial and parallel z-buffers agree bit for bit") {
  const body::BodyTemplate& tmpl = toy();
  std::mt19937_64 rng(3);
  const body::BodyParams p = sample_lying_pose({}, 1, rng);
  const body::Mesh m = body::forward(tmpl, p.pose, p.shape);
  body::CameraParams cam;
  cam.R = body::rig_rotation();
  cam.s = 0.1;
  cam.t = {112.0, 112.0};
  const body::Points2 px = body::project(m.vertices, cam);
  const Eigen::VectorXd z = m.vertices.col(2);
  const render::DepthBuffers a = render::ref::zbuffer(px, z, tmpl.faces, 224, 224);
  for (int threads : {1, 4}) {
    omp_set_num_threads(threads);
    const render::DepthBuffers b = render::omp::zbuffer(px, z, tmpl.faces, 224, 224);
    CHECK(a.covered == b.covered);
    CHECK(a.top == b.top);
    CHECK(a.bottom == b.bottom);
    CHECK(a.top_face == b.top_face);
  }
  omp_set_num_threads(1);
}

TEST_CASE("z-buffer rejects bad indices") {
  body::Points2 px(3, 2);
  px.setZero();
  body::Faces f(1, 3);
  f << 0, 1, 3;
  CHECK_THROWS_AS(render::ref::zbuffer(px, Eigen::VectorXd::Zero(3), f, 8, 8), Error);
  CHECK_THROWS_AS(render::omp::zbuffer(px, Eigen::VectorXd::Zero(2), f, 8, 8), Error);
}

TEST_CASE("blur and moving max against direct sums") {
  ImageD im(1, 21, 17);
  im.at(0, 10, 8) = 1.0;
  const ImageD b = render::gaussian_blur(im, 1.5);
  double sum = 0.0;
  for (double v : b.data) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.at(0, 10, 7) == doctest::Approx(b.at(0, 10, 9)).epsilon(1e-14));
  CHECK(b.at(0, 9, 8) == doctest::Approx(b.at(0, 11, 8)).epsilon(1e-14));
  // Separable kernel: value at (dy, dx) = g(dy) g(dx) / Z^2.
  const double g1 = std::exp(-0.5 / 2.25);
  CHECK(b.at(0, 11, 9) / b.at(0, 10, 8) == doctest::Approx(g1 * g1).epsilon(1e-12));
  CHECK(render::gaussian_blur(im, 0.0) == im);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : im.data) v = u(rng);
  const ImageD m = render::moving_max(im, 2);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      double best = -1.0;
      for (int yy = std::max(0, y - 2); yy <= std::min(im.height - 1, y + 2); ++yy)
        for (int xx = std::max(0, x - 2); xx <= std::min(im.width - 1, x + 2); ++xx) best = std::max(best, im.at(0, yy, xx));
      CHECK(m.at(0, y, x) == best);
    }
  }
}

}  // TEST_SUITE

TEST_SUITE("png") {

TEST_CASE("8-bit RGB and 16-bit gray round trip") {
  const fs::path dir = testutil::temp_dir("png");
  std::mt19937_64 rng(1);
  io::PngImage rgb{3, 5, 7, 8, {}};
  io::PngImage gray{1, 9, 4, 16, {}};
  std::uniform_int_distribution<int> u8(0, 255), u16(0, 65535);
  for (int i = 0; i < 3 * 5 * 7; ++i) rgb.samples.push_back(static_cast<std::uint16_t>(u8(rng)));
  for (int i = 0; i < 9 * 4; ++i) gray.samples.push_back(static_cast<std::uint16_t>(u16(rng)));
  io::write_png(dir / "rgb.png", rgb);
  io::write_png(dir / "gray.png", gray);
  const io::PngImage a = io::read_png(dir / "rgb.png"), b = io::read_png(dir / "gray.png");
  CHECK(a.channels == 3);
  CHECK(a.samples == rgb.samples);
  CHECK(b.bit_depth == 16);
  CHECK(b.samples == gray.samples);
  io::write_png(dir / "again.png", gray);
  CHECK(file_bytes(dir / "again.png") == file_bytes(dir / "gray.png"));
}

TEST_CASE("png errors") {
  const fs::path dir = testutil::temp_dir("png_err");
  expect_error([&] { io::read_png(dir / "none.png"); }, ErrorKind::kData, "none.png");
  std::ofstream(dir / "text.png") << "not an image";
  expect_error([&] { io::read_png(dir / "text.png"); }, ErrorKind::kFormat);
  expect_error([&] { io::write_png(dir / "x.png", io::PngImage{2, 1, 1, 8, {0, 0}}); }, ErrorKind::kInvalidParameter);
  expect_error([&] { io::write_png(dir / "x.png", io::PngImage{1, 1, 1, 8, {300}}); }, ErrorKind::kInvalidParameter);
  expect_error([&] { io::write_png(dir / "missing" / "x.png", io::PngImage{1, 1, 1, 8, {3}}); }, ErrorKind::kIo);
}

}  // TEST_SUITE

TEST_SUITE("datagen") {

TEST_CASE("samples satisfy the shape, range and label contract") {
  const Dataset& ds = small_dataset();
  REQUIRE(ds.size() == 18);
  for (const auto& s : ds) {
    CHECK_NOTHROW(s.validate());
    REQUIRE(s.gt_params.has_value());
    REQUIRE(s.gt_camera.has_value());
    // 2D labels are the projections of the 3D labels, and both come from the parameters.
    CHECK((body::project(s.joints14_3d, *s.gt_camera) - s.joints14_2d).cwiseAbs().maxCoeff() < 1e-9);
    const body::Mesh m = body::forward(toy(), s.gt_params->pose, s.gt_params->shape);
    CHECK((body::regress_joints14(toy(), m) - s.joints14_3d).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(s.gt_camera->R == body::rig_rotation());
  }
  CHECK(stratum(ds, CoverType::kCover1).size() == 6);
}

TEST_CASE("pressure is unchanged by covers and uncovered samples equal their targets") {
  const Dataset& ds = small_dataset();
  for (std::size_t i = 0; i < ds.size(); i += 3) {
    CHECK(ds[i].cover == CoverType::kUncover);
    CHECK(ds[i].depth == ds[i].uncovered_depth);
    CHECK(ds[i].ir == ds[i].uncovered_ir);
    for (int k = 1; k < 3; ++k) {
      CHECK(ds[i + k].pm == ds[i].pm);
      CHECK(ds[i + k].uncovered_depth == ds[i].depth);
      CHECK(ds[i + k].mask_gt == ds[i].mask_gt);
      CHECK(ds[i + k].depth != ds[i].depth);
    }
  }
}

TEST_CASE("the blanket lies on top of the body") {
  // Near is large: a blanket over the body can only raise the normalized depth.
  for (const auto& s : small_dataset()) {
    for (std::size_t i = 0; i < s.depth.size(); ++i) CHECK_MESSAGE(s.depth.data[i] >= s.uncovered_depth.data[i], i);
  }
}

TEST_CASE("thicker covers occlude more") {
  double diff[3] = {0.0, 0.0, 0.0};
  for (const auto& s : small_dataset()) {
    for (std::size_t i = 0; i < s.depth.size(); ++i) {
      diff[static_cast<int>(s.cover)] += std::abs(s.depth.data[i] - s.uncovered_depth.data[i]);
    }
  }
  CHECK(diff[0] == 0.0);
  CHECK(diff[1] > 0.0);
  CHECK(diff[2] > diff[1]);
}

TEST_CASE("modalities are aligned with the silhouette") {
  for (const MultimodalSample* s : stratum(small_dataset(), CoverType::kUncover)) {
    const Eigen::Vector2d mask_c = centroid(s->mask_gt, 0, [](float v) { return v > 0.5f; });
    const Eigen::Vector2d depth_c = centroid(s->depth, 0, [](float v) { return v > 0.0f; });
    const Eigen::Vector2d ir_c = centroid(s->ir, 0, [](float v) { return v > 0.08f + 0.85f * 0.5f; });
    CHECK((depth_c - mask_c).norm() < 2.0);
    CHECK((ir_c - mask_c).norm() < 2.0);
    // Skin is red-dominant, the bed blue-dominant.
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    double n = 0.0;
    for (int y = 0; y < kCropSize; ++y) {
      for (int x = 0; x < kCropSize; ++x) {
        if (s->rgb.at(0, y, x) - s->rgb.at(2, y, x) > 0.06f) {
          sum += Eigen::Vector2d(x + 0.5, y + 0.5);
          n += 1.0;
        }
      }
    }
    CHECK((sum / n - mask_c).norm() < 2.0);
    // Pressure only appears where the body is, up to the blur radius.
    const ImageD near = render::moving_max(
        [&] {
          ImageD m(1, kCropSize, kCropSize);
          for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = s->mask_gt.data[i];
          return m;
        }(),
        3);
    for (std::size_t i = 0; i < near.size(); ++i) {
      if (s->pm.data[i] > 0.0f) CHECK(near.data[i] == 1.0);
    }
  }
}

TEST_CASE("generation is independent of the thread count") {
  omp_set_num_threads(4);
  const Dataset a = generate_dataset(small_config(), toy());
  omp_set_num_threads(1);
  const Dataset& b = small_dataset();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_sample(a[i], b[i]));
}

TEST_CASE("on-disk dataset is byte-reproducible and loads back exactly") {
  const fs::path a = testutil::temp_dir("synth_a"), b = testutil::temp_dir("synth_b");
  const Dataset mem = generate_synthetic(small_config(), toy(), a);
  generate_synthetic(small_config(), toy(), b);
  const auto ta = tree_bytes(a), tb = tree_bytes(b);
  CHECK(ta.size() == 18 * 8 + 4);
  CHECK(ta == tb);

  const auto manifest = testutil::load_json(a / "manifest.json");
  int walked = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) walked += e.path().filename() == "meta.json";
  CHECK(manifest["sample_count"].get<int>() == walked);

  const Dataset back = load_slp(a);
  REQUIRE(back.size() == mem.size());
  std::map<std::string, const MultimodalSample*> by_key;
  for (const auto& s : mem) by_key[s.subject_id + s.pose_id + to_string(s.cover)] = &s;
  for (const auto& s : back) {
    const MultimodalSample& m = *by_key.at(s.subject_id + s.pose_id + to_string(s.cover));
    CHECK(same_sample(s, m));
    CHECK(s.gt_params->pose.theta == m.gt_params->pose.theta);
    CHECK(s.gt_params->shape.beta == m.gt_params->shape.beta);
    CHECK(s.gt_camera->s == m.gt_camera->s);
  }

  const auto split = testutil::load_json(a / "split.json");
  CHECK(split["train"] == nlohmann::json{"s000"});
  CHECK(split["eval"] == nlohmann::json{"s001"});
  const MeanParamsFile mp = load_mean_params(a / "mean_params.json");
  CHECK(mp.count == 3);
  const MeanParamsFile expect = compute_mean_params(mem, {"s000"});
  CHECK(mp.params.pose.theta == expect.params.pose.theta);
  CHECK(mp.camera.s == expect.camera.s);
}

TEST_CASE("loader errors name the problem") {
  const fs::path empty = testutil::temp_dir("slp_empty");
  expect_error([&] { load_slp(empty); }, ErrorKind::kData);
  expect_error([&] { load_slp(empty / "nope"); }, ErrorKind::kData, "nope");

  const fs::path root = testutil::temp_dir("slp_broken");
  const MultimodalSample& s = small_dataset()[1];
  const fs::path dir = root / "s000" / "p000" / "cover1";
  write_sample(s, dir);
  CHECK(same_sample(load_sample(dir), s));
  fs::remove(dir / "pm.png");
  expect_error([&] { load_slp(root); }, ErrorKind::kData, "pm.png");
  write_sample(s, dir);
  {
    std::ofstream f(dir / "meta.json");
    f << "{\n  \"subject\": \"s000\",\n  \"pose\": \"p000\",\n  \"cover_type\": cover1\n}\n";
  }
  expect_error([&] { load_slp(root); }, ErrorKind::kParse, "meta.json:4");
  {
    std::ofstream f(dir / "meta.json");
    f << "{\"subject\": \"s000\", \"pose\": \"p000\", \"cover_type\": \"blanket\"}";
  }
  expect_error([&] { load_slp(root); }, ErrorKind::kParse, "blanket");
}

TEST_CASE("shipped mini dataset") {
  const Dataset ds = load_slp(testutil::fixture_path("slp_mini"));
  CHECK(ds.size() == 18);
  CHECK(stratum(ds, CoverType::kUncover).size() == 6);
  CHECK(stratum(ds, CoverType::kCover1).size() == 6);
  CHECK(stratum(ds, CoverType::kCover2).size() == 6);
  // Regenerating from the stored config reproduces the images up to rounding.
  const SynthConfig cfg = synth_config_from_json(testutil::load_json(testutil::fixture_path("slp_mini/synth_config.json")));
  const Dataset fresh = generate_dataset(cfg, toy());
  REQUIRE(fresh.size() == ds.size());
  double diff = 0.0, n = 0.0;
  for (const auto& s : ds) {
    for (const auto& f : fresh) {
      if (f.subject_id != s.subject_id || f.pose_id != s.pose_id || f.cover != s.cover) continue;
      for (std::size_t i = 0; i < s.depth.size(); ++i) diff += std::abs(s.depth.data[i] - f.depth.data[i]);
      n += static_cast<double>(s.depth.size());
      CHECK((s.joints14_2d - f.joints14_2d).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  CHECK(n == 18.0 * 224 * 224);
  CHECK(diff / n < 1e-4);
}

TEST_CASE("split is by subject") {
  const DatasetSplit s = split_subjects({"s003", "s000", "s001", "s002", "s001", "s004", "s005", "s006", "s007"});
  CHECK(s.train_ids == std::vector<std::string>{"s000", "s001", "s002", "s003", "s004", "s005"});
  CHECK(s.eval_ids == std::vector<std::string>{"s006", "s007"});
  CHECK_NOTHROW(s.validate());
  CHECK(split_subjects({"a"}).eval_ids.empty());
  DatasetSplit bad{{"a", "b"}, {"b"}};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("config validation and output errors") {
  SynthConfig c = small_config();
  c.n_subjects = 0;
  expect_error([&] { c.validate(); }, ErrorKind::kConfig);
  c = small_config();
  c.cover2_mm = c.cover1_mm;
  expect_error([&] { c.validate(); }, ErrorKind::kConfig);
  c = small_config();
  c.covers = {CoverType::kCover1, CoverType::kCover1};
  expect_error([&] { c.validate(); }, ErrorKind::kConfig);
  expect_error([&] { synth_config_from_json({{"covers", {"wool"}}}); }, ErrorKind::kParse);
  const SynthConfig round = synth_config_from_json(to_json(small_config()));
  CHECK(to_json(round) == to_json(small_config()));

  const fs::path dir = testutil::temp_dir("synth_unwritable");
  std::ofstream(dir / "file") << "x";
  c = small_config();
  c.n_subjects = 1;
  c.poses_per_subject = 1;
  expect_error([&] { generate_synthetic(c, toy(), dir / "file" / "sub"); }, ErrorKind::kIo);
}

TEST_CASE("edge-case flags alter only their modality") {
  SynthConfig c = small_config();
  c.covers = {CoverType::kUncover};
  const MultimodalSample base = synthesize_pose(c, toy(), 0, 0)[0];
  c.pm_dropout = true;
  const MultimodalSample drop = synthesize_pose(c, toy(), 0, 0)[0];
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < base.pm.size(); ++i) {
    a += base.pm.data[i];
    b += drop.pm.data[i];
  }
  CHECK(b <= a);
  CHECK(drop.depth == base.depth);
  CHECK(drop.ir == base.ir);
  c.pm_dropout = false;
  c.ir_ghost = true;
  const MultimodalSample ghost = synthesize_pose(c, toy(), 0, 0)[0];
  CHECK(ghost.ir != base.ir);
  CHECK(ghost.pm == base.pm);
  CHECK(ghost.depth == base.depth);
}

TEST_CASE("flip twice is the identity and flip swaps sides") {
  const MultimodalSample& s = small_dataset()[0];
  AugmentTransform flip;
  flip.flip = true;
  const MultimodalSample once = apply_transform(s, flip);
  const MultimodalSample twice = apply_transform(once, flip);
  CHECK(twice.rgb == s.rgb);
  CHECK(twice.depth == s.depth);
  CHECK(twice.ir == s.ir);
  CHECK(twice.pm == s.pm);
  CHECK(twice.mask_gt == s.mask_gt);
  CHECK(twice.joints14_3d == s.joints14_3d);
  CHECK((twice.joints14_2d - s.joints14_2d).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((twice.gt_camera->t - s.gt_camera->t).norm() < 1e-12);
  for (int k = 0; k < body::kNumPoseParams; ++k) CHECK(twice.gt_params->pose.theta[k] == doctest::Approx(s.gt_params->pose.theta[k]).epsilon(1e-12));

  CHECK(once.joints14_2d(body::kRAnkle14, 0) == doctest::Approx(kCropSize - s.joints14_2d(body::kLAnkle14, 0)));
  CHECK(once.joints14_2d(body::kRAnkle14, 1) == doctest::Approx(s.joints14_2d(body::kLAnkle14, 1)));
  CHECK(once.joints14_3d(body::kRWrist14, 0) == -s.joints14_3d(body::kLWrist14, 0));
  for (int y = 0; y < kCropSize; ++y) CHECK(once.depth.at(0, y, 0) == s.depth.at(0, y, kCropSize - 1));
  // Mirrored labels still reproject to the mirrored 2D joints.
  CHECK((body::project(once.joints14_3d, *once.gt_camera) - once.joints14_2d).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("rotation and scale move joints like the rotation-matrix oracle") {
  const MultimodalSample& s = small_dataset()[3];
  AugmentTransform t;
  t.scale = 1.15;
  t.rotation_deg = 23.0;
  const MultimodalSample out = apply_transform(s, t);
  const double a = 23.0 * std::numbers::pi / 180.0;
  for (int j = 0; j < body::kNumJoints14; ++j) {
    const double dx = s.joints14_2d(j, 0) - 112.0, dy = s.joints14_2d(j, 1) - 112.0;
    const double ex = 112.0 + 1.15 * (std::cos(a) * dx - std::sin(a) * dy);
    const double ey = 112.0 + 1.15 * (std::sin(a) * dx + std::cos(a) * dy);
    CHECK(std::hypot(out.joints14_2d(j, 0) - ex, out.joints14_2d(j, 1) - ey) < 0.5);
    CHECK(std::hypot(out.joints14_2d(j, 0) - ex, out.joints14_2d(j, 1) - ey) < 1e-9);
  }
  // 3D labels, camera and parameters move together.
  CHECK((body::project(out.joints14_3d, *out.gt_camera) - out.joints14_2d).cwiseAbs().maxCoeff() < 1e-9);
  const body::Mesh m = body::forward(toy(), out.gt_params->pose, out.gt_params->shape);
  CHECK((body::regress_joints14(toy(), m) - out.joints14_3d).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("augmented samples keep the sample invariants") {
  std::mt19937_64 rng(11);
  for (const auto& s : small_dataset()) {
    const MultimodalSample a = augment(s, rng);
    CHECK_NOTHROW(a.validate());
    CHECK((body::project(a.joints14_3d, *a.gt_camera) - a.joints14_2d).cwiseAbs().maxCoeff() < 1e-9);
    if (s.cover == CoverType::kUncover) {
      const Eigen::Vector2d mc = centroid(a.mask_gt, 0, [](float v) { return v > 0.5f; });
      const Eigen::Vector2d dc = centroid(a.depth, 0, [](float v) { return v > 0.01f; });
      CHECK((mc - dc).norm() < 2.0);
    }
  }
  const AugmentTransform t = draw_transform(rng, {});
  CHECK(t.scale >= 0.8);
  CHECK(t.scale <= 1.2);
  CHECK(std::abs(t.rotation_deg) <= 30.0);
}

TEST_CASE("crop_resize: identity, pure resize and the affine oracle") {
  const MultimodalSample& s = small_dataset()[0];
  const MultimodalSample same = crop_resize(s, {0.0, 0.0, 224.0, 224.0});
  CHECK(same_sample(same, s));

  // A 448 x 448 frame made by pixel replication resizes back to the original.
  MultimodalSample big = s;
  auto up = [](const Image& im) {
    Image out(im.channels, 448, 448);
    for (int c = 0; c < im.channels; ++c)
      for (int y = 0; y < 448; ++y)
        for (int x = 0; x < 448; ++x) out.at(c, y, x) = im.at(c, y / 2, x / 2);
    return out;
  };
  big.depth = up(s.depth);
  big.mask_gt = up(s.mask_gt);
  big.joints14_2d = s.joints14_2d * 2.0;
  const MultimodalSample down = crop_resize(big, {0.0, 0.0, 448.0, 448.0});
  CHECK(down.mask_gt == s.mask_gt);
  for (std::size_t i = 0; i < s.depth.size(); ++i) CHECK(down.depth.data[i] == doctest::Approx(s.depth.data[i]).epsilon(1e-6));
  CHECK((down.joints14_2d - s.joints14_2d).cwiseAbs().maxCoeff() < 1e-9);

  const BBox box = body_bbox(s.mask_gt);
  const MultimodalSample crop = crop_resize(s, box);
  const double side = std::max(box.w, box.h), k = 224.0 / side;
  const Eigen::Vector2d o(box.x0 + box.w / 2 - side / 2, box.y0 + box.h / 2 - side / 2);
  for (int j = 0; j < body::kNumJoints14; ++j) {
    const Eigen::Vector2d p = s.joints14_2d.row(j).transpose();
    const Eigen::Vector2d q = crop.joints14_2d.row(j).transpose();
    CHECK((q - k * (p - o)).norm() < 1e-6);
    if (p.x() >= box.x0 && p.x() <= box.x0 + box.w && p.y() >= box.y0 && p.y() <= box.y0 + box.h) {
      CHECK(q.x() >= 0.0);
      CHECK(q.x() <= 224.0);
      CHECK(q.y() >= 0.0);
      CHECK(q.y() <= 224.0);
    }
  }
  CHECK((body::project(crop.joints14_3d, *crop.gt_camera) - crop.joints14_2d).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(crop_resize(s, {0.0, 0.0, 0.0, 10.0}), Error);
}

TEST_CASE("quantization is idempotent") {
  MultimodalSample s = small_dataset()[2];
  const MultimodalSample before = s;
  quantize(s);
  CHECK(same_sample(s, before));
}

}  // TEST_SUITE
