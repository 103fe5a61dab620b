// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <exception>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "restpose/errors.hpp"
#include "restpose/fit.hpp"
#include "restpose/png_io.hpp"
#include "restpose/render.hpp"
#include "restpose/rotation.hpp"

namespace restpose::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kCentre = kCropSize / 2.0;
constexpr double kIrBackground = 0.08;

// SMPL left/right partners.
constexpr std::array<int, body::kNumJoints> kMirror24 = {0,  2,  1,  3,  5,  4,  6,  8,  7,  9,  11, 10,
                                                         12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ (a + 1)) ^ (b + 0x51ed270b2ULL));
}

std::string subject_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%03d", i);
  return buf;
}

std::string pose_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%03d", i);
  return buf;
}

Eigen::Matrix3d rot(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

void set_rotation(body::BodyParams& p, int joint, const Eigen::Matrix3d& R) {
  p.pose.set_joint(joint, body::matrix_to_axis_angle(R));
}

// Quantization shared by the writer and the reader so a reload is exact.
float dequantize(std::uint32_t q, int bits) {
  const double scale = 1.0 / ((1u << bits) - 1);
  return static_cast<float>(q * scale + 0.0);
}

std::uint32_t quantize_value(float v, int bits) {
  const double top = (1u << bits) - 1;
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint32_t>(std::lround(c * top));
}

void quantize_image(Image& im, int bits) {
  for (float& v : im.data) v = dequantize(quantize_value(v, bits), bits);
}

Image to_float(const ImageD& im) {
  Image out(im.channels, im.height, im.width);
  for (std::size_t i = 0; i < im.size(); ++i) out.data[i] = static_cast<float>(im.data[i]);
  return out;
}

// Bilinear (or nearest) sample of channel c at continuous frame position p; zero outside.
float sample_at(const Image& im, int c, const Eigen::Vector2d& p, bool nearest) {
  if (nearest) {
    const int x = static_cast<int>(std::floor(p.x())), y = static_cast<int>(std::floor(p.y()));
    if (x < 0 || y < 0 || x >= im.width || y >= im.height) return 0.0f;
    return im.at(c, y, x);
  }
  const double ix = p.x() - 0.5, iy = p.y() - 0.5;
  const int x0 = static_cast<int>(std::floor(ix)), y0 = static_cast<int>(std::floor(iy));
  const double fx = ix - x0, fy = iy - y0;
  auto get = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= im.width || y >= im.height) return 0.0;
    return im.at(c, y, x);
  };
  double v = (1.0 - fy) * ((1.0 - fx) * get(x0, y0) + (fx > 0.0 ? fx * get(x0 + 1, y0) : 0.0));
  if (fy > 0.0) v += fy * ((1.0 - fx) * get(x0, y0 + 1) + (fx > 0.0 ? fx * get(x0 + 1, y0 + 1) : 0.0));
  return static_cast<float>(v);
}

// Output pixel centre q maps to source position inv.A q + inv.b.
Image warp(const Image& im, const Affine2& inv, int size, bool nearest) {
  if (im.empty()) return im;
  Image out(im.channels, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Eigen::Vector2d p = inv.A * Eigen::Vector2d(x + 0.5, y + 0.5) + inv.b;
      for (int c = 0; c < im.channels; ++c) out.at(c, y, x) = sample_at(im, c, p, nearest);
    }
  }
  return out;
}

Affine2 inverse(const Affine2& a) {
  Affine2 r;
  r.A = a.A.inverse();
  r.b = -r.A * a.b;
  return r;
}

body::Points2 map_points(const body::Points2& p, const Affine2& a) {
  body::Points2 out(p.rows(), 2);
  for (Eigen::Index i = 0; i < p.rows(); ++i) out.row(i) = (a.A * p.row(i).transpose() + a.b).transpose();
  return out;
}

// Positive-scale similarity maps of the image keep the orthographic camera form.
body::CameraParams map_camera(const body::CameraParams& cam, const Affine2& a, double k) {
  body::CameraParams out = cam;
  out.s = cam.s * k;
  out.t = a.A * cam.t + a.b;
  return out;
}

json points_json(const auto& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) r.push_back(m(i, c));
    rows.push_back(r);
  }
  return rows;
}

template <typename M>
M points_from_json(const json& j, int rows, int cols, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) {
    fail(ErrorKind::kParse, what + ": expected " + std::to_string(rows) + " rows");
  }
  M m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<int>(j[i].size()) != cols) {
      fail(ErrorKind::kParse, what + ": bad row " + std::to_string(i));
    }
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot write " + path.string());
  f << text;
  require(static_cast<bool>(f), ErrorKind::kIo, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::kData, "missing file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Parses JSON, reporting syntax errors with their line number.
json parse_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    fail(ErrorKind::kParse, path.string() + ":" + std::to_string(line) + ": malformed JSON");
  }
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec && fs::is_directory(p), ErrorKind::kIo, "cannot create directory " + p.string());
}

struct ImageSpec {
  const char* name;
  int bits;
  Image MultimodalSample::*field;
};

constexpr std::array<ImageSpec, 7> kImages = {{
    {"rgb", 8, &MultimodalSample::rgb},
    {"ir", 16, &MultimodalSample::ir},
    {"depth", 16, &MultimodalSample::depth},
    {"pm", 16, &MultimodalSample::pm},
    {"uncovered_depth", 16, &MultimodalSample::uncovered_depth},
    {"uncovered_ir", 16, &MultimodalSample::uncovered_ir},
    {"mask", 8, &MultimodalSample::mask_gt},
}};

// ---------------------------------------------------------------------------------------------
// Rendering of one posed body.

struct Scene {
  body::Mesh mesh;
  body::Points3 joints14;
  body::CameraParams cam;
  render::DepthBuffers zb;
  double z_bed = 0.0;
  ImageD height;  // mm above the bed, 0 off the body
};

Scene render_scene(const body::BodyTemplate& tmpl, const body::BodyParams& params) {
  Scene sc;
  sc.mesh = body::forward(tmpl, params.pose, params.shape);
  sc.joints14 = body::regress_joints14(tmpl, sc.mesh);
  body::CameraParams unit;
  unit.R = body::rig_rotation();
  const body::Points2 p0 = body::project(sc.mesh.vertices, unit);
  const Eigen::Vector2d lo = p0.colwise().minCoeff().transpose(), hi = p0.colwise().maxCoeff().transpose();
  const double side = 1.2 * (hi - lo).maxCoeff();
  sc.cam.R = body::rig_rotation();
  sc.cam.s = kCropSize / side;
  sc.cam.t = Eigen::Vector2d::Constant(kCentre) - sc.cam.s * 0.5 * (lo + hi);
  const body::Points2 px = body::project(sc.mesh.vertices, sc.cam);
  const Eigen::VectorXd z = sc.mesh.vertices.col(2);
  sc.zb = render::omp::zbuffer(px, z, tmpl.faces, kCropSize, kCropSize);
  sc.z_bed = z.minCoeff();
  sc.height = ImageD(1, kCropSize, kCropSize);
  for (std::size_t i = 0; i < sc.height.size(); ++i) {
    if (sc.zb.covered[i]) sc.height.data[i] = sc.zb.top[i] - sc.z_bed;
  }
  return sc;
}

Image depth_image(const ImageD& height_mm) {
  Image out(1, height_mm.height, height_mm.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = static_cast<float>(std::clamp(height_mm.data[i] / kDepthRangeMm, 0.0, 1.0));
  }
  return out;
}

ImageD mask_image(const render::DepthBuffers& zb) {
  ImageD m(1, zb.height, zb.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = zb.covered[i] ? 1.0 : 0.0;
  return m;
}

// Skin slightly warmer where the body is higher; thermal spread by blurring.
ImageD ir_signal(const Scene& sc, const ImageD& mask) {
  ImageD base(1, kCropSize, kCropSize);
  for (std::size_t i = 0; i < base.size(); ++i) {
    base.data[i] = mask.data[i] * (0.8 + 0.2 * std::min(1.0, sc.height.data[i] / 250.0));
  }
  return render::gaussian_blur(base, 1.5);
}

Image ir_image(const ImageD& signal) {
  Image out(1, signal.height, signal.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = static_cast<float>(std::clamp(kIrBackground + 0.85 * signal.data[i], 0.0, 1.0));
  }
  return out;
}

Eigen::Vector3d face_normal(const body::Mesh& mesh, const body::Faces& faces, int f) {
  const Eigen::Vector3d a = mesh.vertices.row(faces(f, 0)), b = mesh.vertices.row(faces(f, 1)),
                        c = mesh.vertices.row(faces(f, 2));
  const Eigen::Vector3d n = (b - a).cross(c - a);
  const double len = n.norm();
  return len > 0.0 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::UnitZ();
}

Eigen::Vector3d bed_colour(const Eigen::Vector3d& base, int x, int y) {
  const double stripe = 0.04 * std::sin(2.0 * std::numbers::pi * (x + 0.5 * y) / 18.0);
  return (base * (1.0 + stripe)).cwiseMax(0.0).cwiseMin(1.0);
}

struct Palette {
  Eigen::Vector3d skin, bed, blanket;
};

Palette draw_palette(std::mt19937_64& subject_rng, std::mt19937_64& pose_rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Palette p;
  const double tone = u(subject_rng);
  p.skin = {0.45 + 0.45 * tone, 0.30 + 0.40 * tone, 0.22 + 0.33 * tone};
  p.bed = Eigen::Vector3d(0.80, 0.83, 0.88) * (0.92 + 0.1 * u(pose_rng));
  static const std::array<Eigen::Vector3d, 4> blankets = {Eigen::Vector3d(0.25, 0.35, 0.65),
                                                          Eigen::Vector3d(0.30, 0.55, 0.35),
                                                          Eigen::Vector3d(0.70, 0.45, 0.55),
                                                          Eigen::Vector3d(0.55, 0.55, 0.58)};
  const int idx = static_cast<int>(u(pose_rng) * blankets.size()) % static_cast<int>(blankets.size());
  p.blanket = blankets[idx] * (0.9 + 0.2 * u(pose_rng));
  return p;
}

Image rgb_uncovered(const Scene& sc, const body::Faces& faces, const Palette& pal) {
  Image out(3, kCropSize, kCropSize);
  for (int y = 0; y < kCropSize; ++y) {
    for (int x = 0; x < kCropSize; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * kCropSize + x;
      Eigen::Vector3d c;
      if (sc.zb.covered[i]) {
        const double nz = std::abs(face_normal(sc.mesh, faces, sc.zb.top_face[i]).z());
        c = pal.skin * (0.55 + 0.45 * nz);
      } else {
        c = bed_colour(pal.bed, x, y);
      }
      for (int k = 0; k < 3; ++k) out.at(k, y, x) = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
    }
  }
  return out;
}

Image pm_image(const Scene& sc, const SynthConfig& cfg, std::mt19937_64& rng) {
  ImageD contact(1, kCropSize, kCropSize);
  const double plane = sc.z_bed + cfg.sink_mm;
  for (std::size_t i = 0; i < contact.size(); ++i) {
    if (sc.zb.covered[i]) contact.data[i] = std::max(0.0, plane - sc.zb.bottom[i]) / cfg.sink_mm;
  }
  if (cfg.pm_dropout) {
    // A forearm lifted off the mattress leaves no pressure.
    std::uniform_int_distribution<int> side(0, 1);
    const int wrist = side(rng) ? body::kLWrist14 : body::kRWrist14;
    const int elbow = wrist == body::kLWrist14 ? body::kLElbow14 : body::kRElbow14;
    const Eigen::Vector2d a = body::project(sc.joints14.row(elbow), sc.cam).row(0).transpose();
    const Eigen::Vector2d b = body::project(sc.joints14.row(wrist), sc.cam).row(0).transpose();
    const double radius = 0.45 * (b - a).norm() + 3.0;
    for (int y = 0; y < kCropSize; ++y) {
      for (int x = 0; x < kCropSize; ++x) {
        const Eigen::Vector2d p(x + 0.5, y + 0.5), d = b - a;
        const double t = std::clamp((p - a).dot(d) / std::max(d.squaredNorm(), 1e-9), 0.0, 1.0);
        if ((p - (a + t * d)).norm() < radius) contact.at(0, y, x) = 0.0;
      }
    }
  }
  ImageD blurred = render::gaussian_blur(contact, 1.0);
  Image out(1, kCropSize, kCropSize);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = static_cast<float>(std::clamp(blurred.data[i], 0.0, 1.0));
  return out;
}

// Everything except a disc over the head lies under the blanket.
std::vector<std::uint8_t> cover_region(const Scene& sc) {
  const body::Points2 j2 = body::project(sc.joints14, sc.cam);
  const Eigen::Vector2d neck = j2.row(body::kNeck14).transpose(), top = j2.row(body::kHeadTop14).transpose();
  const Eigen::Vector2d centre = 0.5 * (neck + top);
  const double radius = 0.75 * (top - neck).norm();
  std::vector<std::uint8_t> region(static_cast<std::size_t>(kCropSize) * kCropSize, 1);
  for (int y = 0; y < kCropSize; ++y) {
    for (int x = 0; x < kCropSize; ++x) {
      if ((Eigen::Vector2d(x + 0.5, y + 0.5) - centre).norm() < radius) region[y * kCropSize + x] = 0;
    }
  }
  return region;
}

struct CoverModel {
  double thickness_mm;
  int envelope_radius;
  double smoothing;
  double ir_attenuation;
  double ir_blur;
};

CoverModel cover_model(CoverType c, const SynthConfig& cfg) {
  if (c == CoverType::kCover1) return {cfg.cover1_mm, 3, 1.5, 0.8, 1.0};
  return {cfg.cover2_mm, 6, 3.0, 0.55, 2.5};
}

void apply_cover(MultimodalSample& s, const Scene& sc, const Palette& pal, const CoverModel& cm,
                 const std::vector<std::uint8_t>& region, const ImageD& ir_sig) {
  const ImageD envelope = render::gaussian_blur(render::moving_max(sc.height, cm.envelope_radius), cm.smoothing);
  ImageD blanket(1, kCropSize, kCropSize);
  for (std::size_t i = 0; i < blanket.size(); ++i) {
    blanket.data[i] = region[i] ? std::max(sc.height.data[i], envelope.data[i] + cm.thickness_mm) : sc.height.data[i];
  }
  s.depth = depth_image(blanket);

  const ImageD ir_cov = render::gaussian_blur(ir_sig, cm.ir_blur);
  for (std::size_t i = 0; i < s.ir.size(); ++i) {
    if (!region[i]) continue;
    s.ir.data[i] = static_cast<float>(std::clamp(kIrBackground + 0.85 * cm.ir_attenuation * ir_cov.data[i], 0.0, 1.0));
  }

  // Blanket shading from its surface slope; pixel pitch is 1 / s mm.
  const double pitch = 1.0 / sc.cam.s;
  for (int y = 0; y < kCropSize; ++y) {
    for (int x = 0; x < kCropSize; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * kCropSize + x;
      if (!region[i]) continue;
      const int xl = std::max(0, x - 1), xr = std::min(kCropSize - 1, x + 1);
      const int yu = std::max(0, y - 1), yd = std::min(kCropSize - 1, y + 1);
      const double gx = (blanket.at(0, y, xr) - blanket.at(0, y, xl)) / ((xr - xl) * pitch);
      const double gy = (blanket.at(0, yd, x) - blanket.at(0, yu, x)) / ((yd - yu) * pitch);
      const double nz = 1.0 / std::sqrt(1.0 + gx * gx + gy * gy);
      const Eigen::Vector3d c = pal.blanket * (0.6 + 0.4 * nz);
      for (int k = 0; k < 3; ++k) s.rgb.at(k, y, x) = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
    }
  }
}

void check_image(const Image& im, int channels, const char* name, bool required) {
  if (im.empty() && !required) return;
  require(im.channels == channels && im.height == kCropSize && im.width == kCropSize, ErrorKind::kDimension,
          std::string("sample ") + name + ": expected " + std::to_string(channels) + " x 224 x 224");
  for (float v : im.data) {
    require(std::isfinite(v) && v >= 0.0f && v <= 1.0f, ErrorKind::kData,
            std::string("sample ") + name + ": values outside [0, 1]");
  }
}

}  // namespace

const char* to_string(CoverType c) {
  switch (c) {
    case CoverType::kUncover: return "uncover";
    case CoverType::kCover1: return "cover1";
    case CoverType::kCover2: return "cover2";
  }
  return "?";
}

CoverType cover_from_string(const std::string& s) {
  if (s == "uncover") return CoverType::kUncover;
  if (s == "cover1") return CoverType::kCover1;
  if (s == "cover2") return CoverType::kCover2;
  fail(ErrorKind::kParse, "unknown cover type '" + s + "'");
}

void MultimodalSample::validate() const {
  check_image(rgb, 3, "rgb", false);
  check_image(ir, 1, "ir", true);
  check_image(depth, 1, "depth", true);
  check_image(pm, 1, "pm", false);
  check_image(mask_gt, 1, "mask", true);
  const bool covered = cover != CoverType::kUncover;
  check_image(uncovered_depth, 1, "uncovered_depth", covered);
  check_image(uncovered_ir, 1, "uncovered_ir", covered);
  for (float v : mask_gt.data) require(v == 0.0f || v == 1.0f, ErrorKind::kData, "sample mask: values must be 0 or 1");
  require(joints14_2d.rows() == body::kNumJoints14 && joints14_3d.rows() == body::kNumJoints14, ErrorKind::kDimension,
          "sample joints: expected 14 joints");
  require(joints14_2d.allFinite() && joints14_3d.allFinite(), ErrorKind::kData, "sample joints: non-finite value");
}

std::vector<const MultimodalSample*> stratum(const Dataset& ds, CoverType c) {
  std::vector<const MultimodalSample*> out;
  for (const auto& s : ds) {
    if (s.cover == c) out.push_back(&s);
  }
  return out;
}

void SynthConfig::validate() const {
  require(n_subjects >= 1, ErrorKind::kConfig, "synth: subjects must be >= 1");
  require(poses_per_subject >= 1, ErrorKind::kConfig, "synth: poses must be >= 1");
  require(!covers.empty(), ErrorKind::kConfig, "synth: at least one cover type");
  for (std::size_t i = 0; i < covers.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) require(covers[i] != covers[j], ErrorKind::kConfig, "synth: repeated cover type");
  }
  require(beta_sigma >= 0.0 && sink_mm > 0.0 && cover1_mm > 0.0 && cover2_mm > cover1_mm, ErrorKind::kConfig,
          "synth: need beta_sigma >= 0, sink > 0 and 0 < cover1 < cover2 thickness");
}

json to_json(const SynthConfig& c) {
  json covers = json::array();
  for (auto cv : c.covers) covers.push_back(to_string(cv));
  return {{"subjects", c.n_subjects}, {"poses", c.poses_per_subject}, {"seed", c.seed},
          {"covers", covers},         {"beta_sigma", c.beta_sigma}, {"sink_mm", c.sink_mm},
          {"cover1_mm", c.cover1_mm}, {"cover2_mm", c.cover2_mm},   {"pm_dropout", c.pm_dropout},
          {"ir_ghost", c.ir_ghost}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  try {
    c.n_subjects = j.value("subjects", c.n_subjects);
    c.poses_per_subject = j.value("poses", c.poses_per_subject);
    c.seed = j.value("seed", c.seed);
    if (j.contains("covers")) {
      c.covers.clear();
      for (const auto& s : j.at("covers")) c.covers.push_back(cover_from_string(s.get<std::string>()));
    }
    c.beta_sigma = j.value("beta_sigma", c.beta_sigma);
    c.sink_mm = j.value("sink_mm", c.sink_mm);
    c.cover1_mm = j.value("cover1_mm", c.cover1_mm);
    c.cover2_mm = j.value("cover2_mm", c.cover2_mm);
    c.pm_dropout = j.value("pm_dropout", c.pm_dropout);
    c.ir_ghost = j.value("ir_ghost", c.ir_ghost);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

body::BodyParams sample_lying_pose(const body::BodyShapeParams& shape, int pose_index, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return (lo + (hi - lo) * u(rng)) * kDeg; };
  const Eigen::Vector3d X = Eigen::Vector3d::UnitX(), Y = Eigen::Vector3d::UnitY(), Z = Eigen::Vector3d::UnitZ();
  const int kind = pose_index % 3;  // 0 supine, 1 on the left side, 2 on the right side
  const bool side = kind != 0;

  body::BodyParams p;
  p.shape = shape;
  Eigen::Matrix3d root = rot(Z, range(-12.0, 12.0));
  if (kind == 1) root = root * rot(Y, 90.0 * kDeg);
  if (kind == 2) root = root * rot(Y, -90.0 * kDeg);
  set_rotation(p, body::kPelvis, root);

  for (int j : {body::kSpine1, body::kSpine2, body::kSpine3, body::kNeck}) {
    set_rotation(p, j, rot(X, range(0.0, 4.0)) * rot(Y, range(-4.0, 4.0)) * rot(Z, range(-4.0, 4.0)));
  }
  // Positive X rotations curl towards +Z, away from the mattress.
  set_rotation(p, body::kHead, rot(Y, range(-30.0, 30.0)) * rot(X, range(0.0, 10.0)));

  for (int s = 0; s < 2; ++s) {
    const double sign = s == 0 ? 1.0 : -1.0;  // left side has +X
    const int shoulder = s == 0 ? body::kLShoulder : body::kRShoulder;
    const int elbow = s == 0 ? body::kLElbow : body::kRElbow;
    const int hip = s == 0 ? body::kLHip : body::kRHip;
    const int knee = s == 0 ? body::kLKnee : body::kRKnee;
    // Arm lowered towards the side, optionally reaching forward (+Z); forearm bends towards +Z.
    // Lying on a side, the arms come down fully so neither passes through the mattress.
    const double lower = side ? range(88.0, 100.0) : range(35.0, 80.0);
    const double reach = side ? range(30.0, 70.0) : range(0.0, 20.0);
    set_rotation(p, shoulder, rot(X, -reach) * rot(Z, -sign * lower));
    set_rotation(p, elbow, rot(Y, -sign * (side ? range(20.0, 90.0) : range(0.0, 60.0))));
    // Hip abduction and flexion, knee flexion.
    const double abduct = side ? 0.0 : range(0.0, 15.0);
    const double flex = side ? range(20.0, 60.0) : range(0.0, 15.0);
    set_rotation(p, hip, rot(X, -flex) * rot(Z, sign * abduct));
    // Knee flexion up to twice the hip flexion keeps the foot at or above the mattress.
    const double knee_flex = flex * 1.9 * u(rng);
    set_rotation(p, knee, rot(X, knee_flex));
  }
  return p;
}

std::vector<MultimodalSample> synthesize_pose(const SynthConfig& cfg, const body::BodyTemplate& tmpl, int subject,
                                              int pose) {
  cfg.validate();
  std::mt19937_64 subject_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(subject), 0xffff));
  std::mt19937_64 pose_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(subject), static_cast<std::uint64_t>(pose)));
  std::normal_distribution<double> n01(0.0, 1.0);
  body::BodyShapeParams shape;
  for (double& b : shape.beta) b = std::clamp(cfg.beta_sigma * n01(subject_rng), -2.0, 2.0);
  const Palette pal = draw_palette(subject_rng, pose_rng);
  const body::BodyParams params = sample_lying_pose(shape, pose, pose_rng);

  const Scene sc = render_scene(tmpl, params);
  const ImageD mask = mask_image(sc.zb);
  ImageD ir_sig = ir_signal(sc, mask);
  if (cfg.ir_ghost) {
    // Residual heat from an earlier position: a faint copy of the body shifted sideways.
    const int shift = 6 + static_cast<int>(8 * std::uniform_real_distribution<double>(0.0, 1.0)(pose_rng));
    ImageD ghost(1, kCropSize, kCropSize);
    for (int y = 0; y < kCropSize; ++y) {
      for (int x = shift; x < kCropSize; ++x) ghost.at(0, y, x) = 0.25 * mask.at(0, y, x - shift);
    }
    ghost = render::gaussian_blur(ghost, 2.5);
    for (std::size_t i = 0; i < ir_sig.size(); ++i) ir_sig.data[i] = std::max(ir_sig.data[i], ghost.data[i]);
  }

  MultimodalSample base;
  base.uncovered_depth = depth_image(sc.height);
  base.uncovered_ir = ir_image(ir_sig);
  base.depth = base.uncovered_depth;
  base.ir = base.uncovered_ir;
  base.mask_gt = to_float(mask);
  base.rgb = rgb_uncovered(sc, tmpl.faces, pal);
  base.pm = pm_image(sc, cfg, pose_rng);
  base.joints14_3d = sc.joints14;
  base.joints14_2d = body::project(sc.joints14, sc.cam);
  base.gt_params = params;
  base.gt_camera = sc.cam;
  base.subject_id = subject_name(subject);
  base.pose_id = pose_name(pose);

  const std::vector<std::uint8_t> region = cover_region(sc);
  std::vector<MultimodalSample> out;
  for (CoverType c : cfg.covers) {
    MultimodalSample s = base;
    s.cover = c;
    if (c != CoverType::kUncover) apply_cover(s, sc, pal, cover_model(c, cfg), region, ir_sig);
    quantize(s);
    out.push_back(std::move(s));
  }
  return out;
}

Dataset generate_dataset(const SynthConfig& cfg, const body::BodyTemplate& tmpl) {
  cfg.validate();
  const int jobs = cfg.n_subjects * cfg.poses_per_subject;
  std::vector<std::vector<MultimodalSample>> parts(jobs);
  std::vector<std::exception_ptr> errors(jobs);
#pragma omp parallel for schedule(dynamic, 1)
  for (int job = 0; job < jobs; ++job) {
    try {
      parts[job] = synthesize_pose(cfg, tmpl, job / cfg.poses_per_subject, job % cfg.poses_per_subject);
    } catch (...) {
      errors[job] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(jobs) * cfg.covers.size());
  for (auto& part : parts) {
    for (auto& s : part) ds.push_back(std::move(s));
  }
  return ds;
}

void DatasetSplit::validate() const {
  for (const auto& t : train_ids) {
    require(std::find(eval_ids.begin(), eval_ids.end(), t) == eval_ids.end(), ErrorKind::kInvariant,
            "split: subject " + t + " is in both train and eval");
  }
}

DatasetSplit split_subjects(const std::vector<std::string>& subjects) {
  std::vector<std::string> sorted = subjects;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const std::size_t n = sorted.size();
  const std::size_t n_eval = n >= 2 ? std::max<std::size_t>(1, n / 4) : 0;
  DatasetSplit split;
  split.train_ids.assign(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(n_eval));
  split.eval_ids.assign(sorted.end() - static_cast<std::ptrdiff_t>(n_eval), sorted.end());
  return split;
}

void quantize(MultimodalSample& s) {
  for (const auto& spec : kImages) quantize_image(s.*spec.field, spec.bits);
}

void write_sample(const MultimodalSample& s, const fs::path& dir) {
  make_dirs(dir);
  json images = json::object();
  for (const auto& spec : kImages) {
    const Image& im = s.*spec.field;
    if (im.empty()) continue;
    io::PngImage png;
    png.channels = im.channels;
    png.height = im.height;
    png.width = im.width;
    png.bit_depth = spec.bits;
    png.samples.resize(im.size());
    for (int y = 0; y < im.height; ++y) {
      for (int x = 0; x < im.width; ++x) {
        for (int c = 0; c < im.channels; ++c) {
          png.samples[(static_cast<std::size_t>(y) * im.width + x) * im.channels + c] =
              static_cast<std::uint16_t>(quantize_value(im.at(c, y, x), spec.bits));
        }
      }
    }
    const std::string file = std::string(spec.name) + ".png";
    io::write_png(dir / file, png);
    images[spec.name] = {{"file", file}, {"bits", spec.bits}, {"scale", 1.0 / ((1u << spec.bits) - 1)}, {"offset", 0.0}};
  }
  json meta = {{"subject", s.subject_id},
               {"pose", s.pose_id},
               {"cover_type", to_string(s.cover)},
               {"joints14_2d_px", points_json(s.joints14_2d)},
               {"joints14_3d_mm", points_json(s.joints14_3d)},
               {"depth_range_mm", kDepthRangeMm},
               {"depth_map", "depth = clamp((z - z_bed) / depth_range_mm, 0, 1)"},
               {"images", images}};
  if (s.gt_params) meta["gt_params"] = fit::params_to_json(*s.gt_params);
  if (s.gt_camera) meta["camera"] = fit::camera_to_json(*s.gt_camera);
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

MultimodalSample load_sample(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  require(fs::exists(meta_path), ErrorKind::kData, "missing annotation file " + meta_path.string());
  const json meta = parse_json_file(meta_path);
  MultimodalSample s;
  try {
    s.subject_id = meta.at("subject").get<std::string>();
    s.pose_id = meta.at("pose").get<std::string>();
    s.cover = cover_from_string(meta.at("cover_type").get<std::string>());
    s.joints14_2d = points_from_json<body::Points2>(meta.at("joints14_2d_px"), body::kNumJoints14, 2, "joints14_2d_px");
    s.joints14_3d = points_from_json<body::Points3>(meta.at("joints14_3d_mm"), body::kNumJoints14, 3, "joints14_3d_mm");
    if (meta.contains("gt_params")) s.gt_params = fit::params_from_json(meta.at("gt_params"));
    if (meta.contains("camera")) s.gt_camera = fit::camera_from_json(meta.at("camera"));
    const json& images = meta.at("images");
    for (const auto& spec : kImages) {
      if (!images.contains(spec.name)) {
        const bool optional = std::string(spec.name) == "rgb" || std::string(spec.name) == "pm" ||
                              (s.cover == CoverType::kUncover && std::string(spec.name).rfind("uncovered_", 0) == 0);
        require(optional, ErrorKind::kData, meta_path.string() + ": no entry for modality " + spec.name);
        continue;
      }
      const json& entry = images.at(spec.name);
      const fs::path file = dir / entry.at("file").get<std::string>();
      const io::PngImage png = io::read_png(file);
      const double scale = entry.at("scale").get<double>(), offset = entry.at("offset").get<double>();
      Image im(png.channels, png.height, png.width);
      for (int y = 0; y < png.height; ++y) {
        for (int x = 0; x < png.width; ++x) {
          for (int c = 0; c < png.channels; ++c) {
            const std::uint16_t q = png.samples[(static_cast<std::size_t>(y) * png.width + x) * png.channels + c];
            im.at(c, y, x) = static_cast<float>(q * scale + offset);
          }
        }
      }
      s.*spec.field = std::move(im);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, meta_path.string() + ": " + e.what());
  }
  if (s.cover == CoverType::kUncover) {
    if (s.uncovered_depth.empty()) s.uncovered_depth = s.depth;
    if (s.uncovered_ir.empty()) s.uncovered_ir = s.ir;
  }
  if (s.depth.height != kCropSize || s.depth.width != kCropSize) {
    s = crop_resize(s, {0.0, 0.0, static_cast<double>(s.depth.width), static_cast<double>(s.depth.height)});
  }
  s.validate();
  return s;
}

Dataset load_slp(const fs::path& root) {
  require(fs::is_directory(root), ErrorKind::kData, "dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "meta.json") dirs.push_back(entry.path().parent_path());
  }
  require(!dirs.empty(), ErrorKind::kData, "no samples (meta.json files) under " + root.string());
  std::sort(dirs.begin(), dirs.end());
  Dataset ds(dirs.size());
  std::vector<std::exception_ptr> errors(dirs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    try {
      ds[i] = load_sample(dirs[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return ds;
}

MeanParamsFile compute_mean_params(const Dataset& ds, const std::vector<std::string>& subjects) {
  std::vector<body::BodyParams> params;
  MeanParamsFile m;
  m.camera.R = body::rig_rotation();
  double s_sum = 0.0;
  Eigen::Vector2d t_sum = Eigen::Vector2d::Zero();
  int cams = 0;
  std::set<std::string> seen;
  for (const auto& s : ds) {
    if (!seen.insert(s.subject_id + "/" + s.pose_id).second) continue;  // each pose once
    if (!subjects.empty() && std::find(subjects.begin(), subjects.end(), s.subject_id) == subjects.end()) continue;
    if (s.gt_params) params.push_back(*s.gt_params);
    if (s.gt_camera) {
      s_sum += s.gt_camera->s;
      t_sum += s.gt_camera->t;
      ++cams;
    }
  }
  require(!params.empty(), ErrorKind::kData, "mean parameters: no samples with ground-truth parameters");
  const body::MeanParams mp = body::mean_params(params);
  m.params.pose = mp.pose;
  m.params.shape = mp.shape;
  m.count = static_cast<int>(params.size());
  if (cams > 0) {
    m.camera.s = s_sum / cams;
    m.camera.t = t_sum / cams;
  }
  return m;
}

void save_mean_params(const MeanParamsFile& m, const fs::path& path) {
  const json j = {{"params", fit::params_to_json(m.params)}, {"camera", fit::camera_to_json(m.camera)}, {"count", m.count}};
  write_text(path, j.dump(2) + "\n");
}

MeanParamsFile load_mean_params(const fs::path& path) {
  const json j = parse_json_file(path);
  MeanParamsFile m;
  try {
    m.params = fit::params_from_json(j.at("params"));
    m.camera = fit::camera_from_json(j.at("camera"));
    m.count = j.value("count", 0);
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  return m;
}

Dataset generate_synthetic(const SynthConfig& cfg, const body::BodyTemplate& tmpl, const fs::path& root) {
  cfg.validate();
  make_dirs(root);
  Dataset ds = generate_dataset(cfg, tmpl);
  std::vector<std::string> subjects;
  for (int i = 0; i < cfg.n_subjects; ++i) {
    subjects.push_back(subject_name(i));
    make_dirs(root / subjects.back());
  }
  std::vector<std::exception_ptr> errors(ds.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < ds.size(); ++i) {
    try {
      write_sample(ds[i], root / ds[i].subject_id / ds[i].pose_id / to_string(ds[i].cover));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const DatasetSplit split = split_subjects(subjects);
  json samples = json::array();
  for (const auto& s : ds) samples.push_back(s.subject_id + "/" + s.pose_id + "/" + to_string(s.cover));
  const json manifest = {{"format", "restpose-dataset"}, {"version", 1},          {"synthetic", true},
                         {"sample_count", ds.size()},   {"subjects", subjects}, {"samples", samples}};
  write_text(root / "manifest.json", manifest.dump(2) + "\n");
  write_text(root / "split.json", json{{"train", split.train_ids}, {"eval", split.eval_ids}}.dump(2) + "\n");
  write_text(root / "synth_config.json", to_json(cfg).dump(2) + "\n");
  save_mean_params(compute_mean_params(ds, split.train_ids), root / "mean_params.json");
  return ds;
}

BBox body_bbox(const Image& mask, double pad) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(0, y, x) > 0.5f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  require(x1 >= 0, ErrorKind::kData, "body_bbox: empty mask");
  const double w = x1 + 1 - x0, h = y1 + 1 - y0;
  return {x0 - pad * w, y0 - pad * h, w * (1.0 + 2.0 * pad), h * (1.0 + 2.0 * pad)};
}

MultimodalSample crop_resize(const MultimodalSample& s, const BBox& bbox) {
  require(bbox.w > 0.0 && bbox.h > 0.0, ErrorKind::kInvalidParameter, "crop_resize: empty bounding box");
  const double side = std::max(bbox.w, bbox.h);
  const Eigen::Vector2d origin(bbox.x0 + 0.5 * bbox.w - 0.5 * side, bbox.y0 + 0.5 * bbox.h - 0.5 * side);
  const double k = kCropSize / side;
  Affine2 fwd;
  fwd.A = Eigen::Matrix2d::Identity() * k;
  fwd.b = -k * origin;
  Affine2 inv;
  inv.A = Eigen::Matrix2d::Identity() / k;
  inv.b = origin;

  MultimodalSample out = s;
  for (const auto& spec : kImages) {
    out.*spec.field = warp(s.*spec.field, inv, kCropSize, spec.field == &MultimodalSample::mask_gt);
  }
  out.joints14_2d = map_points(s.joints14_2d, fwd);
  if (s.gt_camera) out.gt_camera = map_camera(*s.gt_camera, fwd, k);
  return out;
}

AugmentTransform draw_transform(std::mt19937_64& rng, const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentTransform t;
  t.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u(rng);
  t.rotation_deg = cfg.max_rotation_deg * (2.0 * u(rng) - 1.0);
  t.flip = u(rng) < cfg.flip_probability;
  return t;
}

Affine2 transform_affine(const AugmentTransform& t) {
  const double a = t.rotation_deg * kDeg;
  Eigen::Matrix2d R;
  R << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  Affine2 flip;
  if (t.flip) {
    flip.A = Eigen::Vector2d(-1.0, 1.0).asDiagonal();
    flip.b = Eigen::Vector2d(kCropSize, 0.0);
  }
  const Eigen::Vector2d c = Eigen::Vector2d::Constant(kCentre);
  Affine2 out;
  out.A = t.scale * R * flip.A;
  out.b = c + t.scale * R * (flip.b - c);
  return out;
}

body::BodyParams mirror_params(const body::BodyParams& p) {
  body::BodyParams out = p;
  for (int j = 0; j < body::kNumJoints; ++j) {
    const Eigen::Vector3d w = p.pose.joint(kMirror24[j]);
    out.pose.set_joint(j, Eigen::Vector3d(w.x(), -w.y(), -w.z()));
  }
  return out;
}

MultimodalSample apply_transform(const MultimodalSample& s, const AugmentTransform& t) {
  require(t.scale > 0.0, ErrorKind::kInvalidParameter, "augment: scale must be positive");
  const Affine2 fwd = transform_affine(t);
  const Affine2 inv = inverse(fwd);
  MultimodalSample out = s;
  for (const auto& spec : kImages) {
    if ((s.*spec.field).empty()) continue;
    require((s.*spec.field).height == kCropSize && (s.*spec.field).width == kCropSize, ErrorKind::kDimension,
            "augment: expects 224 x 224 crops");
    out.*spec.field = warp(s.*spec.field, inv, kCropSize, spec.field == &MultimodalSample::mask_gt);
  }
  const auto& pairs = body::lsp_flip_pairs();
  const Eigen::Matrix3d Rz = rot(Eigen::Vector3d::UnitZ(), -t.rotation_deg * kDeg);
  const Eigen::Matrix3d M = t.flip ? Eigen::Matrix3d(Eigen::Vector3d(-1.0, 1.0, 1.0).asDiagonal())
                                   : Eigen::Matrix3d::Identity();
  for (int j = 0; j < body::kNumJoints14; ++j) {
    const int src = t.flip ? pairs[j] : j;
    out.joints14_2d.row(j) = (fwd.A * s.joints14_2d.row(src).transpose() + fwd.b).transpose();
    out.joints14_3d.row(j) = (Rz * M * s.joints14_3d.row(src).transpose()).transpose();
  }
  if (s.gt_camera) out.gt_camera = map_camera(*s.gt_camera, fwd, t.scale);
  if (s.gt_params) {
    body::BodyParams p = t.flip ? mirror_params(*s.gt_params) : *s.gt_params;
    set_rotation(p, body::kPelvis, Rz * body::axis_angle_to_matrix(p.pose.joint(body::kPelvis)));
    out.gt_params = p;
  }
  return out;
}

MultimodalSample augment(const MultimodalSample& s, std::mt19937_64& rng, const AugmentConfig& config) {
  return apply_transform(s, draw_transform(rng, config));
}

}  // namespace restpose::data
