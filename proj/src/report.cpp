// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Markdown tables from metrics.json and the qualitative PNG figures.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "restpose/cli.hpp"
#include "restpose/png_io.hpp"
#include "restpose/render.hpp"

namespace restpose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string cover_title(const std::string& c) {
  if (c == "cover2") return "Cover2";
  if (c == "cover1") return "Cover1";
  return "Uncover";
}

std::string model_title(const json& row) {
  const std::string m = row.at("model").get<std::string>();
  if (m == "pyramid") return "Pyramid K=" + std::to_string(row.at("K").get<int>());
  return m;
}

std::string stratum_cell(const json& row, const std::string& cover, const char* key) {
  const json& s = row.at("strata").at(cover);
  if (s.value("absent", false)) return "n/a";
  return fixed(s.at(key).get<double>(), 2);
}

void error_columns(std::ostringstream& o, const json& row) {
  for (const char* key : {"mpjpe_mm", "reconstruction_error_mm"}) {
    for (const auto& c : row.at("strata_order")) o << " " << stratum_cell(row, c.get<std::string>(), key) << " |";
  }
}

void error_header(std::ostringstream& o, const json& row, const std::string& lead) {
  o << "| " << lead << " |";
  for (const char* name : {"MPJPE", "Rec"}) {
    for (const auto& c : row.at("strata_order")) o << " " << name << " " << cover_title(c.get<std::string>()) << " |";
  }
  o << "\n|";
  const std::size_t cols = 1 + std::count(lead.begin(), lead.end(), '|') + 2 * row.at("strata_order").size();
  for (std::size_t i = 0; i < cols; ++i) o << "---|";
  o << "\n";
}

}  // namespace

std::string render_tables(const json& metrics) {
  std::ostringstream o;
  try {
    const json& levels = metrics.at("levels");
    require(levels.is_array() && !levels.empty(), ErrorKind::kFormat, "metrics.json has no levels");

    o << "## Table 1: joint error per cover type (mm)\n\n";
    error_header(o, levels.front(), "Model");
    for (const auto& row : levels) {
      o << "| " << model_title(row) << " |";
      error_columns(o, row);
      o << "\n";
    }

    o << "\n## Table 2: segmentation\n\n";
    o << "| Model | Accuracy (%) | F1 | Parameters |\n|---|---|---|---|\n";
    for (const auto& row : levels) {
      const json& all = row.at("overall");
      o << "| " << model_title(row) << " | ";
      if (all.value("absent", false)) {
        o << "n/a | n/a";
      } else {
        o << fixed(100.0 * all.at("seg_accuracy").get<double>(), 2) << " | " << fixed(all.at("seg_f1").get<double>(), 3);
      }
      o << " | " << row.at("parameter_count").get<std::size_t>() << " |\n";
    }

    if (metrics.contains("ablation")) {
      const json& rows = metrics.at("ablation");
      o << "\n## Table 3: modality ablation (mm)\n\n";
      error_header(o, rows.front(), "Model | Modalities");
      for (const auto& row : rows) {
        std::string mods;
        for (const auto& m : row.at("modalities")) mods += (mods.empty() ? "" : "+") + m.get<std::string>();
        o << "| " << model_title(row) << " | " << mods << " |";
        error_columns(o, row);
        o << "\n";
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("metrics.json: ") + e.what());
  }
  return o.str();
}

// ---------------------------------------------------------------------------------------------
// Figures.

namespace {

constexpr int kTile = kCropSize;
constexpr int kGap = 4;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<Rgb> px;

  Canvas(int w, int h) : width(w), height(h), px(static_cast<std::size_t>(w) * h, Rgb{255, 255, 255}) {}

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < width && y < height) px[static_cast<std::size_t>(y) * width + x] = c;
  }
  Rgb get(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }

  void save(const fs::path& path) const {
    io::PngImage png;
    png.channels = 3;
    png.width = width;
    png.height = height;
    png.bit_depth = 8;
    png.samples.reserve(px.size() * 3);
    for (const auto& p : px) {
      png.samples.push_back(p.r);
      png.samples.push_back(p.g);
      png.samples.push_back(p.b);
    }
    io::write_png(path, png);
  }
};

std::uint8_t byte(double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

// Gray or RGB image into the tile at (col, row).
void blit(Canvas& c, int col, int row, const Image& im) {
  const int x0 = col * (kTile + kGap), y0 = row * (kTile + kGap);
  for (int y = 0; y < kTile; ++y) {
    for (int x = 0; x < kTile; ++x) {
      const std::uint8_t r = byte(im.at(0, y, x));
      const Rgb p = im.channels == 3 ? Rgb{r, byte(im.at(1, y, x)), byte(im.at(2, y, x))} : Rgb{r, r, r};
      c.set(x0 + x, y0 + y, p);
    }
  }
}

void line(Canvas& c, int col, int row, Eigen::Vector2d a, Eigen::Vector2d b, Rgb colour) {
  const int x0 = col * (kTile + kGap), y0 = row * (kTile + kGap);
  const int n = 1 + static_cast<int>(std::ceil((b - a).norm()));
  for (int i = 0; i <= n; ++i) {
    const Eigen::Vector2d p = a + (b - a) * (static_cast<double>(i) / n);
    const int x = static_cast<int>(std::floor(p.x())), y = static_cast<int>(std::floor(p.y()));
    if (x >= 0 && y >= 0 && x < kTile && y < kTile) c.set(x0 + x, y0 + y, colour);
  }
}

void dot(Canvas& c, int col, int row, const Eigen::Vector2d& p, Rgb colour) {
  const int x0 = col * (kTile + kGap), y0 = row * (kTile + kGap);
  const int cx = static_cast<int>(std::floor(p.x())), cy = static_cast<int>(std::floor(p.y()));
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const int x = cx + dx, y = cy + dy;
      if (dx * dx + dy * dy <= 5 && x >= 0 && y >= 0 && x < kTile && y < kTile) c.set(x0 + x, y0 + y, colour);
    }
  }
}

// Shaded mesh blended over the tile's current content.
void overlay_mesh(Canvas& c, int col, int row, const body::Mesh& mesh, const body::Faces& faces,
                  const body::CameraParams& cam, Rgb tint) {
  const body::Points2 px = body::project(mesh.vertices, cam);
  const Eigen::VectorXd z = mesh.vertices.col(2);
  const render::DepthBuffers zb = render::omp::zbuffer(px, z, faces, kTile, kTile);
  const int x0 = col * (kTile + kGap), y0 = row * (kTile + kGap);
  for (int y = 0; y < kTile; ++y) {
    for (int x = 0; x < kTile; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * kTile + x;
      if (!zb.covered[i]) continue;
      const int f = zb.top_face[i];
      const Eigen::Vector3d a = mesh.vertices.row(faces(f, 0)), b = mesh.vertices.row(faces(f, 1)),
                            cc = mesh.vertices.row(faces(f, 2));
      const Eigen::Vector3d n = (b - a).cross(cc - a);
      const double shade = n.norm() > 0.0 ? 0.35 + 0.65 * std::abs(n.z()) / n.norm() : 1.0;
      const Rgb under = c.get(x0 + x, y0 + y);
      auto mix = [&](std::uint8_t u, std::uint8_t t) {
        return static_cast<std::uint8_t>(std::lround(0.4 * u + 0.6 * shade * t));
      };
      c.set(x0 + x, y0 + y, {mix(under.r, tint.r), mix(under.g, tint.g), mix(under.b, tint.b)});
    }
  }
}

void joints(Canvas& c, int col, int row, const body::Points2& pred, const body::Points2& gt) {
  for (int j = 0; j < pred.rows(); ++j) line(c, col, row, gt.row(j), pred.row(j), {255, 255, 0});
  for (int j = 0; j < gt.rows(); ++j) dot(c, col, row, gt.row(j), {0, 200, 0});
  for (int j = 0; j < pred.rows(); ++j) dot(c, col, row, pred.row(j), {230, 0, 0});
}

Image plane_image(const nn::Tensor& t) {
  Image im(1, t.height, t.width);
  std::copy(t.data.begin(), t.data.end(), im.data.begin());
  return im;
}

}  // namespace

std::vector<fs::path> cmd_report(const ReportOptions& o, std::ostream& log) {
  require(!o.run.empty(), ErrorKind::kConfig, "--run is required");
  require(o.levels >= 0 && o.levels < pyramid::kNumLevels, ErrorKind::kConfig, "--levels must be 0, 1 or 2");
  require(!o.data.empty(), ErrorKind::kConfig, "no dataset given (--data or RESTPOSE_DATA)");
  require(fs::is_directory(o.data), ErrorKind::kConfig, "dataset directory not found: " + o.data.string());
  const body::BodyTemplate tmpl = resolve_template(o.template_path);

  std::vector<pyramid::FusionLevelState> levels;
  for (int k = 0; k <= o.levels; ++k) levels.push_back(pyramid::load_level(o.run, k));
  std::vector<const pyramid::FusionLevelState*> ptrs;
  for (const auto& s : levels) ptrs.push_back(&s);
  const fs::path mean_path = o.run / "mean_params.json";
  require(fs::exists(mean_path), ErrorKind::kDependency, "run has no mean_params.json: " + mean_path.string());
  const net::HeadVector mean = pyramid::mean_head(data::load_mean_params(mean_path));
  const data::Dataset ds = select_split(data::load_slp(o.data), o.data, o.split);

  // One randomly chosen sample per cover type, in table order.
  std::mt19937_64 rng(o.seed);
  std::vector<const data::MultimodalSample*> picks;
  for (const auto cover : pyramid::kStratumOrder) {
    const auto members = data::stratum(ds, cover);
    if (members.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    picks.push_back(members[pick(rng)]);
  }

  const fs::path dir = o.figures.empty() ? o.run / "figures" : o.figures;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create " + dir.string());

  // Columns: RGB, D, IR, PM, reconstructed D, reconstructed IR, mesh overlay, joints.
  const int rows = static_cast<int>(picks.size());
  Canvas grid(8 * kTile + 7 * kGap, rows * kTile + (rows - 1) * kGap);
  // Columns: covered depth, mesh before reconstruction, mesh after reconstruction.
  Canvas pair(3 * kTile + 2 * kGap, rows * kTile + (rows - 1) * kGap);
  for (int r = 0; r < rows; ++r) {
    const data::MultimodalSample& s = *picks[r];
    const std::vector<pyramid::CycleOutput> chain = pyramid::predict_chain(ptrs, tmpl, s, mean, o.levels);
    const pyramid::CycleOutput& out = chain.back();
    blit(grid, 0, r, s.rgb);
    blit(grid, 1, r, s.depth);
    blit(grid, 2, r, s.ir);
    blit(grid, 3, r, s.pm);
    blit(grid, 4, r, plane_image(out.recon.depth));
    blit(grid, 5, r, plane_image(out.recon.ir));
    blit(grid, 6, r, s.rgb);
    overlay_mesh(grid, 6, r, out.fine.mesh, tmpl.faces, out.fine.cam, {120, 170, 255});
    blit(grid, 7, r, s.rgb);
    joints(grid, 7, r, out.fine.joints14_2d, s.joints14_2d);

    blit(pair, 0, r, s.depth);
    blit(pair, 1, r, s.rgb);
    overlay_mesh(pair, 1, r, out.coarse.mesh, tmpl.faces, out.coarse.cam, {255, 170, 120});
    blit(pair, 2, r, s.rgb);
    overlay_mesh(pair, 2, r, out.fine.mesh, tmpl.faces, out.fine.cam, {120, 170, 255});
    log << data::to_string(s.cover) << ": " << s.subject_id << "/" << s.pose_id << "\n";
  }
  const fs::path a = dir / "qualitative.png", b = dir / "before_after.png";
  grid.save(a);
  pair.save(b);
  return {a, b};
}

}  // namespace restpose::cli
