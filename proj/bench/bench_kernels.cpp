// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels on the layer shapes used by the toy networks, then the
// soft rasterizer and the depth z-buffer on a posed toy mesh.
// Prints one line per kernel: milliseconds per call (and effective GFLOP/s for convolutions).

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "restpose/bodymodel.hpp"
#include "restpose/kernels.hpp"
#include "restpose/raster.hpp"
#include "restpose/render.hpp"

using namespace restpose::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct Case {
  std::string name;
  Conv2dShape s;
};

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 3;
  const std::vector<Case> cases = {
      {"stem 4x4/4 2->16 @224", {2, 16, 224, 224, 4, 4, 0}},
      {"res 3x3 16->24 /2 @56", {16, 24, 56, 56, 3, 2, 1}},
      {"res 3x3 24->24 @28", {24, 24, 28, 28, 3, 1, 1}},
      {"res 3x3 48->48 @14", {48, 48, 14, 14, 3, 1, 1}},
      {"proj 1x1 96->512 @7", {96, 512, 7, 7, 1, 1, 0}},
      {"dec 3x3 2->8 /2 @224", {2, 8, 224, 224, 3, 2, 1}},
      {"dec 3x3 8->8 @112", {8, 8, 112, 112, 3, 1, 1}},
      {"dec 3x3 16->32 @112", {16, 32, 112, 112, 3, 1, 1}},
  };
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::printf("threads=%d reps=%d\n", omp_get_max_threads(), reps);
  std::printf("%-26s %-9s %10s %10s %8s\n", "shape", "pass", "ref ms", "omp ms", "GFLOP/s");
  for (const auto& c : cases) {
    const auto& s = c.s;
    std::vector<float> x(static_cast<std::size_t>(s.in_c) * s.in_h * s.in_w), w(s.weight_count()), b(s.out_c);
    std::vector<float> y(static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w()), dy(y.size()), dx(x.size());
    std::vector<float> dw(w.size()), db(b.size());
    for (auto* v : {&x, &w, &b, &dy}) {
      for (auto& e : *v) e = u(rng);
    }
    const double flops = 2.0 * static_cast<double>(s.macs());
    auto report = [&](const char* pass, const std::function<void()>& r, const std::function<void()>& o) {
      const double tr = time_ms(r, reps), to = time_ms(o, reps);
      std::printf("%-26s %-9s %10.3f %10.3f %8.2f\n", c.name.c_str(), pass, tr, to, flops / (to * 1e6));
    };
    report("forward", [&] { ref::conv2d_forward<float>(s, x, w, b, y); },
           [&] { omp::conv2d_forward<float>(s, x, w, b, y); });
    report("bwd-in", [&] { ref::conv2d_backward_input<float>(s, w, dy, dx); },
           [&] { omp::conv2d_backward_input<float>(s, w, dy, dx); });
    report("bwd-w", [&] { ref::conv2d_backward_weight<float>(s, x, dy, dw, db); },
           [&] { omp::conv2d_backward_weight<float>(s, x, dy, dw, db); });
  }

  // Toy body, slightly posed, framed like a data sample.
  namespace body = restpose::body;
  const body::BodyTemplate tmpl = body::make_toy_template();
  body::BodyPoseParams pose;
  pose.set_joint(16, {0.0, 0.0, -0.6});
  pose.set_joint(2, {-0.4, 0.0, 0.0});
  const body::Mesh mesh = body::forward(tmpl, pose, {});
  body::CameraParams cam;
  cam.R = body::rig_rotation();
  cam.s = 0.1;
  cam.t = {112.0, 112.0};
  const body::Points2 px = body::project(mesh.vertices, cam);
  const Eigen::VectorXd z = mesh.vertices.col(2);
  std::printf("\n%-26s %-9s %10s %10s\n", "mesh", "pass", "ref ms", "omp ms");
  const std::string label = std::to_string(tmpl.vertex_count()) + "v/" + std::to_string(tmpl.faces.rows()) + "f @224";
  auto report_mesh = [&](const char* pass, const std::function<void()>& r, const std::function<void()>& o) {
    std::printf("%-26s %-9s %10.3f %10.3f\n", label.c_str(), pass, time_ms(r, reps), time_ms(o, reps));
  };
  for (double sharp : {4.0, 30.0}) {
    const std::string pass = "soft s=" + std::to_string(static_cast<int>(sharp));
    report_mesh(pass.c_str(), [&] { restpose::raster::ref::rasterize(px, tmpl.faces, 224, 224, sharp); },
                [&] { restpose::raster::omp::rasterize(px, tmpl.faces, 224, 224, sharp); });
  }
  report_mesh("zbuffer", [&] { restpose::render::ref::zbuffer(px, z, tmpl.faces, 224, 224); },
              [&] { restpose::render::omp::zbuffer(px, z, tmpl.faces, 224, 224); });
  return 0;
}
