// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// A low-poly stand-in for a licensed body asset: elliptic cylinders around the bones of the
// 24-joint SMPL tree, in millimetres, standing along +Y and facing +Z (T-pose).

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "restpose/bodymodel.hpp"
#include "restpose/errors.hpp"

namespace restpose::body {
namespace {

constexpr std::array<int, kNumJoints> kSmplParent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                                                     9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

constexpr std::array<int, kNumJoints> kMirror = {0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10,
                                                 12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22};

const std::array<Eigen::Vector3d, kNumJoints>& rest_joints() {
  static const std::array<Eigen::Vector3d, kNumJoints> kJoints = {
      Eigen::Vector3d(0, 0, 0),          Eigen::Vector3d(90, -80, 0),     Eigen::Vector3d(-90, -80, 0),
      Eigen::Vector3d(0, 110, -10),      Eigen::Vector3d(100, -480, 0),   Eigen::Vector3d(-100, -480, 0),
      Eigen::Vector3d(0, 240, -10),      Eigen::Vector3d(100, -880, -20), Eigen::Vector3d(-100, -880, -20),
      Eigen::Vector3d(0, 300, 0),        Eigen::Vector3d(110, -940, 100), Eigen::Vector3d(-110, -940, 100),
      Eigen::Vector3d(0, 500, -10),      Eigen::Vector3d(80, 420, 0),     Eigen::Vector3d(-80, 420, 0),
      Eigen::Vector3d(0, 580, 20),       Eigen::Vector3d(180, 440, -10),  Eigen::Vector3d(-180, 440, -10),
      Eigen::Vector3d(440, 440, -20),    Eigen::Vector3d(-440, 440, -20), Eigen::Vector3d(690, 440, 0),
      Eigen::Vector3d(-690, 440, 0),     Eigen::Vector3d(780, 440, 0),    Eigen::Vector3d(-780, 440, 0)};
  return kJoints;
}

struct Segment {
  int from;         // joint the segment rotates with
  int to;           // child joint, or -1 for a tip segment
  int tip = -1;     // tip slot (0..4) for tip segments
  double ru;        // cross-section radii
  double rw;
};

// Extremity tips: head top, left/right toe, left/right fingertip.
constexpr int kNumTips = 5;
const std::array<int, kNumTips> kTipJoint = {kHead, kLFoot, kRFoot, kLHand, kRHand};
const std::array<Eigen::Vector3d, kNumTips>& tip_positions() {
  static const std::array<Eigen::Vector3d, kNumTips> kTips = {
      Eigen::Vector3d(0, 780, 10), Eigen::Vector3d(110, -950, 180), Eigen::Vector3d(-110, -950, 180),
      Eigen::Vector3d(880, 440, 0), Eigen::Vector3d(-880, 440, 0)};
  return kTips;
}
constexpr std::array<int, kNumTips> kTipMirror = {0, 2, 1, 4, 3};

std::vector<Segment> make_segments(bool with_tips) {
  std::vector<Segment> s = {
      {0, 1, -1, 75, 75},    {0, 2, -1, 75, 75},    {0, 3, -1, 150, 100},  {1, 4, -1, 70, 70},
      {2, 5, -1, 70, 70},    {3, 6, -1, 145, 95},   {4, 7, -1, 48, 48},    {5, 8, -1, 48, 48},
      {6, 9, -1, 155, 100},  {7, 10, -1, 40, 35},   {8, 11, -1, 40, 35},   {9, 12, -1, 120, 85},
      {9, 13, -1, 60, 60},   {9, 14, -1, 60, 60},   {12, 15, -1, 50, 50},  {13, 16, -1, 55, 55},
      {14, 17, -1, 55, 55},  {16, 18, -1, 45, 45},  {17, 19, -1, 45, 45},  {18, 20, -1, 37, 37},
      {19, 21, -1, 37, 37},  {20, 22, -1, 30, 20},  {21, 23, -1, 30, 20},
  };
  if (with_tips) {
    const std::array<std::pair<double, double>, kNumTips> radii = {
        std::pair{95.0, 95.0}, {35.0, 30.0}, {35.0, 30.0}, {28.0, 18.0}, {28.0, 18.0}};
    for (int t = 0; t < kNumTips; ++t) s.push_back({kTipJoint[t], -1, t, radii[t].first, radii[t].second});
  }
  return s;
}

int mirror_segment(const std::vector<Segment>& segs, int idx) {
  const Segment& s = segs[idx];
  for (int k = 0; k < static_cast<int>(segs.size()); ++k) {
    const Segment& o = segs[k];
    if (s.to >= 0 && o.to == kMirror[s.to] && o.from == kMirror[s.from]) return k;
    if (s.to < 0 && o.to < 0 && o.tip == kTipMirror[s.tip]) return k;
  }
  return idx;
}

struct Frame {
  Eigen::Vector3d axis, u, w;
};

Frame segment_frame(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  Frame f;
  f.axis = (b - a).normalized();
  Eigen::Vector3d u = f.axis.cross(Eigen::Vector3d::UnitZ());
  if (u.norm() < 0.3) u = f.axis.cross(Eigen::Vector3d::UnitX());
  f.u = u.normalized();
  f.w = f.axis.cross(f.u);
  return f;
}

}  // namespace

BodyTemplate make_toy_template(const ToyTemplateConfig& config) {
  require(config.n_vertices >= kNumJoints, ErrorKind::kConfig, "toy template needs n_vertices >= 24");
  const int n = config.n_vertices;
  const bool with_tips = n >= kNumJoints + kNumTips;
  const auto segs = make_segments(with_tips);
  const int nseg = static_cast<int>(segs.size());
  const int fixed = kNumJoints + (with_tips ? kNumTips : 0);

  // Pick rings-per-segment r and vertices-per-ring m, maximizing r*m (then m).
  int rings = 0, ring_size = 0;
  for (int m = 12; m >= 3; --m) {
    for (int r = 3; r >= 1; --r) {
      if (fixed + nseg * r * m <= n && r * m > rings * ring_size) {
        rings = r;
        ring_size = m;
      }
    }
  }
  const int ring_vertices = nseg * rings * ring_size;
  const int fillers = n - fixed - ring_vertices;

  const auto& joints = rest_joints();
  const auto& tips = tip_positions();
  auto seg_end = [&](const Segment& s) { return s.to >= 0 ? joints[s.to] : tips[s.tip]; };
  auto seg_end_index = [&](const Segment& s) { return s.to >= 0 ? s.to : kNumJoints + s.tip; };

  BodyTemplate t;
  t.parent = kSmplParent;
  t.rest_vertices.resize(n, 3);
  t.weights = RowMatrix::Zero(n, kNumJoints);
  t.shape_basis = RowMatrix::Zero(3 * n, kNumBetas);

  // Per-vertex bookkeeping used to build the shape basis.
  struct Placement {
    int segment = -1;  // -1: joint centre or tip
    double t = 0.0;
    Eigen::Vector3d radial = Eigen::Vector3d::Zero();
  };
  std::vector<Placement> place(n);

  for (int j = 0; j < kNumJoints; ++j) {
    t.rest_vertices.row(j) = joints[j].transpose();
    if (t.parent[j] < 0) {
      t.weights(j, j) = 1.0;
    } else {
      t.weights(j, t.parent[j]) = 0.5;
      t.weights(j, j) = 0.5;
    }
  }
  if (with_tips) {
    for (int k = 0; k < kNumTips; ++k) {
      t.rest_vertices.row(kNumJoints + k) = tips[k].transpose();
      t.weights(kNumJoints + k, kTipJoint[k]) = 1.0;
    }
  }

  auto skin_on_segment = [&](int v, const Segment& s, double tt) {
    const int gp = t.parent[s.from];
    const double a = gp >= 0 ? 0.5 * std::max(0.0, 0.3 - tt) / 0.3 : 0.0;
    const double b = s.to >= 0 ? 0.5 * std::max(0.0, tt - 0.7) / 0.3 : 0.0;
    t.weights(v, s.from) += 1.0 - a - b;
    if (a > 0.0) t.weights(v, gp) += a;
    if (b > 0.0) t.weights(v, s.to) += b;
  };

  std::vector<std::array<int, 3>> faces;
  int v = fixed;
  constexpr double kTwoPi = 6.283185307179586;
  for (int si = 0; si < nseg && rings > 0; ++si) {
    const Segment& s = segs[si];
    const Eigen::Vector3d a = joints[s.from];
    const Eigen::Vector3d b = seg_end(s);
    const Frame f = segment_frame(a, b);
    const int first = v;
    for (int r = 0; r < rings; ++r) {
      // End rings sit on the joints so neighbouring limbs overlap there.
      const double tt = rings == 1 ? 0.5 : static_cast<double>(r) / (rings - 1);
      const Eigen::Vector3d centre = a + tt * (b - a);
      for (int k = 0; k < ring_size; ++k) {
        const double phi = kTwoPi * k / ring_size;
        const Eigen::Vector3d radial = s.ru * std::cos(phi) * f.u + s.rw * std::sin(phi) * f.w;
        t.rest_vertices.row(v) = (centre + radial).transpose();
        place[v] = {si, tt, radial};
        skin_on_segment(v, s, tt);
        ++v;
      }
    }
    auto ring = [&](int r, int k) { return first + r * ring_size + (k % ring_size); };
    const int start_apex = s.from;
    const int end_apex = seg_end_index(s);
    for (int k = 0; k < ring_size; ++k) {
      faces.push_back({start_apex, ring(0, k + 1), ring(0, k)});
      for (int r = 0; r + 1 < rings; ++r) {
        faces.push_back({ring(r, k), ring(r, k + 1), ring(r + 1, k + 1)});
        faces.push_back({ring(r, k), ring(r + 1, k + 1), ring(r + 1, k)});
      }
      faces.push_back({end_apex, ring(rings - 1, k), ring(rings - 1, k + 1)});
    }
  }
  // Interior filler vertices on bone axes (not referenced by faces).
  for (int fi = 0; fi < fillers; ++fi) {
    const int si = fi % nseg;
    const int pass = fi / nseg;
    const double tt = 0.15 + std::fmod(0.35 + 0.37 * pass, 0.7);
    const Segment& s = segs[si];
    t.rest_vertices.row(v) = (joints[s.from] + tt * (seg_end(s) - joints[s.from])).transpose();
    place[v] = {si, tt, Eigen::Vector3d::Zero()};
    skin_on_segment(v, s, tt);
    ++v;
  }

  t.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) {
    for (int c = 0; c < 3; ++c) t.faces(static_cast<Eigen::Index>(i), c) = faces[i][c];
  }

  t.j24 = RowMatrix::Zero(kNumJoints, n);
  for (int j = 0; j < kNumJoints; ++j) t.j24(j, j) = 1.0;
  constexpr std::array<int, kNumJoints14 - 1> kLspFromSmpl = {kRAnkle, kRKnee,     kRHip,      kLHip,   kLKnee,
                                                              kLAnkle, kRWrist,    kRElbow,    kRShoulder,
                                                              kLShoulder, kLElbow, kLWrist,    kNeck};
  t.j14 = RowMatrix::Zero(kNumJoints14, n);
  for (int j = 0; j < kNumJoints14 - 1; ++j) t.j14(j, kLspFromSmpl[j]) = 1.0;
  t.j14(kHeadTop14, with_tips ? kNumJoints + 0 : kHead) = 1.0;

  // Shape basis. Component 0 scales about the pelvis, 1 scales girth, 2..9 are seeded
  // left/right-symmetric bone-length and girth variations.
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> length_dist(0.0, 0.08);
  std::normal_distribution<double> girth_dist(0.0, 0.10);
  std::vector<std::array<double, kNumBetas>> seg_len(nseg), seg_girth(nseg);
  std::vector<std::array<double, kNumBetas>> tip_len(kNumTips);
  for (int si = 0; si < nseg; ++si) {
    const int m = mirror_segment(segs, si);
    for (int k = 2; k < kNumBetas; ++k) {
      if (m < si) {
        seg_len[si][k] = seg_len[m][k];
        seg_girth[si][k] = seg_girth[m][k];
      } else {
        seg_len[si][k] = length_dist(rng);
        seg_girth[si][k] = girth_dist(rng);
      }
    }
  }
  const auto order = topological_order(t.parent);
  for (int k = 0; k < kNumBetas; ++k) {
    // Joint displacement for this component, accumulated down the tree.
    std::array<Eigen::Vector3d, kNumJoints> dj;
    std::array<Eigen::Vector3d, kNumTips> dtip;
    for (auto& d : dj) d.setZero();
    for (auto& d : dtip) d.setZero();
    if (k == 0) {
      for (int j = 0; j < kNumJoints; ++j) dj[j] = 0.06 * (joints[j] - joints[0]);
      for (int q = 0; q < kNumTips; ++q) dtip[q] = 0.06 * (tips[q] - joints[0]);
    } else if (k >= 2) {
      for (int j : order) {
        if (t.parent[j] < 0) continue;
        for (int si = 0; si < nseg; ++si) {
          if (segs[si].to == j) dj[j] = dj[segs[si].from] + seg_len[si][k] * (joints[j] - joints[segs[si].from]);
        }
      }
      for (int si = 0; si < nseg; ++si) {
        if (segs[si].to < 0) {
          const int q = segs[si].tip;
          dtip[q] = dj[segs[si].from] + seg_len[si][k] * (tips[q] - joints[segs[si].from]);
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      Eigen::Vector3d d = Eigen::Vector3d::Zero();
      if (i < kNumJoints) {
        d = dj[i];
      } else if (i < fixed) {
        d = dtip[i - kNumJoints];
      } else {
        const Placement& p = place[i];
        const Segment& s = segs[p.segment];
        const Eigen::Vector3d d_end = s.to >= 0 ? dj[s.to] : dtip[s.tip];
        d = dj[s.from] + p.t * (d_end - dj[s.from]);
        if (k == 0) d = 0.06 * (t.rest_vertices.row(i).transpose() - joints[0]);
        if (k == 1) d = 0.15 * p.radial;
        if (k >= 2) d += seg_girth[p.segment][k] * p.radial;
      }
      for (int c = 0; c < 3; ++c) t.shape_basis(3 * i + c, k) = d[c];
    }
  }

  t.validate();
  return t;
}

}  // namespace restpose::body
