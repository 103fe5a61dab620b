// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>
#include <vector>

#include <doctest.h>
#include <omp.h>

#include "restpose/kernels.hpp"
#include "test_util.hpp"

using namespace restpose::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

const std::vector<Conv2dShape>& shapes() {
  static const std::vector<Conv2dShape> s = {
      {3, 5, 9, 11, 3, 1, 1}, {4, 6, 12, 10, 3, 2, 1}, {2, 3, 16, 16, 4, 4, 0},
      {5, 7, 7, 7, 1, 1, 0},  {3, 2, 8, 9, 5, 2, 2},   {1, 1, 6, 6, 3, 1, 0}};
  return s;
}

struct ConvOut {
  std::vector<double> y, dx, dw, db;
};

template <bool Omp>
ConvOut run_conv(const Conv2dShape& s, const std::vector<double>& x, const std::vector<double>& w,
                 const std::vector<double>& b, const std::vector<double>& dy) {
  ConvOut o;
  o.y.resize(static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w());
  o.dx.assign(x.size(), 123.0);  // overwritten
  o.dw.assign(w.size(), 0.5);    // accumulated
  o.db.assign(b.size(), 0.25);
  if constexpr (Omp) {
    omp::conv2d_forward<double>(s, x, w, b, o.y);
    omp::conv2d_backward_input<double>(s, w, dy, o.dx);
    omp::conv2d_backward_weight<double>(s, x, dy, o.dw, o.db);
  } else {
    ref::conv2d_forward<double>(s, x, w, b, o.y);
    ref::conv2d_backward_input<double>(s, w, dy, o.dx);
    ref::conv2d_backward_weight<double>(s, x, dy, o.dw, o.db);
  }
  return o;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("OpenMP convolution agrees with the serial reference") {
  std::mt19937_64 rng(1);
  for (const auto& s : shapes()) {
    const auto x = random_vec<double>(static_cast<std::size_t>(s.in_c) * s.in_h * s.in_w, rng);
    const auto w = random_vec<double>(static_cast<std::size_t>(s.weight_count()), rng);
    const auto b = random_vec<double>(s.out_c, rng);
    const auto dy = random_vec<double>(static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w(), rng);
    const ConvOut r = run_conv<false>(s, x, w, b, dy);
    const ConvOut o = run_conv<true>(s, x, w, b, dy);
    CHECK(max_abs_diff(r.y, o.y) <= 1e-12);
    CHECK(max_abs_diff(r.dx, o.dx) <= 1e-12);
    CHECK(max_abs_diff(r.dw, o.dw) <= 1e-12);
    CHECK(max_abs_diff(r.db, o.db) <= 1e-12);
  }
}

TEST_CASE("OpenMP kernels do not depend on the thread count") {
  std::mt19937_64 rng(2);
  const Conv2dShape s{6, 8, 20, 18, 3, 1, 1};
  const auto x = random_vec<double>(static_cast<std::size_t>(s.in_c) * s.in_h * s.in_w, rng);
  const auto w = random_vec<double>(static_cast<std::size_t>(s.weight_count()), rng);
  const auto b = random_vec<double>(s.out_c, rng);
  const auto dy = random_vec<double>(static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w(), rng);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const ConvOut one = run_conv<true>(s, x, w, b, dy);
  omp_set_num_threads(4);
  const ConvOut four = run_conv<true>(s, x, w, b, dy);
  omp_set_num_threads(saved);
  CHECK(one.y == four.y);
  CHECK(one.dx == four.dx);
  CHECK(one.dw == four.dw);
  CHECK(one.db == four.db);
}

TEST_CASE("convolution gradients match central differences") {
  std::mt19937_64 rng(3);
  for (const auto& s : shapes()) {
    const auto x = random_vec<double>(static_cast<std::size_t>(s.in_c) * s.in_h * s.in_w, rng);
    const auto w = random_vec<double>(static_cast<std::size_t>(s.weight_count()), rng);
    const auto b = random_vec<double>(s.out_c, rng);
    const auto dy = random_vec<double>(static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w(), rng);
    auto f = [&](const std::vector<double>& xx, const std::vector<double>& ww, const std::vector<double>& bb) {
      std::vector<double> y(dy.size());
      ref::conv2d_forward<double>(s, xx, ww, bb, y);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * dy[i];
      return acc;
    };
    std::vector<double> dx(x.size()), dw(w.size(), 0.0), db(b.size(), 0.0);
    omp::conv2d_backward_input<double>(s, w, dy, dx);
    omp::conv2d_backward_weight<double>(s, x, dy, dw, db);
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); i += 7) {
      auto a = x, c = x;
      a[i] += h;
      c[i] -= h;
      CHECK(testutil::rel_err(dx[i], (f(a, w, b) - f(c, w, b)) / (2 * h), 1e-6) < 1e-6);
    }
    for (std::size_t i = 0; i < w.size(); i += 3) {
      auto a = w, c = w;
      a[i] += h;
      c[i] -= h;
      CHECK(testutil::rel_err(dw[i], (f(x, a, b) - f(x, c, b)) / (2 * h), 1e-6) < 1e-6);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto a = b, c = b;
      a[i] += h;
      c[i] -= h;
      CHECK(testutil::rel_err(db[i], (f(x, w, a) - f(x, w, c)) / (2 * h), 1e-6) < 1e-6);
    }
  }
}

TEST_CASE("float convolution tracks the double reference") {
  std::mt19937_64 rng(4);
  const Conv2dShape s{8, 4, 14, 14, 3, 2, 1};
  const auto xd = random_vec<double>(static_cast<std::size_t>(s.in_c) * s.in_h * s.in_w, rng);
  const auto wd = random_vec<double>(static_cast<std::size_t>(s.weight_count()), rng);
  std::vector<float> xf(xd.begin(), xd.end()), wf(wd.begin(), wd.end());
  std::vector<double> yd(static_cast<std::size_t>(s.out_c) * s.out_h() * s.out_w());
  std::vector<float> yf(yd.size());
  ref::conv2d_forward<double>(s, xd, wd, {}, yd);
  omp::conv2d_forward<float>(s, xf, wf, {}, yf);
  for (std::size_t i = 0; i < yd.size(); ++i) CHECK(std::abs(yd[i] - yf[i]) <= 1e-4);
}

TEST_CASE("pixel shuffle index convention") {
  const std::vector<double> x = {0, 1, 2, 3};
  std::vector<double> y(4);
  omp::pixel_shuffle<double>(x, 1, 1, 1, 2, y);
  CHECK(y == std::vector<double>{0, 1, 2, 3});

  std::mt19937_64 rng(5);
  const auto id = random_vec<double>(3 * 4 * 5, rng);
  std::vector<double> same(id.size());
  omp::pixel_shuffle<double>(id, 3, 4, 5, 1, same);
  CHECK(same == id);

  // 8x3x5, r=2 -> 2x6x10 against a direct loop over the normative formula.
  const int c_out = 2, h = 3, w = 5, r = 2;
  const auto v = random_vec<double>(8 * h * w, rng);
  std::vector<double> got(v.size()), ref_out(v.size());
  omp::pixel_shuffle<double>(v, c_out, h, w, r, got);
  ref::pixel_shuffle<double>(v, c_out, h, w, r, ref_out);
  for (int c = 0; c < c_out; ++c)
    for (int hh = 0; hh < h; ++hh)
      for (int ww = 0; ww < w; ++ww)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < r; ++j)
            CHECK(got[(c * h * r + hh * r + i) * w * r + ww * r + j] == v[((c * r * r + i * r + j) * h + hh) * w + ww]);
  CHECK(got == ref_out);

  // Bijection: the multiset of values survives, and unshuffle inverts.
  auto a = v, b = got;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  std::vector<double> back(v.size());
  omp::pixel_unshuffle<double>(got, c_out, h, w, r, back);
  CHECK(back == v);
}

TEST_CASE("OpenMP skinning agrees with the serial reference") {
  std::mt19937_64 rng(6);
  const int n = 50, j = 5;
  const auto v = random_vec<double>(3 * n, rng);
  auto wts = random_vec<double>(static_cast<std::size_t>(n) * j, rng);
  for (auto& x : wts) x = std::abs(x);
  const auto a = random_vec<double>(9 * j, rng);
  const auto rj = random_vec<double>(3 * j, rng);
  const auto d = random_vec<double>(3 * j, rng);
  const SkinningInputs in{v, wts, a, rj, d, j};
  std::vector<double> r(3 * n), o(3 * n);
  ref::skin(in, r);
  omp::skin(in, o);
  CHECK(max_abs_diff(r, o) <= 1e-12);
}

}  // TEST_SUITE
