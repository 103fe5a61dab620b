// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "restpose/errors.hpp"

namespace restpose::nn {
namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;

std::size_t product(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
}

void he_normal(Param& p, std::mt19937_64& rng, int fan_in, float gain) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : p.value) v = static_cast<float>(gain * n(rng));
}

}  // namespace

Param::Param(std::string n, std::vector<std::int64_t> s) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count = product(shape);
  value.assign(count, 0.0f);
  grad.assign(count, 0.0f);
  m.assign(count, 0.0f);
  v.assign(count, 0.0f);
}

void zero_grad(const ParamList& params) {
  for (Param* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->size();
  return n;
}

void store(const ParamList& params, io::Archive& ar, bool with_moments) {
  for (const Param* p : params) {
    ar.put_f32(p->name, p->value, p->shape);
    if (with_moments) {
      ar.put_f32(p->name + ".m", p->m, p->shape);
      ar.put_f32(p->name + ".v", p->v, p->shape);
    }
  }
}

void restore(const ParamList& params, const io::Archive& ar, bool with_moments) {
  for (Param* p : params) {
    p->value = ar.get_f32(p->name, p->shape);
    if (with_moments) {
      p->m = ar.get_f32(p->name + ".m", p->shape);
      p->v = ar.get_f32(p->name + ".v", p->shape);
    }
  }
}

// ---------------------------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_c, int out_c, int k, int stride, int pad)
    : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad),
      w_(name + ".w", {out_c, in_c, k, k}), b_(name + ".b", {out_c}) {}

void Conv2d::init(std::mt19937_64& rng, float gain) {
  he_normal(w_, rng, in_c_ * k_ * k_, gain);
  std::fill(b_.value.begin(), b_.value.end(), 0.0f);
}

kernels::Conv2dShape Conv2d::shape_for(const Tensor& x) const {
  require(x.channels == in_c_, ErrorKind::kDimension,
          w_.name + ": expected " + std::to_string(in_c_) + " input channels, got " + std::to_string(x.channels));
  return {in_c_, out_c_, x.height, x.width, k_, stride_, pad_};
}

Tensor Conv2d::forward(const Tensor& x) const {
  const auto s = shape_for(x);
  Tensor y(out_c_, s.out_h(), s.out_w());
  kernels::omp::conv2d_forward<float>(s, x.data, w_.value, b_.value, y.data);
  return y;
}

void Conv2d::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
  const auto s = shape_for(x);
  require(dy.channels == out_c_ && dy.height == s.out_h() && dy.width == s.out_w(), ErrorKind::kDimension,
          w_.name + ": gradient shape mismatch");
  kernels::omp::conv2d_backward_weight<float>(s, x.data, dy.data, w_.grad, b_.grad);
  if (dx != nullptr) {
    *dx = Tensor(in_c_, x.height, x.width);
    kernels::omp::conv2d_backward_input<float>(s, w_.value, dy.data, dx->data);
  }
}

void Conv2d::collect(ParamList& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out)
    : in_(in), out_(out), w_(name + ".w", {out, in}), b_(name + ".b", {out}) {}

void Linear::init(std::mt19937_64& rng, float gain) {
  he_normal(w_, rng, in_, gain);
  std::fill(b_.value.begin(), b_.value.end(), 0.0f);
}

void Linear::zero() {
  std::fill(w_.value.begin(), w_.value.end(), 0.0f);
  std::fill(b_.value.begin(), b_.value.end(), 0.0f);
}

std::vector<float> Linear::forward(const std::vector<float>& x) const {
  require(static_cast<int>(x.size()) == in_, ErrorKind::kDimension, w_.name + ": input size mismatch");
  std::vector<float> y(b_.value);
  Eigen::Map<const MatF> w(w_.value.data(), out_, in_);
  Eigen::Map<VecF>(y.data(), out_).noalias() += w * Eigen::Map<const VecF>(x.data(), in_);
  return y;
}

void Linear::backward(const std::vector<float>& x, const std::vector<float>& dy, std::vector<float>* dx) {
  require(static_cast<int>(x.size()) == in_ && static_cast<int>(dy.size()) == out_, ErrorKind::kDimension,
          w_.name + ": gradient shape mismatch");
  Eigen::Map<const VecF> g(dy.data(), out_);
  Eigen::Map<const VecF> xv(x.data(), in_);
  Eigen::Map<MatF>(w_.grad.data(), out_, in_).noalias() += g * xv.transpose();
  Eigen::Map<VecF>(b_.grad.data(), out_) += g;
  if (dx != nullptr) {
    dx->assign(in_, 0.0f);
    Eigen::Map<VecF>(dx->data(), in_).noalias() = Eigen::Map<const MatF>(w_.value.data(), out_, in_).transpose() * g;
  }
}

void Linear::collect(ParamList& out) {
  out.push_back(&w_);
  out.push_back(&b_);
}

// ---------------------------------------------------------------------------------------------

void relu_inplace(Tensor& x) { relu_inplace(x.data); }

void relu_inplace(std::vector<float>& x) {
  for (auto& v : x) v = v > 0.0f ? v : 0.0f;
}

void relu_backward(const Tensor& y, Tensor& dy) { relu_backward(y.data, dy.data); }

void relu_backward(const std::vector<float>& y, std::vector<float>& dy) {
  require(y.size() == dy.size(), ErrorKind::kDimension, "relu_backward: size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0f)) dy[i] = 0.0f;
  }
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  require(r >= 1 && x.channels % (r * r) == 0, ErrorKind::kDimension,
          "pixel_shuffle: channel count must be divisible by r^2");
  const int c = x.channels / (r * r);
  Tensor y(c, x.height * r, x.width * r);
  kernels::omp::pixel_shuffle<float>(x.data, c, x.height, x.width, r, y.data);
  return y;
}

Tensor pixel_shuffle_backward(const Tensor& dy, int r) {
  require(r >= 1 && dy.height % r == 0 && dy.width % r == 0, ErrorKind::kDimension,
          "pixel_shuffle_backward: size must be divisible by r");
  const int h = dy.height / r, w = dy.width / r;
  Tensor dx(dy.channels * r * r, h, w);
  kernels::omp::pixel_unshuffle<float>(dy.data, dy.channels, h, w, r, dx.data);
  return dx;
}

std::vector<float> global_avg_pool(const Tensor& x) {
  std::vector<float> out(static_cast<std::size_t>(x.channels));
  const double inv = 1.0 / static_cast<double>(x.plane_size());
  for (int c = 0; c < x.channels; ++c) {
    double acc = 0.0;
    for (float v : x.plane(c)) acc += v;
    out[c] = static_cast<float>(acc * inv);
  }
  return out;
}

Tensor global_avg_pool_backward(const std::vector<float>& dy, int channels, int height, int width) {
  require(static_cast<int>(dy.size()) == channels, ErrorKind::kDimension, "global_avg_pool_backward: size mismatch");
  Tensor dx(channels, height, width);
  const float inv = 1.0f / static_cast<float>(height * width);
  for (int c = 0; c < channels; ++c) {
    auto plane = dx.plane(c);
    std::fill(plane.begin(), plane.end(), dy[c] * inv);
  }
  return dx;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  require(a.height == b.height && a.width == b.width, ErrorKind::kDimension, "concat: frame mismatch");
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

void split(const Tensor& d, int channels_a, Tensor* da, Tensor* db) {
  require(channels_a >= 0 && channels_a <= d.channels, ErrorKind::kDimension, "split: bad channel count");
  const auto cut = d.data.begin() + static_cast<std::ptrdiff_t>(channels_a * d.plane_size());
  if (da != nullptr) {
    *da = Tensor(channels_a, d.height, d.width);
    std::copy(d.data.begin(), cut, da->data.begin());
  }
  if (db != nullptr) {
    *db = Tensor(d.channels - channels_a, d.height, d.width);
    std::copy(cut, d.data.end(), db->data.begin());
  }
}

// ---------------------------------------------------------------------------------------------

ResidualBlock::ResidualBlock(const std::string& name, int in_c, int out_c, int stride)
    : conv1_(name + ".conv1", in_c, out_c, 3, stride, 1),
      conv2_(name + ".conv2", out_c, out_c, 3, 1, 1),
      has_skip_(in_c != out_c || stride != 1) {
  if (has_skip_) skip_ = Conv2d(name + ".skip", in_c, out_c, 1, stride, 0);
}

void ResidualBlock::init(std::mt19937_64& rng) {
  conv1_.init(rng);
  // A damped second convolution keeps the unnormalised stack close to the skip path at start.
  conv2_.init(rng, 0.25f);
  if (has_skip_) skip_.init(rng, std::sqrt(0.5f));
}

Tensor ResidualBlock::forward(const Tensor& x, Cache* cache) const {
  Tensor h = conv1_.forward(x);
  relu_inplace(h);
  Tensor out = conv2_.forward(h);
  if (has_skip_) {
    const Tensor s = skip_.forward(x);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += s.data[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += x.data[i];
  }
  relu_inplace(out);
  if (cache != nullptr) {
    cache->x = x;
    cache->h = std::move(h);
    cache->out = out;
  }
  return out;
}

Tensor ResidualBlock::backward(const Cache& cache, const Tensor& dy) {
  Tensor g = dy;
  relu_backward(cache.out, g);
  Tensor dh;
  conv2_.backward(cache.h, g, &dh);
  relu_backward(cache.h, dh);
  Tensor dx;
  conv1_.backward(cache.x, dh, &dx);
  if (has_skip_) {
    Tensor ds;
    skip_.backward(cache.x, g, &ds);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += g.data[i];
  }
  return dx;
}

void ResidualBlock::collect(ParamList& out) {
  conv1_.collect(out);
  conv2_.collect(out);
  if (has_skip_) skip_.collect(out);
}

// ---------------------------------------------------------------------------------------------

void Adam::step(const ParamList& params, int batch) {
  require(batch >= 1, ErrorKind::kInvalidParameter, "Adam::step: batch must be positive");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double scale = 1.0 / batch;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i] * scale;
      const double m = b1 * p->m[i] + (1.0 - b1) * g;
      const double v = b2 * p->v[i] + (1.0 - b2) * g * g;
      p->m[i] = static_cast<float>(m);
      p->v[i] = static_cast<float>(v);
      p->value[i] -= static_cast<float>(config_.lr * (m / c1) / (std::sqrt(v / c2) + config_.eps));
    }
  }
}

}  // namespace restpose::nn
