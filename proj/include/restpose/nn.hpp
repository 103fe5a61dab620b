// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal layer library for the regressor and decoder: explicit forward and backward passes,
// single-precision CHW tensors, one sample at a time. Layers hold parameters only; callers keep
// whatever activations the backward pass needs. Parameter gradients accumulate until cleared,
// so a batch is the sum of per-sample backward calls made in a fixed order.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "restpose/archive.hpp"
#include "restpose/image.hpp"
#include "restpose/kernels.hpp"

namespace restpose::nn {

using Tensor = Image;

struct Param {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> value;
  std::vector<float> grad;
  std::vector<float> m;  // Adam moments
  std::vector<float> v;

  Param() = default;
  Param(std::string n, std::vector<std::int64_t> s);
  std::size_t size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;

void zero_grad(const ParamList& params);
std::size_t count_parameters(const ParamList& params);

// Writes values (and optionally Adam moments, as "<name>.m" / "<name>.v") into an archive, and
// reads them back with shape checks.
void store(const ParamList& params, io::Archive& ar, bool with_moments = false);
void restore(const ParamList& params, const io::Archive& ar, bool with_moments = false);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_c, int out_c, int k, int stride, int pad);

  // He-normal weights times `gain`, zero bias.
  void init(std::mt19937_64& rng, float gain = 1.0f);
  kernels::Conv2dShape shape_for(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;
  // Accumulates parameter gradients; writes dx when given.
  void backward(const Tensor& x, const Tensor& dy, Tensor* dx);
  void collect(ParamList& out);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

 private:
  int in_c_ = 0, out_c_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param w_, b_;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  void init(std::mt19937_64& rng, float gain = 1.0f);
  std::vector<float> forward(const std::vector<float>& x) const;
  void backward(const std::vector<float>& x, const std::vector<float>& dy, std::vector<float>* dx);
  void collect(ParamList& out);
  // Sets weights and bias to zero.
  void zero();

  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_ = 0, out_ = 0;
  Param w_, b_;
};

void relu_inplace(Tensor& x);
void relu_inplace(std::vector<float>& x);
// dy *= (y > 0), with y the ReLU output.
void relu_backward(const Tensor& y, Tensor& dy);
void relu_backward(const std::vector<float>& y, std::vector<float>& dy);

Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_shuffle_backward(const Tensor& dy, int r);

std::vector<float> global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<float>& dy, int channels, int height, int width);

// Channel concatenation and its split.
Tensor concat(const Tensor& a, const Tensor& b);
void split(const Tensor& d, int channels_a, Tensor* da, Tensor* db);

// out = relu(conv2(relu(conv1(x))) + skip(x)); skip is a strided 1x1 convolution when the
// shape changes and the identity otherwise.
class ResidualBlock {
 public:
  struct Cache {
    Tensor x;
    Tensor h;    // relu(conv1(x))
    Tensor out;
  };

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int in_c, int out_c, int stride);

  void init(std::mt19937_64& rng);
  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(ParamList& out);

 private:
  Conv2d conv1_, conv2_, skip_;
  bool has_skip_ = false;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One update from the accumulated gradients, which are divided by `batch` first.
  void step(const ParamList& params, int batch = 1);
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
};

}  // namespace restpose::nn
