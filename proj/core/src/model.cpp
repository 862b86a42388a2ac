// Copyright 2026 The fedsel Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsel/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

namespace {

double sum_squares(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void check_batch(const LayeredModel& model, BatchView batch) {
  if (model.num_layers() == 0) throw ShapeError("model has no layers");
  if (batch.rows == 0) throw ShapeError("batch is empty");
  if (batch.dim != model.input_dim())
    throw ShapeError("batch input_dim " + std::to_string(batch.dim) + " != model input_dim " +
                     std::to_string(model.input_dim()));
  if (batch.inputs.size() != batch.rows * batch.dim || batch.labels.size() != batch.rows)
    throw ShapeError("batch buffers do not match rows x dim");
  const int classes = static_cast<int>(model.num_classes());
  for (int y : batch.labels)
    if (y < 0 || y >= classes) throw ShapeError("label out of class range");
}

// Activations of every layer for a batch; acts[0] is the input.
struct Trace {
  std::vector<std::vector<double>> acts;
};

Trace run_layers(const LayeredModel& model, BatchView batch) {
  Trace tr;
  tr.acts.reserve(model.num_layers() + 1);
  tr.acts.emplace_back(batch.inputs.begin(), batch.inputs.end());
  const std::size_t n = batch.rows;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const LayerSpec& s = model.spec(l);
    const std::vector<double>& in = tr.acts.back();
    std::vector<double> out(n * s.output_dim);
    const auto blk = model.block(l);
    const double* bias = blk.data() + s.output_dim * s.input_dim;
    for (std::size_t r = 0; r < n; ++r) {
      const double* x = in.data() + r * s.input_dim;
      double* z = out.data() + r * s.output_dim;
      for (std::size_t o = 0; o < s.output_dim; ++o) {
        const double* w = blk.data() + o * s.input_dim;
        double acc = bias[o];
        for (std::size_t i = 0; i < s.input_dim; ++i) acc += w[i] * x[i];
        z[o] = s.activation == Activation::kTanh ? std::tanh(acc) : acc;
      }
    }
    tr.acts.push_back(std::move(out));
  }
  return tr;
}

// Softmax probabilities written into `probs`; returns mean cross-entropy.
double softmax_xent(std::span<const double> logits, std::size_t rows, std::size_t cols,
                    std::span<const int> labels, std::vector<double>* probs) {
  double total = 0.0;
  if (probs) probs->assign(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * cols;
    const double zmax = *std::max_element(z, z + cols);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp(z[c] - zmax);
    const double log_denom = std::log(denom);
    total += log_denom - (z[labels[r]] - zmax);
    if (probs)
      for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] = std::exp(z[c] - zmax - log_denom);
  }
  return total / static_cast<double>(rows);
}

}  // namespace

LayeredModel::LayeredModel(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
  if (specs_.empty()) throw ConfigError("model needs at least one layer");
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    if (specs_[l].input_dim == 0 || specs_[l].output_dim == 0)
      throw ConfigError("layer " + std::to_string(l + 1) + " has a zero dimension");
    if (l > 0 && specs_[l - 1].output_dim != specs_[l].input_dim)
      throw ConfigError("dimension mismatch between layer " + std::to_string(l) + " (output " +
                        std::to_string(specs_[l - 1].output_dim) + ") and layer " +
                        std::to_string(l + 1) + " (input " + std::to_string(specs_[l].input_dim) +
                        ")");
  }
  blocks_.reserve(specs_.size());
  for (const auto& s : specs_) blocks_.emplace_back(s.param_count(), 0.0);
}

std::size_t LayeredModel::total_params() const {
  std::size_t p = 0;
  for (const auto& s : specs_) p += s.param_count();
  return p;
}

std::vector<std::size_t> LayeredModel::trainable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < specs_.size(); ++l)
    if (specs_[l].trainable) out.push_back(l);
  return out;
}

MaskVector LayeredModel::trainable_mask() const {
  return MaskVector::from_layers(num_layers(), trainable_layers());
}

double LayeredModel::layer_norm(std::size_t l) const { return std::sqrt(sum_squares(blocks_[l])); }

std::vector<double> LayeredModel::flat() const {
  std::vector<double> out;
  out.reserve(total_params());
  for (const auto& b : blocks_) out.insert(out.end(), b.begin(), b.end());
  return out;
}

void LayeredModel::set_flat(std::span<const double> values) {
  if (values.size() != total_params()) throw ShapeError("set_flat: wrong parameter count");
  std::size_t off = 0;
  for (auto& b : blocks_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.begin());
    off += b.size();
  }
}

GradientVector::GradientVector(const LayeredModel& shape_of) {
  blocks_.reserve(shape_of.num_layers());
  for (std::size_t l = 0; l < shape_of.num_layers(); ++l)
    blocks_.emplace_back(shape_of.spec(l).param_count(), 0.0);
  norm_cache_.assign(blocks_.size(), std::nullopt);
}

GradientVector::GradientVector(std::vector<std::vector<double>> blocks)
    : blocks_(std::move(blocks)), norm_cache_(blocks_.size()) {}

double GradientVector::squared_norm(std::size_t l) const {
  const double n = norm(l);
  return n * n;
}

double GradientVector::norm(std::size_t l) const {
  auto& cached = norm_cache_[l];
  if (!cached) cached = std::sqrt(sum_squares(blocks_[l]));
  return *cached;
}

double GradientVector::total_squared_norm() const {
  double s = 0.0;
  for (const auto& b : blocks_) s += sum_squares(b);
  return s;
}

void GradientVector::add_scaled(const GradientVector& other, double scale) {
  if (other.blocks_.size() != blocks_.size()) throw ShapeError("add_scaled: layer count mismatch");
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    if (other.blocks_[l].size() != blocks_[l].size())
      throw ShapeError("add_scaled: block shape mismatch");
    for (std::size_t k = 0; k < blocks_[l].size(); ++k) blocks_[l][k] += scale * other.blocks_[l][k];
    norm_cache_[l].reset();
  }
}

void GradientVector::zero_layer(std::size_t l) {
  std::fill(blocks_[l].begin(), blocks_[l].end(), 0.0);
  norm_cache_[l] = 0.0;
}

void GradientVector::apply_mask(const MaskVector& mask) {
  if (mask.size() != blocks_.size()) throw ShapeError("apply_mask: mask length mismatch");
  for (std::size_t l = 0; l < blocks_.size(); ++l)
    if (!mask.selected(l)) zero_layer(l);
}

bool GradientVector::same_shape(const LayeredModel& model) const {
  if (blocks_.size() != model.num_layers()) return false;
  for (std::size_t l = 0; l < blocks_.size(); ++l)
    if (blocks_[l].size() != model.spec(l).param_count()) return false;
  return true;
}

std::vector<double> GradientVector::flat() const {
  std::vector<double> out;
  for (const auto& b : blocks_) out.insert(out.end(), b.begin(), b.end());
  return out;
}

LayeredModel init_model(const std::vector<LayerSpec>& specs, std::uint64_t seed, InitMode mode) {
  LayeredModel model(specs);
  Rng rng = make_rng(seed, SeedStream::kInit);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const LayerSpec& s = model.spec(l);
    if (mode == InitMode::kIdentity) {
      for (std::size_t o = 0; o < s.output_dim; ++o)
        for (std::size_t i = 0; i < s.input_dim; ++i) model.weight(l, o, i) = (o == i) ? 1.0 : 0.0;
      continue;
    }
    const double a = std::sqrt(6.0 / static_cast<double>(s.input_dim + s.output_dim));
    std::uniform_real_distribution<double> u(-a, a);
    for (std::size_t o = 0; o < s.output_dim; ++o)
      for (std::size_t i = 0; i < s.input_dim; ++i) model.weight(l, o, i) = u(rng);
  }
  return model;
}

ForwardResult forward(const LayeredModel& model, BatchView batch) {
  check_batch(model, batch);
  Trace tr = run_layers(model, batch);
  ForwardResult res;
  res.rows = batch.rows;
  res.cols = model.num_classes();
  res.logits = std::move(tr.acts.back());
  res.loss = softmax_xent(res.logits, res.rows, res.cols, batch.labels, nullptr);
  return res;
}

LossAndGradient loss_and_gradient(const LayeredModel& model, BatchView batch) {
  check_batch(model, batch);
  const std::size_t n = batch.rows;
  const std::size_t num_layers = model.num_layers();
  Trace tr = run_layers(model, batch);

  LossAndGradient out;
  out.gradient = GradientVector(model);
  std::vector<double> delta;  // dLoss/d(layer output) for the current layer
  out.loss = softmax_xent(tr.acts.back(), n, model.num_classes(), batch.labels, &delta);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) delta[r * model.num_classes() + batch.labels[r]] -= 1.0;
  for (double& d : delta) d *= inv_n;

  for (std::size_t l = num_layers; l-- > 0;) {
    const LayerSpec& s = model.spec(l);
    const std::vector<double>& out_act = tr.acts[l + 1];
    const std::vector<double>& in_act = tr.acts[l];
    // Through the nonlinearity: tanh'(z) = 1 - tanh(z)^2.
    if (s.activation == Activation::kTanh)
      for (std::size_t k = 0; k < delta.size(); ++k) delta[k] *= 1.0 - out_act[k] * out_act[k];

    auto g = out.gradient.mutable_block(l);
    double* gb = g.data() + s.output_dim * s.input_dim;
    for (std::size_t r = 0; r < n; ++r) {
      const double* dz = delta.data() + r * s.output_dim;
      const double* x = in_act.data() + r * s.input_dim;
      for (std::size_t o = 0; o < s.output_dim; ++o) {
        double* gw = g.data() + o * s.input_dim;
        for (std::size_t i = 0; i < s.input_dim; ++i) gw[i] += dz[o] * x[i];
        gb[o] += dz[o];
      }
    }
    if (l == 0) break;
    std::vector<double> prev(n * s.input_dim, 0.0);
    const auto blk = model.block(l);
    for (std::size_t r = 0; r < n; ++r) {
      const double* dz = delta.data() + r * s.output_dim;
      double* dx = prev.data() + r * s.input_dim;
      for (std::size_t o = 0; o < s.output_dim; ++o) {
        const double* w = blk.data() + o * s.input_dim;
        for (std::size_t i = 0; i < s.input_dim; ++i) dx[i] += dz[o] * w[i];
      }
    }
    delta = std::move(prev);
  }
  return out;
}

GradientVector backward(const LayeredModel& model, BatchView batch) {
  return loss_and_gradient(model, batch).gradient;
}

LayeredModel apply_masked_update(const LayeredModel& model, const GradientVector& update,
                                 const MaskVector& mask, double eta) {
  if (mask.size() != model.num_layers()) throw ShapeError("mask length != number of layers");
  if (!update.same_shape(model)) throw ShapeError("update shape does not match model");
  LayeredModel next = model;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    if (!mask.selected(l)) continue;
    auto p = next.mutable_block(l);
    auto u = update.block(l);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= eta * u[k];
  }
  return next;
}

double accuracy(const LayeredModel& model, BatchView batch) {
  ForwardResult fr = forward(model, batch);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < fr.rows; ++r) {
    const double* z = fr.logits.data() + r * fr.cols;
    const auto pred = static_cast<int>(std::max_element(z, z + fr.cols) - z);
    correct += pred == batch.labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(fr.rows);
}

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return r;
}

}  // namespace

void save_snapshot(const LayeredModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open snapshot for writing: " + path.string());
  for (double v : model.flat()) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
    os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

void load_snapshot(LayeredModel& model, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open snapshot: " + path.string());
  std::vector<double> values(model.total_params());
  for (double& v : values) {
    std::uint64_t bits = 0;
    if (!is.read(reinterpret_cast<char*>(&bits), sizeof bits))
      throw ShapeError("snapshot too short for model");
    v = std::bit_cast<double>(to_le(bits));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ShapeError("snapshot too long for model");
  model.set_flat(values);
}

}  // namespace fedsel
