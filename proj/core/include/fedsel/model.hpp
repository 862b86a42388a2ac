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

// Layered MLP with exact per-layer gradients. A "layer" (weights + bias) is
// the unit of selection, update and measurement for the rest of the library.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsel/mask.hpp"

namespace fedsel {

enum class Activation { kNone, kTanh };

struct LayerSpec {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Activation activation = Activation::kNone;
  bool trainable = true;

  std::size_t param_count() const { return output_dim * input_dim + output_dim; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Chain of affine layers; parameters of layer l are stored as one flat block
/// [W (output_dim x input_dim, row-major) | b (output_dim)].
class LayeredModel {
 public:
  LayeredModel() = default;
  /// Zero-initialized model. Throws ConfigError on a broken dimension chain.
  explicit LayeredModel(std::vector<LayerSpec> specs);

  std::size_t num_layers() const { return specs_.size(); }
  std::size_t input_dim() const { return specs_.front().input_dim; }
  std::size_t num_classes() const { return specs_.back().output_dim; }
  std::size_t total_params() const;

  const LayerSpec& spec(std::size_t l) const { return specs_[l]; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  bool trainable(std::size_t l) const { return specs_[l].trainable; }
  std::vector<std::size_t> trainable_layers() const;
  /// Mask marking every trainable layer.
  MaskVector trainable_mask() const;

  std::span<const double> block(std::size_t l) const { return blocks_[l]; }
  std::span<double> mutable_block(std::size_t l) { return blocks_[l]; }

  double weight(std::size_t l, std::size_t row, std::size_t col) const {
    return blocks_[l][row * specs_[l].input_dim + col];
  }
  double& weight(std::size_t l, std::size_t row, std::size_t col) {
    return blocks_[l][row * specs_[l].input_dim + col];
  }
  double bias(std::size_t l, std::size_t row) const {
    return blocks_[l][specs_[l].output_dim * specs_[l].input_dim + row];
  }
  double& bias(std::size_t l, std::size_t row) {
    return blocks_[l][specs_[l].output_dim * specs_[l].input_dim + row];
  }

  /// Euclidean norm of layer l's parameter block.
  double layer_norm(std::size_t l) const;

  /// All parameters concatenated in layer-major order.
  std::vector<double> flat() const;
  void set_flat(std::span<const double> values);

  friend bool operator==(const LayeredModel&, const LayeredModel&) = default;

 private:
  std::vector<LayerSpec> specs_;
  std::vector<std::vector<double>> blocks_;
};

/// Per-layer gradient (or update) blocks shaped like a model's parameters,
/// with a lazily refreshed per-layer norm cache.
class GradientVector {
 public:
  GradientVector() = default;
  explicit GradientVector(const LayeredModel& shape_of);
  explicit GradientVector(std::vector<std::vector<double>> blocks);

  std::size_t num_layers() const { return blocks_.size(); }
  std::span<const double> block(std::size_t l) const { return blocks_[l]; }
  /// Mutable access invalidates the cached norm of block l.
  std::span<double> mutable_block(std::size_t l) {
    norm_cache_[l].reset();
    return blocks_[l];
  }

  double norm(std::size_t l) const;
  double squared_norm(std::size_t l) const;
  double total_squared_norm() const;

  /// this += scale * other, block-wise.
  void add_scaled(const GradientVector& other, double scale);
  void zero_layer(std::size_t l);
  /// Zero every layer not selected by the mask.
  void apply_mask(const MaskVector& mask);
  bool same_shape(const LayeredModel& model) const;

  std::vector<double> flat() const;

  friend bool operator==(const GradientVector& a, const GradientVector& b) {
    return a.blocks_ == b.blocks_;
  }

 private:
  std::vector<std::vector<double>> blocks_;
  mutable std::vector<std::optional<double>> norm_cache_;
};

/// Non-owning batch view: inputs is rows x dim, row-major.
struct BatchView {
  std::span<const double> inputs;
  std::span<const int> labels;
  std::size_t rows = 0;
  std::size_t dim = 0;
};

struct Batch {
  std::vector<double> inputs;
  std::vector<int> labels;
  std::size_t dim = 0;

  std::size_t rows() const { return labels.size(); }
  BatchView view() const { return {inputs, labels, labels.size(), dim}; }
  operator BatchView() const { return view(); }  // NOLINT(google-explicit-constructor)
};

enum class InitMode { kGlorotUniform, kIdentity };

/// Deterministic initialization; same (specs, seed) gives bit-identical
/// parameters. Identity mode sets W = I (rectangular identity) and b = 0.
LayeredModel init_model(const std::vector<LayerSpec>& specs, std::uint64_t seed,
                        InitMode mode = InitMode::kGlorotUniform);

struct ForwardResult {
  std::vector<double> logits;  // rows x num_classes
  std::size_t rows = 0;
  std::size_t cols = 0;
  double loss = 0.0;  // mean cross-entropy
};

ForwardResult forward(const LayeredModel& model, BatchView batch);

struct LossAndGradient {
  double loss = 0.0;
  GradientVector gradient;
};

/// Exact gradient of the mean cross-entropy for every layer (frozen layers
/// included; callers mask afterwards).
LossAndGradient loss_and_gradient(const LayeredModel& model, BatchView batch);
GradientVector backward(const LayeredModel& model, BatchView batch);

/// Layers with mask=1 get params -= eta * update; others stay bit-identical.
LayeredModel apply_masked_update(const LayeredModel& model, const GradientVector& update,
                                 const MaskVector& mask, double eta);

/// Fraction of rows whose argmax logit equals the label (ties to lower class).
double accuracy(const LayeredModel& model, BatchView batch);

/// Parameter snapshot: flat little-endian float64 values in layer-major order.
void save_snapshot(const LayeredModel& model, const std::filesystem::path& path);
void load_snapshot(LayeredModel& model, const std::filesystem::path& path);

}  // namespace fedsel
