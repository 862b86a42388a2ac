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

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "fedsel/error.hpp"
#include "fedsel/mask.hpp"
#include "fedsel/model.hpp"
#include "test_util.hpp"

namespace fedsel {
namespace {

using testing::fd_derivative;
using testing::mlp_specs;
using testing::random_batch;
using testing::reference_loss;

TEST(InitModel, SameSeedIsBitIdentical) {
  const auto specs = mlp_specs({4, 4, 2});
  const LayeredModel a = init_model(specs, 7);
  const LayeredModel b = init_model(specs, 7);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, init_model(specs, 8));
}

TEST(InitModel, BrokenChainIsConfigError) {
  const std::vector<LayerSpec> specs = {{4, 3, Activation::kTanh, true}, {5, 2, Activation::kNone, true}};
  EXPECT_THROW(init_model(specs, 1), ConfigError);
}

TEST(InitModel, GlorotRangeAndZeroBias) {
  const LayeredModel m = init_model(mlp_specs({10, 6, 3}), 3);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto& s = m.spec(l);
    const double a = std::sqrt(6.0 / static_cast<double>(s.input_dim + s.output_dim));
    for (std::size_t o = 0; o < s.output_dim; ++o) {
      EXPECT_EQ(m.bias(l, o), 0.0);
      for (std::size_t i = 0; i < s.input_dim; ++i) EXPECT_LE(std::abs(m.weight(l, o, i)), a);
    }
  }
}

TEST(InitModel, TotalParamsIsSumOfLayers) {
  const LayeredModel m = init_model(mlp_specs({5, 7, 3, 2}), 1);
  EXPECT_EQ(m.total_params(), (5u * 7 + 7) + (7u * 3 + 3) + (3u * 2 + 2));
  EXPECT_EQ(m.flat().size(), m.total_params());
}

TEST(Forward, IdentityLayerReturnsInput) {
  const std::vector<LayerSpec> specs = {{3, 3, Activation::kNone, true}};
  const LayeredModel m = init_model(specs, 0, InitMode::kIdentity);
  Batch b{{0.5, -2.0, 3.25}, {1}, 3};
  const ForwardResult f = forward(m, b);
  ASSERT_EQ(f.logits.size(), 3u);
  EXPECT_EQ(f.logits[0], 0.5);
  EXPECT_EQ(f.logits[1], -2.0);
  EXPECT_EQ(f.logits[2], 3.25);
}

TEST(Forward, UniformLogitsGiveLogC) {
  const LayeredModel m(mlp_specs({3, 5}));  // zero parameters
  const Batch b = random_batch(9, 3, 5, 11);
  EXPECT_NEAR(forward(m, b).loss, std::log(5.0), 1e-14);
}

TEST(Forward, LossDecreasesToZeroAsScaleGrows) {
  const std::vector<LayerSpec> specs = {{2, 2, Activation::kNone, true}};
  Batch b{{1.0, 0.0, 0.0, 1.0}, {0, 1}, 2};
  double prev = std::numeric_limits<double>::infinity();
  for (double scale : {1.0, 2.0, 5.0, 10.0, 50.0}) {
    LayeredModel m = init_model(specs, 0, InitMode::kIdentity);
    for (double& v : m.mutable_block(0)) v *= scale;
    const double loss = forward(m, b).loss;
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(Forward, LargeLogitsStayFinite) {
  const std::vector<LayerSpec> specs = {{1, 2, Activation::kNone, true}};
  LayeredModel m(specs);
  m.weight(0, 0, 0) = 1e4;
  Batch b{{1.0}, {1}, 1};
  const double loss = forward(m, b).loss;
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 1e4, 1e-9);
}

TEST(Forward, ShapeMismatchThrows) {
  const LayeredModel m = init_model(mlp_specs({3, 2}), 1);
  EXPECT_THROW(forward(m, random_batch(2, 4, 2, 1)), ShapeError);
}

TEST(Forward, MatchesReferenceAndIsDeterministic) {
  const LayeredModel m = init_model(mlp_specs({4, 6, 3}), 5);
  const Batch b = random_batch(7, 4, 3, 5);
  const double a = forward(m, b).loss;
  EXPECT_EQ(a, forward(m, b).loss);
  EXPECT_NEAR(a, reference_loss(m, b), 1e-12);
}

TEST(Backward, MatchesFiniteDifferences) {
  const LayeredModel m = init_model(mlp_specs({4, 5, 5, 3}), 21);
  const Batch b = random_batch(8, 4, 3, 22);
  const GradientVector g = backward(m, b);
  for (std::size_t l = 0; l < m.num_layers(); ++l)
    for (std::size_t k = 0; k < m.block(l).size(); ++k) {
      const double fd = fd_derivative(m, b, l, k);
      const double an = g.block(l)[k];
      EXPECT_LE(std::abs(an - fd), 1e-5 * std::max(1.0, std::abs(fd))) << "layer " << l << " index " << k;
    }
}

TEST(Backward, SaturatedSeparableBatchIsStationary) {
  const std::vector<LayerSpec> specs = {{2, 2, Activation::kNone, true}};
  LayeredModel m = init_model(specs, 0, InitMode::kIdentity);
  for (double& v : m.mutable_block(0)) v *= 60.0;
  Batch b{{1.0, 0.0, 0.0, 1.0}, {0, 1}, 2};
  EXPECT_LE(std::sqrt(backward(m, b).total_squared_norm()), 1e-6);
}

TEST(Backward, DuplicatedBatchGivesSameGradient) {
  const LayeredModel m = init_model(mlp_specs({3, 4, 2}), 2);
  const Batch b = random_batch(5, 3, 2, 3);
  Batch bb = b;
  bb.inputs.insert(bb.inputs.end(), b.inputs.begin(), b.inputs.end());
  bb.labels.insert(bb.labels.end(), b.labels.begin(), b.labels.end());
  const GradientVector g1 = backward(m, b), g2 = backward(m, bb);
  for (std::size_t l = 0; l < m.num_layers(); ++l)
    EXPECT_LE(testing::max_abs_diff(g1.block(l), g2.block(l)), 1e-15);
}

TEST(GradientVector, NormCacheTracksMutation) {
  const LayeredModel m = init_model(mlp_specs({3, 4, 2}), 2);
  GradientVector g = backward(m, random_batch(4, 3, 2, 1));
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    double s = 0.0;
    for (double v : g.block(l)) s += v * v;
    EXPECT_NEAR(g.norm(l), std::sqrt(s), 1e-12 * std::sqrt(s));
  }
  const double before = g.norm(0);
  g.mutable_block(0)[0] += 10.0;
  EXPECT_NE(g.norm(0), before);
  g.zero_layer(1);
  EXPECT_EQ(g.norm(1), 0.0);
}

TEST(ApplyMaskedUpdate, ZeroMaskLeavesModelUnchanged) {
  const LayeredModel m = init_model(mlp_specs({3, 4, 4, 2}), 4);
  const GradientVector g = backward(m, random_batch(4, 3, 2, 4));
  EXPECT_EQ(apply_masked_update(m, g, MaskVector(3), 0.5), m);
}

TEST(ApplyMaskedUpdate, UpdateByOwnParametersGivesZeroModel) {
  const LayeredModel m = init_model(mlp_specs({3, 4, 2}), 4);
  std::vector<std::vector<double>> blocks;
  for (std::size_t l = 0; l < m.num_layers(); ++l) blocks.emplace_back(m.block(l).begin(), m.block(l).end());
  const LayeredModel z = apply_masked_update(m, GradientVector(blocks), MaskVector::all(2), 1.0);
  for (double v : z.flat()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyMaskedUpdate, OnlySelectedLayerChanges) {
  const LayeredModel m = init_model(mlp_specs({3, 4, 4, 2}), 4);
  const GradientVector g = backward(m, random_batch(4, 3, 2, 4));
  const LayeredModel u = apply_masked_update(m, g, MaskVector::from_layers(3, {1}), 0.1);
  EXPECT_TRUE(std::equal(m.block(0).begin(), m.block(0).end(), u.block(0).begin()));
  EXPECT_TRUE(std::equal(m.block(2).begin(), m.block(2).end(), u.block(2).begin()));
  EXPECT_FALSE(std::equal(m.block(1).begin(), m.block(1).end(), u.block(1).begin()));
}

TEST(Accuracy, TiesGoToLowerClass) {
  const LayeredModel m(mlp_specs({2, 3}));  // all logits zero
  Batch b{{1.0, 2.0, 3.0, 4.0}, {0, 1}, 2};
  EXPECT_DOUBLE_EQ(accuracy(m, b), 0.5);
}

TEST(Snapshot, RoundTripIsExact) {
  const LayeredModel m = init_model(mlp_specs({3, 5, 2}), 9);
  const auto path = std::filesystem::temp_directory_path() / "fedsel_snapshot_test.bin";
  save_snapshot(m, path);
  EXPECT_EQ(std::filesystem::file_size(path), m.total_params() * 8);
  LayeredModel back(m.specs());
  load_snapshot(back, path);
  EXPECT_EQ(back, m);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace fedsel
