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
#include <random>

#include <gtest/gtest.h>

#include "fedsel/error.hpp"
#include "fedsel/protocol.hpp"
#include "test_util.hpp"

namespace fedsel {
namespace {

using testing::mlp_specs;
using testing::random_shards;

SimulationState small_state(std::size_t n, std::vector<int> budgets, std::uint64_t seed,
                            std::vector<std::size_t> dims = {3, 4, 4, 2}) {
  SimulationState s;
  s.model = init_model(mlp_specs(dims), seed);
  s.clients = make_clients(random_shards(n, dims.front(), dims.back(), seed), budgets);
  s.test = s.clients.front().shard.data;
  return s;
}

TEST(SampleClients, FullCountReturnsEveryone) {
  const auto s = sample_clients(7, 7, 1, 3);
  EXPECT_EQ(s, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
}

TEST(SampleClients, DeterministicSortedDistinct) {
  const auto a = sample_clients(50, 10, 4, 9);
  EXPECT_EQ(a, sample_clients(50, 10, 4, 9));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
}

TEST(SampleClients, InvalidCountThrows) {
  EXPECT_THROW(sample_clients(5, 6, 0, 0), ConfigError);
  EXPECT_THROW(sample_clients(5, 0, 0, 0), ConfigError);
}

TEST(SampleClients, FrequenciesMatchBinomial) {
  const std::size_t N = 10, k = 3, epochs = 10000;
  std::vector<double> hits(N, 0.0);
  for (std::size_t t = 0; t < epochs; ++t)
    for (std::size_t id : sample_clients(N, k, 42, t)) hits[id] += 1.0;
  const double p = static_cast<double>(k) / N;
  const double mean = p * epochs, sd = std::sqrt(epochs * p * (1 - p));
  for (double h : hits) EXPECT_LE(std::abs(h - mean), 3.0 * sd);
}

TEST(LocalTrain, SingleFullBatchStepIsMaskedGradient) {
  const SimulationState s = small_state(1, {2}, 3);
  const MaskVector mask = MaskVector::from_layers(3, {0, 2});
  const GradientVector d = local_train(s.clients[0], s.model, mask, {1, 0.1, 0}, 3, 0);
  GradientVector g = backward(s.model, s.clients[0].shard.data.view());
  g.apply_mask(mask);
  EXPECT_EQ(d, g);
  for (double v : d.block(1)) EXPECT_EQ(v, 0.0);
}

TEST(LocalTrain, EmptyMaskGivesZeroUpdate) {
  const SimulationState s = small_state(1, {0}, 3);
  const GradientVector d = local_train(s.clients[0], s.model, MaskVector(3), {4, 0.1, 2}, 3, 0);
  EXPECT_EQ(d.total_squared_norm(), 0.0);
}

TEST(LocalTrain, ThreeStepsMatchScalarReplay) {
  // One affine layer 1 -> 2, two samples, full batch, tau = 3.
  const std::vector<LayerSpec> specs = {{1, 2, Activation::kNone, true}};
  SimulationState s;
  s.model = init_model(specs, 5);
  Shard shard;
  shard.data.dim = 1;
  shard.data.num_classes = 2;
  shard.data.features = {0.7, -1.3};
  shard.data.labels = {1, 0};
  s.clients = make_clients({shard}, std::vector<int>{1});
  const double eta = 0.3;
  const GradientVector d = local_train(s.clients[0], s.model, MaskVector::all(1), {3, eta, 0}, 1, 0);

  // Parameters: w0, w1, b0, b1 (layout W row-major then b).
  double w0 = s.model.weight(0, 0, 0), w1 = s.model.weight(0, 1, 0), b0 = s.model.bias(0, 0),
         b1 = s.model.bias(0, 1);
  double acc[4] = {0, 0, 0, 0};
  for (int step = 0; step < 3; ++step) {
    double g[4] = {0, 0, 0, 0};
    for (int r = 0; r < 2; ++r) {
      const double x = shard.data.features[r];
      const double z0 = w0 * x + b0, z1 = w1 * x + b1;
      const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
      const double e1 = p1 - (shard.data.labels[r] == 1 ? 1.0 : 0.0);
      g[0] += -e1 * x / 2.0;
      g[1] += e1 * x / 2.0;
      g[2] += -e1 / 2.0;
      g[3] += e1 / 2.0;
    }
    w0 -= eta * g[0], w1 -= eta * g[1], b0 -= eta * g[2], b1 -= eta * g[3];
    for (int k = 0; k < 4; ++k) acc[k] += g[k];
  }
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(d.block(0)[k], acc[k], 1e-14);
}

TEST(LocalTrain, MiniBatchesDeterministic) {
  const SimulationState s = small_state(1, {3}, 8);
  const auto a = local_train(s.clients[0], s.model, MaskVector::all(3), {4, 0.1, 2}, 1, 5);
  EXPECT_EQ(a, local_train(s.clients[0], s.model, MaskVector::all(3), {4, 0.1, 2}, 1, 5));
  EXPECT_NE(a, local_train(s.clients[0], s.model, MaskVector::all(3), {4, 0.1, 2}, 1, 6));
}

TEST(LocalTrain, FrozenLayerOrEmptyShardThrows) {
  auto specs = mlp_specs({3, 4, 2});
  specs[0].trainable = false;
  SimulationState s = small_state(1, {1}, 2, {3, 4, 2});
  s.model = init_model(specs, 2);
  EXPECT_THROW(local_train(s.clients[0], s.model, MaskVector::from_layers(2, {0}), {1, 0.1, 0}, 0, 0), ConfigError);
  ClientState empty = s.clients[0];
  empty.shard.data.labels.clear();
  empty.shard.data.features.clear();
  EXPECT_THROW(local_train(empty, s.model, MaskVector::from_layers(2, {1}), {1, 0.1, 0}, 0, 0), DataError);
}

TEST(ComputeWeights, HandExamples) {
  const std::vector<double> d = {1.0, 3.0};
  const std::vector<MaskVector> both = {MaskVector::from_layers(2, {0}), MaskVector::from_layers(2, {0, 1})};
  const auto w = compute_weights(d, both);
  EXPECT_EQ(w.w[0][0], 0.25);
  EXPECT_EQ(w.w[1][0], 0.75);
  EXPECT_EQ(w.w[1][1], 1.0);
  EXPECT_EQ(w.w[0][1], 0.0);

  const std::vector<double> eq = {2.0, 2.0, 2.0, 2.0};
  const std::vector<MaskVector> m = {MaskVector::from_layers(3, {0}), MaskVector::from_layers(3, {0}),
                                     MaskVector::from_layers(3, {0}), MaskVector::from_layers(3, {1})};
  const auto w2 = compute_weights(eq, m);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w2.w[i][0], 1.0 / 3.0);
  EXPECT_EQ(w2.uncovered_layers(), std::vector<std::size_t>{2});
}

TEST(ComputeWeights, SimplexProperty) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng() % 6, L = 1 + rng() % 7;
    std::vector<double> d(n);
    std::vector<MaskVector> masks(n, MaskVector(L));
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = 1.0 + static_cast<double>(rng() % 500);
      for (std::size_t l = 0; l < L; ++l) masks[i].set(l, rng() % 2);
    }
    const auto w = compute_weights(d, masks);
    for (std::size_t l = 0; l < L; ++l) {
      double s = 0.0;
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (!masks[i].selected(l)) EXPECT_EQ(w.w[i][l], 0.0);
        any = any || masks[i].selected(l);
        s += w.w[i][l];
      }
      if (any) EXPECT_NEAR(s, 1.0, 1e-12);
      else EXPECT_EQ(s, 0.0);
    }
  }
}

TEST(Aggregate, SingleClientIdentityAndCancellation) {
  const SimulationState s = small_state(2, {3, 3}, 4);
  const GradientVector g = backward(s.model, s.clients[0].shard.data.view());
  AggregationWeights one{{{1.0, 1.0, 1.0}}};
  EXPECT_EQ(aggregate(std::vector<GradientVector>{g}, one), g);
  GradientVector neg = g;
  neg.add_scaled(g, -2.0);
  AggregationWeights half{{{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}}};
  EXPECT_EQ(aggregate(std::vector<GradientVector>{g, neg}, half).total_squared_norm(), 0.0);
}

TEST(Aggregate, MatchesNaiveLoops) {
  const SimulationState s = small_state(3, {3, 3, 3}, 6);
  std::vector<GradientVector> ups;
  for (const auto& c : s.clients) ups.push_back(backward(s.model, c.shard.data.view()));
  const std::vector<MaskVector> masks = {MaskVector::from_layers(3, {0, 1}), MaskVector::from_layers(3, {1}),
                                         MaskVector::from_layers(3, {1, 2})};
  const std::vector<double> d = {3, 5, 7};
  const auto w = compute_weights(d, masks);
  const GradientVector agg = aggregate(ups, w);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < agg.block(l).size(); ++k) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 3; ++i) expect += w.w[i][l] * ups[i].block(l)[k];
      EXPECT_EQ(agg.block(l)[k], expect);
    }
}

TEST(GlobalUpdate, ZeroDeltaOrZeroEtaLeavesModel) {
  const SimulationState s = small_state(1, {3}, 2);
  const GradientVector g = backward(s.model, s.clients[0].shard.data.view());
  EXPECT_EQ(global_update(s.model, GradientVector(s.model), 0.5), s.model);
  EXPECT_EQ(global_update(s.model, g, 0.0), s.model);
}

TEST(RunRound, SingleClientFullRoundIsCentralStep) {
  SimulationState s = small_state(1, {3}, 2);
  const LayeredModel before = s.model;
  ProtocolConfig cfg;
  cfg.eta = 0.2;
  cfg.seed = 2;
  run_round(s, Strategy::kFull, cfg);
  const GradientVector g = backward(before, s.clients[0].shard.data.view());
  EXPECT_EQ(s.model, apply_masked_update(before, g, MaskVector::all(3), 0.2));
}

TEST(RunRound, FullParticipationFullMasksIsFedAvg) {
  SimulationState s = small_state(4, {3, 3, 3, 3}, 5);
  const LayeredModel before = s.model;
  ProtocolConfig cfg;
  cfg.clients_per_round = 4;
  cfg.eta = 0.1;
  const RoundRecord r = run_round(s, Strategy::kFull, cfg);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t l = 0; l < 3; ++l) EXPECT_NEAR(r.weights[i][l], s.clients[i].alpha, 1e-15);
  GradientVector avg(before);
  for (const auto& c : s.clients) avg.add_scaled(backward(before, c.shard.data.view()), c.alpha);
  const LayeredModel expect = apply_masked_update(before, avg, MaskVector::all(3), 0.1);
  EXPECT_LE(testing::max_abs_diff(s.model.flat(), expect.flat()), 1e-15);
}

TEST(RunRound, ZeroBudgetsIsNoOp) {
  SimulationState s = small_state(3, {0, 0, 0}, 5);
  const LayeredModel before = s.model;
  ProtocolConfig cfg;
  cfg.clients_per_round = 2;
  cfg.eta = 0.1;
  for (Strategy st : {Strategy::kTop, Strategy::kProposed, Strategy::kSnr}) {
    const RoundRecord r = run_round(s, st, cfg);
    EXPECT_TRUE(r.no_op);
    EXPECT_EQ(s.model, before);
    EXPECT_EQ(r.uncovered_layers.size(), 3u);
    EXPECT_FALSE(r.warnings.empty());
  }
}

TEST(RunRound, ThreadCountDoesNotChangeResults) {
  SimulationState a = small_state(8, {1, 2, 3, 1, 2, 3, 1, 2}, 9);
  SimulationState b = a;
  ProtocolConfig cfg;
  cfg.clients_per_round = 5;
  cfg.tau = 3;
  cfg.batch_size = 2;
  cfg.eta = 0.1;
  cfg.seed = 9;
  cfg.selection.lambda = 0.5;
  cfg.diagnostics = true;
  ProtocolConfig cfg4 = cfg;
  cfg4.threads = 4;
  for (int t = 0; t < 3; ++t) {
    const RoundRecord ra = run_round(a, Strategy::kProposed, cfg);
    const RoundRecord rb = run_round(b, Strategy::kProposed, cfg4);
    EXPECT_EQ(ra.masks, rb.masks);
    EXPECT_EQ(ra.test_loss, rb.test_loss);
    EXPECT_EQ(ra.diagnostics->terms.epsilon, rb.diagnostics->terms.epsilon);
  }
  EXPECT_EQ(a.model, b.model);
}

TEST(RunRound, BudgetsRespectedAndCostsTallied) {
  SimulationState s = small_state(6, {1, 2, 1, 2, 1, 2}, 4);
  ProtocolConfig cfg;
  cfg.clients_per_round = 3;
  cfg.tau = 2;
  cfg.eta = 0.1;
  const RoundRecord r = run_round(s, Strategy::kSnr, cfg);
  double units = 0.0;
  for (std::size_t k = 0; k < r.masks.size(); ++k) {
    EXPECT_LE(static_cast<int>(r.masks[k].count()), r.budgets[k]);
    units += 2.0 * static_cast<double>(r.masks[k].count());
  }
  EXPECT_EQ(r.cost.finetune_units, units);
  EXPECT_EQ(r.cost.probe_units, 3.0 * 2.0);
}

TEST(RunRound, LossDecreasesOverFiftyRounds) {
  SimulationState s = small_state(10, std::vector<int>(10, 2), 12, {4, 8, 8, 3});
  ProtocolConfig cfg;
  cfg.clients_per_round = 4;
  cfg.tau = 2;
  cfg.eta = 0.2;
  cfg.seed = 12;
  const double initial = evaluate(s).train_loss;
  double last = initial;
  for (int t = 0; t < 50; ++t) last = run_round(s, Strategy::kProposed, cfg).train_loss;
  EXPECT_LT(last, initial);
}

TEST(RunRound, LemmaOneIdentityAtFullBatch) {
  SimulationState s = small_state(6, {1, 2, 3, 1, 2, 3}, 14);
  ProtocolConfig cfg;
  cfg.clients_per_round = 4;
  cfg.eta = 0.1;
  cfg.diagnostics = true;
  cfg.selection.lambda = 1.0;
  for (int t = 0; t < 5; ++t) {
    const RoundRecord r = run_round(s, Strategy::kProposed, cfg);
    EXPECT_LE(r.diagnostics->lemma1_residual, 1e-9 * std::max(1.0, r.diagnostics->delta_norm));
    EXPECT_GE(r.diagnostics->terms.lemma2_slack, -1e-9);
  }
}

TEST(LearningRate, InverseSqrtSchedule) {
  ProtocolConfig cfg;
  cfg.eta = 0.4;
  EXPECT_EQ(learning_rate_at(cfg, 3), 0.4);
  cfg.eta_schedule = EtaSchedule::kInverseSqrt;
  EXPECT_DOUBLE_EQ(learning_rate_at(cfg, 3), 0.2);
}

}  // namespace
}  // namespace fedsel
