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

// Round protocol for federated selective layer training:
//   sample clients -> select layers -> masked local SGD (tau steps) ->
//   layer-wise weighted aggregation -> global step -> evaluate -> record.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsel/analysis.hpp"
#include "fedsel/data.hpp"
#include "fedsel/mask.hpp"
#include "fedsel/model.hpp"
#include "fedsel/selection.hpp"

namespace fedsel {

struct ClientState {
  std::size_t id = 0;
  Shard shard;
  double num_samples = 0.0;
  /// num_samples / total samples over all N clients.
  double alpha = 0.0;
  int budget = 0;
};

/// Builds clients from shards; alphas are computed over every shard.
std::vector<ClientState> make_clients(std::vector<Shard> shards, std::span<const int> budgets);

/// Uniform sample without replacement, sorted by client id. Deterministic
/// per (seed, epoch). Throws ConfigError unless 1 <= count <= num_clients.
std::vector<std::size_t> sample_clients(std::size_t num_clients, std::size_t count,
                                        std::uint64_t seed, std::uint64_t epoch);

struct LocalTrainOptions {
  std::size_t tau = 1;
  double eta = 0.01;
  /// 0 (or >= shard size) means full batch.
  std::size_t batch_size = 0;
};

/// tau masked SGD steps from the global model; returns the accumulated
/// masked gradients, i.e. (theta_start - theta_end) / eta. Mini-batches are
/// taken cyclically from a shard shuffled per (seed, epoch, client).
GradientVector local_train(const ClientState& client, const LayeredModel& global,
                           const MaskVector& mask, const LocalTrainOptions& options,
                           std::uint64_t seed, std::uint64_t epoch);

/// w[i][l] = d_i / sum_{j: m_j(l) = 1} d_j when m_i(l) = 1, else 0.
struct AggregationWeights {
  std::vector<std::vector<double>> w;  // sampled clients x layers

  std::size_t num_clients() const { return w.size(); }
  std::size_t num_layers() const { return w.empty() ? 0 : w.front().size(); }
  /// Layers selected by no sampled client (all-zero column).
  std::vector<std::size_t> uncovered_layers() const;
  MaskVector covered() const;
};

AggregationWeights compute_weights(std::span<const double> sample_sizes,
                                   std::span<const MaskVector> masks);

/// Delta block l = sum_i w[i][l] * update_i block l, summed in index order.
GradientVector aggregate(std::span<const GradientVector> updates,
                         const AggregationWeights& weights);

/// theta - eta * delta on every layer.
LayeredModel global_update(const LayeredModel& model, const GradientVector& delta, double eta);

enum class EtaSchedule { kConstant, kInverseSqrt };

struct ProtocolConfig {
  std::size_t clients_per_round = 1;
  std::size_t tau = 1;
  double eta = 0.01;
  EtaSchedule eta_schedule = EtaSchedule::kConstant;
  std::size_t batch_size = 0;
  SelectionConfig selection;
  bool diagnostics = false;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

/// eta_t for the given epoch (inverse-sqrt: eta / sqrt(t + 1)).
double learning_rate_at(const ProtocolConfig& config, std::size_t epoch);

struct CostTally {
  /// Layer-backward units (b) spent on local training: sum_i tau * |L_i|.
  double finetune_units = 0.0;
  /// Layer-backward units spent probing: (L - 1) per probing client.
  double probe_units = 0.0;
  std::size_t layers_uploaded = 0;
  std::size_t params_uploaded = 0;
};

struct RoundDiagnostics {
  double global_loss = 0.0;  // f(theta^t)
  double global_grad_sq_norm = 0.0;
  ErrorTerms terms;
  std::vector<double> sigma2;  // per layer
  /// ||Delta - sum_l grad_l h_l|| and ||Delta||.
  double lemma1_residual = 0.0;
  double delta_norm = 0.0;
  /// max_i ||grad f_i(theta^t) - grad f_i(theta^{t-1})|| / ||theta^t - theta^{t-1}||,
  /// absent on the first diagnostic round or when the model did not move.
  std::optional<double> smoothness;
};

struct RoundRecord {
  std::size_t epoch = 0;
  double eta = 0.0;
  std::vector<std::size_t> sampled;
  std::vector<int> budgets;
  MaskMatrix masks;
  std::vector<std::vector<double>> weights;
  std::vector<std::size_t> uncovered_layers;
  bool no_op = false;
  std::string solver;
  std::optional<double> selection_objective;
  bool selection_feasible = true;
  double train_loss = 0.0;  // f(theta^{t+1})
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> delta_norm;  // per layer
  CostTally cost;
  std::optional<RoundDiagnostics> diagnostics;
  std::vector<std::string> warnings;
};

struct Evaluation {
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
};

struct SimulationState {
  LayeredModel model;
  std::vector<ClientState> clients;
  Dataset test;
  std::size_t epoch = 0;
  // Previous diagnostic probe point (trainable parameters and per-client
  // full gradients), used for the smoothness estimate.
  std::vector<double> prev_theta;
  std::vector<std::vector<double>> prev_client_gradients;
};

/// f(theta) = sum_i alpha_i F_i(theta) plus test loss/accuracy.
Evaluation evaluate(const SimulationState& state);

/// Runs epoch `state.epoch`, advances the model and the epoch counter.
/// Results do not depend on `config.threads`.
RoundRecord run_round(SimulationState& state, Strategy strategy, const ProtocolConfig& config);

/// Runs fn(0..n-1) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace fedsel
