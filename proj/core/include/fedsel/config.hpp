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

// Experiment configuration: JSON parsing with strict validation, the
// effective-config echo and budget sampling.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsel/data.hpp"
#include "fedsel/model.hpp"
#include "fedsel/protocol.hpp"
#include "fedsel/selection.hpp"

namespace fedsel {

inline constexpr int kSchemaVersion = 1;

struct ModelConfig {
  std::vector<std::size_t> hidden = {32, 32, 32, 32, 32};
  Activation activation = Activation::kTanh;
  /// 1-based indices of frozen layers.
  std::vector<std::size_t> frozen;
  InitMode init = InitMode::kGlorotUniform;
};

struct DataConfig {
  std::size_t num_classes = 4;
  std::size_t dim = 16;
  std::size_t samples_per_class = 500;
  double class_separation = 4.0;
  double noise_std = 1.0;
  double test_fraction = 0.1;
  PartitionRegime regime = PartitionRegime::kLabelSkew;
  double concentration = 0.1;
  std::size_t num_domains = 4;
  double domain_shift = 8.0;
  std::size_t min_shard = 1;
};

enum class BudgetScheme { kIdentical, kHalfNormal };

struct BudgetConfig {
  BudgetScheme scheme = BudgetScheme::kIdentical;
  int value = 2;  // identical scheme
  double sigma = 1.5;
  int lo = 1;
  int hi = 4;
};

/// Central full-batch gradient descent on a held-out balanced sample before
/// federated training starts, standing in for a pretrained model (0 steps
/// disables it).
struct PretrainConfig {
  std::size_t steps = 0;
  double eta = 0.1;
  /// Per-class size of the held-out sample; it is generated together with
  /// the federated data and never assigned to a client.
  std::size_t samples_per_class = 0;
  /// Re-initialize the output layer after pretraining (a fresh task head).
  bool reset_head = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelConfig model;
  DataConfig data;
  PretrainConfig pretrain;
  std::size_t num_clients = 100;
  std::size_t clients_per_round = 20;
  std::size_t rounds = 50;
  std::size_t tau = 1;
  double eta = 0.0;
  EtaSchedule eta_schedule = EtaSchedule::kConstant;
  std::size_t batch_size = 0;
  std::vector<Strategy> strategies = {Strategy::kProposed};
  double lambda = 0.0;
  int penalty_exponent = 2;
  std::size_t probe_batch_size = 64;
  SolverChoice solver = SolverChoice::kAuto;
  BudgetConfig budgets;
  std::vector<std::uint64_t> seeds = {0};
  bool diagnostics = false;
  /// Steps of the centralized reference run used to estimate f* (diagnostics only).
  std::size_t reference_steps = 200;
  std::size_t threads = 1;
  std::string output_dir = "out";
  std::string run_id;
  /// Informational notes produced during validation.
  std::vector<std::string> notes;

  std::size_t num_layers() const { return model.hidden.size() + 1; }
  std::vector<LayerSpec> layer_specs() const;
};

/// Parses and validates; throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

/// Every field with its effective value, plus the schema version.
nlohmann::json to_json(const ExperimentConfig& config);

/// Integers in [lo, hi]; half-normal draws are ceil(|N(0, sigma)|) clamped
/// into range. Deterministic per seed. Throws ConfigError when hi > L.
std::vector<int> sample_budgets(const BudgetConfig& budgets, std::size_t num_clients,
                                std::size_t num_layers, std::uint64_t seed);

std::size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace fedsel
