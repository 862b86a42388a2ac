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

// Per-client layer selection: static baselines (Top/Bottom/Both), gradient
// statistics baselines (SNR/RGN), Full, and the budget-constrained
// gradient-norm objective with a cross-client consistency penalty
// (exact enumeration and coordinate-ascent solvers).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/mask.hpp"
#include "fedsel/model.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

enum class Strategy { kTop, kBottom, kBoth, kSnr, kRgn, kFull, kProposed };

std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);
/// Strategies that compute a probe gradient before local training.
bool strategy_probes(Strategy s);

enum class SolverKind { kExact, kGreedy, kStatic };
std::string_view to_string(SolverKind s);

struct SelectionProblem {
  /// Squared per-layer gradient norms, one row per sampled client.
  std::vector<std::vector<double>> scores;
  std::vector<int> budgets;
  double lambda = 0.0;
  /// Per-layer cost; empty means unit cost for every layer.
  std::vector<double> layer_costs;
  /// Exponent on the pairwise L1 disagreement (1 or 2).
  int penalty_exponent = 2;
  /// Layers that may be selected; empty means all.
  std::vector<bool> eligible;

  std::size_t num_clients() const { return scores.size(); }
  std::size_t num_layers() const { return scores.empty() ? 0 : scores.front().size(); }
  double cost(std::size_t l) const { return layer_costs.empty() ? 1.0 : layer_costs[l]; }
  bool is_eligible(std::size_t l) const { return eligible.empty() || eligible[l]; }
  bool unit_costs() const;
  void validate() const;
};

struct SelectionResult {
  MaskMatrix masks;
  double objective = 0.0;
  SolverKind solver = SolverKind::kStatic;
  bool feasible = true;
  /// Objective after initialization and after every coordinate-ascent scan.
  std::vector<double> objective_trace;
};

/// sum_i sum_{l in m_i} score[i][l] - (lambda/2) sum_i sum_{j != i} ||m_i - m_j||_1^p.
double p1_objective(const SelectionProblem& problem, const MaskMatrix& masks);

bool mask_feasible(const SelectionProblem& problem, std::size_t client, const MaskVector& mask);

/// Largest instance the exact solver accepts: sum_i log2(#feasible masks_i).
inline constexpr double kExactSolverLog2Cap = 24.0;
double exact_search_log2_size(const SelectionProblem& problem);

/// Global maximizer by enumeration. Among tied optima the first matrix in
/// the canonical order wins: clients compared in id order, and for one
/// client the mask that selects the lower-indexed layer ranks first.
/// Throws CapacityError above kExactSolverLog2Cap.
SelectionResult solve_p1_exact(const SelectionProblem& problem);

/// Coordinate ascent from the independent (lambda = 0) optimum and from a
/// consensus start; the better local optimum is returned.
SelectionResult solve_p1_greedy(const SelectionProblem& problem);

/// Top / Bottom / Both over the eligible layers. Budgets above the number of
/// eligible layers are clamped and reported through `warnings`.
MaskMatrix select_static(Strategy strategy, std::span<const int> budgets,
                         const MaskVector& eligible, std::vector<std::string>* warnings = nullptr);

/// |mean| / variance of the elements of each gradient block. Zero variance
/// maps to +inf (nonzero mean) or 0 (all-zero block).
std::vector<double> snr_scores(const GradientVector& gradient);
/// ||g_l|| / ||theta_l||, +inf on a zero parameter block.
std::vector<double> rgn_scores(const GradientVector& gradient, const LayeredModel& model);

/// Indices of the top-k eligible layers by score (descending, ties to the
/// lower index).
std::vector<std::size_t> top_k_layers(std::span<const double> scores, std::size_t k,
                                      const MaskVector& eligible);

MaskMatrix select_snr(std::span<const GradientVector> probes, std::span<const int> budgets,
                      const MaskVector& eligible);
MaskMatrix select_rgn(std::span<const GradientVector> probes, const LayeredModel& model,
                      std::span<const int> budgets, const MaskVector& eligible);

struct ProbeResult {
  std::vector<std::vector<double>> scores;  // clients x layers, squared norms
  std::vector<GradientVector> gradients;
  std::vector<double> losses;
};

/// One stochastic gradient of the global model per client on a probe batch of
/// min(probe_batch_size, shard size) rows (whole shard, in order, when the
/// batch covers it). Deterministic per (seed, epoch, client id).
ProbeResult probe_gradient_norms(std::span<const Shard* const> shards, const LayeredModel& model,
                                 std::size_t probe_batch_size, std::uint64_t seed,
                                 std::uint64_t epoch);

/// Random rows (without replacement) of a shard, or the full shard in order
/// when batch_size is 0 or covers it.
Batch sample_batch(const Dataset& data, std::size_t batch_size, Rng& rng);

enum class SolverChoice { kAuto, kExact, kGreedy };

struct SelectionConfig {
  double lambda = 0.0;
  int penalty_exponent = 2;
  std::size_t probe_batch_size = 64;
  SolverChoice solver = SolverChoice::kAuto;
  std::vector<double> layer_costs;
};

struct SelectionOutcome {
  MaskMatrix masks;
  SolverKind solver = SolverKind::kStatic;
  std::optional<double> objective;
  bool feasible = true;
  std::optional<ProbeResult> probe;
  std::vector<std::string> warnings;
};

/// Runs one strategy for the sampled clients of a round.
SelectionOutcome select_layers(Strategy strategy, const LayeredModel& model,
                               std::span<const Shard* const> shards, std::span<const int> budgets,
                               const SelectionConfig& config, std::uint64_t seed,
                               std::uint64_t epoch);

}  // namespace fedsel
