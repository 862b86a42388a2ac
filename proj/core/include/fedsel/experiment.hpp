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

// Experiment orchestration: builds the per-seed simulation, runs every
// strategy x seed pair, and writes the run directory:
//
//   <output_dir>/<run_id>/rounds.jsonl         one JSON object per line
//   <output_dir>/<run_id>/summary.csv          per-strategy table
//   <output_dir>/<run_id>/selection_freq.csv   per-strategy layer frequencies
//   <output_dir>/<run_id>/theory_report.json   bound estimates and constants
//   <output_dir>/<run_id>/effective_config.json
//
// summary.csv and selection_freq.csv are recomputed from rounds.jsonl alone.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsel/config.hpp"
#include "fedsel/protocol.hpp"

namespace fedsel {

/// Initial state for one seed: data, partition, budgets and (optionally
/// pretrained) model. Identical across strategies for the same seed.
SimulationState build_simulation(const ExperimentConfig& config, std::uint64_t seed);

/// One rounds.jsonl line. `record` is "init" for the evaluation before the
/// first round and "round" afterwards.
nlohmann::json init_to_json(const Evaluation& eval, Strategy strategy, std::uint64_t seed);
nlohmann::json round_to_json(const RoundRecord& record, Strategy strategy, std::uint64_t seed);

struct SummaryRow {
  std::string strategy;
  std::size_t seeds = 0;
  std::size_t rounds = 0;
  double final_accuracy_mean = 0.0;
  /// Sample standard deviation over seeds (0 with one seed).
  double final_accuracy_spread = 0.0;
  double best_accuracy_mean = 0.0;
  /// Layer-backward units (local training plus probing), mean over seeds.
  double total_cost_mean = 0.0;
  double layers_uploaded_mean = 0.0;
  /// 1 = highest mean final accuracy; equal means share a rank.
  std::size_t rank = 0;
};

/// Number of sampled-client masks selecting each layer in one epoch,
/// summed over seeds.
struct SelectionFrequency {
  std::string strategy;
  std::size_t epoch = 0;
  std::vector<std::size_t> counts;
};

struct LogSummary {
  std::vector<SummaryRow> rows;
  std::vector<SelectionFrequency> frequencies;
};

/// Pure function of the round-log lines.
LogSummary summarize_log(std::istream& rounds_jsonl);

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
void write_selection_freq_csv(std::ostream& os, const std::vector<SelectionFrequency>& freqs);

struct ExperimentResult {
  std::filesystem::path run_dir;
  LogSummary summary;
  nlohmann::json theory_report;
};

/// Runs config.rounds rounds for every strategy and seed. Errors are
/// rethrown with strategy/seed/round context after flushing the log.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr);

/// Rebuilds summary.csv and selection_freq.csv in `run_dir` from its rounds.jsonl.
LogSummary summarize_run(const std::filesystem::path& run_dir);

/// Minimum loss of a centralized full-batch gradient-descent run on the
/// pooled client data, started from the current model.
double estimate_fstar(const SimulationState& state, double eta, std::size_t steps);

}  // namespace fedsel
