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

#include <random>

#include <benchmark/benchmark.h>

#include "fedsel/config.hpp"
#include "fedsel/experiment.hpp"
#include "fedsel/model.hpp"
#include "fedsel/selection.hpp"

namespace fedsel {
namespace {

std::vector<LayerSpec> mlp(std::size_t in, std::size_t width, std::size_t depth, std::size_t out) {
  std::vector<LayerSpec> specs;
  std::size_t prev = in;
  for (std::size_t k = 0; k < depth; ++k) {
    specs.push_back({prev, width, Activation::kTanh, true});
    prev = width;
  }
  specs.push_back({prev, out, Activation::kNone, true});
  return specs;
}

Batch batch(std::size_t rows, std::size_t dim, std::size_t classes) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Batch b;
  b.dim = dim;
  for (std::size_t i = 0; i < rows * dim; ++i) b.inputs.push_back(g(rng));
  for (std::size_t i = 0; i < rows; ++i) b.labels.push_back(static_cast<int>(i % classes));
  return b;
}

void BM_LossAndGradient(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const LayeredModel m = init_model(mlp(16, 32, 5, 4), 1);
  const Batch b = batch(rows, 16, 4);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(m, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_LossAndGradient)->Arg(16)->Arg(64)->Arg(256);

SelectionProblem problem(std::size_t clients, std::size_t layers, int budget, double lambda) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  SelectionProblem p;
  p.scores.assign(clients, std::vector<double>(layers));
  for (auto& row : p.scores)
    for (auto& v : row) v = u(rng);
  p.budgets.assign(clients, budget);
  p.lambda = lambda;
  return p;
}

void BM_SolveExact(benchmark::State& state) {
  const SelectionProblem p = problem(static_cast<std::size_t>(state.range(0)), 6, 2, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(solve_p1_exact(p));
}
BENCHMARK(BM_SolveExact)->Arg(2)->Arg(3)->Arg(4);

void BM_SolveGreedy(benchmark::State& state) {
  const SelectionProblem p = problem(static_cast<std::size_t>(state.range(0)), 6, 2, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(solve_p1_greedy(p));
}
BENCHMARK(BM_SolveGreedy)->Arg(4)->Arg(20);

void BM_RunRound(benchmark::State& state) {
  ExperimentConfig c = parse_config(nlohmann::json::parse(R"({
    "eta": 0.01, "tau": 5, "lambda": 0.0, "batch_size": 16,
    "budgets": {"scheme": "identical", "value": 2}})"));
  const auto strategy = static_cast<Strategy>(state.range(0));
  const SimulationState initial = build_simulation(c, 1);
  ProtocolConfig pc;
  pc.clients_per_round = c.clients_per_round;
  pc.tau = c.tau;
  pc.eta = c.eta;
  pc.batch_size = c.batch_size;
  pc.seed = 1;
  SimulationState s = initial;
  for (auto _ : state) benchmark::DoNotOptimize(run_round(s, strategy, pc));
  state.SetLabel(std::string(to_string(strategy)));
}
BENCHMARK(BM_RunRound)
    ->Arg(static_cast<int>(Strategy::kTop))
    ->Arg(static_cast<int>(Strategy::kFull))
    ->Arg(static_cast<int>(Strategy::kProposed))
    ->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace fedsel

BENCHMARK_MAIN();
