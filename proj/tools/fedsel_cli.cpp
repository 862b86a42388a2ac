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

// fedsel command line: run <config> | summarize <run-dir> | oracle-p1 <instance>.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedsel/config.hpp"
#include "fedsel/error.hpp"
#include "fedsel/experiment.hpp"
#include "fedsel/selection.hpp"

namespace {

using nlohmann::json;

int cmd_run(const std::string& path, const std::string& out_dir, const std::string& run_id, bool quiet) {
  fedsel::ExperimentConfig config = fedsel::parse_config_file(path);
  if (!out_dir.empty()) config.output_dir = out_dir;
  if (!run_id.empty()) config.run_id = run_id;
  for (const auto& note : config.notes) std::cerr << "note: " << note << '\n';
  const fedsel::ExperimentResult r = fedsel::run_experiment(config, quiet ? nullptr : &std::cerr);
  fedsel::write_summary_csv(std::cout, r.summary.rows);
  std::cerr << "wrote " << r.run_dir.string() << '\n';
  return 0;
}

int cmd_summarize(const std::string& dir) {
  const fedsel::LogSummary s = fedsel::summarize_run(dir);
  fedsel::write_summary_csv(std::cout, s.rows);
  return 0;
}

fedsel::SelectionProblem read_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fedsel::ConfigError("cannot open instance file '" + path + "'");
  const json j = json::parse(in);
  static const char* const kKeys[] = {"scores", "budgets", "lambda", "penalty_exponent", "layer_costs", "eligible"};
  for (const auto& [key, value] : j.items()) {
    std::string nearest;
    std::size_t best = 3;
    bool known = false;
    for (const char* k : kKeys) {
      known = known || key == k;
      const std::size_t d = fedsel::edit_distance(key, k);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    if (!known)
      throw fedsel::ConfigError("instance field '" + key + "': unknown key" +
                                (nearest.empty() ? "" : "; did you mean \"" + nearest + "\"?"));
  }
  fedsel::SelectionProblem p;
  p.scores = j.at("scores").get<std::vector<std::vector<double>>>();
  p.budgets = j.at("budgets").get<std::vector<int>>();
  p.lambda = j.value("lambda", 0.0);
  p.penalty_exponent = j.value("penalty_exponent", 2);
  p.layer_costs = j.value("layer_costs", std::vector<double>{});
  p.eligible = j.value("eligible", std::vector<bool>{});
  p.validate();
  return p;
}

int cmd_oracle(const std::string& path, bool greedy) {
  const fedsel::SelectionProblem p = read_problem(path);
  const fedsel::SelectionResult r = greedy ? fedsel::solve_p1_greedy(p) : fedsel::solve_p1_exact(p);
  json masks = json::array();
  for (const auto& m : r.masks) masks.push_back(m.to_string());
  std::cout << json{{"solver", std::string(fedsel::to_string(r.solver))},
                    {"objective", r.objective},
                    {"feasible", r.feasible},
                    {"masks", masks}}
                   .dump(2)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated selective layer fine-tuning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_id;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--output-dir", out_dir, "Override output_dir");
  run->add_option("--run-id", run_id, "Override run_id");
  run->add_flag("-q,--quiet", quiet, "No per-run progress lines");

  std::string run_dir;
  auto* summarize = app.add_subcommand("summarize", "Rebuild summary tables from a run directory");
  summarize->add_option("run-dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  std::string instance;
  bool greedy = false;
  auto* oracle = app.add_subcommand("oracle-p1", "Solve a serialized layer-selection instance");
  oracle->add_option("instance-file", instance, "Instance JSON")->required()->check(CLI::ExistingFile);
  oracle->add_flag("--greedy", greedy, "Use the greedy solver instead of exact search");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, out_dir, run_id, quiet);
    if (*summarize) return cmd_summarize(run_dir);
    if (*oracle) return cmd_oracle(instance, greedy);
  } catch (const fedsel::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
