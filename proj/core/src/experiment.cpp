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

#include "fedsel/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "fedsel/analysis.hpp"
#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

using nlohmann::json;

namespace {

Dataset concat(std::span<const Dataset* const> parts) {
  Dataset out;
  out.dim = parts.front()->dim;
  out.num_classes = parts.front()->num_classes;
  for (const Dataset* d : parts) {
    out.features.insert(out.features.end(), d->features.begin(), d->features.end());
    out.labels.insert(out.labels.end(), d->labels.begin(), d->labels.end());
  }
  return out;
}

LayeredModel pretrain(LayeredModel model, const Dataset& data, const PretrainConfig& p, std::uint64_t seed) {
  const MaskVector all = MaskVector::all(model.num_layers());
  for (std::size_t s = 0; s < p.steps; ++s)
    model = apply_masked_update(model, backward(model, data.view()), all, p.eta);
  if (p.reset_head) {
    const LayeredModel fresh = init_model(model.specs(), derive_seed(seed, SeedStream::kInit, {1}));
    const std::size_t last = model.num_layers() - 1;
    const auto src = fresh.block(last);
    std::copy(src.begin(), src.end(), model.mutable_block(last).begin());
  }
  return model;
}

ProtocolConfig protocol_config(const ExperimentConfig& c, std::uint64_t seed) {
  ProtocolConfig p;
  p.clients_per_round = c.clients_per_round;
  p.tau = c.tau;
  p.eta = c.eta;
  p.eta_schedule = c.eta_schedule;
  p.batch_size = c.batch_size;
  p.selection.lambda = c.lambda;
  p.selection.penalty_exponent = c.penalty_exponent;
  p.selection.probe_batch_size = c.probe_batch_size;
  p.selection.solver = c.solver;
  p.diagnostics = c.diagnostics;
  p.threads = c.threads;
  p.seed = seed;
  return p;
}

json terms_to_json(const ErrorTerms& t) {
  return json{{"e1", t.e1},
              {"e2", t.e2},
              {"epsilon", t.epsilon},
              {"split_term1", t.split_term1},
              {"split_term2", t.split_term2},
              {"lemma2_slack", t.lemma2_slack},
              {"chi", t.chi},
              {"kappa2", t.kappa2}};
}

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Per (strategy, seed) quantities gathered for the theory report.
struct Trace {
  std::string strategy;
  std::uint64_t seed = 0;
  double f0 = 0.0;
  double fstar = std::numeric_limits<double>::infinity();
  std::vector<double> e1, e2, grad_sq;
  std::vector<double> sigma2_max;  // per layer, max over rounds
  double sigma2 = 0.0;             // max over rounds of the sum over selected layers
  double gamma = 0.0;
  bool gamma_seen = false;
  double lemma1_max_ratio = 0.0;
  double lemma2_min_slack = std::numeric_limits<double>::infinity();
};

void observe(Trace& tr, const RoundRecord& r) {
  tr.fstar = std::min(tr.fstar, r.train_loss);
  if (!r.diagnostics) return;
  const RoundDiagnostics& d = *r.diagnostics;
  tr.e1.push_back(d.terms.e1);
  tr.e2.push_back(d.terms.e2);
  tr.grad_sq.push_back(d.global_grad_sq_norm);
  tr.fstar = std::min(tr.fstar, d.global_loss);
  if (tr.sigma2_max.size() < d.sigma2.size()) tr.sigma2_max.resize(d.sigma2.size(), 0.0);
  double selected = 0.0;
  for (std::size_t l = 0; l < d.sigma2.size(); ++l) {
    tr.sigma2_max[l] = std::max(tr.sigma2_max[l], d.sigma2[l]);
    if (std::find(r.uncovered_layers.begin(), r.uncovered_layers.end(), l) == r.uncovered_layers.end())
      selected += d.sigma2[l];
  }
  tr.sigma2 = std::max(tr.sigma2, selected);
  if (d.smoothness) {
    tr.gamma = std::max(tr.gamma, *d.smoothness);
    tr.gamma_seen = true;
  }
  tr.lemma1_max_ratio = std::max(tr.lemma1_max_ratio, d.lemma1_residual / std::max(1.0, d.delta_norm));
  tr.lemma2_min_slack = std::min(tr.lemma2_min_slack, d.terms.lemma2_slack);
}

json bound_to_json(const BoundValue& b) {
  return json{{"value", b.valid ? json(b.value) : json(nullptr)}, {"c", b.c}, {"valid", b.valid}};
}

json trace_report(const Trace& tr, const ExperimentConfig& c) {
  json j{{"strategy", tr.strategy}, {"seed", tr.seed}, {"f0", tr.f0}};
  if (tr.e1.empty()) return j;
  const double T = static_cast<double>(tr.e1.size());
  const double sigma2 = tr.sigma2;
  j["fstar"] = tr.fstar;
  j["gamma"] = tr.gamma_seen ? json(tr.gamma) : json(nullptr);
  j["sigma2"] = sigma2;
  j["sigma2_per_layer"] = tr.sigma2_max;
  j["mean_grad_sq_norm"] = sum(tr.grad_sq) / T;
  j["e1"] = tr.e1;
  j["e2"] = tr.e2;
  j["lemma1_max_relative_residual"] = tr.lemma1_max_ratio;
  j["lemma2_min_slack"] = tr.lemma2_min_slack;
  if (tr.gamma_seen) {
    BoundInputs in;
    in.gamma = tr.gamma;
    in.eta = c.eta;
    in.sigma2 = sigma2;
    in.f0 = tr.f0;
    in.fstar = tr.fstar;
    in.e1 = tr.e1;
    in.e2 = tr.e2;
    in.rounds = T;
    in.num_layers = c.num_layers();
    j["single_step_bound"] = bound_to_json(theorem1_rhs(in));
    in.constant = BoundConstant::kLayerCount;
    j["single_step_bound_layer_constant"] = bound_to_json(theorem1_rhs(in));
    j["multi_step_bound"] = bound_to_json(multistep_rhs(in, c.tau));
  }
  return j;
}

double sample_std(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << x;
  return os.str();
}

}  // namespace

SimulationState build_simulation(const ExperimentConfig& c, std::uint64_t seed) {
  const DataConfig& d = c.data;
  const std::size_t pre_per_class =
      c.pretrain.steps == 0 ? 0 : (c.pretrain.samples_per_class ? c.pretrain.samples_per_class : d.samples_per_class);
  const Dataset all = generate_dataset(d.num_classes, d.dim, d.samples_per_class + pre_per_class, seed,
                                       GenerateOptions{d.class_separation, d.noise_std});
  // Class-major rows: the first pre_per_class rows of every class are held out.
  std::vector<std::size_t> pre_idx, pool_idx;
  for (std::size_t i = 0; i < all.size(); ++i)
    ((i % (d.samples_per_class + pre_per_class)) < pre_per_class ? pre_idx : pool_idx).push_back(i);
  const Dataset pool = all.subset(pool_idx);
  auto [train, test] = split_train_test(pool, d.test_fraction, seed);

  std::vector<Shard> shards;
  if (d.regime == PartitionRegime::kLabelSkew) {
    shards = dirichlet_partition(train, c.num_clients, d.concentration, seed, d.min_shard);
  } else {
    FeatureSkewPartition fs = feature_skew_partition(train, c.num_clients, d.num_domains, seed, d.domain_shift);
    shards = std::move(fs.shards);
    test = apply_domains_round_robin(test, fs.transforms);
  }
  const std::vector<int> budgets = sample_budgets(c.budgets, c.num_clients, c.num_layers(), seed);

  SimulationState s;
  s.model = init_model(c.layer_specs(), seed, c.model.init);
  if (pre_per_class > 0) s.model = pretrain(std::move(s.model), all.subset(pre_idx), c.pretrain, seed);
  s.clients = make_clients(std::move(shards), budgets);
  s.test = std::move(test);
  return s;
}

double estimate_fstar(const SimulationState& state, double eta, std::size_t steps) {
  std::vector<const Dataset*> parts;
  for (const auto& cl : state.clients) parts.push_back(&cl.shard.data);
  const Dataset pooled = concat(parts);
  const MaskVector mask = state.model.trainable_mask();
  LayeredModel m = state.model;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s <= steps; ++s) {
    LossAndGradient lg = loss_and_gradient(m, pooled.view());
    best = std::min(best, lg.loss);
    if (s < steps) m = apply_masked_update(m, lg.gradient, mask, eta);
  }
  return best;
}

json init_to_json(const Evaluation& eval, Strategy strategy, std::uint64_t seed) {
  return json{{"record", "init"},
              {"schema_version", kSchemaVersion},
              {"strategy", std::string(to_string(strategy))},
              {"seed", seed},
              {"epoch", 0},
              {"train_loss", eval.train_loss},
              {"test_loss", eval.test_loss},
              {"test_accuracy", eval.test_accuracy}};
}

json round_to_json(const RoundRecord& r, Strategy strategy, std::uint64_t seed) {
  json masks = json::array();
  for (const auto& m : r.masks) masks.push_back(m.to_string());
  json j{{"record", "round"},
         {"schema_version", kSchemaVersion},
         {"strategy", std::string(to_string(strategy))},
         {"seed", seed},
         {"epoch", r.epoch},
         {"eta", r.eta},
         {"sampled", r.sampled},
         {"budgets", r.budgets},
         {"masks", masks},
         {"weights", r.weights},
         {"uncovered_layers", r.uncovered_layers},
         {"no_op", r.no_op},
         {"solver", r.solver},
         {"selection_objective", r.selection_objective ? json(*r.selection_objective) : json(nullptr)},
         {"selection_feasible", r.selection_feasible},
         {"train_loss", r.train_loss},
         {"test_loss", r.test_loss},
         {"test_accuracy", r.test_accuracy},
         {"delta_norm", r.delta_norm},
         {"cost",
          {{"finetune_units", r.cost.finetune_units},
           {"probe_units", r.cost.probe_units},
           {"layers_uploaded", r.cost.layers_uploaded},
           {"params_uploaded", r.cost.params_uploaded}}},
         {"warnings", r.warnings}};
  if (r.diagnostics) {
    const RoundDiagnostics& d = *r.diagnostics;
    j["diagnostics"] = json{{"global_loss", d.global_loss},
                            {"global_grad_sq_norm", d.global_grad_sq_norm},
                            {"terms", terms_to_json(d.terms)},
                            {"sigma2", d.sigma2},
                            {"lemma1_residual", d.lemma1_residual},
                            {"delta_norm", d.delta_norm},
                            {"smoothness", d.smoothness ? json(*d.smoothness) : json(nullptr)}};
  }
  return j;
}

LogSummary summarize_log(std::istream& in) {
  struct RunAcc {
    double final_acc = 0.0;
    double best_acc = -1.0;
    double cost = 0.0;
    double uploaded = 0.0;
    std::size_t rounds = 0;
  };
  struct StrategyAcc {
    std::map<std::uint64_t, RunAcc> runs;
    std::map<std::size_t, std::vector<std::size_t>> counts;  // epoch -> per-layer
  };
  std::vector<std::string> order;
  std::map<std::string, StrategyAcc> acc;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string strategy = j.at("strategy").get<std::string>();
      if (!acc.count(strategy)) order.push_back(strategy);
      StrategyAcc& sa = acc[strategy];
      RunAcc& ra = sa.runs[j.at("seed").get<std::uint64_t>()];
      const double a = j.at("test_accuracy").get<double>();
      ra.final_acc = a;
      ra.best_acc = std::max(ra.best_acc, a);
      if (j.at("record").get<std::string>() != "round") continue;
      ++ra.rounds;
      const json& cost = j.at("cost");
      ra.cost += cost.at("finetune_units").get<double>() + cost.at("probe_units").get<double>();
      ra.uploaded += cost.at("layers_uploaded").get<double>();
      auto& counts = sa.counts[j.at("epoch").get<std::size_t>()];
      for (const auto& m : j.at("masks")) {
        const std::string bits = m.get<std::string>();
        if (counts.size() < bits.size()) counts.resize(bits.size(), 0);
        for (std::size_t l = 0; l < bits.size(); ++l) counts[l] += bits[l] == '1' ? 1 : 0;
      }
    } catch (const json::exception& e) {
      throw DataError("rounds log line " + std::to_string(lineno) + ": " + e.what());
    }
  }

  LogSummary out;
  for (const auto& name : order) {
    const StrategyAcc& sa = acc.at(name);
    SummaryRow row;
    row.strategy = name;
    row.seeds = sa.runs.size();
    std::vector<double> finals;
    for (const auto& [seed, ra] : sa.runs) {
      finals.push_back(ra.final_acc);
      row.best_accuracy_mean += ra.best_acc;
      row.total_cost_mean += ra.cost;
      row.layers_uploaded_mean += ra.uploaded;
      row.rounds = std::max(row.rounds, ra.rounds);
    }
    const double n = static_cast<double>(row.seeds);
    row.final_accuracy_mean = sum(finals) / n;
    row.final_accuracy_spread = sample_std(finals, row.final_accuracy_mean);
    row.best_accuracy_mean /= n;
    row.total_cost_mean /= n;
    row.layers_uploaded_mean /= n;
    out.rows.push_back(row);

    for (const auto& [epoch, counts] : sa.counts) out.frequencies.push_back({name, epoch, counts});
  }
  for (auto& row : out.rows) {
    row.rank = 1;
    for (const auto& other : out.rows)
      if (other.final_accuracy_mean > row.final_accuracy_mean) ++row.rank;
  }
  return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "strategy,seeds,rounds,final_accuracy_mean,final_accuracy_spread,best_accuracy_mean,"
        "total_cost_mean,layers_uploaded_mean,rank\n";
  for (const auto& r : rows)
    os << r.strategy << ',' << r.seeds << ',' << r.rounds << ',' << fmt(r.final_accuracy_mean) << ','
       << fmt(r.final_accuracy_spread) << ',' << fmt(r.best_accuracy_mean) << ',' << fmt(r.total_cost_mean)
       << ',' << fmt(r.layers_uploaded_mean) << ',' << r.rank << '\n';
}

void write_selection_freq_csv(std::ostream& os, const std::vector<SelectionFrequency>& freqs) {
  std::size_t L = 0;
  for (const auto& f : freqs) L = std::max(L, f.counts.size());
  os << "strategy,epoch";
  for (std::size_t l = 0; l < L; ++l) os << ",layer_" << l + 1;
  os << '\n';
  for (const auto& f : freqs) {
    os << f.strategy << ',' << f.epoch;
    for (std::size_t l = 0; l < L; ++l) os << ',' << (l < f.counts.size() ? f.counts[l] : 0);
    os << '\n';
  }
}

namespace {

void write_tables(const std::filesystem::path& dir, const LogSummary& s) {
  std::ofstream summary(dir / "summary.csv");
  write_summary_csv(summary, s.rows);
  std::ofstream freq(dir / "selection_freq.csv");
  write_selection_freq_csv(freq, s.frequencies);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream* progress) {
  ExperimentResult result;
  result.run_dir = std::filesystem::path(c.output_dir) / c.run_id;
  std::filesystem::create_directories(result.run_dir);
  {
    std::ofstream ec(result.run_dir / "effective_config.json");
    ec << to_json(c).dump(2) << '\n';
  }

  std::ofstream log(result.run_dir / "rounds.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write " + (result.run_dir / "rounds.jsonl").string());

  json traces = json::array();
  for (std::uint64_t seed : c.seeds) {
    SimulationState initial = build_simulation(c, seed);
    const Evaluation init_eval = evaluate(initial);
    double fstar_ref = std::numeric_limits<double>::infinity();
    if (c.diagnostics) fstar_ref = estimate_fstar(initial, c.eta, c.reference_steps);
    const ProtocolConfig pc = protocol_config(c, seed);

    for (Strategy strategy : c.strategies) {
      SimulationState state = initial;
      Trace tr;
      tr.strategy = std::string(to_string(strategy));
      tr.seed = seed;
      tr.f0 = init_eval.train_loss;
      tr.fstar = std::min(fstar_ref, init_eval.train_loss);
      log << init_to_json(init_eval, strategy, seed).dump() << '\n';
      for (std::size_t t = 0; t < c.rounds; ++t) {
        RoundRecord rec;
        try {
          rec = run_round(state, strategy, pc);
        } catch (const std::exception& e) {
          log.flush();
          throw std::runtime_error("strategy " + tr.strategy + ", seed " + std::to_string(seed) + ", round " +
                                   std::to_string(t) + ": " + e.what());
        }
        observe(tr, rec);
        log << round_to_json(rec, strategy, seed).dump() << '\n';
      }
      log.flush();
      if (progress) {
        const Evaluation ev = evaluate(state);
        *progress << tr.strategy << " seed=" << seed << " final_accuracy=" << fmt(ev.test_accuracy) << '\n';
      }
      traces.push_back(trace_report(tr, c));
    }
  }
  log.close();

  const CostReport cost = cost_model(c.num_layers(), c.tau,
                                     c.budgets.scheme == BudgetScheme::kIdentical && c.budgets.value > 0
                                         ? static_cast<std::size_t>(c.budgets.value)
                                         : 1);
  result.theory_report = json{
      {"schema_version", kSchemaVersion},
      {"estimated", true},
      {"note", "constants are empirical maxima along the trajectory; bound values are estimates"},
      {"diagnostics", c.diagnostics},
      {"cost_model",
       {{"num_layers", c.num_layers()},
        {"tau", c.tau},
        {"budget", c.budgets.scheme == BudgetScheme::kIdentical ? json(c.budgets.value) : json(nullptr)},
        {"flops_ratio", cost.flops_ratio},
        {"comm_ratio", c.budgets.scheme == BudgetScheme::kIdentical ? json(cost.comm_ratio) : json(nullptr)}}},
      {"runs", traces},
      {"effective_config", to_json(c)}};
  {
    std::ofstream tr(result.run_dir / "theory_report.json");
    tr << result.theory_report.dump(2) << '\n';
  }
  result.summary = summarize_run(result.run_dir);
  return result;
}

LogSummary summarize_run(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "rounds.jsonl");
  if (!in) throw DataError("no rounds.jsonl in '" + run_dir.string() + "'");
  LogSummary s = summarize_log(in);
  write_tables(run_dir, s);
  return s;
}

}  // namespace fedsel
