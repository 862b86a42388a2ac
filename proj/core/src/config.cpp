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

#include "fedsel/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

using nlohmann::json;

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

// Reads one JSON object, rejecting keys outside the allowed set.
class Fields {
 public:
  Fields(const json& j, std::string path, std::vector<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "<root>" : path_, "must be an object");
    for (const auto& [key, value] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) != allowed.end()) continue;
      std::string msg = "unknown key";
      std::string best;
      std::size_t best_d = 3;
      for (const auto& a : allowed) {
        const std::size_t d = edit_distance(key, a);
        if (d < best_d) best_d = d, best = a;
      }
      if (!best.empty()) msg += "; did you mean \"" + best + "\"?";
      fail(name(key), msg);
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& field, const std::string& reason) {
    throw ConfigError("config field '" + field + "': " + reason);
  }

  void require(const std::string& key) const {
    if (!has(key)) fail(name(key), "is required and has no default");
  }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number()) fail(name(key), "must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(name(key), "must be finite");
    return x;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_integer()) fail(name(key), "must be an integer");
    return v.get<std::int64_t>();
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    const std::int64_t x = integer(key, static_cast<std::int64_t>(fallback));
    if (x < 0) fail(name(key), "must be non-negative");
    return static_cast<std::size_t>(x);
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_boolean()) fail(name(key), "must be true or false");
    return at(key).get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_string()) fail(name(key), "must be a string");
    return at(key).get<std::string>();
  }

  const json& array(const std::string& key) const {
    if (!at(key).is_array()) fail(name(key), "must be an array");
    return at(key);
  }

 private:
  const json& j_;
  std::string path_;
};

template <typename E>
E pick(const Fields& f, const std::string& key, const std::string& value,
       std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [n, e] : options) {
    if (value == n) return e;
    names += names.empty() ? n : std::string(", ") + n;
  }
  Fields::fail(f.name(key), "\"" + value + "\" is not one of " + names);
}

const char* name_of(Activation a) { return a == Activation::kTanh ? "tanh" : "linear"; }
const char* name_of(InitMode m) { return m == InitMode::kIdentity ? "identity" : "glorot_uniform"; }
const char* name_of(PartitionRegime r) {
  return r == PartitionRegime::kFeatureSkew ? "feature_skew" : "label_skew";
}
const char* name_of(BudgetScheme s) { return s == BudgetScheme::kHalfNormal ? "half_normal" : "identical"; }
const char* name_of(EtaSchedule s) { return s == EtaSchedule::kInverseSqrt ? "inverse_sqrt" : "constant"; }
const char* name_of(SolverChoice s) {
  switch (s) {
    case SolverChoice::kExact: return "exact";
    case SolverChoice::kGreedy: return "greedy";
    default: return "auto";
  }
}

void parse_model(const json& j, ModelConfig& m) {
  Fields f(j, "model", {"hidden", "activation", "frozen", "init"});
  if (f.has("hidden")) {
    m.hidden.clear();
    for (const auto& v : f.array("hidden")) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1)
        Fields::fail("model.hidden", "entries must be positive integers");
      m.hidden.push_back(v.get<std::size_t>());
    }
  }
  m.activation = pick<Activation>(f, "activation", f.string("activation", name_of(m.activation)),
                                  {{"tanh", Activation::kTanh}, {"linear", Activation::kNone}});
  if (f.has("frozen")) {
    m.frozen.clear();
    for (const auto& v : f.array("frozen")) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 1)
        Fields::fail("model.frozen", "entries must be 1-based layer indices");
      m.frozen.push_back(v.get<std::size_t>());
    }
  }
  m.init = pick<InitMode>(f, "init", f.string("init", name_of(m.init)),
                          {{"glorot_uniform", InitMode::kGlorotUniform}, {"identity", InitMode::kIdentity}});
}

void parse_data(const json& j, DataConfig& d) {
  Fields f(j, "data",
           {"classes", "dim", "samples_per_class", "class_separation", "noise_std", "test_fraction",
            "partition"});
  d.num_classes = f.count("classes", d.num_classes);
  d.dim = f.count("dim", d.dim);
  d.samples_per_class = f.count("samples_per_class", d.samples_per_class);
  d.class_separation = f.number("class_separation", d.class_separation);
  d.noise_std = f.number("noise_std", d.noise_std);
  d.test_fraction = f.number("test_fraction", d.test_fraction);
  if (d.num_classes < 2) Fields::fail("data.classes", "must be at least 2");
  if (d.dim < 1) Fields::fail("data.dim", "must be positive");
  if (d.samples_per_class < 1) Fields::fail("data.samples_per_class", "must be positive");
  if (d.noise_std < 0.0) Fields::fail("data.noise_std", "must be non-negative");
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
    Fields::fail("data.test_fraction", "must lie in (0, 1)");
  if (!f.has("partition")) return;
  Fields p(f.at("partition"), "data.partition",
           {"regime", "concentration", "num_domains", "domain_shift", "min_shard"});
  d.regime = pick<PartitionRegime>(p, "regime", p.string("regime", name_of(d.regime)),
                                   {{"label_skew", PartitionRegime::kLabelSkew},
                                    {"feature_skew", PartitionRegime::kFeatureSkew}});
  d.concentration = p.number("concentration", d.concentration);
  d.num_domains = p.count("num_domains", d.num_domains);
  d.domain_shift = p.number("domain_shift", d.domain_shift);
  d.min_shard = p.count("min_shard", d.min_shard);
  if (!(d.concentration > 0.0)) Fields::fail("data.partition.concentration", "must be positive");
  if (d.num_domains < 1) Fields::fail("data.partition.num_domains", "must be positive");
  if (d.min_shard < 1) Fields::fail("data.partition.min_shard", "must be at least 1");
}

void parse_budgets(const json& j, BudgetConfig& b) {
  Fields f(j, "budgets", {"scheme", "value", "sigma", "lo", "hi"});
  b.scheme = pick<BudgetScheme>(f, "scheme", f.string("scheme", name_of(b.scheme)),
                                {{"identical", BudgetScheme::kIdentical},
                                 {"half_normal", BudgetScheme::kHalfNormal}});
  if (b.scheme == BudgetScheme::kIdentical) f.require("value");
  b.value = static_cast<int>(f.integer("value", b.value));
  b.sigma = f.number("sigma", b.sigma);
  b.lo = static_cast<int>(f.integer("lo", b.lo));
  b.hi = static_cast<int>(f.integer("hi", b.hi));
  if (b.scheme == BudgetScheme::kIdentical && b.value < 0) Fields::fail("budgets.value", "must be non-negative");
  if (b.scheme == BudgetScheme::kHalfNormal) {
    if (!(b.sigma > 0.0)) Fields::fail("budgets.sigma", "must be positive");
    if (b.lo < 1) Fields::fail("budgets.lo", "must be at least 1");
    if (b.hi < b.lo) Fields::fail("budgets.hi", "must be >= budgets.lo");
  }
}

void parse_pretrain(const json& j, PretrainConfig& p) {
  Fields f(j, "pretrain", {"steps", "eta", "samples_per_class", "reset_head"});
  p.steps = f.count("steps", p.steps);
  p.eta = f.number("eta", p.eta);
  p.samples_per_class = f.count("samples_per_class", p.samples_per_class);
  p.reset_head = f.boolean("reset_head", p.reset_head);
  if (p.steps > 0 && !(p.eta > 0.0)) Fields::fail("pretrain.eta", "must be positive");
}

}  // namespace

std::vector<LayerSpec> ExperimentConfig::layer_specs() const {
  std::vector<LayerSpec> specs;
  std::size_t in = data.dim;
  for (std::size_t h : model.hidden) {
    specs.push_back({in, h, model.activation, true});
    in = h;
  }
  specs.push_back({in, data.num_classes, Activation::kNone, true});
  for (std::size_t l : model.frozen) specs[l - 1].trainable = false;
  return specs;
}

ExperimentConfig parse_config(const json& j) {
  Fields f(j, "",
           {"schema_version", "name", "model", "data", "pretrain", "num_clients", "clients_per_round",
            "rounds", "tau", "eta", "eta_schedule", "batch_size", "strategies", "lambda",
            "penalty_exponent", "probe_batch_size", "solver", "budgets", "seeds", "diagnostics",
            "reference_steps", "threads", "output_dir", "run_id"});
  ExperimentConfig c;
  if (f.has("schema_version") && f.integer("schema_version", kSchemaVersion) != kSchemaVersion)
    Fields::fail("schema_version", "unsupported (expected " + std::to_string(kSchemaVersion) + ")");
  for (const char* key : {"eta", "tau", "lambda", "budgets"}) f.require(key);

  c.name = f.string("name", c.name);
  if (f.has("model")) parse_model(f.at("model"), c.model);
  if (f.has("data")) parse_data(f.at("data"), c.data);
  if (f.has("pretrain")) parse_pretrain(f.at("pretrain"), c.pretrain);
  parse_budgets(f.at("budgets"), c.budgets);

  c.num_clients = f.count("num_clients", c.num_clients);
  c.clients_per_round = f.count("clients_per_round", c.clients_per_round);
  c.rounds = f.count("rounds", c.rounds);
  c.tau = f.count("tau", c.tau);
  c.eta = f.number("eta", c.eta);
  c.eta_schedule = pick<EtaSchedule>(f, "eta_schedule", f.string("eta_schedule", name_of(c.eta_schedule)),
                                     {{"constant", EtaSchedule::kConstant},
                                      {"inverse_sqrt", EtaSchedule::kInverseSqrt}});
  c.batch_size = f.count("batch_size", c.batch_size);
  c.lambda = f.number("lambda", c.lambda);
  c.penalty_exponent = static_cast<int>(f.integer("penalty_exponent", c.penalty_exponent));
  c.probe_batch_size = f.count("probe_batch_size", c.probe_batch_size);
  c.solver = pick<SolverChoice>(f, "solver", f.string("solver", name_of(c.solver)),
                                {{"auto", SolverChoice::kAuto},
                                 {"exact", SolverChoice::kExact},
                                 {"greedy", SolverChoice::kGreedy}});
  c.diagnostics = f.boolean("diagnostics", c.diagnostics);
  c.reference_steps = f.count("reference_steps", c.reference_steps);
  c.threads = f.count("threads", c.threads);
  c.output_dir = f.string("output_dir", c.output_dir);
  c.run_id = f.string("run_id", c.name);

  if (f.has("strategies")) {
    c.strategies.clear();
    const json& a = f.array("strategies");
    if (a.empty()) Fields::fail("strategies", "must list at least one strategy");
    for (const auto& v : a) {
      if (!v.is_string()) Fields::fail("strategies", "entries must be strings");
      std::string lower = v.get<std::string>();
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      const auto s = parse_strategy(lower);
      if (!s) Fields::fail("strategies", "unknown strategy \"" + v.get<std::string>() + "\"");
      if (std::find(c.strategies.begin(), c.strategies.end(), *s) != c.strategies.end())
        Fields::fail("strategies", "duplicate strategy \"" + v.get<std::string>() + "\"");
      c.strategies.push_back(*s);
    }
  }
  if (f.has("seeds")) {
    c.seeds.clear();
    const json& a = f.array("seeds");
    if (a.empty()) Fields::fail("seeds", "must list at least one seed");
    for (const auto& v : a) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        Fields::fail("seeds", "entries must be non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }

  // Cross-field checks.
  const std::size_t L = c.num_layers();
  if (c.num_clients < 1) Fields::fail("num_clients", "must be positive");
  if (c.clients_per_round < 1 || c.clients_per_round > c.num_clients)
    Fields::fail("clients_per_round", "must lie in [1, num_clients]");
  if (c.tau < 1) Fields::fail("tau", "must be at least 1");
  if (!(c.eta > 0.0)) Fields::fail("eta", "must be positive");
  if (c.lambda < 0.0) Fields::fail("lambda", "must be non-negative");
  if (c.penalty_exponent != 1 && c.penalty_exponent != 2) Fields::fail("penalty_exponent", "must be 1 or 2");
  if (c.threads < 1) Fields::fail("threads", "must be at least 1");
  if (c.run_id.empty() || c.run_id.find('/') != std::string::npos)
    Fields::fail("run_id", "must be a non-empty name without '/'");
  for (std::size_t l : c.model.frozen)
    if (l > L) Fields::fail("model.frozen", "layer " + std::to_string(l) + " exceeds L=" + std::to_string(L));
  const std::size_t per_class_total = c.data.samples_per_class;
  if (per_class_total * c.data.num_classes < c.num_clients * c.data.min_shard)
    Fields::fail("data.samples_per_class", "too few samples for num_clients * min_shard");
  const BudgetConfig& b = c.budgets;
  if (b.scheme == BudgetScheme::kIdentical && b.value > static_cast<int>(L))
    Fields::fail("budgets.value", "exceeds the number of layers L=" + std::to_string(L));
  if (b.scheme == BudgetScheme::kHalfNormal && b.hi > static_cast<int>(L))
    Fields::fail("budgets.hi", "exceeds the number of layers L=" + std::to_string(L));

  const bool has_both = std::find(c.strategies.begin(), c.strategies.end(), Strategy::kBoth) != c.strategies.end();
  const bool odd_possible = b.scheme == BudgetScheme::kHalfNormal ? b.hi > b.lo || b.lo % 2 != 0 : b.value % 2 != 0;
  if (has_both && odd_possible)
    c.notes.push_back("strategy Both with odd budget R takes ceil(R/2) layers from the top and floor(R/2) from the bottom");
  if (std::find(c.strategies.begin(), c.strategies.end(), Strategy::kFull) != c.strategies.end())
    c.notes.push_back("strategy Full trains every trainable layer and ignores budgets");
  return c;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json strategies = json::array();
  for (Strategy s : c.strategies) strategies.push_back(std::string(to_string(s)));
  return json{
      {"schema_version", kSchemaVersion},
      {"name", c.name},
      {"model",
       {{"hidden", c.model.hidden},
        {"activation", name_of(c.model.activation)},
        {"frozen", c.model.frozen},
        {"init", name_of(c.model.init)}}},
      {"data",
       {{"classes", c.data.num_classes},
        {"dim", c.data.dim},
        {"samples_per_class", c.data.samples_per_class},
        {"class_separation", c.data.class_separation},
        {"noise_std", c.data.noise_std},
        {"test_fraction", c.data.test_fraction},
        {"partition",
         {{"regime", name_of(c.data.regime)},
          {"concentration", c.data.concentration},
          {"num_domains", c.data.num_domains},
          {"domain_shift", c.data.domain_shift},
          {"min_shard", c.data.min_shard}}}}},
      {"pretrain",
       {{"steps", c.pretrain.steps},
        {"eta", c.pretrain.eta},
        {"samples_per_class", c.pretrain.samples_per_class},
        {"reset_head", c.pretrain.reset_head}}},
      {"num_clients", c.num_clients},
      {"clients_per_round", c.clients_per_round},
      {"rounds", c.rounds},
      {"tau", c.tau},
      {"eta", c.eta},
      {"eta_schedule", name_of(c.eta_schedule)},
      {"batch_size", c.batch_size},
      {"strategies", strategies},
      {"lambda", c.lambda},
      {"penalty_exponent", c.penalty_exponent},
      {"probe_batch_size", c.probe_batch_size},
      {"solver", name_of(c.solver)},
      {"budgets",
       {{"scheme", name_of(c.budgets.scheme)},
        {"value", c.budgets.value},
        {"sigma", c.budgets.sigma},
        {"lo", c.budgets.lo},
        {"hi", c.budgets.hi}}},
      {"seeds", c.seeds},
      {"diagnostics", c.diagnostics},
      {"reference_steps", c.reference_steps},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
      {"run_id", c.run_id},
      {"notes", c.notes},
  };
}

std::vector<int> sample_budgets(const BudgetConfig& b, std::size_t num_clients,
                                std::size_t num_layers, std::uint64_t seed) {
  const int L = static_cast<int>(num_layers);
  if (b.scheme == BudgetScheme::kIdentical) {
    if (b.value < 0 || b.value > L) throw ConfigError("sample_budgets: R must lie in [0, L]");
    return std::vector<int>(num_clients, b.value);
  }
  if (b.hi > L) throw ConfigError("sample_budgets: hi=" + std::to_string(b.hi) + " exceeds L=" + std::to_string(L));
  if (b.lo < 1 || b.lo > b.hi) throw ConfigError("sample_budgets: need 1 <= lo <= hi");
  if (!(b.sigma > 0.0)) throw ConfigError("sample_budgets: sigma must be positive");
  Rng rng = make_rng(seed, SeedStream::kBudget);
  std::normal_distribution<double> normal(0.0, b.sigma);
  std::vector<int> out(num_clients);
  for (auto& r : out) {
    const double x = std::ceil(std::abs(normal(rng)));
    r = static_cast<int>(std::clamp(x, static_cast<double>(b.lo), static_cast<double>(b.hi)));
  }
  return out;
}

}  // namespace fedsel
