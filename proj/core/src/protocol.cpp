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

#include "fedsel/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

namespace {

std::vector<double> trainable_flat(const LayeredModel& model) {
  std::vector<double> out;
  for (std::size_t l : model.trainable_layers()) {
    auto b = model.block(l);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::vector<double> trainable_flat(const GradientVector& g, const LayeredModel& model) {
  std::vector<double> out;
  for (std::size_t l : model.trainable_layers()) {
    auto b = g.block(l);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

double dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<ClientState> make_clients(std::vector<Shard> shards, std::span<const int> budgets) {
  if (budgets.size() != shards.size()) throw ShapeError("make_clients: budgets/shards mismatch");
  double total = 0.0;
  for (const auto& s : shards) total += static_cast<double>(s.size());
  if (total <= 0.0) throw DataError("make_clients: no samples");
  std::vector<ClientState> clients;
  clients.reserve(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    ClientState c;
    c.id = i;
    c.num_samples = static_cast<double>(shards[i].size());
    c.alpha = c.num_samples / total;
    c.budget = budgets[i];
    c.shard = std::move(shards[i]);
    clients.push_back(std::move(c));
  }
  return clients;
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, std::size_t count,
                                        std::uint64_t seed, std::uint64_t epoch) {
  if (count < 1 || count > num_clients)
    throw ConfigError("sample_clients: need 1 <= count <= N (count=" + std::to_string(count) +
                      ", N=" + std::to_string(num_clients) + ")");
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = make_rng(seed, SeedStream::kSampling, {epoch});
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> u(k, num_clients - 1);
    std::swap(ids[k], ids[u(rng)]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

GradientVector local_train(const ClientState& client, const LayeredModel& global,
                           const MaskVector& mask, const LocalTrainOptions& options,
                           std::uint64_t seed, std::uint64_t epoch) {
  const Dataset& data = client.shard.data;
  if (data.empty()) throw DataError("local_train: client " + std::to_string(client.id) + " has an empty shard");
  if (options.tau < 1) throw ConfigError("local_train: tau must be >= 1");
  if (mask.size() != global.num_layers()) throw ShapeError("local_train: mask length != L");
  for (std::size_t l : mask.layers())
    if (!global.trainable(l))
      throw ConfigError("local_train: mask selects frozen layer " + std::to_string(l + 1));

  GradientVector delta(global);
  if (mask.none()) return delta;

  const std::size_t n = data.size();
  const bool full_batch = options.batch_size == 0 || options.batch_size >= n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!full_batch) {
    Rng rng = make_rng(seed, SeedStream::kBatching, {epoch, client.id});
    std::shuffle(order.begin(), order.end(), rng);
  }

  LayeredModel local = global;
  std::size_t cursor = 0;
  std::vector<std::size_t> rows;
  for (std::size_t step = 0; step < options.tau; ++step) {
    LossAndGradient lg;
    if (full_batch) {
      lg = loss_and_gradient(local, data.view());
    } else {
      rows.clear();
      for (std::size_t k = 0; k < options.batch_size; ++k) rows.push_back(order[(cursor + k) % n]);
      cursor = (cursor + options.batch_size) % n;
      const Dataset batch = data.subset(rows);
      lg = loss_and_gradient(local, batch.view());
    }
    lg.gradient.apply_mask(mask);
    delta.add_scaled(lg.gradient, 1.0);
    local = apply_masked_update(local, lg.gradient, mask, options.eta);
  }
  return delta;
}

std::vector<std::size_t> AggregationWeights::uncovered_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    bool any = false;
    for (const auto& row : w) any = any || row[l] != 0.0;
    if (!any) out.push_back(l);
  }
  return out;
}

MaskVector AggregationWeights::covered() const {
  MaskVector m = MaskVector::all(num_layers());
  for (std::size_t l : uncovered_layers()) m.set(l, false);
  return m;
}

AggregationWeights compute_weights(std::span<const double> sample_sizes,
                                   std::span<const MaskVector> masks) {
  if (sample_sizes.size() != masks.size()) throw ShapeError("compute_weights: sizes/masks mismatch");
  AggregationWeights out;
  if (masks.empty()) return out;
  const std::size_t L = masks.front().size();
  out.w.assign(masks.size(), std::vector<double>(L, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    double denom = 0.0;
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i].selected(l)) denom += sample_sizes[i];
    if (denom == 0.0) continue;
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i].selected(l)) out.w[i][l] = sample_sizes[i] / denom;
  }
  return out;
}

GradientVector aggregate(std::span<const GradientVector> updates,
                         const AggregationWeights& weights) {
  if (updates.size() != weights.num_clients()) throw ShapeError("aggregate: updates/weights mismatch");
  if (updates.empty()) throw ShapeError("aggregate: no updates");
  const std::size_t L = updates.front().num_layers();
  std::vector<std::vector<double>> blocks(L);
  for (std::size_t l = 0; l < L; ++l) {
    blocks[l].assign(updates.front().block(l).size(), 0.0);
    for (std::size_t i = 0; i < updates.size(); ++i) {
      const double w = weights.w[i][l];
      if (w == 0.0) continue;
      const auto u = updates[i].block(l);
      for (std::size_t k = 0; k < u.size(); ++k) blocks[l][k] += w * u[k];
    }
  }
  return GradientVector(std::move(blocks));
}

LayeredModel global_update(const LayeredModel& model, const GradientVector& delta, double eta) {
  return apply_masked_update(model, delta, MaskVector::all(model.num_layers()), eta);
}

double learning_rate_at(const ProtocolConfig& config, std::size_t epoch) {
  if (config.eta_schedule == EtaSchedule::kInverseSqrt)
    return config.eta / std::sqrt(static_cast<double>(epoch) + 1.0);
  return config.eta;
}

Evaluation evaluate(const SimulationState& state) {
  Evaluation ev;
  for (const auto& c : state.clients)
    ev.train_loss += c.alpha * forward(state.model, c.shard.data.view()).loss;
  if (!state.test.empty()) {
    ev.test_loss = forward(state.model, state.test.view()).loss;
    ev.test_accuracy = accuracy(state.model, state.test.view());
  }
  return ev;
}

namespace {

RoundDiagnostics diagnose(SimulationState& state, const RoundRecord& rec,
                          const AggregationWeights& weights, const GradientVector& delta,
                          const std::optional<ProbeResult>& probe, const ProtocolConfig& config) {
  const LayeredModel& model = state.model;
  const std::size_t N = state.clients.size();
  std::vector<GradientVector> full(N);
  std::vector<double> losses(N);
  parallel_for(N, config.threads, [&](std::size_t i) {
    LossAndGradient lg = loss_and_gradient(model, state.clients[i].shard.data.view());
    full[i] = std::move(lg.gradient);
    losses[i] = lg.loss;
  });
  std::vector<double> alphas(N);
  for (std::size_t i = 0; i < N; ++i) alphas[i] = state.clients[i].alpha;

  RoundDiagnostics d;
  for (std::size_t i = 0; i < N; ++i) d.global_loss += alphas[i] * losses[i];
  const GradientVector global = weighted_sum(full, alphas);
  for (std::size_t l : model.trainable_layers()) d.global_grad_sq_norm += global.squared_norm(l);

  std::vector<std::vector<double>> w_all(N, std::vector<double>(model.num_layers(), 0.0));
  for (std::size_t k = 0; k < rec.sampled.size(); ++k) w_all[rec.sampled[k]] = weights.w[k];
  ErrorTermInputs in;
  in.client_gradients = full;
  in.alphas = alphas;
  in.weights = w_all;
  in.covered = weights.covered();
  in.trainable = model.trainable_mask();
  d.terms = estimate_error_terms(in);

  // Surrogate update from the sampled clients' full-batch gradients.
  std::vector<GradientVector> sampled_full;
  for (std::size_t id : rec.sampled) sampled_full.push_back(full[id]);
  const GradientVector surrogate = surrogate_update(sampled_full, weights.w, in.covered);
  const std::vector<double> a = delta.flat();
  const std::vector<double> b = surrogate.flat();
  d.lemma1_residual = dist(a, b);
  d.delta_norm = std::sqrt(delta.total_squared_norm());

  // Variance estimate: probe gradients when the strategy drew them, otherwise
  // one fresh mini-batch gradient per sampled client.
  std::vector<GradientVector> stochastic;
  if (probe) {
    stochastic = probe->gradients;
  } else {
    for (std::size_t id : rec.sampled) {
      Rng rng = make_rng(config.seed, SeedStream::kDiagnostics, {state.epoch, id});
      const std::size_t bs = config.batch_size ? config.batch_size : config.selection.probe_batch_size;
      const Batch batch = sample_batch(state.clients[id].shard.data, bs, rng);
      stochastic.push_back(backward(model, batch));
    }
  }
  d.sigma2 = estimate_sigma2(stochastic, sampled_full);

  // Smoothness along the trajectory (consecutive diagnostic rounds).
  std::vector<double> theta = trainable_flat(model);
  std::vector<std::vector<double>> grads(N);
  for (std::size_t i = 0; i < N; ++i) grads[i] = trainable_flat(full[i], model);
  if (!state.prev_theta.empty() && state.prev_theta.size() == theta.size()) {
    const double dx = dist(theta, state.prev_theta);
    if (dx > 0.0) {
      double g = 0.0;
      for (std::size_t i = 0; i < N; ++i) g = std::max(g, dist(grads[i], state.prev_client_gradients[i]) / dx);
      d.smoothness = g;
    }
  }
  state.prev_theta = std::move(theta);
  state.prev_client_gradients = std::move(grads);
  return d;
}

}  // namespace

RoundRecord run_round(SimulationState& state, Strategy strategy, const ProtocolConfig& config) {
  RoundRecord rec;
  rec.epoch = state.epoch;
  rec.eta = learning_rate_at(config, state.epoch);
  const std::size_t L = state.model.num_layers();

  rec.sampled = sample_clients(state.clients.size(), config.clients_per_round, config.seed, state.epoch);
  std::vector<const Shard*> shards;
  std::vector<double> sizes;
  for (std::size_t id : rec.sampled) {
    shards.push_back(&state.clients[id].shard);
    sizes.push_back(state.clients[id].num_samples);
    rec.budgets.push_back(state.clients[id].budget);
  }

  SelectionOutcome sel = select_layers(strategy, state.model, shards, rec.budgets, config.selection,
                                       config.seed, state.epoch);
  rec.masks = sel.masks;
  rec.solver = std::string(to_string(sel.solver));
  rec.selection_objective = sel.objective;
  rec.selection_feasible = sel.feasible;
  rec.warnings = sel.warnings;

  const LocalTrainOptions opts{config.tau, rec.eta, config.batch_size};
  std::vector<GradientVector> updates(rec.sampled.size());
  parallel_for(rec.sampled.size(), config.threads, [&](std::size_t k) {
    updates[k] = local_train(state.clients[rec.sampled[k]], state.model, rec.masks[k], opts,
                             config.seed, state.epoch);
  });

  const AggregationWeights weights = compute_weights(sizes, rec.masks);
  rec.weights = weights.w;
  rec.uncovered_layers = weights.uncovered_layers();
  for (std::size_t l : rec.uncovered_layers)
    if (state.model.trainable(l))
      rec.warnings.push_back("layer " + std::to_string(l + 1) + " selected by no sampled client");
  rec.no_op = std::all_of(rec.masks.begin(), rec.masks.end(), [](const MaskVector& m) { return m.none(); });

  const GradientVector delta = aggregate(updates, weights);
  rec.delta_norm.resize(L);
  for (std::size_t l = 0; l < L; ++l) rec.delta_norm[l] = delta.norm(l);

  const std::size_t trainable = state.model.trainable_layers().size();
  for (const auto& m : rec.masks) {
    rec.cost.finetune_units += static_cast<double>(config.tau * m.count());
    rec.cost.layers_uploaded += m.count();
    for (std::size_t l : m.layers()) rec.cost.params_uploaded += state.model.spec(l).param_count();
  }
  if (strategy_probes(strategy) && trainable > 0)
    rec.cost.probe_units = static_cast<double>(rec.sampled.size() * (trainable - 1));

  if (config.diagnostics) rec.diagnostics = diagnose(state, rec, weights, delta, sel.probe, config);

  state.model = global_update(state.model, delta, rec.eta);
  const Evaluation ev = evaluate(state);
  rec.train_loss = ev.train_loss;
  rec.test_loss = ev.test_loss;
  rec.test_accuracy = ev.test_accuracy;
  ++state.epoch;
  return rec;
}

}  // namespace fedsel
