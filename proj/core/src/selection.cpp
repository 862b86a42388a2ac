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

#include "fedsel/selection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "fedsel/error.hpp"

namespace fedsel {

namespace {

using Bits = std::uint64_t;

constexpr std::size_t kMaxSolverLayers = 64;
constexpr std::size_t kExactSubproblemLimit = std::size_t{1} << 16;
constexpr int kMaxScans = 50;
// Largest joint candidate set tried in a two-client move.
constexpr std::size_t kPairMoveLimit = std::size_t{1} << 14;

double penalty(std::size_t hamming, int exponent) {
  const auto h = static_cast<double>(hamming);
  return exponent == 1 ? h : h * h;
}

MaskVector from_bits(Bits b, std::size_t num_layers) {
  MaskVector m(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l)
    if (b >> l & 1u) m.set(l);
  return m;
}

double bits_score(std::span<const double> row, Bits b) {
  double s = 0.0;
  while (b) {
    s += row[static_cast<std::size_t>(std::countr_zero(b))];
    b &= b - 1;
  }
  return s;
}

double bits_cost(const SelectionProblem& p, Bits b) {
  double c = 0.0;
  while (b) {
    c += p.cost(static_cast<std::size_t>(std::countr_zero(b)));
    b &= b - 1;
  }
  return c;
}

std::vector<std::size_t> eligible_layers(const SelectionProblem& p) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < p.num_layers(); ++l)
    if (p.is_eligible(l)) out.push_back(l);
  return out;
}

// Feasible masks of one client in canonical order (include-first DFS over
// ascending layer index). Returns false if more than `limit` masks exist.
bool enumerate_feasible(const SelectionProblem& p, std::size_t client, std::size_t limit,
                        std::vector<Bits>& out) {
  out.clear();
  const std::vector<std::size_t> layers = eligible_layers(p);
  const double budget = p.budgets[client];
  bool overflow = false;
  auto rec = [&](auto&& self, std::size_t pos, Bits cur, double cost) -> void {
    if (overflow) return;
    if (pos == layers.size()) {
      if (out.size() >= limit) {
        overflow = true;
        return;
      }
      out.push_back(cur);
      return;
    }
    const std::size_t l = layers[pos];
    const double c = cost + p.cost(l);
    if (c <= budget + 1e-12) self(self, pos + 1, cur | (Bits{1} << l), c);
    self(self, pos + 1, cur, cost);
  };
  rec(rec, 0, 0, 0.0);
  return !overflow;
}

double log2_binomial_prefix(std::size_t n, std::size_t r) {
  // log2(sum_{k<=r} C(n, k)) without overflow.
  r = std::min(r, n);
  double sum = 0.0;
  double term = 1.0;
  for (std::size_t k = 0; k <= r; ++k) {
    if (k > 0) term = term * static_cast<double>(n - k + 1) / static_cast<double>(k);
    sum += term;
  }
  return std::log2(sum);
}

void check_solver_size(const SelectionProblem& p) {
  if (p.num_layers() > kMaxSolverLayers)
    throw CapacityError("selection solvers support at most 64 layers");
}

// Client i's share of the objective given the other clients' masks.
double local_value(const SelectionProblem& p, const std::vector<Bits>& masks, std::size_t i,
                   Bits candidate) {
  double v = bits_score(p.scores[i], candidate);
  if (p.lambda == 0.0) return v;
  double pen = 0.0;
  for (std::size_t j = 0; j < masks.size(); ++j)
    if (j != i) pen += penalty(static_cast<std::size_t>(std::popcount(candidate ^ masks[j])), p.penalty_exponent);
  return v - p.lambda * pen;
}

double bits_objective(const SelectionProblem& p, const std::vector<Bits>& masks) {
  MaskMatrix mm;
  for (Bits b : masks) mm.push_back(from_bits(b, p.num_layers()));
  return p1_objective(p, mm);
}

// Best single-layer move (add, remove, swap) for client i; used when the
// client's feasible set is too large to enumerate.
Bits best_local_move(const SelectionProblem& p, const std::vector<Bits>& masks, std::size_t i) {
  const std::vector<std::size_t> layers = eligible_layers(p);
  const Bits cur = masks[i];
  Bits best = cur;
  double best_val = local_value(p, masks, i, cur);
  auto consider = [&](Bits cand) {
    if (bits_cost(p, cand) > p.budgets[i] + 1e-12) return;
    const double v = local_value(p, masks, i, cand);
    if (v > best_val) {
      best_val = v;
      best = cand;
    }
  };
  for (std::size_t a : layers) {
    const Bits bit_a = Bits{1} << a;
    if (cur & bit_a) {
      consider(cur & ~bit_a);
      for (std::size_t b : layers) {
        const Bits bit_b = Bits{1} << b;
        if (!(cur & bit_b)) consider((cur & ~bit_a) | bit_b);
      }
    } else {
      consider(cur | bit_a);
    }
  }
  return best;
}

// Per-client optimum of its own score only, within budget.
Bits independent_optimum(const SelectionProblem& p, std::size_t i) {
  if (p.unit_costs()) {
    MaskVector elig(p.num_layers());
    for (std::size_t l = 0; l < p.num_layers(); ++l) elig.set(l, p.is_eligible(l));
    const auto k = static_cast<std::size_t>(std::max(0, p.budgets[i]));
    Bits b = 0;
    for (std::size_t l : top_k_layers(p.scores[i], k, elig)) b |= Bits{1} << l;
    return b;
  }
  std::vector<Bits> cands;
  if (enumerate_feasible(p, i, kExactSubproblemLimit, cands)) {
    Bits best = 0;
    double best_val = -1.0;
    for (Bits c : cands) {
      const double v = bits_score(p.scores[i], c);
      if (v > best_val) {
        best_val = v;
        best = c;
      }
    }
    return best;
  }
  // Ratio greedy for oversized knapsacks.
  std::vector<std::size_t> layers = eligible_layers(p);
  std::stable_sort(layers.begin(), layers.end(), [&](std::size_t a, std::size_t b) {
    return p.scores[i][a] / p.cost(a) > p.scores[i][b] / p.cost(b);
  });
  Bits b = 0;
  double used = 0.0;
  for (std::size_t l : layers)
    if (used + p.cost(l) <= p.budgets[i] + 1e-12) {
      b |= Bits{1} << l;
      used += p.cost(l);
    }
  return b;
}

// Every client fills min(budget, cap) from one shared ranking by summed
// score, optionally led by one layer, giving nested (maximally consistent)
// selections.
std::vector<Bits> consensus_start(const SelectionProblem& p, double cap,
                                  std::optional<std::size_t> lead = std::nullopt) {
  std::vector<double> total(p.num_layers(), 0.0);
  for (const auto& row : p.scores)
    for (std::size_t l = 0; l < row.size(); ++l) total[l] += row[l];
  std::vector<std::size_t> ranking = eligible_layers(p);
  std::stable_sort(ranking.begin(), ranking.end(),
                   [&](std::size_t a, std::size_t b) { return total[a] > total[b]; });
  if (lead) {
    const auto it = std::find(ranking.begin(), ranking.end(), *lead);
    if (it != ranking.end()) std::rotate(ranking.begin(), it, it + 1);
  }
  std::vector<Bits> out(p.num_clients(), 0);
  for (std::size_t i = 0; i < p.num_clients(); ++i) {
    double used = 0.0;
    for (std::size_t l : ranking)
      if (used + p.cost(l) <= std::min<double>(p.budgets[i], cap) + 1e-12) {
        out[i] |= Bits{1} << l;
        used += p.cost(l);
      }
  }
  return out;
}

struct AscentRun {
  std::vector<Bits> masks;
  std::vector<double> trace;
};

// Joint re-selection of two clients with the others fixed. Escapes
// single-client local optima where two clients must switch layers together.
bool pair_moves(const SelectionProblem& p, std::vector<Bits>& masks,
                const std::vector<std::vector<Bits>>& feasible, const std::vector<bool>& enumerable) {
  const std::size_t n = p.num_clients();
  auto pen = [&](Bits a, Bits b) {
    return penalty(static_cast<std::size_t>(std::popcount(a ^ b)), p.penalty_exponent);
  };
  // Score minus penalty against every client other than i and j.
  auto base = [&](std::size_t i, std::size_t j, Bits c) {
    double v = bits_score(p.scores[i], c);
    for (std::size_t k = 0; k < n; ++k)
      if (k != i && k != j) v -= p.lambda * pen(c, masks[k]);
    return v;
  };
  bool improved = false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!enumerable[i] || !enumerable[j]) continue;
      const auto& ci = feasible[i];
      const auto& cj = feasible[j];
      if (ci.size() * cj.size() > kPairMoveLimit) continue;
      std::vector<double> bi(ci.size()), bj(cj.size());
      for (std::size_t a = 0; a < ci.size(); ++a) bi[a] = base(i, j, ci[a]);
      for (std::size_t b = 0; b < cj.size(); ++b) bj[b] = base(j, i, cj[b]);
      const double cur = base(i, j, masks[i]) + base(j, i, masks[j]) - p.lambda * pen(masks[i], masks[j]);
      double best = cur;
      Bits best_i = masks[i], best_j = masks[j];
      for (std::size_t a = 0; a < ci.size(); ++a)
        for (std::size_t b = 0; b < cj.size(); ++b) {
          const double v = bi[a] + bj[b] - p.lambda * pen(ci[a], cj[b]);
          if (v > best) {
            best = v;
            best_i = ci[a];
            best_j = cj[b];
          }
        }
      if (best > cur + 1e-12 * std::max(1.0, std::abs(cur))) {
        masks[i] = best_i;
        masks[j] = best_j;
        improved = true;
      }
    }
  return improved;
}

AscentRun coordinate_ascent(const SelectionProblem& p, std::vector<Bits> masks) {
  AscentRun run;
  run.trace.push_back(bits_objective(p, masks));
  std::vector<std::vector<Bits>> feasible(p.num_clients());
  std::vector<bool> enumerable(p.num_clients());
  for (std::size_t i = 0; i < p.num_clients(); ++i)
    enumerable[i] = enumerate_feasible(p, i, kExactSubproblemLimit, feasible[i]);

  for (int scan = 0; scan < kMaxScans; ++scan) {
    bool improved = false;
    for (std::size_t i = 0; i < p.num_clients(); ++i) {
      const double cur_val = local_value(p, masks, i, masks[i]);
      Bits best = masks[i];
      double best_val = cur_val;
      if (enumerable[i]) {
        for (Bits cand : feasible[i]) {
          const double v = local_value(p, masks, i, cand);
          if (v > best_val) {
            best_val = v;
            best = cand;
          }
        }
      } else {
        best = best_local_move(p, masks, i);
        best_val = local_value(p, masks, i, best);
      }
      if (best != masks[i] && best_val > cur_val + 1e-12 * std::max(1.0, std::abs(cur_val))) {
        masks[i] = best;
        improved = true;
      }
    }
    if (!improved && p.lambda != 0.0) improved = pair_moves(p, masks, feasible, enumerable);
    run.trace.push_back(bits_objective(p, masks));
    if (!improved) break;
  }
  run.masks = std::move(masks);
  return run;
}

bool all_feasible(const SelectionProblem& p, const MaskMatrix& masks) {
  for (std::size_t i = 0; i < masks.size(); ++i)
    if (!mask_feasible(p, i, masks[i])) return false;
  return true;
}

MaskMatrix to_matrix(const SelectionProblem& p, const std::vector<Bits>& masks) {
  MaskMatrix mm;
  mm.reserve(masks.size());
  for (Bits b : masks) mm.push_back(from_bits(b, p.num_layers()));
  return mm;
}

std::vector<std::size_t> eligible_list(const MaskVector& eligible) { return eligible.layers(); }

std::size_t clamp_budget(int budget, std::size_t available, std::size_t client,
                         std::vector<std::string>* warnings) {
  if (budget < 0) throw ConfigError("budgets must be non-negative");
  const auto r = static_cast<std::size_t>(budget);
  if (r > available) {
    if (warnings)
      warnings->push_back("client " + std::to_string(client) + ": budget " + std::to_string(r) +
                          " exceeds " + std::to_string(available) + " selectable layers; clamped");
    return available;
  }
  return r;
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kTop: return "top";
    case Strategy::kBottom: return "bottom";
    case Strategy::kBoth: return "both";
    case Strategy::kSnr: return "snr";
    case Strategy::kRgn: return "rgn";
    case Strategy::kFull: return "full";
    case Strategy::kProposed: return "proposed";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::kTop, Strategy::kBottom, Strategy::kBoth, Strategy::kSnr,
                     Strategy::kRgn, Strategy::kFull, Strategy::kProposed})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

bool strategy_probes(Strategy s) {
  return s == Strategy::kSnr || s == Strategy::kRgn || s == Strategy::kProposed;
}

std::string_view to_string(SolverKind s) {
  switch (s) {
    case SolverKind::kExact: return "exact";
    case SolverKind::kGreedy: return "greedy";
    case SolverKind::kStatic: return "static";
  }
  return "unknown";
}

bool SelectionProblem::unit_costs() const {
  return std::all_of(layer_costs.begin(), layer_costs.end(), [](double c) { return c == 1.0; });
}

void SelectionProblem::validate() const {
  const std::size_t L = num_layers();
  for (const auto& row : scores) {
    if (row.size() != L) throw ShapeError("selection problem: ragged score matrix");
    for (double s : row)
      if (!(s >= 0.0)) throw ConfigError("selection problem: scores must be non-negative");
  }
  if (budgets.size() != scores.size())
    throw ShapeError("selection problem: budgets length != number of clients");
  for (int b : budgets)
    if (b < 0) throw ConfigError("selection problem: budgets must be non-negative");
  if (!(lambda >= 0.0)) throw ConfigError("selection problem: lambda must be >= 0");
  if (penalty_exponent != 1 && penalty_exponent != 2)
    throw ConfigError("selection problem: penalty_exponent must be 1 or 2");
  if (!layer_costs.empty()) {
    if (layer_costs.size() != L) throw ShapeError("selection problem: layer_costs length != L");
    for (double c : layer_costs)
      if (!(c > 0.0)) throw ConfigError("selection problem: layer costs must be positive");
  }
  if (!eligible.empty() && eligible.size() != L)
    throw ShapeError("selection problem: eligible length != L");
}

double p1_objective(const SelectionProblem& problem, const MaskMatrix& masks) {
  if (masks.size() != problem.num_clients()) throw ShapeError("p1_objective: wrong mask count");
  double gain = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].size() != problem.num_layers()) throw ShapeError("p1_objective: mask length");
    for (std::size_t l = 0; l < masks[i].size(); ++l)
      if (masks[i].selected(l)) gain += problem.scores[i][l];
  }
  double pen = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = 0; j < masks.size(); ++j)
      if (j != i) pen += penalty(masks[i].hamming(masks[j]), problem.penalty_exponent);
  return gain - problem.lambda / 2.0 * pen;
}

bool mask_feasible(const SelectionProblem& problem, std::size_t client, const MaskVector& mask) {
  double c = 0.0;
  for (std::size_t l = 0; l < mask.size(); ++l) {
    if (!mask.selected(l)) continue;
    if (!problem.is_eligible(l)) return false;
    c += problem.cost(l);
  }
  return c <= problem.budgets[client] + 1e-12;
}

double exact_search_log2_size(const SelectionProblem& problem) {
  const std::size_t eligible = eligible_layers(problem).size();
  double total = 0.0;
  for (std::size_t i = 0; i < problem.num_clients(); ++i) {
    if (problem.unit_costs()) {
      total += log2_binomial_prefix(eligible, static_cast<std::size_t>(std::max(0, problem.budgets[i])));
    } else {
      if (eligible > 30) return std::numeric_limits<double>::infinity();
      std::vector<Bits> cands;
      enumerate_feasible(problem, i, std::numeric_limits<std::size_t>::max(), cands);
      total += std::log2(static_cast<double>(cands.size()));
    }
  }
  return total;
}

SelectionResult solve_p1_exact(const SelectionProblem& problem) {
  problem.validate();
  check_solver_size(problem);
  const double size = exact_search_log2_size(problem);
  if (size > kExactSolverLog2Cap)
    throw CapacityError("exact P1 search space 2^" + std::to_string(size) + " exceeds 2^" +
                        std::to_string(kExactSolverLog2Cap));

  const std::size_t n = problem.num_clients();
  std::vector<std::vector<Bits>> cands(n);
  std::vector<std::vector<double>> cand_score(n);
  std::vector<double> best_remaining(n + 1, 0.0);  // upper bound on sum of scores for clients >= i
  for (std::size_t i = 0; i < n; ++i) {
    enumerate_feasible(problem, i, std::numeric_limits<std::size_t>::max(), cands[i]);
    for (Bits b : cands[i]) cand_score[i].push_back(bits_score(problem.scores[i], b));
  }
  for (std::size_t i = n; i-- > 0;)
    best_remaining[i] = best_remaining[i + 1] +
                        *std::max_element(cand_score[i].begin(), cand_score[i].end());

  std::vector<Bits> current(n, 0);
  std::vector<Bits> best(n, 0);
  double best_val = -std::numeric_limits<double>::infinity();
  auto dfs = [&](auto&& self, std::size_t i, double partial) -> void {
    if (i == n) {
      if (partial > best_val) {
        best_val = partial;
        best = current;
      }
      return;
    }
    if (partial + best_remaining[i] < best_val - 1e-12 * std::max(1.0, std::abs(best_val))) return;
    for (std::size_t k = 0; k < cands[i].size(); ++k) {
      const Bits b = cands[i][k];
      double v = partial + cand_score[i][k];
      if (problem.lambda != 0.0) {
        double pen = 0.0;
        for (std::size_t j = 0; j < i; ++j)
          pen += penalty(static_cast<std::size_t>(std::popcount(b ^ current[j])), problem.penalty_exponent);
        v -= problem.lambda * pen;
      }
      current[i] = b;
      self(self, i + 1, v);
    }
  };
  dfs(dfs, 0, 0.0);

  SelectionResult res;
  res.masks = to_matrix(problem, best);
  res.objective = p1_objective(problem, res.masks);
  res.solver = SolverKind::kExact;
  res.feasible = all_feasible(problem, res.masks);
  res.objective_trace = {res.objective};
  return res;
}

SelectionResult solve_p1_greedy(const SelectionProblem& problem) {
  problem.validate();
  check_solver_size(problem);
  std::vector<Bits> indep(problem.num_clients());
  for (std::size_t i = 0; i < problem.num_clients(); ++i) indep[i] = independent_optimum(problem, i);

  AscentRun a = coordinate_ascent(problem, indep);
  if (problem.lambda != 0.0 && problem.num_clients() > 1) {
    // Shared starts at every common size: single-client moves cannot shrink
    // all selections together.
    const int max_budget = *std::max_element(problem.budgets.begin(), problem.budgets.end());
    for (int cap = 0; cap <= max_budget; ++cap) {
      AscentRun b = coordinate_ascent(problem, consensus_start(problem, cap));
      if (b.trace.back() > a.trace.back()) a = std::move(b);
    }
    for (std::size_t lead : eligible_layers(problem))
      for (int cap = 1; cap <= max_budget; ++cap) {
        AscentRun b = coordinate_ascent(problem, consensus_start(problem, cap, lead));
        if (b.trace.back() > a.trace.back()) a = std::move(b);
      }
  }

  SelectionResult res;
  res.masks = to_matrix(problem, a.masks);
  res.objective = a.trace.back();
  res.solver = SolverKind::kGreedy;
  res.feasible = all_feasible(problem, res.masks);
  res.objective_trace = std::move(a.trace);
  return res;
}

std::vector<std::size_t> top_k_layers(std::span<const double> scores, std::size_t k,
                                      const MaskVector& eligible) {
  std::vector<std::size_t> layers = eligible_list(eligible);
  std::stable_sort(layers.begin(), layers.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (layers.size() > k) layers.resize(k);
  std::sort(layers.begin(), layers.end());
  return layers;
}

MaskMatrix select_static(Strategy strategy, std::span<const int> budgets,
                         const MaskVector& eligible, std::vector<std::string>* warnings) {
  if (strategy != Strategy::kTop && strategy != Strategy::kBottom && strategy != Strategy::kBoth)
    throw ConfigError("select_static: strategy must be top, bottom or both");
  const std::vector<std::size_t> layers = eligible_list(eligible);
  MaskMatrix out;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    const std::size_t r = clamp_budget(budgets[i], layers.size(), i, warnings);
    MaskVector m(eligible.size());
    std::size_t from_top = 0;
    std::size_t from_bottom = 0;
    switch (strategy) {
      case Strategy::kTop: from_top = r; break;
      case Strategy::kBottom: from_bottom = r; break;
      default:
        from_top = (r + 1) / 2;  // odd budgets lean toward the top
        from_bottom = r / 2;
        break;
    }
    for (std::size_t k = 0; k < from_top; ++k) m.set(layers[layers.size() - 1 - k]);
    for (std::size_t k = 0; k < from_bottom; ++k) m.set(layers[k]);
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<double> snr_scores(const GradientVector& gradient) {
  std::vector<double> out(gradient.num_layers());
  for (std::size_t l = 0; l < gradient.num_layers(); ++l) {
    const auto g = gradient.block(l);
    const auto n = static_cast<double>(g.size());
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / n;
    double var = 0.0;
    for (double x : g) var += (x - mean) * (x - mean);
    var /= n;
    if (var == 0.0)
      out[l] = mean != 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    else
      out[l] = std::abs(mean) / var;
  }
  return out;
}

std::vector<double> rgn_scores(const GradientVector& gradient, const LayeredModel& model) {
  if (!gradient.same_shape(model)) throw ShapeError("rgn_scores: gradient/model shape mismatch");
  std::vector<double> out(gradient.num_layers());
  for (std::size_t l = 0; l < gradient.num_layers(); ++l) {
    const double pn = model.layer_norm(l);
    out[l] = pn == 0.0 ? std::numeric_limits<double>::infinity() : gradient.norm(l) / pn;
  }
  return out;
}

namespace {

MaskMatrix select_by_scores(const std::vector<std::vector<double>>& scores,
                            std::span<const int> budgets, const MaskVector& eligible) {
  MaskMatrix out;
  const std::size_t available = eligible.count();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t r = clamp_budget(budgets[i], available, i, nullptr);
    out.push_back(MaskVector::from_layers(eligible.size(), top_k_layers(scores[i], r, eligible)));
  }
  return out;
}

}  // namespace

MaskMatrix select_snr(std::span<const GradientVector> probes, std::span<const int> budgets,
                      const MaskVector& eligible) {
  if (probes.size() != budgets.size()) throw ShapeError("select_snr: probes/budgets mismatch");
  std::vector<std::vector<double>> scores;
  for (const auto& g : probes) scores.push_back(snr_scores(g));
  return select_by_scores(scores, budgets, eligible);
}

MaskMatrix select_rgn(std::span<const GradientVector> probes, const LayeredModel& model,
                      std::span<const int> budgets, const MaskVector& eligible) {
  if (probes.size() != budgets.size()) throw ShapeError("select_rgn: probes/budgets mismatch");
  std::vector<std::vector<double>> scores;
  for (const auto& g : probes) scores.push_back(rgn_scores(g, model));
  return select_by_scores(scores, budgets, eligible);
}

Batch sample_batch(const Dataset& data, std::size_t batch_size, Rng& rng) {
  if (data.empty()) throw DataError("cannot draw a batch from an empty shard");
  Batch b;
  b.dim = data.dim;
  if (batch_size == 0 || batch_size >= data.size()) {
    b.inputs = data.features;
    b.labels = data.labels;
    return b;
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: first batch_size entries are a uniform sample.
  for (std::size_t k = 0; k < batch_size; ++k) {
    std::uniform_int_distribution<std::size_t> u(k, idx.size() - 1);
    std::swap(idx[k], idx[u(rng)]);
  }
  idx.resize(batch_size);
  Dataset sub = data.subset(idx);
  b.inputs = std::move(sub.features);
  b.labels = std::move(sub.labels);
  return b;
}

ProbeResult probe_gradient_norms(std::span<const Shard* const> shards, const LayeredModel& model,
                                 std::size_t probe_batch_size, std::uint64_t seed,
                                 std::uint64_t epoch) {
  ProbeResult res;
  for (const Shard* s : shards) {
    if (s->size() == 0)
      throw DataError("probe: client " + std::to_string(s->client_id) + " has an empty shard");
    Rng rng = make_rng(seed, SeedStream::kProbe, {epoch, s->client_id});
    const Batch batch = sample_batch(s->data, probe_batch_size, rng);
    LossAndGradient lg = loss_and_gradient(model, batch);
    std::vector<double> sq(model.num_layers());
    for (std::size_t l = 0; l < model.num_layers(); ++l) sq[l] = lg.gradient.squared_norm(l);
    res.scores.push_back(std::move(sq));
    res.gradients.push_back(std::move(lg.gradient));
    res.losses.push_back(lg.loss);
  }
  return res;
}

SelectionOutcome select_layers(Strategy strategy, const LayeredModel& model,
                               std::span<const Shard* const> shards, std::span<const int> budgets,
                               const SelectionConfig& config, std::uint64_t seed,
                               std::uint64_t epoch) {
  if (shards.size() != budgets.size()) throw ShapeError("select_layers: shards/budgets mismatch");
  const MaskVector eligible = model.trainable_mask();
  SelectionOutcome out;
  switch (strategy) {
    case Strategy::kTop:
    case Strategy::kBottom:
    case Strategy::kBoth:
      out.masks = select_static(strategy, budgets, eligible, &out.warnings);
      break;
    case Strategy::kFull:
      out.masks.assign(shards.size(), eligible);
      break;
    case Strategy::kSnr:
    case Strategy::kRgn:
    case Strategy::kProposed: {
      out.probe = probe_gradient_norms(shards, model, config.probe_batch_size, seed, epoch);
      if (strategy == Strategy::kSnr) {
        out.masks = select_snr(out.probe->gradients, budgets, eligible);
      } else if (strategy == Strategy::kRgn) {
        out.masks = select_rgn(out.probe->gradients, model, budgets, eligible);
      } else {
        SelectionProblem p;
        p.scores = out.probe->scores;
        p.budgets.assign(budgets.begin(), budgets.end());
        p.lambda = config.lambda;
        p.penalty_exponent = config.penalty_exponent;
        p.layer_costs = config.layer_costs;
        p.eligible.resize(model.num_layers());
        for (std::size_t l = 0; l < model.num_layers(); ++l) p.eligible[l] = eligible.selected(l);
        const bool exact = config.solver == SolverChoice::kExact ||
                           (config.solver == SolverChoice::kAuto &&
                            exact_search_log2_size(p) <= kExactSolverLog2Cap);
        SelectionResult r = exact ? solve_p1_exact(p) : solve_p1_greedy(p);
        out.masks = std::move(r.masks);
        out.solver = r.solver;
        out.objective = r.objective;
      }
      break;
    }
  }
  // Feasibility against unit or configured layer costs (Full has no budget).
  for (std::size_t i = 0; strategy != Strategy::kFull && i < out.masks.size(); ++i) {
    double c = 0.0;
    for (std::size_t l : out.masks[i].layers())
      c += config.layer_costs.empty() ? 1.0 : config.layer_costs[l];
    if (c > budgets[i] + 1e-12) out.feasible = false;
  }
  return out;
}

}  // namespace fedsel
