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

#include "fedsel/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedsel/error.hpp"

namespace fedsel {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

double sq_norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return s;
}

}  // namespace

std::vector<double> surrogate_gradient(std::size_t layer,
                                       std::span<const GradientVector> client_gradients,
                                       std::span<const double> weights) {
  if (client_gradients.size() != weights.size())
    throw ShapeError("surrogate_gradient: gradients/weights mismatch");
  if (client_gradients.empty()) return {};
  std::vector<double> out(client_gradients.front().block(layer).size(), 0.0);
  for (std::size_t i = 0; i < client_gradients.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const auto g = client_gradients[i].block(layer);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weights[i] * g[k];
  }
  return out;
}

GradientVector surrogate_update(std::span<const GradientVector> client_gradients,
                                std::span<const std::vector<double>> weights,
                                const MaskVector& covered) {
  if (client_gradients.size() != weights.size())
    throw ShapeError("surrogate_update: gradients/weights mismatch");
  if (client_gradients.empty()) throw ShapeError("surrogate_update: no clients");
  const std::size_t L = client_gradients.front().num_layers();
  std::vector<std::vector<double>> blocks(L);
  std::vector<double> column(client_gradients.size());
  for (std::size_t l = 0; l < L; ++l) {
    if (covered.selected(l)) {
      for (std::size_t i = 0; i < weights.size(); ++i) column[i] = weights[i][l];
      blocks[l] = surrogate_gradient(l, client_gradients, column);
    } else {
      blocks[l].assign(client_gradients.front().block(l).size(), 0.0);
    }
  }
  return GradientVector(std::move(blocks));
}

double chi_divergence(std::span<const double> weights, std::span<const double> alphas) {
  if (weights.size() != alphas.size()) throw ShapeError("chi_divergence: length mismatch");
  double chi = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] > 0.0)) throw DataError("chi_divergence: alpha must be positive");
    const double d = weights[i] - alphas[i];
    chi += d * d / alphas[i];
  }
  return chi;
}

GradientVector weighted_sum(std::span<const GradientVector> gradients,
                            std::span<const double> alphas) {
  if (gradients.size() != alphas.size()) throw ShapeError("weighted_sum: length mismatch");
  if (gradients.empty()) throw ShapeError("weighted_sum: no gradients");
  std::vector<std::vector<double>> blocks(gradients.front().num_layers());
  for (std::size_t l = 0; l < blocks.size(); ++l)
    blocks[l].assign(gradients.front().block(l).size(), 0.0);
  GradientVector out(std::move(blocks));
  for (std::size_t i = 0; i < gradients.size(); ++i) out.add_scaled(gradients[i], alphas[i]);
  return out;
}

std::vector<double> estimate_kappa2(std::span<const GradientVector> client_gradients,
                                    std::span<const double> alphas) {
  const GradientVector global = weighted_sum(client_gradients, alphas);
  std::vector<double> kappa2(global.num_layers(), 0.0);
  for (const auto& g : client_gradients)
    for (std::size_t l = 0; l < kappa2.size(); ++l)
      kappa2[l] = std::max(kappa2[l], sq_dist(global.block(l), g.block(l)));
  return kappa2;
}

std::vector<double> estimate_sigma2(std::span<const GradientVector> stochastic,
                                    std::span<const GradientVector> full) {
  if (stochastic.size() != full.size()) throw ShapeError("estimate_sigma2: length mismatch");
  if (stochastic.empty()) return {};
  std::vector<double> sigma2(stochastic.front().num_layers(), 0.0);
  for (std::size_t i = 0; i < stochastic.size(); ++i)
    for (std::size_t l = 0; l < sigma2.size(); ++l)
      sigma2[l] = std::max(sigma2[l], sq_dist(stochastic[i].block(l), full[i].block(l)));
  return sigma2;
}

ErrorTerms estimate_error_terms(const ErrorTermInputs& in) {
  const std::size_t n = in.client_gradients.size();
  if (n == 0 || in.alphas.size() != n || in.weights.size() != n)
    throw ShapeError("estimate_error_terms: inconsistent client counts");
  const GradientVector global = weighted_sum(in.client_gradients, in.alphas);
  const std::size_t L = global.num_layers();

  ErrorTerms out;
  out.chi.assign(L, 0.0);
  out.kappa2 = estimate_kappa2(in.client_gradients, in.alphas);
  std::vector<double> column(n);
  for (std::size_t l = 0; l < L; ++l) {
    if (!in.trainable.selected(l)) continue;
    const auto gl = global.block(l);
    if (!in.covered.selected(l)) {
      const double s = sq_norm(gl);
      out.e1 += s;
      out.split_term1 += s;
      out.epsilon += s;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) column[i] = in.weights[i][l];
    const std::vector<double> hl = surrogate_gradient(l, in.client_gradients, column);
    const double d = sq_dist(gl, hl);
    out.split_term2 += d;
    out.epsilon += d;
    out.chi[l] = chi_divergence(column, in.alphas);
    out.e2 += out.chi[l] * out.kappa2[l];
  }
  out.lemma2_slack = 2.0 * (out.e1 + out.e2) - out.epsilon;
  return out;
}

double estimate_smoothness(std::span<const std::vector<double>> points,
                           std::span<const std::vector<double>> gradients) {
  if (points.size() != gradients.size()) throw ShapeError("estimate_smoothness: length mismatch");
  if (points.size() < 2) throw DataError("estimate_smoothness: need at least two probe points");
  double best = 0.0;
  bool any = false;
  for (std::size_t a = 0; a < points.size(); ++a)
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      const double dx = std::sqrt(sq_dist(points[a], points[b]));
      if (dx == 0.0) continue;
      any = true;
      best = std::max(best, std::sqrt(sq_dist(gradients[a], gradients[b])) / dx);
    }
  if (!any) throw DataError("estimate_smoothness: all probe points are identical");
  return best;
}

double estimate_smoothness(std::span<const std::vector<double>> points, const FlatGradientFn& grad) {
  std::vector<std::vector<double>> grads;
  grads.reserve(points.size());
  for (const auto& p : points) grads.push_back(grad(p));
  return estimate_smoothness(points, grads);
}

namespace {

double error_sum(const BoundInputs& in) {
  if (in.e1.size() != in.e2.size()) throw ShapeError("bound: E1/E2 length mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < in.e1.size(); ++t) s += in.e1[t] + in.e2[t];
  return s;
}

// (coef)(sum E) with 0 * inf treated as 0 when every error term is zero.
double error_contribution(double coef, double sum, double rounds) {
  if (sum == 0.0) return 0.0;
  return coef * sum / rounds;
}

}  // namespace

BoundValue theorem1_rhs(const BoundInputs& in) {
  BoundValue out;
  out.c = in.constant == BoundConstant::kSmoothness
              ? 1.0 - in.gamma * in.eta
              : 1.0 - 4.0 * in.eta * static_cast<double>(in.num_layers);
  if (!(out.c > 0.0) || !(in.eta > 0.0) || !(in.rounds > 0.0)) {
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const double sum = error_sum(in);
  out.value = 2.0 / (in.eta * out.c * in.rounds) * (in.f0 - in.fstar) +
              2.0 * in.gamma * in.eta / out.c * in.sigma2 +
              error_contribution(1.0 / (in.gamma * in.eta * out.c) + 2.0, sum, in.rounds);
  out.valid = std::isfinite(out.value);
  return out;
}

double multistep_c_prime(double eta, double gamma, std::size_t tau) {
  const auto t = static_cast<double>(tau);
  const double g2 = gamma * gamma;
  return 1.0 - 4.0 * eta * t - 8.0 * eta * eta * g2 * t * (t - 1.0) -
         32.0 * eta * eta * eta * g2 * t * t * (t - 1.0);
}

double multistep_a_tau(double eta, double gamma, std::size_t tau) {
  const auto t = static_cast<double>(tau);
  const double g2 = gamma * gamma;
  return eta + 2.0 * eta * eta * g2 * t * (t - 1.0) + 8.0 * eta * eta * eta * g2 * t * t * (t - 1.0);
}

BoundValue multistep_rhs(const BoundInputs& in, std::size_t tau) {
  BoundValue out;
  out.c = multistep_c_prime(in.eta, in.gamma, tau);
  if (!(out.c > 0.0) || !(in.eta > 0.0) || tau == 0 || !(in.rounds > 0.0)) {
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const auto t = static_cast<double>(tau);
  const double a = multistep_a_tau(in.eta, in.gamma, tau);
  const double sum = error_sum(in);
  out.value = 2.0 / (in.eta * t * out.c * in.rounds) * (in.f0 - in.fstar) +
              4.0 * a / out.c * in.sigma2 +
              error_contribution(1.0 / (in.eta * t * in.gamma * out.c) + 2.0, sum, in.rounds);
  out.valid = std::isfinite(out.value);
  return out;
}

CostReport cost_model(std::size_t num_layers, std::size_t tau, std::size_t budget,
                      double per_layer_flops) {
  if (num_layers == 0 || tau == 0 || budget == 0 || !(per_layer_flops > 0.0))
    throw ConfigError("cost_model: all inputs must be positive");
  const auto L = static_cast<double>(num_layers);
  const auto t = static_cast<double>(tau);
  CostReport r;
  r.flops_selection = per_layer_flops * (t + L - 1.0);
  r.flops_full = per_layer_flops * L * t;
  r.flops_ratio = r.flops_selection / r.flops_full;
  r.comm_ratio = static_cast<double>(budget) / L;
  return r;
}

}  // namespace fedsel
