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

// Convergence diagnostics for selective layer training: surrogate gradients,
// weight divergence, error-term estimates, empirical constants, bound
// evaluators and the backward/communication cost model.
//
// Constants estimated here are empirical maxima, i.e. lower bounds of the
// assumption constants; bound values built from them are estimates only.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedsel/mask.hpp"
#include "fedsel/model.hpp"

namespace fedsel {

/// sum_i weights[i] * client_gradients[i].block(layer).
std::vector<double> surrogate_gradient(std::size_t layer,
                                       std::span<const GradientVector> client_gradients,
                                       std::span<const double> weights);

/// Stacks the surrogate gradient of every covered layer; uncovered layers
/// are zero. weights[i][l] is client i's aggregation weight for layer l.
GradientVector surrogate_update(std::span<const GradientVector> client_gradients,
                                std::span<const std::vector<double>> weights,
                                const MaskVector& covered);

/// sum_i (w_i - alpha_i)^2 / alpha_i over all clients (w_i = 0 for clients
/// that did not contribute). Throws DataError on a non-positive alpha.
double chi_divergence(std::span<const double> weights, std::span<const double> alphas);

/// sum_i alphas[i] * gradients[i].
GradientVector weighted_sum(std::span<const GradientVector> gradients,
                            std::span<const double> alphas);

struct ErrorTerms {
  /// ||stack of grad_l f over trainable l outside the covered set||^2.
  double e1 = 0.0;
  /// sum over covered l of chi_l * kappa_l^2.
  double e2 = 0.0;
  /// ||grad f - sum_{l covered} grad_l h_l||^2, measured.
  double epsilon = 0.0;
  /// Direct terms of the two-way split of epsilon.
  double split_term1 = 0.0;
  double split_term2 = 0.0;
  /// 2 (e1 + e2) - epsilon; non-negative whenever kappa are valid bounds.
  double lemma2_slack = 0.0;
  std::vector<double> chi;     // per layer (0 for uncovered layers)
  std::vector<double> kappa2;  // per layer, exact max over clients
};

struct ErrorTermInputs {
  /// Full-batch gradient of every client (all N, not only sampled).
  std::span<const GradientVector> client_gradients;
  std::span<const double> alphas;
  /// N x L aggregation weights, zero rows for clients outside the round.
  std::span<const std::vector<double>> weights;
  /// Layers selected by at least one sampled client.
  MaskVector covered;
  /// Layers that belong to the selectable set (trainable).
  MaskVector trainable;
};

ErrorTerms estimate_error_terms(const ErrorTermInputs& in);

/// Per-layer max_i ||grad_l f - grad_l f_i||^2 with grad f = sum alpha_i grad f_i.
std::vector<double> estimate_kappa2(std::span<const GradientVector> client_gradients,
                                    std::span<const double> alphas);

/// Per-layer max over pairs of ||stochastic_l - full_l||^2.
std::vector<double> estimate_sigma2(std::span<const GradientVector> stochastic,
                                    std::span<const GradientVector> full);

using FlatGradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// max over pairs of ||grad(a) - grad(b)|| / ||a - b||. Pairs of identical
/// points are skipped; throws DataError when no distinct pair exists.
double estimate_smoothness(std::span<const std::vector<double>> points, const FlatGradientFn& grad);

/// Same estimate when gradients at the points are already known.
double estimate_smoothness(std::span<const std::vector<double>> points,
                           std::span<const std::vector<double>> gradients);

struct TheoryConstants {
  double gamma = 0.0;
  double sigma2 = 0.0;
  std::vector<double> sigma2_per_layer;
  std::vector<double> kappa2;
  double eta = 0.0;
  std::size_t tau = 1;
  std::size_t rounds = 0;
  bool estimated = true;
};

/// Which constant to divide by in the single-step bound.
enum class BoundConstant {
  kSmoothness,  // C = 1 - gamma * eta (derivation)
  kLayerCount,  // C = 1 - 4 * eta * L (headline statement, L = #layers)
};

struct BoundInputs {
  double gamma = 0.0;
  double eta = 0.0;
  double sigma2 = 0.0;
  double f0 = 0.0;
  double fstar = 0.0;
  std::span<const double> e1;
  std::span<const double> e2;
  double rounds = 1.0;
  std::size_t num_layers = 1;
  BoundConstant constant = BoundConstant::kSmoothness;
};

struct BoundValue {
  double value = 0.0;
  double c = 0.0;
  bool valid = false;
};

/// 2/(eta C T)(f0 - f*) + (2 gamma eta / C) sigma^2 + (1/T) sum_t (1/(gamma eta C) + 2)(E1_t + E2_t).
BoundValue theorem1_rhs(const BoundInputs& in);

double multistep_c_prime(double eta, double gamma, std::size_t tau);
double multistep_a_tau(double eta, double gamma, std::size_t tau);

/// 2/(eta tau C' T)(f0 - f*) + 4 A_tau sigma^2 / C' + (1/T) sum_t (1/(eta tau gamma C') + 2)(E1_t + E2_t).
BoundValue multistep_rhs(const BoundInputs& in, std::size_t tau);

struct CostReport {
  double flops_selection = 0.0;  // b (tau + L - 1)
  double flops_full = 0.0;       // b L tau
  double flops_ratio = 0.0;      // selection / full
  double comm_ratio = 0.0;       // R / L
};

CostReport cost_model(std::size_t num_layers, std::size_t tau, std::size_t budget,
                      double per_layer_flops = 1.0);

}  // namespace fedsel
