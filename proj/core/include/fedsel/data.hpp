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

// Synthetic classification data and non-IID client partitioning.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "fedsel/model.hpp"

namespace fedsel {

struct Dataset {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;  // size() x dim, row-major
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }
  BatchView view() const { return {features, labels, labels.size(), dim}; }
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
};

struct GenerateOptions {
  /// Norm of each class mean (means are mutually orthogonal when dim >= classes).
  double class_separation = 4.0;
  double noise_std = 1.0;
};

/// Balanced Gaussian clusters, class-major order. Deterministic per seed.
Dataset generate_dataset(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                         std::uint64_t seed, const GenerateOptions& options = {});

/// Random split; the first element is the training part.
std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             std::uint64_t seed);

struct Shard {
  std::size_t client_id = 0;
  Dataset data;
  /// Row indices into the source dataset, in shard order.
  std::vector<std::size_t> source_indices;
  /// Feature-skew domain, or -1 under label skew.
  int domain = -1;

  std::size_t size() const { return data.size(); }
};

enum class PartitionRegime { kLabelSkew, kFeatureSkew };

struct PartitionPlan {
  PartitionRegime regime = PartitionRegime::kLabelSkew;
  double concentration = 0.1;
  std::size_t num_domains = 1;
  std::size_t min_shard = 1;
  /// Norm of the per-domain translation used under feature skew.
  double domain_shift = 8.0;
  std::uint64_t seed = 0;
};

struct DirichletStats {
  std::size_t redraws = 0;
  std::size_t repaired_samples = 0;
};

/// Per class, splits the class's (shuffled) samples across clients in
/// proportion to a Dirichlet(concentration) draw. If any client ends below
/// `min_shard`, the allocation is redrawn (up to 100 times); after that,
/// samples are moved from the largest shards until every floor is met.
std::vector<Shard> dirichlet_partition(const Dataset& data, std::size_t num_clients,
                                       double concentration, std::uint64_t seed,
                                       std::size_t min_shard = 1, DirichletStats* stats = nullptr);

/// Orthogonal rotation plus translation of the input space.
struct DomainTransform {
  std::size_t dim = 0;
  std::vector<double> rotation;  // dim x dim, row-major, orthogonal
  std::vector<double> shift;

  std::vector<double> rotate(std::span<const double> x) const;
  std::vector<double> apply(std::span<const double> x) const;
  friend bool operator==(const DomainTransform&, const DomainTransform&) = default;
};

DomainTransform make_domain_transform(std::size_t dim, std::uint64_t seed, std::size_t domain_id,
                                      double shift_norm);

struct FeatureSkewPartition {
  std::vector<Shard> shards;
  std::vector<DomainTransform> transforms;  // one per domain
};

/// IID sample allocation, then client i's inputs pass through domain
/// (i mod num_domains). Labels are untouched.
FeatureSkewPartition feature_skew_partition(const Dataset& data, std::size_t num_clients,
                                            std::size_t num_domains, std::uint64_t seed,
                                            double shift_norm = 8.0);

/// Row r goes through transform (r mod transforms.size()); used for the test split.
Dataset apply_domains_round_robin(const Dataset& data,
                                  std::span<const DomainTransform> transforms);

/// Row-per-sample CSV: client_id,label,x1,...,xd.
void write_shards_csv(std::ostream& os, std::span<const Shard> shards);

/// Shannon entropy (nats) of a shard's label histogram.
double label_entropy(const Dataset& data);

}  // namespace fedsel
