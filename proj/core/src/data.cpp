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

#include "fedsel/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

namespace {

constexpr std::size_t kMaxDirichletRedraws = 100;

// Gram-Schmidt on a Gaussian matrix; rows of the result are orthonormal.
std::vector<double> random_orthogonal(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> q(dim * dim);
  for (;;) {
    for (double& v : q) v = g(rng);
    bool degenerate = false;
    for (std::size_t r = 0; r < dim && !degenerate; ++r) {
      double* row = q.data() + r * dim;
      for (std::size_t p = 0; p < r; ++p) {
        const double* prev = q.data() + p * dim;
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += row[k] * prev[k];
        for (std::size_t k = 0; k < dim; ++k) row[k] -= dot * prev[k];
      }
      double n = 0.0;
      for (std::size_t k = 0; k < dim; ++k) n += row[k] * row[k];
      n = std::sqrt(n);
      if (n < 1e-8) {
        degenerate = true;
        break;
      }
      for (std::size_t k = 0; k < dim; ++k) row[k] /= n;
    }
    if (!degenerate) return q;
  }
}

std::vector<double> dirichlet(std::size_t k, double concentration, Rng& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> p(k);
  for (;;) {
    double sum = 0.0;
    for (double& v : p) sum += (v = gamma(rng));
    if (sum > 0.0 && std::isfinite(sum)) {
      for (double& v : p) v /= sum;
      return p;
    }
  }
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

Dataset generate_dataset(std::size_t num_classes, std::size_t dim, std::size_t per_class,
                         std::uint64_t seed, const GenerateOptions& options) {
  if (num_classes == 0 || dim == 0 || per_class == 0)
    throw ConfigError("generate_dataset: counts must be positive");
  Rng rng = make_rng(seed, SeedStream::kData);
  std::normal_distribution<double> g(0.0, 1.0);

  // Class means: orthonormal directions when possible, otherwise random unit
  // vectors, scaled to the requested separation.
  std::vector<double> means(num_classes * dim);
  if (num_classes <= dim) {
    const std::vector<double> q = random_orthogonal(dim, rng);
    for (std::size_t c = 0; c < num_classes; ++c)
      for (std::size_t k = 0; k < dim; ++k)
        means[c * dim + k] = options.class_separation * q[c * dim + k];
  } else {
    for (std::size_t c = 0; c < num_classes; ++c) {
      double n = 0.0;
      for (std::size_t k = 0; k < dim; ++k) n += std::pow(means[c * dim + k] = g(rng), 2);
      n = std::sqrt(n);
      for (std::size_t k = 0; k < dim; ++k) means[c * dim + k] *= options.class_separation / n;
    }
  }

  Dataset d;
  d.dim = dim;
  d.num_classes = num_classes;
  d.features.reserve(num_classes * per_class * dim);
  d.labels.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      for (std::size_t k = 0; k < dim; ++k)
        d.features.push_back(means[c * dim + k] + options.noise_std * g(rng));
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("test_fraction must be in [0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, SeedStream::kSplit);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

std::vector<Shard> dirichlet_partition(const Dataset& data, std::size_t num_clients,
                                       double concentration, std::uint64_t seed,
                                       std::size_t min_shard, DirichletStats* stats) {
  if (num_clients == 0) throw ConfigError("dirichlet_partition: num_clients must be >= 1");
  if (!(concentration > 0.0)) throw ConfigError("dirichlet_partition: concentration must be > 0");
  if (num_clients * min_shard > data.size())
    throw DataError("cannot give " + std::to_string(num_clients) + " clients at least " +
                    std::to_string(min_shard) + " sample(s) from " + std::to_string(data.size()) +
                    " samples");

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  Rng rng = make_rng(seed, SeedStream::kPartition);
  std::vector<std::vector<std::size_t>> assigned;
  DirichletStats local;
  for (std::size_t attempt = 0;; ++attempt) {
    assigned.assign(num_clients, {});
    for (const auto& members : by_class) {
      std::vector<std::size_t> shuffled = members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const std::vector<double> p = dirichlet(num_clients, concentration, rng);
      const double n = static_cast<double>(shuffled.size());
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t c = 0; c < num_clients; ++c) {
        cum += p[c];
        std::size_t end = c + 1 == num_clients
                              ? shuffled.size()
                              : std::min(shuffled.size(), static_cast<std::size_t>(std::floor(cum * n)));
        end = std::max(end, begin);
        assigned[c].insert(assigned[c].end(), shuffled.begin() + static_cast<std::ptrdiff_t>(begin),
                           shuffled.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    const bool ok = std::all_of(assigned.begin(), assigned.end(),
                                [&](const auto& a) { return a.size() >= min_shard; });
    if (ok || attempt + 1 >= kMaxDirichletRedraws) break;
    ++local.redraws;
  }

  // Repair: top up deficient clients from the currently largest shard.
  for (std::size_t c = 0; c < num_clients; ++c) {
    while (assigned[c].size() < min_shard) {
      std::size_t donor = 0;
      for (std::size_t j = 1; j < num_clients; ++j)
        if (assigned[j].size() > assigned[donor].size()) donor = j;
      assigned[c].push_back(assigned[donor].back());
      assigned[donor].pop_back();
      ++local.repaired_samples;
    }
  }
  if (stats) *stats = local;

  std::vector<Shard> shards(num_clients);
  for (std::size_t c = 0; c < num_clients; ++c) {
    std::sort(assigned[c].begin(), assigned[c].end());
    shards[c].client_id = c;
    shards[c].source_indices = assigned[c];
    shards[c].data = data.subset(assigned[c]);
  }
  return shards;
}

std::vector<double> DomainTransform::rotate(std::span<const double> x) const {
  if (x.size() != dim) throw ShapeError("domain transform: input dimension mismatch");
  std::vector<double> y(dim, 0.0);
  for (std::size_t r = 0; r < dim; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) acc += rotation[r * dim + k] * x[k];
    y[r] = acc;
  }
  return y;
}

std::vector<double> DomainTransform::apply(std::span<const double> x) const {
  std::vector<double> y = rotate(x);
  for (std::size_t k = 0; k < dim; ++k) y[k] += shift[k];
  return y;
}

DomainTransform make_domain_transform(std::size_t dim, std::uint64_t seed, std::size_t domain_id,
                                      double shift_norm) {
  Rng rng = make_rng(seed, SeedStream::kDomain, {domain_id});
  DomainTransform t;
  t.dim = dim;
  t.rotation = random_orthogonal(dim, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  t.shift.resize(dim);
  double n = 0.0;
  for (double& v : t.shift) {
    v = g(rng);
    n += v * v;
  }
  n = std::sqrt(n);
  for (double& v : t.shift) v *= shift_norm / n;
  return t;
}

FeatureSkewPartition feature_skew_partition(const Dataset& data, std::size_t num_clients,
                                            std::size_t num_domains, std::uint64_t seed,
                                            double shift_norm) {
  if (num_clients == 0) throw ConfigError("feature_skew_partition: num_clients must be >= 1");
  if (num_domains == 0) throw ConfigError("feature_skew_partition: num_domains must be >= 1");
  if (num_clients > data.size())
    throw DataError("feature_skew_partition: more clients than samples");

  FeatureSkewPartition out;
  for (std::size_t d = 0; d < num_domains; ++d)
    out.transforms.push_back(make_domain_transform(data.dim, seed, d, shift_norm));

  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, SeedStream::kPartition);
  std::shuffle(idx.begin(), idx.end(), rng);

  const std::size_t base = data.size() / num_clients;
  const std::size_t extra = data.size() % num_clients;
  std::size_t begin = 0;
  out.shards.resize(num_clients);
  for (std::size_t c = 0; c < num_clients; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    std::vector<std::size_t> mine(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                  idx.begin() + static_cast<std::ptrdiff_t>(begin + len));
    begin += len;
    std::sort(mine.begin(), mine.end());
    Shard& s = out.shards[c];
    s.client_id = c;
    s.domain = static_cast<int>(c % num_domains);
    s.data = data.subset(mine);
    s.source_indices = std::move(mine);
    const DomainTransform& t = out.transforms[c % num_domains];
    for (std::size_t r = 0; r < s.data.size(); ++r) {
      const std::vector<double> y = t.apply(s.data.row(r));
      std::copy(y.begin(), y.end(), s.data.features.begin() + static_cast<std::ptrdiff_t>(r * data.dim));
    }
  }
  return out;
}

Dataset apply_domains_round_robin(const Dataset& data,
                                  std::span<const DomainTransform> transforms) {
  if (transforms.empty()) return data;
  Dataset out = data;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const std::vector<double> y = transforms[r % transforms.size()].apply(data.row(r));
    std::copy(y.begin(), y.end(), out.features.begin() + static_cast<std::ptrdiff_t>(r * data.dim));
  }
  return out;
}

void write_shards_csv(std::ostream& os, std::span<const Shard> shards) {
  const std::size_t dim = shards.empty() ? 0 : shards.front().data.dim;
  os << "client_id,label";
  for (std::size_t k = 0; k < dim; ++k) os << ",x" << (k + 1);
  os << '\n';
  os << std::setprecision(17);
  for (const Shard& s : shards) {
    for (std::size_t r = 0; r < s.size(); ++r) {
      os << s.client_id << ',' << s.data.labels[r];
      for (double v : s.data.row(r)) os << ',' << v;
      os << '\n';
    }
  }
}

double label_entropy(const Dataset& data) {
  if (data.empty()) return 0.0;
  double h = 0.0;
  const double n = static_cast<double>(data.size());
  for (std::size_t c : data.class_counts()) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace fedsel
