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

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsel {

using Rng = std::mt19937_64;

/// Stream tags for the counter-based seed splitter. Each pipeline stage draws
/// from its own stream so that changing one stage never perturbs another.
enum class SeedStream : std::uint64_t {
  kData = 1,
  kPartition = 2,
  kInit = 3,
  kSampling = 4,
  kBatching = 5,
  kProbe = 6,
  kBudget = 7,
  kDomain = 8,
  kDiagnostics = 9,
  kSplit = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent sub-seed from a master seed, a stream tag and any
/// number of counters (epoch, client id, ...).
inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream,
                                 std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t h = splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, SeedStream stream,
                    std::initializer_list<std::uint64_t> counters = {}) {
  return Rng(derive_seed(master, stream, counters));
}

}  // namespace fedsel
