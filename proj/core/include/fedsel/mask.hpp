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

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace fedsel {

/// Binary per-layer selection of one client in one round. Layer indices are
/// zero-based in code; logs and CSV exports print them one-based.
class MaskVector {
 public:
  MaskVector() = default;
  explicit MaskVector(std::size_t num_layers, bool value = false)
      : bits_(num_layers, value ? 1 : 0) {}

  /// Mask with exactly the listed (zero-based) layers selected.
  static MaskVector from_layers(std::size_t num_layers, std::initializer_list<std::size_t> layers);
  static MaskVector from_layers(std::size_t num_layers, const std::vector<std::size_t>& layers);
  static MaskVector all(std::size_t num_layers) { return MaskVector(num_layers, true); }

  std::size_t size() const { return bits_.size(); }
  bool selected(std::size_t layer) const { return bits_[layer] != 0; }
  void set(std::size_t layer, bool value = true) { bits_[layer] = value ? 1 : 0; }

  std::size_t count() const;
  bool none() const { return count() == 0; }
  std::vector<std::size_t> layers() const;

  /// L1 distance between two masks of equal length.
  std::size_t hamming(const MaskVector& other) const;

  /// Compact "0110.." rendering used in logs.
  std::string to_string() const;

  friend bool operator==(const MaskVector&, const MaskVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

using MaskMatrix = std::vector<MaskVector>;

}  // namespace fedsel
