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

#include "fedsel/mask.hpp"

#include <numeric>

#include "fedsel/error.hpp"

namespace fedsel {

MaskVector MaskVector::from_layers(std::size_t num_layers,
                                   std::initializer_list<std::size_t> layers) {
  return from_layers(num_layers, std::vector<std::size_t>(layers));
}

MaskVector MaskVector::from_layers(std::size_t num_layers, const std::vector<std::size_t>& layers) {
  MaskVector m(num_layers);
  for (std::size_t l : layers) {
    if (l >= num_layers) throw ShapeError("mask layer index out of range");
    m.set(l);
  }
  return m;
}

std::size_t MaskVector::count() const {
  return std::accumulate(bits_.begin(), bits_.end(), std::size_t{0});
}

std::vector<std::size_t> MaskVector::layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < bits_.size(); ++l)
    if (bits_[l]) out.push_back(l);
  return out;
}

std::size_t MaskVector::hamming(const MaskVector& other) const {
  if (other.size() != size()) throw ShapeError("hamming: mask length mismatch");
  std::size_t d = 0;
  for (std::size_t l = 0; l < bits_.size(); ++l) d += bits_[l] != other.bits_[l];
  return d;
}

std::string MaskVector::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

}  // namespace fedsel
