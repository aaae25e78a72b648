// Copyright 2026 The egt Authors.
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

#ifndef EGT_COMMON_HPP
#define EGT_COMMON_HPP

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace egt {

// Row-major storage keeps per-token rows contiguous and matches the on-disk
// tensor layout (row-major f32).
using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;
using RowVector = Eigen::RowVectorXf;

// Visibility mask for attention: visible(q, k) == true means query row q may
// attend to key row k.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Malformed bytes in a model/compressed/trie file or a corpus/query stream.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal consistency violation; indicates a bug, not bad input.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// 64-bit FNV-1a. Used for content hashing (run manifests) and string->bucket
// hashing; stable across platforms by construction.
inline constexpr uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t state = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    state ^= p[i];
    state *= kFnvPrime;
  }
  return state;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v);

}  // namespace egt

#endif  // EGT_COMMON_HPP
