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

// Identifier corpus -> structured IDs -> decoding prefix tree. Identifiers
// are embedded as hashed character 3-grams, clustered recursively into at
// most k groups per level, and the resulting digit strings become token
// paths of a trie the decoder walks.

#ifndef EGT_TRIE_HPP
#define EGT_TRIE_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egt/common.hpp"

namespace egt {

// Reserved token ids shared by the model vocabulary and the trie alphabet.
inline constexpr uint32_t kPadToken = 0;
inline constexpr uint32_t kBosToken = 1;
inline constexpr uint32_t kEosToken = 2;
inline constexpr uint32_t kUnkToken = 3;
inline constexpr uint32_t kTokenBase = 4;  // digit d maps to token base + d

// Duplicates removed, first occurrence kept, order otherwise preserved.
std::vector<std::string> dedup_corpus(const std::vector<std::string>& items);

// Hashed character 3-gram term frequencies, L2-normalized, one row per item.
// Strings are padded with '<' and '>' before extraction so short strings and
// shared prefixes still produce overlapping grams; a string with no grams at
// all (only the empty string) falls back to a constant row of 1/sqrt(dim).
Matrix embed_corpus(const std::vector<std::string>& items, int dim);

// Cluster digits root-first; the last digit is the within-leaf ordinal.
struct SemanticId {
  std::vector<uint32_t> digits;

  std::vector<uint32_t> tokens() const {
    std::vector<uint32_t> out;
    out.reserve(digits.size());
    for (uint32_t d : digits) out.push_back(kTokenBase + d);
    return out;
  }
};

// Recursive k-means over the embedding rows. Sets of at most c rows become
// ordinals 0.. in row order; larger sets are split by 25-iteration k-means
// (k-means++ seeding, ties to the lower index, empty clusters re-seeded to
// the worst-fit point) with per-cluster capacity ceil(n/k), which caps the
// recursion depth at ceil(log_k(n/c)). Result is aligned with the rows.
std::vector<SemanticId> cluster_ids(const Matrix& embeddings, int k, int c,
                                    uint64_t seed);

inline constexpr uint32_t kNoParent = 0xffffffffu;
inline constexpr int64_t kNoPayload = -1;

struct TrieNode {
  uint32_t token = kBosToken;
  uint32_t parent = kNoParent;
  uint32_t depth = 0;
  int64_t payload = kNoPayload;      // corpus row index at leaves
  std::vector<uint32_t> children;    // node indices, ascending token order
};

struct PrefixTrie {
  // Root at index 0; parents always precede children.
  std::vector<TrieNode> nodes;
  // Derived per node, rebuilt on load: strict descendant count and the
  // number of edges on the longest downward path.
  std::vector<uint32_t> descendants;
  std::vector<uint32_t> max_depth_below;

  const TrieNode& root() const { return nodes[0]; }
  bool is_leaf(uint32_t idx) const { return nodes[idx].children.empty(); }
};

// Paths spell the token sequences of the IDs; payload i marks the leaf of
// ids[i]. Throws std::invalid_argument on duplicate or prefix-nested IDs.
PrefixTrie build_trie(const std::vector<SemanticId>& ids);

// Node reached from the root by consuming `path` tokens, if any.
std::optional<uint32_t> subtree(const PrefixTrie& trie,
                                std::span<const uint32_t> path);

struct TrieStats {
  std::vector<uint32_t> depth_counts;   // nodes per depth, root at 0
  std::vector<double> mean_branching;   // mean out-degree per depth
  uint32_t leaf_count = 0;
};

TrieStats trie_stats(const PrefixTrie& trie);

// One node per line, two spaces of indent per depth, leaves annotated with
// their payload. Stable across runs for golden-file comparison.
std::string debug_dump(const PrefixTrie& trie);

// Binary trie file ("EGTT"); round trips bit-exactly.
std::string serialize_trie(const PrefixTrie& trie);
PrefixTrie parse_trie(std::string bytes, const std::string& context);
void save_trie(const PrefixTrie& trie, const std::string& path);
PrefixTrie load_trie(const std::string& path);

}  // namespace egt

#endif  // EGT_TRIE_HPP
