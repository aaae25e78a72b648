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

#include "egt/trie.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_set>

#include "egt/io.hpp"

namespace egt {

std::vector<std::string> dedup_corpus(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const std::string& s : items)
    if (seen.insert(s).second) out.push_back(s);
  return out;
}

Matrix embed_corpus(const std::vector<std::string>& items, int dim) {
  if (items.empty()) throw std::invalid_argument("embed: empty corpus");
  if (dim < 16) throw std::invalid_argument("embed: dimension must be at least 16");

  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(items.size()), dim);
  const float fallback = 1.0f / std::sqrt(static_cast<float>(dim));
  for (size_t i = 0; i < items.size(); ++i) {
    std::string padded = "<" + items[i] + ">";
    if (padded.size() < 3) {
      out.row(i).setConstant(fallback);
      continue;
    }
    for (size_t j = 0; j + 3 <= padded.size(); ++j) {
      uint64_t h = fnv1a64(padded.data() + j, 3);
      out(i, static_cast<Eigen::Index>(h % dim)) += 1.0f;
    }
    out.row(i) /= out.row(i).norm();
  }
  return out;
}

namespace {

uint64_t child_seed(uint64_t seed, uint32_t digit) {
  return seed ^ (0x9e3779b97f4a7c15ull * (static_cast<uint64_t>(digit) + 1));
}

double sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm();
}

// k-means++ over the subset: first center from the generator, the rest by
// squared-distance-weighted selection.
std::vector<Eigen::VectorXd> seed_centers(
    const std::vector<Eigen::VectorXd>& points, size_t k, std::mt19937_64& rng) {
  std::vector<Eigen::VectorXd> centers;
  centers.reserve(k);
  centers.push_back(points[rng() % points.size()]);

  std::vector<double> dist(points.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
      double d = sq_dist(points[i], centers[0]);
      for (size_t c = 1; c < centers.size(); ++c)
        d = std::min(d, sq_dist(points[i], centers[c]));
      dist[i] = d;
      total += d;
    }
    size_t pick = 0;
    if (total > 0.0) {
      double u = (static_cast<double>(rng()) /
                  static_cast<double>(std::numeric_limits<uint64_t>::max())) *
                 total;
      double acc = 0.0;
      for (size_t i = 0; i < points.size(); ++i) {
        acc += dist[i];
        if (acc >= u) {
          pick = i;
          break;
        }
      }
    } else {
      // All points coincide with a center; take the next index round-robin.
      pick = centers.size() % points.size();
    }
    centers.push_back(points[pick]);
  }
  return centers;
}

// Greedy in-index-order assignment to the nearest center that still has
// capacity. The cap of ceil(n/k) per cluster is what bounds the recursion
// depth of the caller.
std::vector<size_t> assign_capped(const std::vector<Eigen::VectorXd>& points,
                                  const std::vector<Eigen::VectorXd>& centers,
                                  size_t cap) {
  std::vector<size_t> assignment(points.size());
  std::vector<size_t> load(centers.size(), 0);
  for (size_t i = 0; i < points.size(); ++i) {
    size_t best = centers.size();
    double best_d = 0.0;
    for (size_t c = 0; c < centers.size(); ++c) {
      if (load[c] >= cap) continue;
      double d = sq_dist(points[i], centers[c]);
      if (best == centers.size() || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    assignment[i] = best;
    ++load[best];
  }
  return assignment;
}

std::vector<size_t> cluster_once(const std::vector<Eigen::VectorXd>& points,
                                 size_t k, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const size_t cap = (points.size() + k - 1) / k;
  std::vector<Eigen::VectorXd> centers = seed_centers(points, k, rng);
  std::vector<size_t> assignment;

  for (int iter = 0; iter < 25; ++iter) {
    std::vector<size_t> next = assign_capped(points, centers, cap);
    if (next == assignment) break;
    assignment = std::move(next);

    std::vector<Eigen::VectorXd> sums(k, Eigen::VectorXd::Zero(points[0].size()));
    std::vector<size_t> counts(k, 0);
    for (size_t i = 0; i < points.size(); ++i) {
      sums[assignment[i]] += points[i];
      ++counts[assignment[i]];
    }
    std::vector<bool> reseeded(points.size(), false);
    for (size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers[c] = sums[c] / static_cast<double>(counts[c]);
        continue;
      }
      // Re-seed an empty cluster at the point worst served by its center.
      size_t worst = 0;
      double worst_d = -1.0;
      for (size_t i = 0; i < points.size(); ++i) {
        if (reseeded[i]) continue;
        double d = sq_dist(points[i], centers[assignment[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      reseeded[worst] = true;
      centers[c] = points[worst];
    }
  }
  return assignment;
}

void cluster_recurse(const std::vector<Eigen::VectorXd>& points,
                     const std::vector<size_t>& subset, size_t k, size_t c,
                     uint64_t seed, std::vector<SemanticId>& ids) {
  if (subset.size() <= c) {
    for (size_t i = 0; i < subset.size(); ++i)
      ids[subset[i]].digits.push_back(static_cast<uint32_t>(i));
    return;
  }

  std::vector<Eigen::VectorXd> local;
  local.reserve(subset.size());
  for (size_t idx : subset) local.push_back(points[idx]);

  const size_t k_eff = std::min(k, subset.size());
  std::vector<size_t> assignment = cluster_once(local, k_eff, seed);

  for (size_t cluster = 0; cluster < k_eff; ++cluster) {
    std::vector<size_t> members;
    for (size_t i = 0; i < subset.size(); ++i)
      if (assignment[i] == cluster) members.push_back(subset[i]);
    if (members.empty()) continue;
    uint32_t digit = static_cast<uint32_t>(cluster);
    for (size_t idx : members) ids[idx].digits.push_back(digit);
    cluster_recurse(points, members, k, c, child_seed(seed, digit), ids);
  }
}

}  // namespace

std::vector<SemanticId> cluster_ids(const Matrix& embeddings, int k, int c,
                                    uint64_t seed) {
  if (k < 2) throw std::invalid_argument("cluster: k must be at least 2");
  if (c < 1) throw std::invalid_argument("cluster: leaf capacity must be positive");
  if (embeddings.rows() == 0)
    throw std::invalid_argument("cluster: empty embedding matrix");

  std::vector<Eigen::VectorXd> points;
  points.reserve(embeddings.rows());
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
    points.push_back(embeddings.row(r).transpose().cast<double>());

  std::vector<size_t> all(points.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<SemanticId> ids(points.size());
  cluster_recurse(points, all, static_cast<size_t>(k), static_cast<size_t>(c),
                  seed, ids);
  return ids;
}

namespace {

void recompute_derived(PrefixTrie& trie) {
  const size_t n = trie.nodes.size();
  trie.descendants.assign(n, 0);
  trie.max_depth_below.assign(n, 0);
  // Parents precede children, so one reverse sweep settles both.
  for (size_t i = n; i-- > 1;) {
    uint32_t p = trie.nodes[i].parent;
    trie.descendants[p] += trie.descendants[i] + 1;
    trie.max_depth_below[p] =
        std::max(trie.max_depth_below[p], trie.max_depth_below[i] + 1);
  }
}

}  // namespace

PrefixTrie build_trie(const std::vector<SemanticId>& ids) {
  PrefixTrie trie;
  trie.nodes.push_back(TrieNode{});  // root: bos, no parent, depth 0

  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].digits.empty())
      throw std::invalid_argument("trie: empty id at index " + std::to_string(i));
    uint32_t node = 0;
    std::vector<uint32_t> tokens = ids[i].tokens();
    for (size_t d = 0; d < tokens.size(); ++d) {
      if (trie.nodes[node].payload != kNoPayload)
        throw std::invalid_argument("trie: id " + std::to_string(i) +
                                    " extends a completed id");
      uint32_t token = tokens[d];
      auto& children = trie.nodes[node].children;
      auto it = std::lower_bound(
          children.begin(), children.end(), token,
          [&](uint32_t idx, uint32_t t) { return trie.nodes[idx].token < t; });
      if (it != children.end() && trie.nodes[*it].token == token) {
        node = *it;
      } else {
        TrieNode child;
        child.token = token;
        child.parent = node;
        child.depth = trie.nodes[node].depth + 1;
        uint32_t idx = static_cast<uint32_t>(trie.nodes.size());
        children.insert(it, idx);
        trie.nodes.push_back(std::move(child));
        node = idx;
      }
    }
    if (trie.nodes[node].payload != kNoPayload)
      throw std::invalid_argument("trie: duplicate id at index " +
                                  std::to_string(i));
    if (!trie.nodes[node].children.empty())
      throw std::invalid_argument("trie: id " + std::to_string(i) +
                                  " is a prefix of another id");
    trie.nodes[node].payload = static_cast<int64_t>(i);
  }
  recompute_derived(trie);
  return trie;
}

std::optional<uint32_t> subtree(const PrefixTrie& trie,
                                std::span<const uint32_t> path) {
  uint32_t node = 0;
  for (uint32_t token : path) {
    const auto& children = trie.nodes[node].children;
    auto it = std::lower_bound(
        children.begin(), children.end(), token,
        [&](uint32_t idx, uint32_t t) { return trie.nodes[idx].token < t; });
    if (it == children.end() || trie.nodes[*it].token != token)
      return std::nullopt;
    node = *it;
  }
  return node;
}

TrieStats trie_stats(const PrefixTrie& trie) {
  TrieStats stats;
  uint32_t max_depth = 0;
  for (const TrieNode& n : trie.nodes) max_depth = std::max(max_depth, n.depth);
  stats.depth_counts.assign(max_depth + 1, 0);
  std::vector<size_t> degree_sum(max_depth + 1, 0);
  for (const TrieNode& n : trie.nodes) {
    ++stats.depth_counts[n.depth];
    degree_sum[n.depth] += n.children.size();
    if (n.children.empty()) ++stats.leaf_count;
  }
  stats.mean_branching.resize(max_depth + 1);
  for (uint32_t d = 0; d <= max_depth; ++d)
    stats.mean_branching[d] =
        static_cast<double>(degree_sum[d]) / stats.depth_counts[d];
  return stats;
}

namespace {

void dump_node(const PrefixTrie& trie, uint32_t idx, std::ostringstream& os) {
  const TrieNode& n = trie.nodes[idx];
  for (uint32_t i = 0; i < n.depth; ++i) os << "  ";
  os << "token " << n.token;
  if (n.payload != kNoPayload) os << " -> item " << n.payload;
  os << '\n';
  for (uint32_t child : n.children) dump_node(trie, child, os);
}

}  // namespace

std::string debug_dump(const PrefixTrie& trie) {
  std::ostringstream os;
  dump_node(trie, 0, os);
  return os.str();
}

namespace {

constexpr uint32_t kTrieVersion = 1;

}  // namespace

std::string serialize_trie(const PrefixTrie& trie) {
  ByteWriter w;
  w.bytes("EGTT", 4);
  w.u32(kTrieVersion);
  w.u32(static_cast<uint32_t>(trie.nodes.size()));
  for (const TrieNode& n : trie.nodes) {
    w.u32(n.token);
    w.u32(n.parent);
    w.i64(n.payload);
  }
  return w.data();
}

PrefixTrie parse_trie(std::string bytes, const std::string& context) {
  ByteReader r(std::move(bytes), context);
  if (r.raw(4, "magic") != "EGTT") r.fail("bad magic (want EGTT)");
  uint32_t version = r.u32("version");
  if (version != kTrieVersion)
    r.fail("unsupported version " + std::to_string(version));
  uint32_t count = r.u32("node count");
  if (count == 0) r.fail("empty trie");

  PrefixTrie trie;
  trie.nodes.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    TrieNode& n = trie.nodes[i];
    n.token = r.u32("node token");
    n.parent = r.u32("node parent");
    n.payload = r.i64("node payload");
    if (i == 0) {
      if (n.parent != kNoParent) r.fail("root has a parent");
      n.depth = 0;
    } else {
      if (n.parent >= i) r.fail("node parent does not precede it");
      n.depth = trie.nodes[n.parent].depth + 1;
      trie.nodes[n.parent].children.push_back(i);
    }
    if (n.payload < kNoPayload) r.fail("negative payload");
  }
  if (!r.at_end()) r.fail("trailing bytes after node table");

  for (uint32_t i = 0; i < count; ++i) {
    auto& children = trie.nodes[i].children;
    std::sort(children.begin(), children.end(), [&](uint32_t a, uint32_t b) {
      return trie.nodes[a].token < trie.nodes[b].token;
    });
    for (size_t j = 1; j < children.size(); ++j)
      if (trie.nodes[children[j - 1]].token == trie.nodes[children[j]].token)
        r.fail("duplicate child token under node " + std::to_string(i));
    if (!children.empty() && trie.nodes[i].payload != kNoPayload)
      r.fail("internal node " + std::to_string(i) + " carries a payload");
    if (children.empty() && i > 0 && trie.nodes[i].payload == kNoPayload)
      r.fail("leaf node " + std::to_string(i) + " lacks a payload");
  }
  recompute_derived(trie);
  return trie;
}

void save_trie(const PrefixTrie& trie, const std::string& path) {
  write_file(path, serialize_trie(trie));
}

PrefixTrie load_trie(const std::string& path) {
  return parse_trie(read_file(path), path);
}

}  // namespace egt
