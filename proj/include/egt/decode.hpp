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

// Trie-constrained beam decoding with a switch to one-pass parallel
// verification: once the predicted cost of scoring the whole remaining
// subtree in a single masked forward drops below the cost of stepping to the
// deepest leaf, the subtree is flattened depth-first and verified at once.
//
// Scoring convention: at every expansion the logits are restricted to the
// trie-legal children and renormalized, in the stepwise path and in the
// parallel path alike, so a sequence's score does not depend on where the
// switch happens.

#ifndef EGT_DECODE_HPP
#define EGT_DECODE_HPP

#include <cstdint>
#include <vector>

#include "egt/common.hpp"
#include "egt/model.hpp"
#include "egt/trie.hpp"

namespace egt {

struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens; a root-to-node trie path
  double log_prob = 0.0;    // cumulative renormalized log-probability
  uint32_t node = 0;        // trie node the path ends at
};

struct DecodeSession {
  std::vector<int> prompt;
  std::vector<BeamHypothesis> beams;  // ranked best-first after every step
  int steps = 0;
  int forward_passes = 0;
  int trigger_step = -1;      // step index the verification fired at, or -1
  size_t flattened_nodes = 0; // nodes scored by the verification pass
};

DecodeSession make_session(std::vector<int> prompt);

// Latency model in seconds; verification cost is linear in the node count.
struct CostModel {
  double t_step = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  double verify_cost(size_t nodes) const {
    return alpha * static_cast<double>(nodes) + beta;
  }
};

// Online estimator: step latency as an exponential moving average (decay
// 0.9, seeded by the first observation), verification latency as a
// least-squares line over the last 32 (nodes, seconds) pairs.
class CostModelEstimator {
 public:
  explicit CostModelEstimator(CostModel initial = {}) : model_(initial) {}

  void observe_step(double seconds);
  void observe_verify(size_t nodes, double seconds);
  const CostModel& model() const { return model_; }

 private:
  CostModel model_;
  bool seeded_ = false;
  std::vector<std::pair<double, double>> window_;  // (nodes, seconds)
};

// One beam-search step under trie constraints: a single batched forward
// scores every unfinished beam, each beam's logits are renormalized over its
// node's children, and the global top beam_size candidates survive (ties to
// the lower beam index, then the lower token id). Beams already at a leaf
// ride along with their committed score; stepping a session whose beams are
// all finished is an error.
void constrained_step(const ToyTransformer& model, DecodeSession& session,
                      const PrefixTrie& trie, int beam_size);

struct TriggerEstimate {
  bool trigger = false;
  double predicted_saving = 0.0;  // seconds
};

// saving = t_step * L_rem - verify_cost(n) with L_rem the deepest leaf below
// any beam and n the total node count of the remaining subtrees. Fires on
// positive saving unless n exceeds node_cap (then deferred: subtrees only
// shrink with depth).
TriggerEstimate estimate_trigger(const CostModel& cost,
                                 const DecodeSession& session,
                                 const PrefixTrie& trie,
                                 size_t node_cap = 4096);

struct FlatNode {
  uint32_t token = 0;
  int32_t parent = -1;   // flat index; -1 for children of a beam's node
  uint32_t depth = 0;    // beam-root children at depth 0
  uint32_t trie_node = 0;
  uint32_t beam = 0;
};

// Strict descendants of every unfinished beam's node, beam by beam, each
// subtree in DFS order with children visited in ascending token order.
struct FlattenedSubtree {
  std::vector<FlatNode> nodes;
};

FlattenedSubtree flatten_subtree(const DecodeSession& session,
                                 const PrefixTrie& trie);

// Model input covering every beam's committed tokens plus the flattened
// nodes. Committed blocks are left-padded to equal width so each block's
// last row is its beam's newest token; pad rows see nothing and are seen by
// nothing. A flattened node sees its beam's committed tokens, its ancestors
// and itself.
struct TreeMask {
  Mask visibility;             // [rows x rows]
  std::vector<int> tokens;     // one model token per row
  std::vector<int> positions;  // per-beam position indices
  uint32_t beam_count = 0;
  uint32_t padded_len = 0;               // committed block width
  std::vector<uint32_t> committed_len;   // per beam: prompt + generated
  size_t flat_offset = 0;                // row of the first flattened node
};

TreeMask build_tree_mask(const FlattenedSubtree& flattened,
                         const DecodeSession& session);

// Pure score recursion: a node's score is its parent's score plus the
// parent's (renormalized) log-probability of the node's token; children of a
// beam's node seed from the beam's committed score and its last position's
// row. Rows for leaves are never read and may be empty.
std::vector<double> accumulate_bscores(
    const FlattenedSubtree& flattened,
    const std::vector<double>& beam_log_probs,
    const std::vector<RowVector>& beam_seed_rows,
    const std::vector<RowVector>& node_rows);

struct VerifiedLeaf {
  std::vector<int> tokens;  // full generated sequence, a root-to-leaf path
  double score = 0.0;
  int64_t payload = kNoPayload;
  uint32_t beam = 0;
};

struct VerificationResult {
  std::vector<RowVector> node_rows;  // per flattened node; empty at leaves
  std::vector<double> node_scores;   // cumulative log-probability per node
  std::vector<VerifiedLeaf> selected;
};

// Scores the whole flattened subtree in one masked forward, ranks every
// reachable leaf (and every already-finished beam) by cumulative score and
// returns the top beam_size with traced-back token sequences.
VerificationResult verify_parallel(const ToyTransformer& model,
                                   DecodeSession& session,
                                   const PrefixTrie& trie,
                                   const FlattenedSubtree& flattened,
                                   const TreeMask& mask, int beam_size);

enum class DecodeMode {
  kAutoregressive,     // constrained steps all the way to the leaves
  kPtpv,               // step until the cost model triggers, verify once
  kPtpvForcedAtDepth,  // verify unconditionally once steps reach a depth
};

struct DecodeOptions {
  int beam_size = 4;
  DecodeMode mode = DecodeMode::kPtpv;
  int forced_depth = 0;       // kPtpvForcedAtDepth only
  CostModel cost_model;       // kPtpv only; frozen for the whole decode
  size_t node_cap = 4096;
};

struct DecodedSequence {
  std::vector<int> tokens;
  double score = 0.0;
  int64_t payload = kNoPayload;
};

struct DecodeStats {
  int steps = 0;
  int forward_passes = 0;
  int trigger_step = -1;
  size_t flattened_nodes = 0;
};

struct DecodeResult {
  std::vector<DecodedSequence> sequences;  // best first
  DecodeStats stats;
};

DecodeResult decode(const ToyTransformer& model, const PrefixTrie& trie,
                    std::vector<int> prompt, const DecodeOptions& options);

}  // namespace egt

#endif  // EGT_DECODE_HPP
