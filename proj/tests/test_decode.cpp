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

#include "egt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "egt/model.hpp"
#include "egt/trie.hpp"

using namespace egt;

namespace {

ModelConfig decode_config() {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_positions = 32;
  cfg.seed = 11;
  return cfg;
}

// ids 01, 02, 10: two depth-2 paths under one branch, one under another.
PrefixTrie two_level_trie() {
  return build_trie({SemanticId{{0, 1}}, SemanticId{{0, 2}}, SemanticId{{1, 0}}});
}

// Leaf depths 1, 2, 2 and 3: forces finished beams to ride along.
PrefixTrie uneven_trie() {
  return build_trie({SemanticId{{0}}, SemanticId{{1, 0}}, SemanticId{{1, 1}},
                     SemanticId{{1, 2, 3}}});
}

std::vector<std::string> random_words(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(3, 10);
  std::uniform_int_distribution<int> ch('a', 'z');
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < n) {
    std::string w;
    int l = len(rng);
    for (int i = 0; i < l; ++i) w.push_back(static_cast<char>(ch(rng)));
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

PrefixTrie corpus_trie(int n_words, int k, int c, uint64_t seed) {
  Matrix emb = embed_corpus(random_words(n_words, seed), 32);
  return build_trie(cluster_ids(emb, k, c, seed));
}

// Double-precision log-softmax restricted to the node's children, evaluated
// from scratch so the library's renormalization has an independent witness.
double renorm_lp(const RowVector& logits, const PrefixTrie& trie,
                 uint32_t node, uint32_t token) {
  double mx = -std::numeric_limits<double>::infinity();
  for (uint32_t c : trie.nodes[node].children)
    mx = std::max(mx, static_cast<double>(logits(trie.nodes[c].token)));
  double z = 0.0;
  for (uint32_t c : trie.nodes[node].children)
    z += std::exp(static_cast<double>(logits(trie.nodes[c].token)) - mx);
  return static_cast<double>(logits(token)) - mx - std::log(z);
}

// Sequential score of appending `path` to a beam: one plain causal forward
// per generated token, each renormalized over the node's children.
double sequential_path_score(const ToyTransformer& model,
                             const PrefixTrie& trie,
                             const std::vector<int>& prompt,
                             const BeamHypothesis& beam,
                             const std::vector<int>& path) {
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), beam.tokens.begin(), beam.tokens.end());
  double lp = beam.log_prob;
  uint32_t node = beam.node;
  for (int tok : path) {
    Matrix logits = forward_causal(model, seq);
    lp += renorm_lp(logits.row(logits.rows() - 1), trie, node,
                    static_cast<uint32_t>(tok));
    seq.push_back(tok);
    uint32_t moved = 0;
    bool found = false;
    for (uint32_t c : trie.nodes[node].children)
      if (trie.nodes[c].token == static_cast<uint32_t>(tok)) {
        moved = c;
        found = true;
        break;
      }
    REQUIRE(found);
    node = moved;
  }
  return lp;
}

void paths_below(const PrefixTrie& trie, uint32_t node, std::vector<int>& cur,
                 std::vector<std::vector<int>>& out) {
  if (trie.is_leaf(node)) {
    out.push_back(cur);
    return;
  }
  for (uint32_t c : trie.nodes[node].children) {
    cur.push_back(static_cast<int>(trie.nodes[c].token));
    paths_below(trie, c, cur, out);
    cur.pop_back();
  }
}

struct OracleCandidate {
  double score = 0.0;
  size_t beam = 0;
  int64_t order = -1;  // -1 for finished beams, then beam-major DFS order
  std::vector<int> tokens;
  int64_t payload = kNoPayload;
};

// Exhaustive reference for one verification: every finished beam as-is plus
// every root-to-leaf continuation scored by sequential forwards.
std::vector<OracleCandidate> oracle_ranking(const ToyTransformer& model,
                                            const PrefixTrie& trie,
                                            const DecodeSession& session) {
  std::vector<OracleCandidate> cands;
  int64_t order = 0;
  for (size_t b = 0; b < session.beams.size(); ++b) {
    const BeamHypothesis& beam = session.beams[b];
    if (trie.is_leaf(beam.node)) {
      cands.push_back({beam.log_prob, b, -1, beam.tokens,
                       trie.nodes[beam.node].payload});
      continue;
    }
    std::vector<std::vector<int>> paths;
    std::vector<int> cur;
    paths_below(trie, beam.node, cur, paths);
    for (const auto& path : paths) {
      OracleCandidate cand;
      cand.score = sequential_path_score(model, trie, session.prompt, beam, path);
      cand.beam = b;
      cand.order = order++;
      cand.tokens = beam.tokens;
      cand.tokens.insert(cand.tokens.end(), path.begin(), path.end());
      std::vector<uint32_t> full(cand.tokens.begin(), cand.tokens.end());
      auto leaf = subtree(trie, full);
      REQUIRE(leaf.has_value());
      cand.payload = trie.nodes[*leaf].payload;
      cands.push_back(std::move(cand));
    }
  }
  std::sort(cands.begin(), cands.end(),
            [](const OracleCandidate& a, const OracleCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.beam != b.beam) return a.beam < b.beam;
              return a.order < b.order;
            });
  return cands;
}

// Library selection vs oracle: same sequence set, matching scores, and the
// same rank order whenever the oracle scores are clearly separated.
void check_against_oracle(const std::vector<VerifiedLeaf>& selected,
                          const std::vector<OracleCandidate>& oracle,
                          int beam_size) {
  size_t keep = std::min<size_t>(beam_size, oracle.size());
  REQUIRE(selected.size() == keep);
  std::map<std::vector<int>, double> want_score;
  std::map<std::vector<int>, int64_t> want_payload;
  for (size_t j = 0; j < keep; ++j) {
    want_score[oracle[j].tokens] = oracle[j].score;
    want_payload[oracle[j].tokens] = oracle[j].payload;
  }
  for (const VerifiedLeaf& leaf : selected) {
    REQUIRE(want_score.count(leaf.tokens) == 1);
    CHECK(std::abs(leaf.score - want_score[leaf.tokens]) <= 1e-4);
    CHECK(leaf.payload == want_payload[leaf.tokens]);
  }
  bool separated = true;
  for (size_t j = 0; j + 1 < oracle.size(); ++j)
    if (oracle[j].score - oracle[j + 1].score <= 1e-3) separated = false;
  if (separated)
    for (size_t j = 0; j < keep; ++j) CHECK(selected[j].tokens == oracle[j].tokens);
}

bool walk_matches(const PrefixTrie& trie, const BeamHypothesis& beam) {
  std::vector<uint32_t> path(beam.tokens.begin(), beam.tokens.end());
  auto node = subtree(trie, path);
  return node.has_value() && *node == beam.node;
}

}  // namespace

TEST_CASE("decode: session starts at the trie root") {
  DecodeSession s = make_session({1, 5});
  CHECK(s.prompt == std::vector<int>{1, 5});
  REQUIRE(s.beams.size() == 1);
  CHECK(s.beams[0].node == 0);
  CHECK(s.beams[0].tokens.empty());
  CHECK(s.beams[0].log_prob == 0.0);
  CHECK(s.steps == 0);
  CHECK(s.forward_passes == 0);
  CHECK(s.trigger_step == -1);
  CHECK_THROWS_WITH_AS(make_session({}), doctest::Contains("empty prompt"),
                       std::invalid_argument);
}

TEST_CASE("decode: one constrained step matches a plain causal forward") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = two_level_trie();
  std::vector<int> prompt{static_cast<int>(kBosToken)};

  DecodeSession s = make_session(prompt);
  constrained_step(model, s, trie, 2);
  CHECK(s.steps == 1);
  CHECK(s.forward_passes == 1);
  REQUIRE(s.beams.size() == 2);

  Matrix logits = forward_causal(model, prompt);
  RowVector last = logits.row(logits.rows() - 1);
  double lp4 = renorm_lp(last, trie, 0, 4);
  double lp5 = renorm_lp(last, trie, 0, 5);
  // Only two root children exist, so both survive, best first.
  double hi = std::max(lp4, lp5), lo = std::min(lp4, lp5);
  CHECK(std::abs(s.beams[0].log_prob - hi) <= 1e-5);
  CHECK(std::abs(s.beams[1].log_prob - lo) <= 1e-5);
  int hi_tok = lp4 >= lp5 ? 4 : 5;
  int lo_tok = lp4 >= lp5 ? 5 : 4;
  CHECK(s.beams[0].tokens == std::vector<int>{hi_tok});
  CHECK(s.beams[1].tokens == std::vector<int>{lo_tok});
  CHECK(walk_matches(trie, s.beams[0]));
  CHECK(walk_matches(trie, s.beams[1]));
  // log-probabilities of proper renormalized distributions never go positive
  CHECK(s.beams[0].log_prob <= 0.0);
}

TEST_CASE("decode: batched stepping equals per-beam sequential scoring") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = two_level_trie();
  DecodeSession s = make_session({static_cast<int>(kBosToken)});
  constrained_step(model, s, trie, 2);
  constrained_step(model, s, trie, 2);
  CHECK(s.forward_passes == 2);

  // Rebuild every surviving beam's score with one forward per token.
  for (const BeamHypothesis& beam : s.beams) {
    BeamHypothesis root;
    double want = sequential_path_score(model, trie, s.prompt, root, beam.tokens);
    CHECK(std::abs(beam.log_prob - want) <= 1e-4);
    CHECK(walk_matches(trie, beam));
  }
}

TEST_CASE("decode: finished beams ride along and stepping all-finished throws") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = uneven_trie();
  DecodeSession s = make_session({static_cast<int>(kBosToken)});

  constrained_step(model, s, trie, 4);
  REQUIRE(s.beams.size() == 2);
  // One beam sits at the depth-1 leaf already.
  int finished = -1;
  for (size_t i = 0; i < s.beams.size(); ++i)
    if (trie.is_leaf(s.beams[i].node)) finished = static_cast<int>(i);
  REQUIRE(finished >= 0);
  double frozen = s.beams[finished].log_prob;
  std::vector<int> frozen_tokens = s.beams[finished].tokens;

  constrained_step(model, s, trie, 4);
  bool carried = false;
  for (const BeamHypothesis& b : s.beams)
    if (b.tokens == frozen_tokens) {
      carried = true;
      CHECK(b.log_prob == frozen);
    }
  CHECK(carried);

  // Run to completion, then the step precondition bites.
  DecodeOptions plain;
  plain.beam_size = 4;
  plain.mode = DecodeMode::kAutoregressive;
  DecodeResult done = decode(model, trie, {static_cast<int>(kBosToken)}, plain);
  CHECK(done.sequences.size() == 4);
  DecodeSession all_done = make_session({static_cast<int>(kBosToken)});
  while (true) {
    bool finished_all = true;
    for (const BeamHypothesis& b : all_done.beams)
      if (!trie.is_leaf(b.node)) finished_all = false;
    if (finished_all) break;
    constrained_step(model, all_done, trie, 4);
  }
  CHECK_THROWS_WITH_AS(constrained_step(model, all_done, trie, 4),
                       doctest::Contains("every beam is finished"),
                       std::invalid_argument);
}

TEST_CASE("decode: step validation") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = two_level_trie();
  DecodeSession s = make_session({1});
  CHECK_THROWS_WITH_AS(constrained_step(model, s, trie, 0),
                       doctest::Contains("beam_size"), std::invalid_argument);
  DecodeSession empty;
  empty.prompt = {1};
  CHECK_THROWS_WITH_AS(constrained_step(model, empty, trie, 2),
                       doctest::Contains("no beams"), std::invalid_argument);
  DecodeSession bad = make_session({1});
  bad.beams[0].node = 99;
  CHECK_THROWS_WITH_AS(constrained_step(model, bad, trie, 2),
                       doctest::Contains("outside the trie"),
                       std::invalid_argument);
}

TEST_CASE("decode: stepping never leaves the trie") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = corpus_trie(40, 4, 3, 77);
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> tok(0, 15);
  std::uniform_int_distribution<int> plen(1, 3);

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> prompt;
    int l = plen(rng);
    for (int i = 0; i < l; ++i) prompt.push_back(tok(rng));
    DecodeSession s = make_session(prompt);
    while (true) {
      bool finished_all = true;
      for (const BeamHypothesis& b : s.beams)
        if (!trie.is_leaf(b.node)) finished_all = false;
      if (finished_all) break;
      constrained_step(model, s, trie, 3);
      for (const BeamHypothesis& b : s.beams) {
        REQUIRE(walk_matches(trie, b));
        REQUIRE(b.log_prob <= 0.0);
      }
    }
    // Every survivor's score is reproducible with sequential forwards.
    for (const BeamHypothesis& b : s.beams) {
      BeamHypothesis root;
      double want = sequential_path_score(model, trie, prompt, root, b.tokens);
      REQUIRE(std::abs(b.log_prob - want) <= 1e-4);
    }
  }
}

TEST_CASE("decode: trigger estimate prices steps against one verification") {
  PrefixTrie trie = two_level_trie();
  DecodeSession s = make_session({1});
  CostModel cost{.t_step = 10e-3, .alpha = 0.1e-3, .beta = 2e-3};
  CHECK(cost.verify_cost(50) == doctest::Approx(7e-3));

  // Root: 5 descendants, deepest leaf 2 below.
  TriggerEstimate est = estimate_trigger(cost, s, trie);
  CHECK(est.predicted_saving ==
        doctest::Approx(10e-3 * 2 - (0.1e-3 * 5 + 2e-3)));
  CHECK(est.trigger);

  CostModel slow_verify{.t_step = 1e-3, .alpha = 50e-3, .beta = 2e-3};
  CHECK_FALSE(estimate_trigger(slow_verify, s, trie).trigger);

  // Positive saving but too many nodes: deferred.
  TriggerEstimate capped = estimate_trigger(cost, s, trie, 4);
  CHECK(capped.predicted_saving > 0.0);
  CHECK_FALSE(capped.trigger);
  CHECK(estimate_trigger(cost, s, trie, 5).trigger);

  // All beams finished: nothing to gain.
  DecodeSession at_leaf = make_session({1});
  at_leaf.beams[0].node = 2;
  CHECK_FALSE(estimate_trigger(cost, at_leaf, trie).trigger);
}

TEST_CASE("decode: flatten is beam-major depth-first in token order") {
  PrefixTrie trie = two_level_trie();
  DecodeSession s = make_session({1});
  FlattenedSubtree flat = flatten_subtree(s, trie);
  REQUIRE(flat.nodes.size() == 5);

  auto node = [&](size_t i) { return flat.nodes[i]; };
  CHECK(node(0).token == 4);
  CHECK(node(0).parent == -1);
  CHECK(node(0).depth == 0);
  CHECK(node(1).token == 5);
  CHECK(node(1).parent == 0);
  CHECK(node(1).depth == 1);
  CHECK(node(2).token == 6);
  CHECK(node(2).parent == 0);
  CHECK(node(3).token == 5);
  CHECK(node(3).parent == -1);
  CHECK(node(4).token == 4);
  CHECK(node(4).parent == 3);
  for (const FlatNode& fn : flat.nodes) CHECK(fn.beam == 0);
  // trie references: parents always precede children and match the walk
  CHECK(node(0).trie_node == 1);
  CHECK(node(4).trie_node == 5);

  // Two beams parked one level down: blocks in beam order.
  DecodeSession stepped = make_session({1});
  stepped.beams.clear();
  stepped.beams.push_back({{4}, -0.5, 1});
  stepped.beams.push_back({{5}, -0.9, 4});
  FlattenedSubtree flat2 = flatten_subtree(stepped, trie);
  REQUIRE(flat2.nodes.size() == 3);
  CHECK(flat2.nodes[0].beam == 0);
  CHECK(flat2.nodes[0].token == 5);
  CHECK(flat2.nodes[1].beam == 0);
  CHECK(flat2.nodes[1].token == 6);
  CHECK(flat2.nodes[2].beam == 1);
  CHECK(flat2.nodes[2].token == 4);
  CHECK(flat2.nodes[2].parent == -1);

  DecodeSession leaf_only = make_session({1});
  leaf_only.beams[0].node = 2;
  CHECK_THROWS_WITH_AS(flatten_subtree(leaf_only, trie),
                       doctest::Contains("nothing to verify"),
                       std::invalid_argument);
}

TEST_CASE("decode: tree mask wires ancestry and hides padding") {
  PrefixTrie trie = uneven_trie();
  DecodeSession s = make_session({1, 5});
  s.beams.clear();
  s.beams.push_back({{4}, -0.2, 1});        // finished, committed length 3
  s.beams.push_back({{5, 6}, -0.7, 5});     // at the depth-2 branch, length 4
  FlattenedSubtree flat = flatten_subtree(s, trie);
  REQUIRE(flat.nodes.size() == 1);  // single continuation token below beam 1
  CHECK(flat.nodes[0].beam == 1);
  CHECK(flat.nodes[0].token == 7);

  TreeMask mask = build_tree_mask(flat, s);
  CHECK(mask.beam_count == 2);
  CHECK(mask.padded_len == 4);
  CHECK(mask.committed_len == std::vector<uint32_t>{3, 4});
  CHECK(mask.flat_offset == 8);
  REQUIRE(mask.tokens.size() == 9);
  REQUIRE(mask.visibility.rows() == 9);

  // Beam 0 is left-padded by one slot.
  CHECK(mask.tokens[0] == static_cast<int>(kPadToken));
  CHECK(mask.positions[0] == 0);
  CHECK((mask.tokens[1] == 1 && mask.tokens[2] == 5 && mask.tokens[3] == 4));
  CHECK((mask.positions[1] == 0 && mask.positions[2] == 1 && mask.positions[3] == 2));
  // Beam 1 fills its block; the flattened node sits last.
  CHECK((mask.tokens[4] == 1 && mask.tokens[5] == 5 && mask.tokens[6] == 5 &&
         mask.tokens[7] == 6));
  CHECK(mask.tokens[8] == 7);
  CHECK(mask.positions[8] == 4);  // committed length 4, depth 0

  // Pad row 0 sees nothing and nothing sees it.
  for (int c = 0; c < 9; ++c) CHECK(mask.visibility(0, c) == 0.0f);
  for (int r = 0; r < 9; ++r) CHECK(mask.visibility(r, 0) == 0.0f);
  // Committed rows are causal within their own block only.
  for (int r = 1; r <= 3; ++r)
    for (int c = 0; c < 9; ++c)
      CHECK(mask.visibility(r, c) == ((c >= 1 && c <= r) ? 1.0f : 0.0f));
  for (int r = 4; r <= 7; ++r)
    for (int c = 0; c < 9; ++c)
      CHECK(mask.visibility(r, c) == ((c >= 4 && c <= r) ? 1.0f : 0.0f));
  // The flattened node sees its beam's committed tokens and itself.
  for (int c = 0; c < 9; ++c)
    CHECK(mask.visibility(8, c) == ((c >= 4 && c <= 8) ? 1.0f : 0.0f));
}

TEST_CASE("decode: score recursion multiplies conditional probabilities") {
  FlattenedSubtree flat;
  flat.nodes.push_back({4, -1, 0, 1, 0});
  flat.nodes.push_back({5, 0, 1, 2, 0});

  RowVector seed = RowVector::Constant(8, -100.0f);
  seed(4) = std::log(0.5f);
  RowVector inner = RowVector::Constant(8, -100.0f);
  inner(5) = std::log(0.4f);
  std::vector<RowVector> node_rows{inner, RowVector()};

  std::vector<double> scores =
      accumulate_bscores(flat, {0.0}, {seed}, node_rows);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0] == doctest::Approx(std::log(0.5)).epsilon(1e-6));
  CHECK(scores[1] == doctest::Approx(std::log(0.2)).epsilon(1e-6));

  // A committed prefix shifts every descendant by the same amount.
  std::vector<double> shifted =
      accumulate_bscores(flat, {-1.25}, {seed}, node_rows);
  CHECK(shifted[0] == doctest::Approx(std::log(0.5) - 1.25).epsilon(1e-6));
  CHECK(shifted[1] == doctest::Approx(std::log(0.2) - 1.25).epsilon(1e-6));

  CHECK_THROWS_WITH_AS(accumulate_bscores(flat, {0.0, 0.0}, {seed}, node_rows),
                       doctest::Contains("disagree"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(accumulate_bscores(flat, {0.0}, {seed}, {}),
                       doctest::Contains("disagree"), std::invalid_argument);
}

TEST_CASE("decode: one-pass verification equals sequential scoring") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = corpus_trie(40, 4, 3, 501);
  std::vector<int> prompt{static_cast<int>(kBosToken)};

  for (int depth = 0; depth <= 2; ++depth) {
    CAPTURE(depth);
    DecodeSession s = make_session(prompt);
    for (int d = 0; d < depth; ++d) constrained_step(model, s, trie, 4);
    bool any_active = false;
    for (const BeamHypothesis& b : s.beams)
      if (!trie.is_leaf(b.node)) any_active = true;
    REQUIRE(any_active);

    FlattenedSubtree flat = flatten_subtree(s, trie);
    TreeMask mask = build_tree_mask(flat, s);
    int passes_before = s.forward_passes;
    VerificationResult vr = verify_parallel(model, s, trie, flat, mask, 4);
    CHECK(s.forward_passes == passes_before + 1);
    CHECK(s.flattened_nodes == flat.nodes.size());

    std::vector<OracleCandidate> oracle = oracle_ranking(model, trie, s);
    check_against_oracle(vr.selected, oracle, 4);
  }
}

TEST_CASE("decode: verification ranks finished beams with open paths") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = uneven_trie();
  std::vector<int> prompt{static_cast<int>(kBosToken)};

  DecodeSession s = make_session(prompt);
  constrained_step(model, s, trie, 4);
  constrained_step(model, s, trie, 4);
  // Three beams are parked on leaves now; one still has a continuation.
  int open = 0;
  for (const BeamHypothesis& b : s.beams)
    if (!trie.is_leaf(b.node)) ++open;
  REQUIRE(open == 1);

  FlattenedSubtree flat = flatten_subtree(s, trie);
  TreeMask mask = build_tree_mask(flat, s);
  VerificationResult vr = verify_parallel(model, s, trie, flat, mask, 4);
  REQUIRE(vr.selected.size() == 4);
  std::vector<OracleCandidate> oracle = oracle_ranking(model, trie, s);
  check_against_oracle(vr.selected, oracle, 4);
  // All four ids of this trie are accounted for.
  std::set<int64_t> payloads;
  for (const VerifiedLeaf& leaf : vr.selected) payloads.insert(leaf.payload);
  CHECK(payloads == std::set<int64_t>{0, 1, 2, 3});
}

TEST_CASE("decode: verification validation") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = two_level_trie();
  DecodeSession s = make_session({1});
  FlattenedSubtree flat = flatten_subtree(s, trie);
  TreeMask mask = build_tree_mask(flat, s);

  CHECK_THROWS_WITH_AS(verify_parallel(model, s, trie, flat, mask, 0),
                       doctest::Contains("beam_size"), std::invalid_argument);
  TreeMask wrong = mask;
  wrong.tokens.push_back(0);
  CHECK_THROWS_WITH_AS(verify_parallel(model, s, trie, flat, wrong, 2),
                       doctest::Contains("does not match"),
                       std::invalid_argument);
  FlattenedSubtree empty;
  CHECK_THROWS_WITH_AS(verify_parallel(model, s, trie, empty, mask, 2),
                       doctest::Contains("empty flattened"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(build_tree_mask(empty, s),
                       doctest::Contains("empty flattened"),
                       std::invalid_argument);
}

TEST_CASE("decode: immediate verification needs exactly one forward pass") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = corpus_trie(30, 4, 3, 91);
  DecodeOptions opt;
  opt.beam_size = 4;
  opt.mode = DecodeMode::kPtpvForcedAtDepth;
  opt.forced_depth = 0;

  DecodeResult r = decode(model, trie, {static_cast<int>(kBosToken)}, opt);
  CHECK(r.stats.forward_passes == 1);
  CHECK(r.stats.steps == 0);
  CHECK(r.stats.trigger_step == 0);
  CHECK(r.stats.flattened_nodes == trie.descendants[0]);
  CHECK(r.sequences.size() == 4);
  for (size_t j = 1; j < r.sequences.size(); ++j)
    CHECK(r.sequences[j - 1].score >= r.sequences[j].score);
}

TEST_CASE("decode: the switch point does not change the answer") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = corpus_trie(40, 4, 3, 8811);
  std::vector<int> prompt{static_cast<int>(kBosToken)};
  TrieStats stats = trie_stats(trie);
  int big_beam = 64;
  REQUIRE(stats.leaf_count <= 64);

  DecodeOptions full;
  full.beam_size = big_beam;
  full.mode = DecodeMode::kAutoregressive;
  DecodeResult exhaustive = decode(model, trie, prompt, full);
  CHECK(exhaustive.sequences.size() == stats.leaf_count);
  CHECK(exhaustive.stats.trigger_step == -1);
  CHECK(exhaustive.stats.flattened_nodes == 0);

  for (int d : {0, 1}) {
    CAPTURE(d);
    DecodeOptions forced;
    forced.beam_size = big_beam;
    forced.mode = DecodeMode::kPtpvForcedAtDepth;
    forced.forced_depth = d;
    DecodeResult r = decode(model, trie, prompt, forced);
    REQUIRE(r.sequences.size() == exhaustive.sequences.size());
    std::map<std::vector<int>, double> want;
    for (const DecodedSequence& seq : exhaustive.sequences)
      want[seq.tokens] = seq.score;
    for (const DecodedSequence& seq : r.sequences) {
      REQUIRE(want.count(seq.tokens) == 1);
      CHECK(std::abs(seq.score - want[seq.tokens]) <= 1e-4);
    }
    // With clear separation the full ranking agrees, not just the set.
    bool separated = true;
    for (size_t j = 1; j < exhaustive.sequences.size(); ++j)
      if (exhaustive.sequences[j - 1].score - exhaustive.sequences[j].score <=
          1e-3)
        separated = false;
    if (separated)
      for (size_t j = 0; j < r.sequences.size(); ++j)
        CHECK(r.sequences[j].tokens == exhaustive.sequences[j].tokens);
  }
}

TEST_CASE("decode: cost model gates the verification") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = corpus_trie(35, 4, 3, 4242);
  std::vector<int> prompt{static_cast<int>(kBosToken)};

  DecodeOptions never;
  never.beam_size = 4;
  never.mode = DecodeMode::kPtpv;
  never.cost_model = CostModel{};  // zero step time never pays for a verify
  DecodeResult slow = decode(model, trie, prompt, never);
  CHECK(slow.stats.trigger_step == -1);

  DecodeOptions always;
  always.beam_size = 4;
  always.mode = DecodeMode::kPtpv;
  always.cost_model = CostModel{.t_step = 1.0, .alpha = 1e-6, .beta = 1e-6};
  DecodeResult fast = decode(model, trie, prompt, always);
  CHECK(fast.stats.trigger_step == 0);
  CHECK(fast.stats.forward_passes == 1);
  CHECK(fast.stats.forward_passes <= slow.stats.forward_passes);

  DecodeOptions auto_matches_manual = never;
  auto_matches_manual.mode = DecodeMode::kAutoregressive;
  DecodeResult plain = decode(model, trie, prompt, auto_matches_manual);
  CHECK(slow.stats.forward_passes == plain.stats.forward_passes);
  REQUIRE(slow.sequences.size() == plain.sequences.size());
  for (size_t j = 0; j < plain.sequences.size(); ++j) {
    CHECK(slow.sequences[j].tokens == plain.sequences[j].tokens);
    CHECK(slow.sequences[j].score == plain.sequences[j].score);
  }

  // A node cap below the root subtree defers the switch by one step.
  DecodeOptions capped = always;
  capped.node_cap = trie.descendants[0] - 1;
  DecodeResult deferred = decode(model, trie, prompt, capped);
  CHECK(deferred.stats.trigger_step == 1);
  CHECK(deferred.stats.forward_passes == 2);
}

TEST_CASE("decode: replaying the estimator reproduces the trigger step") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = corpus_trie(40, 4, 3, 31);
  std::vector<int> prompt{static_cast<int>(kBosToken)};
  CostModel cost{.t_step = 2e-3, .alpha = 0.05e-3, .beta = 1e-3};

  DecodeOptions opt;
  opt.beam_size = 4;
  opt.mode = DecodeMode::kPtpv;
  opt.cost_model = cost;
  DecodeResult r = decode(model, trie, prompt, opt);

  DecodeSession replay = make_session(prompt);
  int fired_at = -1;
  while (true) {
    bool finished_all = true;
    for (const BeamHypothesis& b : replay.beams)
      if (!trie.is_leaf(b.node)) finished_all = false;
    if (finished_all) break;
    if (estimate_trigger(cost, replay, trie, opt.node_cap).trigger) {
      fired_at = replay.steps;
      break;
    }
    constrained_step(model, replay, trie, opt.beam_size);
  }
  CHECK(r.stats.trigger_step == fired_at);
}

TEST_CASE("decode: fewer forward passes than stepping to the deepest leaf") {
  ToyTransformer model = init_model(decode_config());
  std::mt19937_64 rng(999);
  for (int trial = 0; trial < 12; ++trial) {
    CAPTURE(trial);
    PrefixTrie trie = corpus_trie(10 + 3 * trial, 3 + trial % 3, 2 + trial % 2,
                                  1000 + trial);
    std::vector<int> prompt{static_cast<int>(kBosToken),
                            static_cast<int>(4 + rng() % 8)};
    DecodeOptions plain;
    plain.beam_size = 4;
    plain.mode = DecodeMode::kAutoregressive;
    DecodeResult base = decode(model, trie, prompt, plain);

    DecodeOptions spec;
    spec.beam_size = 4;
    spec.mode = DecodeMode::kPtpv;
    double alpha = (trial % 4) * 0.4e-3;
    spec.cost_model = CostModel{.t_step = 1e-3, .alpha = alpha, .beta = 0.5e-3};
    DecodeResult fast = decode(model, trie, prompt, spec);

    CHECK(fast.stats.forward_passes <= base.stats.forward_passes);
    if (fast.stats.trigger_step == -1)
      CHECK(fast.stats.forward_passes == base.stats.forward_passes);
    else
      CHECK(fast.stats.forward_passes == fast.stats.trigger_step + 1);
    for (const DecodedSequence& seq : fast.sequences) {
      std::vector<uint32_t> path(seq.tokens.begin(), seq.tokens.end());
      auto leaf = subtree(trie, path);
      REQUIRE(leaf.has_value());
      CHECK(trie.nodes[*leaf].payload == seq.payload);
    }
  }
}

TEST_CASE("decode: request validation") {
  ToyTransformer model = init_model(decode_config());
  PrefixTrie trie = two_level_trie();
  DecodeOptions opt;
  CHECK_THROWS_WITH_AS(decode(model, trie, {}, opt),
                       doctest::Contains("empty prompt"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(decode(model, trie, {99}, opt),
                       doctest::Contains("prompt token"),
                       std::invalid_argument);
  DecodeOptions bad = opt;
  bad.beam_size = 0;
  CHECK_THROWS_WITH_AS(decode(model, trie, {1}, bad),
                       doctest::Contains("beam_size"), std::invalid_argument);
  DecodeOptions neg = opt;
  neg.forced_depth = -1;
  CHECK_THROWS_WITH_AS(decode(model, trie, {1}, neg),
                       doctest::Contains("forced depth"),
                       std::invalid_argument);

  ModelConfig tiny = decode_config();
  tiny.vocab_size = 5;  // trie tokens reach 7
  ToyTransformer small = init_model(tiny);
  CHECK_THROWS_WITH_AS(decode(small, trie, {1}, opt),
                       doctest::Contains("outside the model vocabulary"),
                       std::invalid_argument);

  PrefixTrie bare;
  bare.nodes.push_back(TrieNode{});
  bare.descendants = {0};
  bare.max_depth_below = {0};
  CHECK_THROWS_WITH_AS(decode(model, bare, {1}, opt),
                       doctest::Contains("no identifiers"),
                       std::invalid_argument);
}

TEST_CASE("decode: cost estimator tracks step time and verify scaling") {
  CostModel initial{.t_step = 3e-3, .alpha = 9.0, .beta = 9.0};
  CostModelEstimator est(initial);
  CHECK(est.model().t_step == 3e-3);
  CHECK(est.model().alpha == 9.0);
  CHECK(est.model().beta == 9.0);

  // First observation seeds the average, later ones decay in slowly.
  est.observe_step(1e-3);
  CHECK(est.model().t_step == doctest::Approx(1e-3));
  est.observe_step(2e-3);
  CHECK(est.model().t_step == doctest::Approx(0.9 * 1e-3 + 0.1 * 2e-3));

  CostModelEstimator steady;
  for (int i = 0; i < 200; ++i) steady.observe_step(5e-3);
  CHECK(std::abs(steady.model().t_step - 5e-3) <= 1e-9);

  // Exact linear timings are recovered exactly.
  CostModelEstimator lin;
  for (int n = 10; n <= 90; n += 10)
    lin.observe_verify(static_cast<size_t>(n), 0.2 * n + 1.0);
  CHECK(std::abs(lin.model().alpha - 0.2) <= 1e-6);
  CHECK(std::abs(lin.model().beta - 1.0) <= 1e-6);

  // The window forgets: 32 samples of a new line replace the old fit.
  for (int n = 5; n < 5 + 32; ++n)
    lin.observe_verify(static_cast<size_t>(n), 2.0 * n + 3.0);
  CHECK(std::abs(lin.model().alpha - 2.0) <= 1e-6);
  CHECK(std::abs(lin.model().beta - 3.0) <= 1e-6);

  // No spread in the node count pins only the flat term.
  CostModelEstimator flat;
  flat.observe_verify(5, 2.0);
  flat.observe_verify(5, 2.0);
  CHECK(flat.model().alpha == 0.0);
  CHECK(flat.model().beta == doctest::Approx(2.0));

  CHECK_THROWS_WITH_AS(est.observe_step(-1.0), doctest::Contains("step time"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(est.observe_verify(0, 1.0),
                       doctest::Contains("zero nodes"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(est.observe_verify(3, -1.0),
                       doctest::Contains("verification time"),
                       std::invalid_argument);
}
