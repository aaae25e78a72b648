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
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace egt {
namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();
constexpr size_t kVerifyWindow = 32;

// Next-token log-probabilities renormalized over the node's children; every
// other vocabulary entry is -inf.
RowVector restrict_row(const RowVector& logits, const PrefixTrie& trie,
                       const TrieNode& node) {
  RowVector filtered = RowVector::Constant(logits.size(), kNegInf);
  for (uint32_t c : node.children) {
    uint32_t t = trie.nodes[c].token;
    if (static_cast<Eigen::Index>(t) >= logits.size())
      throw std::invalid_argument("decode: trie token " + std::to_string(t) +
                                  " outside the model vocabulary");
    filtered(t) = logits(t);
  }
  return log_softmax(filtered);
}

std::vector<int> committed_tokens(const DecodeSession& session,
                                  const BeamHypothesis& beam) {
  std::vector<int> out = session.prompt;
  out.insert(out.end(), beam.tokens.begin(), beam.tokens.end());
  return out;
}

void check_beam_nodes(const DecodeSession& session, const PrefixTrie& trie) {
  if (session.beams.empty())
    throw std::invalid_argument("decode: session has no beams");
  for (const BeamHypothesis& b : session.beams)
    if (b.node >= trie.nodes.size())
      throw std::invalid_argument("decode: beam node outside the trie");
}

struct StepCandidate {
  double score;
  size_t beam;
  uint32_t token_key;  // 0 carries a finished beam through unchanged
  uint32_t child;
  bool carry;
};

bool step_candidate_before(const StepCandidate& a, const StepCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.beam != b.beam) return a.beam < b.beam;
  return a.token_key < b.token_key;
}

}  // namespace

DecodeSession make_session(std::vector<int> prompt) {
  if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
  DecodeSession session;
  session.prompt = std::move(prompt);
  session.beams.push_back(BeamHypothesis{});
  return session;
}

void CostModelEstimator::observe_step(double seconds) {
  if (!std::isfinite(seconds) || seconds < 0.0)
    throw std::invalid_argument(
        "cost model: step time must be finite and non-negative");
  if (!seeded_) {
    model_.t_step = seconds;
    seeded_ = true;
    return;
  }
  model_.t_step = 0.9 * model_.t_step + 0.1 * seconds;
}

void CostModelEstimator::observe_verify(size_t nodes, double seconds) {
  if (!std::isfinite(seconds) || seconds < 0.0)
    throw std::invalid_argument(
        "cost model: verification time must be finite and non-negative");
  if (nodes == 0)
    throw std::invalid_argument("cost model: verification over zero nodes");
  window_.emplace_back(static_cast<double>(nodes), seconds);
  if (window_.size() > kVerifyWindow) window_.erase(window_.begin());

  double mean_n = 0.0, mean_t = 0.0;
  for (const auto& [n, t] : window_) {
    mean_n += n;
    mean_t += t;
  }
  mean_n /= static_cast<double>(window_.size());
  mean_t /= static_cast<double>(window_.size());
  double var = 0.0, cov = 0.0;
  for (const auto& [n, t] : window_) {
    var += (n - mean_n) * (n - mean_n);
    cov += (n - mean_n) * (t - mean_t);
  }
  // A window without spread in n pins beta only.
  if (var > 0.0) model_.alpha = cov / var;
  model_.beta = mean_t - model_.alpha * mean_n;
}

void constrained_step(const ToyTransformer& model, DecodeSession& session,
                      const PrefixTrie& trie, int beam_size) {
  if (beam_size < 1)
    throw std::invalid_argument("decode: beam_size must be positive");
  check_beam_nodes(session, trie);

  std::vector<size_t> active;
  for (size_t i = 0; i < session.beams.size(); ++i)
    if (!trie.is_leaf(session.beams[i].node)) active.push_back(i);
  if (active.empty())
    throw std::invalid_argument("decode: every beam is finished");

  // One block-diagonal forward over the unfinished beams; each block is its
  // beam's committed tokens under a causal mask with positions 0..len-1.
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<size_t> offset(active.size());
  std::vector<size_t> length(active.size());
  size_t total = 0;
  for (size_t a = 0; a < active.size(); ++a) {
    std::vector<int> seq = committed_tokens(session, session.beams[active[a]]);
    offset[a] = total;
    length[a] = seq.size();
    total += seq.size();
    tokens.insert(tokens.end(), seq.begin(), seq.end());
    for (size_t j = 0; j < seq.size(); ++j)
      positions.push_back(static_cast<int>(j));
  }
  Mask mask = Mask::Zero(total, total);
  for (size_t a = 0; a < active.size(); ++a)
    for (size_t q = 0; q < length[a]; ++q)
      for (size_t k = 0; k <= q; ++k)
        mask(offset[a] + q, offset[a] + k) = 1.0f;

  Matrix logits = forward(model, tokens, mask, positions);
  session.forward_passes += 1;

  std::vector<StepCandidate> cands;
  for (size_t i = 0; i < session.beams.size(); ++i)
    if (trie.is_leaf(session.beams[i].node))
      cands.push_back({session.beams[i].log_prob, i, 0, 0, true});
  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    const TrieNode& node = trie.nodes[session.beams[i].node];
    RowVector row =
        restrict_row(logits.row(offset[a] + length[a] - 1), trie, node);
    for (uint32_t c : node.children) {
      uint32_t t = trie.nodes[c].token;
      cands.push_back({session.beams[i].log_prob + row(t), i, t, c, false});
    }
  }
  std::sort(cands.begin(), cands.end(), step_candidate_before);

  size_t keep = std::min(static_cast<size_t>(beam_size), cands.size());
  std::vector<BeamHypothesis> next;
  next.reserve(keep);
  for (size_t j = 0; j < keep; ++j) {
    const StepCandidate& c = cands[j];
    BeamHypothesis b = session.beams[c.beam];
    if (!c.carry) {
      b.tokens.push_back(static_cast<int>(c.token_key));
      b.log_prob = c.score;
      b.node = c.child;
    }
    next.push_back(std::move(b));
  }
  session.beams = std::move(next);
  session.steps += 1;
}

TriggerEstimate estimate_trigger(const CostModel& cost,
                                 const DecodeSession& session,
                                 const PrefixTrie& trie, size_t node_cap) {
  check_beam_nodes(session, trie);
  size_t n = 0;
  uint32_t l_rem = 0;
  for (const BeamHypothesis& b : session.beams) {
    n += trie.descendants[b.node];
    l_rem = std::max(l_rem, trie.max_depth_below[b.node]);
  }
  TriggerEstimate out;
  out.predicted_saving =
      cost.t_step * static_cast<double>(l_rem) - cost.verify_cost(n);
  out.trigger = n > 0 && n <= node_cap && out.predicted_saving > 0.0;
  return out;
}

FlattenedSubtree flatten_subtree(const DecodeSession& session,
                                 const PrefixTrie& trie) {
  check_beam_nodes(session, trie);
  FlattenedSubtree out;
  std::vector<std::pair<uint32_t, int32_t>> stack;  // (trie node, parent flat)
  for (size_t bi = 0; bi < session.beams.size(); ++bi) {
    const auto& top = trie.nodes[session.beams[bi].node].children;
    for (auto it = top.rbegin(); it != top.rend(); ++it)
      stack.emplace_back(*it, -1);
    while (!stack.empty()) {
      auto [nidx, parent] = stack.back();
      stack.pop_back();
      FlatNode fn;
      fn.token = trie.nodes[nidx].token;
      fn.parent = parent;
      fn.depth = parent < 0 ? 0 : out.nodes[parent].depth + 1;
      fn.trie_node = nidx;
      fn.beam = static_cast<uint32_t>(bi);
      int32_t flat = static_cast<int32_t>(out.nodes.size());
      out.nodes.push_back(fn);
      const auto& ch = trie.nodes[nidx].children;
      for (auto it = ch.rbegin(); it != ch.rend(); ++it)
        stack.emplace_back(*it, flat);
    }
  }
  if (out.nodes.empty())
    throw std::invalid_argument(
        "decode: nothing to verify, every beam is finished");
  return out;
}

TreeMask build_tree_mask(const FlattenedSubtree& flattened,
                         const DecodeSession& session) {
  if (session.beams.empty())
    throw std::invalid_argument("decode: session has no beams");
  if (flattened.nodes.empty())
    throw std::invalid_argument("decode: empty flattened subtree");

  const size_t n_beams = session.beams.size();
  TreeMask out;
  out.beam_count = static_cast<uint32_t>(n_beams);
  out.committed_len.resize(n_beams);
  size_t lmax = 0;
  for (size_t b = 0; b < n_beams; ++b) {
    out.committed_len[b] = static_cast<uint32_t>(session.prompt.size() +
                                                 session.beams[b].tokens.size());
    lmax = std::max(lmax, static_cast<size_t>(out.committed_len[b]));
  }
  out.padded_len = static_cast<uint32_t>(lmax);
  out.flat_offset = n_beams * lmax;

  const size_t n_flat = flattened.nodes.size();
  const size_t total = out.flat_offset + n_flat;
  out.visibility = Mask::Zero(total, total);
  out.tokens.assign(total, static_cast<int>(kPadToken));
  out.positions.assign(total, 0);

  for (size_t b = 0; b < n_beams; ++b) {
    const std::vector<int> seq = committed_tokens(session, session.beams[b]);
    const size_t base = b * lmax;
    const size_t pad = lmax - seq.size();
    for (size_t j = 0; j < seq.size(); ++j) {
      const size_t r = base + pad + j;
      out.tokens[r] = seq[j];
      out.positions[r] = static_cast<int>(j);
      for (size_t k = 0; k <= j; ++k) out.visibility(r, base + pad + k) = 1.0f;
    }
  }
  for (size_t f = 0; f < n_flat; ++f) {
    const FlatNode& fn = flattened.nodes[f];
    if (fn.beam >= n_beams)
      throw std::invalid_argument(
          "decode: flattened node references a missing beam");
    if (fn.parent >= 0 &&
        (static_cast<size_t>(fn.parent) >= f ||
         flattened.nodes[fn.parent].beam != fn.beam))
      throw std::invalid_argument(
          "decode: flattened parent does not precede its child");
    const size_t r = out.flat_offset + f;
    out.tokens[r] = static_cast<int>(fn.token);
    const size_t len = out.committed_len[fn.beam];
    out.positions[r] = static_cast<int>(len + fn.depth);
    const size_t base = fn.beam * lmax;
    const size_t pad = lmax - len;
    for (size_t j = 0; j < len; ++j) out.visibility(r, base + pad + j) = 1.0f;
    for (int32_t p = static_cast<int32_t>(f); p >= 0;
         p = flattened.nodes[p].parent)
      out.visibility(r, out.flat_offset + p) = 1.0f;
  }
  return out;
}

std::vector<double> accumulate_bscores(
    const FlattenedSubtree& flattened,
    const std::vector<double>& beam_log_probs,
    const std::vector<RowVector>& beam_seed_rows,
    const std::vector<RowVector>& node_rows) {
  if (beam_seed_rows.size() != beam_log_probs.size())
    throw std::invalid_argument("decode: seed rows and beam scores disagree");
  if (node_rows.size() != flattened.nodes.size())
    throw std::invalid_argument(
        "decode: per-node rows and flattened nodes disagree");
  std::vector<double> scores(flattened.nodes.size());
  for (size_t f = 0; f < flattened.nodes.size(); ++f) {
    const FlatNode& fn = flattened.nodes[f];
    const RowVector* row = nullptr;
    double base = 0.0;
    if (fn.parent < 0) {
      if (fn.beam >= beam_log_probs.size())
        throw std::invalid_argument(
            "decode: flattened node references a missing beam");
      row = &beam_seed_rows[fn.beam];
      base = beam_log_probs[fn.beam];
    } else {
      if (static_cast<size_t>(fn.parent) >= f)
        throw std::invalid_argument(
            "decode: flattened parent does not precede its child");
      row = &node_rows[fn.parent];
      base = scores[fn.parent];
    }
    if (static_cast<Eigen::Index>(fn.token) >= row->size())
      throw std::invalid_argument("decode: token outside the scored row");
    scores[f] = base + (*row)(fn.token);
  }
  return scores;
}

VerificationResult verify_parallel(const ToyTransformer& model,
                                   DecodeSession& session,
                                   const PrefixTrie& trie,
                                   const FlattenedSubtree& flattened,
                                   const TreeMask& mask, int beam_size) {
  if (beam_size < 1)
    throw std::invalid_argument("decode: beam_size must be positive");
  check_beam_nodes(session, trie);
  if (flattened.nodes.empty())
    throw std::invalid_argument("decode: empty flattened subtree");
  const size_t n_beams = session.beams.size();
  const size_t total = mask.flat_offset + flattened.nodes.size();
  if (mask.beam_count != n_beams ||
      mask.flat_offset != n_beams * static_cast<size_t>(mask.padded_len) ||
      mask.tokens.size() != total || mask.positions.size() != total ||
      static_cast<size_t>(mask.visibility.rows()) != total ||
      mask.visibility.rows() != mask.visibility.cols())
    throw std::invalid_argument(
        "decode: tree mask does not match the session and subtree");

  Matrix logits = forward(model, mask.tokens, mask.visibility, mask.positions);
  session.forward_passes += 1;
  session.flattened_nodes = flattened.nodes.size();

  std::vector<double> beam_lps(n_beams);
  std::vector<RowVector> seeds(n_beams);
  for (size_t b = 0; b < n_beams; ++b) {
    beam_lps[b] = session.beams[b].log_prob;
    const TrieNode& node = trie.nodes[session.beams[b].node];
    if (!node.children.empty())
      seeds[b] = restrict_row(
          logits.row(b * mask.padded_len + mask.padded_len - 1), trie, node);
  }

  VerificationResult out;
  out.node_rows.resize(flattened.nodes.size());
  for (size_t f = 0; f < flattened.nodes.size(); ++f) {
    const TrieNode& node = trie.nodes[flattened.nodes[f].trie_node];
    if (!node.children.empty())
      out.node_rows[f] =
          restrict_row(logits.row(mask.flat_offset + f), trie, node);
  }
  out.node_scores =
      accumulate_bscores(flattened, beam_lps, seeds, out.node_rows);

  struct LeafCandidate {
    double score;
    uint32_t beam;
    int64_t flat;  // -1 for a finished beam competing as-is
  };
  std::vector<LeafCandidate> cands;
  for (size_t b = 0; b < n_beams; ++b)
    if (trie.is_leaf(session.beams[b].node))
      cands.push_back({beam_lps[b], static_cast<uint32_t>(b), -1});
  for (size_t f = 0; f < flattened.nodes.size(); ++f)
    if (trie.is_leaf(flattened.nodes[f].trie_node))
      cands.push_back({out.node_scores[f], flattened.nodes[f].beam,
                       static_cast<int64_t>(f)});
  std::sort(cands.begin(), cands.end(),
            [](const LeafCandidate& a, const LeafCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.beam != b.beam) return a.beam < b.beam;
              return a.flat < b.flat;
            });

  const size_t keep = std::min(static_cast<size_t>(beam_size), cands.size());
  for (size_t j = 0; j < keep; ++j) {
    const LeafCandidate& c = cands[j];
    VerifiedLeaf leaf;
    leaf.score = c.score;
    leaf.beam = c.beam;
    leaf.tokens = session.beams[c.beam].tokens;
    if (c.flat < 0) {
      leaf.payload = trie.nodes[session.beams[c.beam].node].payload;
    } else {
      std::vector<int> path;
      for (int64_t p = c.flat; p >= 0; p = flattened.nodes[p].parent)
        path.push_back(static_cast<int>(flattened.nodes[p].token));
      std::reverse(path.begin(), path.end());
      leaf.tokens.insert(leaf.tokens.end(), path.begin(), path.end());
      leaf.payload = trie.nodes[flattened.nodes[c.flat].trie_node].payload;
    }
    out.selected.push_back(std::move(leaf));
  }
  return out;
}

DecodeResult decode(const ToyTransformer& model, const PrefixTrie& trie,
                    std::vector<int> prompt, const DecodeOptions& options) {
  if (options.beam_size < 1)
    throw std::invalid_argument("decode: beam_size must be positive");
  if (options.forced_depth < 0)
    throw std::invalid_argument("decode: forced depth must be non-negative");
  if (options.node_cap == 0)
    throw std::invalid_argument("decode: node cap must be positive");
  const int vocab = static_cast<int>(model.config.vocab_size);
  if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
  for (int t : prompt)
    if (t < 0 || t >= vocab)
      throw std::invalid_argument("decode: prompt token outside the vocabulary");
  for (size_t i = 1; i < trie.nodes.size(); ++i)
    if (static_cast<int>(trie.nodes[i].token) >= vocab)
      throw std::invalid_argument(
          "decode: trie token outside the model vocabulary");
  if (trie.nodes.empty() || trie.nodes[0].children.empty())
    throw std::invalid_argument("decode: trie has no identifiers");

  DecodeSession session = make_session(std::move(prompt));
  auto all_finished = [&] {
    for (const BeamHypothesis& b : session.beams)
      if (!trie.is_leaf(b.node)) return false;
    return true;
  };

  DecodeResult out;
  bool verified = false;
  while (!all_finished()) {
    bool fire = false;
    if (options.mode == DecodeMode::kPtpv)
      fire = estimate_trigger(options.cost_model, session, trie,
                              options.node_cap)
                 .trigger;
    else if (options.mode == DecodeMode::kPtpvForcedAtDepth)
      fire = session.steps >= options.forced_depth;
    if (fire) {
      FlattenedSubtree flattened = flatten_subtree(session, trie);
      TreeMask mask = build_tree_mask(flattened, session);
      VerificationResult vr =
          verify_parallel(model, session, trie, flattened, mask,
                          options.beam_size);
      session.trigger_step = session.steps;
      for (const VerifiedLeaf& leaf : vr.selected)
        out.sequences.push_back({leaf.tokens, leaf.score, leaf.payload});
      verified = true;
      break;
    }
    constrained_step(model, session, trie, options.beam_size);
  }
  if (!verified)
    for (const BeamHypothesis& b : session.beams)
      out.sequences.push_back({b.tokens, b.log_prob, trie.nodes[b.node].payload});

  out.stats.steps = session.steps;
  out.stats.forward_passes = session.forward_passes;
  out.stats.trigger_step = session.trigger_step;
  out.stats.flattened_nodes = session.flattened_nodes;
  return out;
}

}  // namespace egt
