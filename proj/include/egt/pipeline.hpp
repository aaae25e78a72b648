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

// The command implementations behind the CLI. Each command reads what its
// config names, writes its artifacts, and records a manifest: the effective
// config hash, the seed, and a hash per deterministic output byte stream.
// Running the same config and seed twice writes identical bytes; wall-clock
// timing outputs are listed as measurements instead of being hashed.

#ifndef EGT_PIPELINE_HPP
#define EGT_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "egt/config.hpp"

namespace egt {

struct RunManifest {
  std::string command;
  uint64_t config_fingerprint = 0;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, uint64_t>> artifacts;  // name -> hash
  std::vector<std::string> measurements;  // outputs exempt from determinism
  std::vector<std::string> notes;         // deterministic one-line facts

  // Stable text form; also what gets written to <out_dir>/<command>_manifest.txt.
  std::string to_text() const;
};

// Builds a fresh model from [model] and the seed, writes paths.model.
RunManifest cmd_init_model(const RunConfig& config);

// Loads paths.model, calibrates on seeded synthetic sequences, compresses
// per [compress], writes paths.compressed.
RunManifest cmd_compress(const RunConfig& config);

// Reads the identifier corpus, clusters it per [trie], writes paths.trie
// plus a CSV mapping every item to its assigned id.
RunManifest cmd_build_trie(const RunConfig& config);

// Runs the matrix-vector micro-benchmark over [bench] shapes. bench.csv
// carries the timings (a measurement); the deterministic byte accounting is
// hashed separately.
RunManifest cmd_bench(const RunConfig& config);

// Decodes every query against the trie, with paths.compressed swapped in
// when set, and writes one ranked CSV row per result.
RunManifest cmd_decode(const RunConfig& config);

struct QueryRecall {
  uint32_t query = 0;
  int k = 0;
  int overlap = 0;
};

struct RecallReport {
  std::vector<QueryRecall> per_query;
  int k = 0;
  double recall = 0.0;  // mean per-query overlap fraction, in [0, 1]
};

struct EvalRecallResult {
  RecallReport report;
  RunManifest manifest;
};

// Decodes every query with the baseline and the compressed model under the
// same settings and reports how much of the baseline's top beam_size the
// compressed pipeline recovers.
EvalRecallResult cmd_eval_recall(const RunConfig& config);

// bos plus a few query-hashed tokens; how free-text queries condition the
// toy model deterministically.
std::vector<int> prompt_for_query(const std::string& query, uint32_t vocab);

}  // namespace egt

#endif  // EGT_PIPELINE_HPP
