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

// Run configuration: a plain sectioned key = value file, overridable key by
// key from the command line. Every effective value round-trips through
// canonical_text(), whose hash identifies the run in the manifest.

#ifndef EGT_CONFIG_HPP
#define EGT_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace egt {

struct RunConfig {
  struct Paths {
    std::string model;       // EGTM file (written by init-model)
    std::string compressed;  // EGTQ file (written by compress)
    std::string corpus;      // identifier corpus, one per line
    std::string trie;        // EGTT file (written by build-trie)
    std::string queries;     // query strings, one per line
    std::string out_dir;     // reports and manifests
  } paths;

  struct Model {
    uint32_t vocab = 64;
    uint32_t d_model = 32;
    uint32_t n_layers = 2;
    uint32_t n_heads = 4;
    uint32_t d_ff = 64;
    uint32_t max_positions = 64;
  } model;

  struct Compress {
    double rho_q = 0.5;      // fraction of channels quantized at fine groups
    double rho_s = 0.5;      // fraction of layers pruned at the tight pattern
    uint32_t g_fine = 16;
    uint32_t g_coarse = 64;
    std::string mode = "full";  // full | quant_only | sparse_only
    uint32_t calib_sequences = 8;
    uint32_t calib_len = 12;
  } compress;

  struct Trie {
    int embed_dim = 32;
    int k = 4;  // clusters per level
    int c = 4;  // leaf capacity
  } trie;

  struct Decode {
    int beam_size = 4;
    std::string mode = "ptpv";  // autoregressive | ptpv | forced
    int forced_depth = 0;
    double t_step = 2e-3;  // frozen cost model, seconds
    double alpha = 0.05e-3;
    double beta = 1e-3;
    uint32_t node_cap = 4096;
  } decode;

  struct Bench {
    std::string shapes = "16x64,64x256";  // ROWSxCOLS, comma separated
    int reps = 25;
  } bench;

  uint64_t seed = 42;
};

// Parses the sectioned key = value text. '#' and ';' start comments, blank
// lines are skipped, unknown sections or keys are errors (FormatError), as
// are unparsable values. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& text, const std::string& context);
RunConfig load_run_config(const std::string& path);

// Applies one command-line override, key spelled "section.key". Unknown keys
// or bad values throw std::invalid_argument (a usage error, unlike the file).
void apply_override(RunConfig& config, const std::string& key,
                    const std::string& value);

// Every effective field in a fixed order, one "section.key = value" per
// line. Hash of this text is the run's config identity.
std::string canonical_text(const RunConfig& config);
uint64_t config_hash(const RunConfig& config);

// "RxC,RxC" -> pairs; used by the bench command.
std::vector<std::pair<uint32_t, uint32_t>> parse_shape_list(
    const std::string& spec);

}  // namespace egt

#endif  // EGT_CONFIG_HPP
