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

#include "egt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "egt/common.hpp"
#include "egt/compress.hpp"
#include "egt/decode.hpp"
#include "egt/io.hpp"
#include "egt/model.hpp"
#include "egt/packed.hpp"
#include "egt/trie.hpp"

namespace egt {
namespace {

void require_path(const std::string& value, const char* key) {
  if (value.empty())
    throw std::invalid_argument(std::string(key) +
                                " is required for this command");
}

std::string basename_of(const std::string& path) {
  return std::filesystem::path(path).filename().string();
}

// Writes `bytes` at `path` and records it in the manifest under its basename.
void emit(RunManifest& manifest, const std::string& path,
          const std::string& bytes) {
  write_file(path, bytes);
  manifest.artifacts.emplace_back(basename_of(path), fnv1a64(bytes));
}

RunManifest start_manifest(const char* command, const RunConfig& config) {
  require_path(config.paths.out_dir, "paths.out_dir");
  std::filesystem::create_directories(config.paths.out_dir);
  RunManifest m;
  m.command = command;
  m.config_fingerprint = config_hash(config);
  m.seed = config.seed;
  return m;
}

void finish_manifest(RunManifest& manifest, const RunConfig& config) {
  write_file(config.paths.out_dir + "/" + manifest.command + "_manifest.txt",
             manifest.to_text());
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string fmt6(double v) {
  if (!std::isfinite(v)) throw InvariantError("report value is not finite");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

ModelConfig model_config_of(const RunConfig& c) {
  ModelConfig mc;
  mc.vocab_size = c.model.vocab;
  mc.d_model = c.model.d_model;
  mc.n_layers = c.model.n_layers;
  mc.n_heads = c.model.n_heads;
  mc.d_ff = c.model.d_ff;
  mc.max_positions = c.model.max_positions;
  mc.seed = c.seed;
  mc.validate();
  return mc;
}

CompressMode compress_mode_of(const RunConfig& c) {
  if (c.compress.mode == "full") return CompressMode::kFull;
  if (c.compress.mode == "quant_only") return CompressMode::kQuantOnly;
  if (c.compress.mode == "sparse_only") return CompressMode::kSparseOnly;
  throw std::invalid_argument("compress.mode must be full, quant_only or "
                              "sparse_only");
}

DecodeOptions decode_options_of(const RunConfig& c) {
  DecodeOptions opt;
  opt.beam_size = c.decode.beam_size;
  opt.node_cap = c.decode.node_cap;
  if (c.decode.mode == "autoregressive") {
    opt.mode = DecodeMode::kAutoregressive;
  } else if (c.decode.mode == "ptpv") {
    opt.mode = DecodeMode::kPtpv;
    opt.cost_model = CostModel{c.decode.t_step, c.decode.alpha, c.decode.beta};
  } else if (c.decode.mode == "forced") {
    opt.mode = DecodeMode::kPtpvForcedAtDepth;
    opt.forced_depth = c.decode.forced_depth;
  } else {
    throw std::invalid_argument(
        "decode.mode must be autoregressive, ptpv or forced");
  }
  return opt;
}

// Either a plain model file or a compressed one reconstructed against `base`.
ToyTransformer load_either_model(const ToyTransformer& base,
                                 const std::string& path) {
  std::string bytes = read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "EGTM") == 0)
    return parse_model(std::move(bytes), path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "EGTQ") == 0)
    return materialize_model(base, parse_compressed(std::move(bytes), path));
  throw FormatError(path + ": unrecognized model file (want EGTM or EGTQ)");
}

CalibrationBatch synthetic_calibration(const ModelConfig& mc,
                                       uint32_t n_sequences, uint32_t length,
                                       uint64_t seed) {
  if (length < 2)
    throw std::invalid_argument("compress.calib_len must be at least 2");
  if (length > mc.max_positions)
    throw std::invalid_argument(
        "compress.calib_len exceeds model.max_positions");
  std::mt19937_64 rng(seed ^ 0x6b79c6a7d03af2e1ull);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(mc.vocab_size) - 1);
  CalibrationBatch batch;
  batch.sequences.resize(n_sequences);
  for (auto& seq : batch.sequences) {
    seq.resize(length);
    for (auto& t : seq) t = tok(rng);
  }
  return batch;
}

std::string id_string(const std::vector<int>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < static_cast<int>(kTokenBase))
      throw InvariantError("decoded token below the id alphabet");
    if (i) out += '-';
    out += std::to_string(tokens[i] - static_cast<int>(kTokenBase));
  }
  return out;
}

}  // namespace

std::string RunManifest::to_text() const {
  std::ostringstream out;
  out << "command = " << command << '\n';
  out << "config = " << hex64(config_fingerprint) << '\n';
  out << "seed = " << seed << '\n';
  auto sorted = artifacts;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& [name, hash] : sorted)
    out << "artifact " << name << " = " << hex64(hash) << '\n';
  auto meas = measurements;
  std::sort(meas.begin(), meas.end());
  for (const auto& name : meas) out << "measurement " << name << '\n';
  for (const auto& note : notes) out << "note " << note << '\n';
  return out.str();
}

std::vector<int> prompt_for_query(const std::string& query, uint32_t vocab) {
  if (vocab <= kTokenBase)
    throw std::invalid_argument("model vocabulary too small for query prompts");
  std::vector<int> prompt{static_cast<int>(kBosToken)};
  uint64_t h = fnv1a64(query);
  uint64_t span = vocab - kTokenBase;
  for (int i = 0; i < 3; ++i)
    prompt.push_back(
        static_cast<int>(kTokenBase + (h >> (21 * i)) % span));
  return prompt;
}

RunManifest cmd_init_model(const RunConfig& config) {
  require_path(config.paths.model, "paths.model");
  RunManifest manifest = start_manifest("init-model", config);

  ToyTransformer model = init_model(model_config_of(config));
  emit(manifest, config.paths.model, serialize_model(model));

  size_t params = static_cast<size_t>(model.embedding.size()) +
                  static_cast<size_t>(model.head.size());
  for (const LayerWeights& l : model.layers)
    params += static_cast<size_t>(l.wq.size() + l.wk.size() + l.wv.size() +
                                  l.wo.size() + l.ff1.size() + l.ff2.size());
  manifest.notes.push_back("parameters = " + std::to_string(params));
  finish_manifest(manifest, config);
  return manifest;
}

RunManifest cmd_compress(const RunConfig& config) {
  require_path(config.paths.model, "paths.model");
  require_path(config.paths.compressed, "paths.compressed");
  RunManifest manifest = start_manifest("compress", config);

  ToyTransformer model = load_model(config.paths.model);
  CalibrationBatch batch = synthetic_calibration(
      model.config, config.compress.calib_sequences, config.compress.calib_len,
      config.seed);
  CompressedModel compressed = compress_model(
      model, batch, config.compress.rho_q, config.compress.rho_s,
      config.compress.g_fine, config.compress.g_coarse,
      compress_mode_of(config));
  emit(manifest, config.paths.compressed, serialize_compressed(compressed));

  manifest.notes.push_back("layers = " +
                           std::to_string(compressed.layers.size()));
  finish_manifest(manifest, config);
  return manifest;
}

RunManifest cmd_build_trie(const RunConfig& config) {
  require_path(config.paths.corpus, "paths.corpus");
  require_path(config.paths.trie, "paths.trie");
  RunManifest manifest = start_manifest("build-trie", config);

  std::vector<std::string> items = dedup_corpus(read_lines(config.paths.corpus));
  if (items.empty())
    throw FormatError(config.paths.corpus + ": no identifiers");
  Matrix embeddings = embed_corpus(items, config.trie.embed_dim);
  std::vector<SemanticId> ids =
      cluster_ids(embeddings, config.trie.k, config.trie.c, config.seed);
  PrefixTrie trie = build_trie(ids);
  emit(manifest, config.paths.trie, serialize_trie(trie));

  std::string csv = "item_index,id,identifier\n";
  for (size_t i = 0; i < items.size(); ++i) {
    std::string digits;
    for (size_t d = 0; d < ids[i].digits.size(); ++d) {
      if (d) digits += '-';
      digits += std::to_string(ids[i].digits[d]);
    }
    csv += std::to_string(i) + "," + digits + "," + csv_quote(items[i]) + "\n";
  }
  emit(manifest, config.paths.out_dir + "/trie_ids.csv", csv);

  TrieStats stats = trie_stats(trie);
  manifest.notes.push_back("items = " + std::to_string(items.size()));
  manifest.notes.push_back("leaves = " + std::to_string(stats.leaf_count));
  manifest.notes.push_back(
      "max_depth = " + std::to_string(trie.max_depth_below.empty()
                                          ? 0
                                          : trie.max_depth_below[0]));
  finish_manifest(manifest, config);
  return manifest;
}

RunManifest cmd_bench(const RunConfig& config) {
  RunManifest manifest = start_manifest("bench", config);

  std::vector<BenchShape> shapes;
  for (const auto& [rows, cols] : parse_shape_list(config.bench.shapes))
    shapes.push_back(BenchShape{rows, cols});
  std::vector<BenchRow> rows = bench_spmv(shapes, config.bench.reps,
                                          config.seed);

  // Timings are measurements; the byte accounting is the deterministic part.
  write_file(config.paths.out_dir + "/bench.csv", bench_csv(rows));
  manifest.measurements.push_back("bench.csv");
  std::string bytes_csv = "variant,rows,cols,pattern,bytes\n";
  for (const BenchRow& r : rows)
    bytes_csv += r.variant + "," + std::to_string(r.rows) + "," +
                 std::to_string(r.cols) + "," + r.pattern + "," +
                 std::to_string(r.bytes) + "\n";
  emit(manifest, config.paths.out_dir + "/bench_bytes.csv", bytes_csv);

  finish_manifest(manifest, config);
  return manifest;
}

RunManifest cmd_decode(const RunConfig& config) {
  require_path(config.paths.model, "paths.model");
  require_path(config.paths.trie, "paths.trie");
  require_path(config.paths.queries, "paths.queries");
  RunManifest manifest = start_manifest("decode", config);

  ToyTransformer base = load_model(config.paths.model);
  ToyTransformer model =
      config.paths.compressed.empty()
          ? base
          : load_either_model(base, config.paths.compressed);
  PrefixTrie trie = load_trie(config.paths.trie);
  std::vector<std::string> queries = read_lines(config.paths.queries);
  if (queries.empty()) throw FormatError(config.paths.queries + ": no queries");
  DecodeOptions options = decode_options_of(config);

  std::string csv =
      "query_index,rank,id,score,payload,steps,forward_passes,"
      "flattened_nodes\n";
  for (size_t q = 0; q < queries.size(); ++q) {
    DecodeResult result =
        decode(model, trie,
               prompt_for_query(queries[q], model.config.vocab_size), options);
    for (size_t rank = 0; rank < result.sequences.size(); ++rank) {
      const DecodedSequence& seq = result.sequences[rank];
      csv += std::to_string(q) + "," + std::to_string(rank) + "," +
             id_string(seq.tokens) + "," + fmt6(seq.score) + "," +
             std::to_string(seq.payload) + "," +
             std::to_string(result.stats.steps) + "," +
             std::to_string(result.stats.forward_passes) + "," +
             std::to_string(result.stats.flattened_nodes) + "\n";
    }
  }
  emit(manifest, config.paths.out_dir + "/decode_report.csv", csv);

  manifest.notes.push_back("queries = " + std::to_string(queries.size()));
  finish_manifest(manifest, config);
  return manifest;
}

EvalRecallResult cmd_eval_recall(const RunConfig& config) {
  require_path(config.paths.model, "paths.model");
  require_path(config.paths.compressed, "paths.compressed");
  require_path(config.paths.trie, "paths.trie");
  require_path(config.paths.queries, "paths.queries");
  RunManifest manifest = start_manifest("eval-recall", config);

  ToyTransformer base = load_model(config.paths.model);
  ToyTransformer compressed = load_either_model(base, config.paths.compressed);
  PrefixTrie trie = load_trie(config.paths.trie);
  std::vector<std::string> queries = read_lines(config.paths.queries);
  if (queries.empty()) throw FormatError(config.paths.queries + ": no queries");
  DecodeOptions options = decode_options_of(config);

  RecallReport report;
  std::string csv = "query_index,k,overlap,recall\n";
  double total = 0.0;
  for (size_t q = 0; q < queries.size(); ++q) {
    std::vector<int> prompt =
        prompt_for_query(queries[q], base.config.vocab_size);
    DecodeResult want = decode(base, trie, prompt, options);
    DecodeResult got = decode(compressed, trie, prompt, options);

    std::set<int64_t> want_ids, got_ids;
    for (const DecodedSequence& s : want.sequences) want_ids.insert(s.payload);
    for (const DecodedSequence& s : got.sequences) got_ids.insert(s.payload);
    int k = static_cast<int>(
        std::min<size_t>(options.beam_size, want_ids.size()));
    if (k == 0) throw InvariantError("baseline produced no sequences");
    int overlap = 0;
    for (int64_t id : want_ids)
      if (got_ids.count(id)) ++overlap;

    report.per_query.push_back(
        {static_cast<uint32_t>(q), k, overlap});
    double frac = static_cast<double>(overlap) / k;
    total += frac;
    csv += std::to_string(q) + "," + std::to_string(k) + "," +
           std::to_string(overlap) + "," + fmt6(frac) + "\n";
    report.k = k;
  }
  report.recall = total / static_cast<double>(queries.size());
  if (report.recall < 0.0 || report.recall > 1.0)
    throw InvariantError("recall outside [0, 1]");
  emit(manifest, config.paths.out_dir + "/recall.csv", csv);

  manifest.notes.push_back("queries = " + std::to_string(queries.size()));
  manifest.notes.push_back("recall@" + std::to_string(report.k) + " = " +
                           fmt6(report.recall));
  finish_manifest(manifest, config);
  return {std::move(report), std::move(manifest)};
}

}  // namespace egt
