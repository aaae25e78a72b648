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

#include "egt/config.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "egt/common.hpp"
#include "egt/io.hpp"

namespace egt {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& s) {
  size_t p = s.find_first_of("#;");
  return p == std::string::npos ? s : s.substr(0, p);
}

bool parse_u64_str(const std::string& s, uint64_t& out) {
  if (s.empty() || s[0] == '-') return false;
  size_t pos = 0;
  try {
    out = std::stoull(s, &pos, 10);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

bool parse_u32_str(const std::string& s, uint32_t& out) {
  uint64_t v = 0;
  if (!parse_u64_str(s, v) || v > 0xffffffffull) return false;
  out = static_cast<uint32_t>(v);
  return true;
}

bool parse_int_str(const std::string& s, int& out) {
  if (s.empty()) return false;
  size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos, 10);
  } catch (...) {
    return false;
  }
  if (pos != s.size() || v < INT32_MIN || v > INT32_MAX) return false;
  out = static_cast<int>(v);
  return true;
}

bool parse_double_str(const std::string& s, double& out) {
  if (s.empty()) return false;
  size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size() && std::isfinite(out);
}

// Empty string on success, otherwise what went wrong. Shared by the file
// parser (FormatError) and flag overrides (invalid_argument).
std::string set_field(RunConfig& c, const std::string& section,
                      const std::string& key, const std::string& value) {
  auto unknown = [&] { return "unknown key " + section + "." + key; };

  if (section == "paths") {
    std::string* dst = nullptr;
    if (key == "model") dst = &c.paths.model;
    else if (key == "compressed") dst = &c.paths.compressed;
    else if (key == "corpus") dst = &c.paths.corpus;
    else if (key == "trie") dst = &c.paths.trie;
    else if (key == "queries") dst = &c.paths.queries;
    else if (key == "out_dir") dst = &c.paths.out_dir;
    if (!dst) return unknown();
    *dst = value;
    return "";
  }
  if (section == "model") {
    uint32_t* dst = nullptr;
    if (key == "vocab") dst = &c.model.vocab;
    else if (key == "d_model") dst = &c.model.d_model;
    else if (key == "n_layers") dst = &c.model.n_layers;
    else if (key == "n_heads") dst = &c.model.n_heads;
    else if (key == "d_ff") dst = &c.model.d_ff;
    else if (key == "max_positions") dst = &c.model.max_positions;
    if (!dst) return unknown();
    uint32_t v = 0;
    if (!parse_u32_str(value, v) || v == 0)
      return section + "." + key + " must be a positive integer";
    *dst = v;
    return "";
  }
  if (section == "compress") {
    if (key == "rho_q" || key == "rho_s") {
      double v = 0.0;
      if (!parse_double_str(value, v) || v < 0.0 || v > 1.0)
        return section + "." + key + " must be a fraction in [0, 1]";
      (key == "rho_q" ? c.compress.rho_q : c.compress.rho_s) = v;
      return "";
    }
    uint32_t* dst = nullptr;
    if (key == "g_fine") dst = &c.compress.g_fine;
    else if (key == "g_coarse") dst = &c.compress.g_coarse;
    else if (key == "calib_sequences") dst = &c.compress.calib_sequences;
    else if (key == "calib_len") dst = &c.compress.calib_len;
    if (dst) {
      uint32_t v = 0;
      if (!parse_u32_str(value, v) || v == 0)
        return section + "." + key + " must be a positive integer";
      *dst = v;
      return "";
    }
    if (key == "mode") {
      if (value != "full" && value != "quant_only" && value != "sparse_only")
        return "compress.mode must be full, quant_only or sparse_only";
      c.compress.mode = value;
      return "";
    }
    return unknown();
  }
  if (section == "trie") {
    int v = 0;
    if (!parse_int_str(value, v))
      return section + "." + key + " must be an integer";
    if (key == "embed_dim") {
      if (v < 16) return "trie.embed_dim must be at least 16";
      c.trie.embed_dim = v;
    } else if (key == "k") {
      if (v < 2) return "trie.k must be at least 2";
      c.trie.k = v;
    } else if (key == "c") {
      if (v < 1) return "trie.c must be at least 1";
      c.trie.c = v;
    } else {
      return unknown();
    }
    return "";
  }
  if (section == "decode") {
    if (key == "beam_size" || key == "forced_depth") {
      int v = 0;
      if (!parse_int_str(value, v))
        return section + "." + key + " must be an integer";
      if (key == "beam_size") {
        if (v < 1) return "decode.beam_size must be at least 1";
        c.decode.beam_size = v;
      } else {
        if (v < 0) return "decode.forced_depth must be non-negative";
        c.decode.forced_depth = v;
      }
      return "";
    }
    if (key == "mode") {
      if (value != "autoregressive" && value != "ptpv" && value != "forced")
        return "decode.mode must be autoregressive, ptpv or forced";
      c.decode.mode = value;
      return "";
    }
    if (key == "t_step" || key == "alpha" || key == "beta") {
      double v = 0.0;
      if (!parse_double_str(value, v) || v < 0.0)
        return section + "." + key + " must be a non-negative number";
      if (key == "t_step") c.decode.t_step = v;
      else if (key == "alpha") c.decode.alpha = v;
      else c.decode.beta = v;
      return "";
    }
    if (key == "node_cap") {
      uint32_t v = 0;
      if (!parse_u32_str(value, v) || v == 0)
        return "decode.node_cap must be a positive integer";
      c.decode.node_cap = v;
      return "";
    }
    return unknown();
  }
  if (section == "bench") {
    if (key == "shapes") {
      c.bench.shapes = value;
      return "";
    }
    if (key == "reps") {
      int v = 0;
      if (!parse_int_str(value, v) || v < 1)
        return "bench.reps must be a positive integer";
      c.bench.reps = v;
      return "";
    }
    return unknown();
  }
  if (section == "run") {
    if (key == "seed") {
      uint64_t v = 0;
      if (!parse_u64_str(value, v))
        return "run.seed must be an unsigned integer";
      c.seed = v;
      return "";
    }
    return unknown();
  }
  return "unknown section " + section;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& text,
                           const std::string& context) {
  RunConfig config;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw FormatError(context + ": line " + std::to_string(lineno) + ": " +
                        why);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated [section]");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("empty key");
    if (section.empty()) fail("key before any [section]");
    std::string err = set_field(config, section, key, value);
    if (!err.empty()) fail(err);
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path), path);
}

void apply_override(RunConfig& config, const std::string& key,
                    const std::string& value) {
  size_t dot = key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key.size() ||
      key.find('.', dot + 1) != std::string::npos)
    throw std::invalid_argument("override key '" + key +
                                "' must look like section.key");
  std::string err =
      set_field(config, key.substr(0, dot), key.substr(dot + 1), value);
  if (!err.empty()) throw std::invalid_argument("--" + key + ": " + err);
}

std::string canonical_text(const RunConfig& c) {
  std::ostringstream out;
  out << "paths.model = " << c.paths.model << '\n';
  out << "paths.compressed = " << c.paths.compressed << '\n';
  out << "paths.corpus = " << c.paths.corpus << '\n';
  out << "paths.trie = " << c.paths.trie << '\n';
  out << "paths.queries = " << c.paths.queries << '\n';
  out << "paths.out_dir = " << c.paths.out_dir << '\n';
  out << "model.vocab = " << c.model.vocab << '\n';
  out << "model.d_model = " << c.model.d_model << '\n';
  out << "model.n_layers = " << c.model.n_layers << '\n';
  out << "model.n_heads = " << c.model.n_heads << '\n';
  out << "model.d_ff = " << c.model.d_ff << '\n';
  out << "model.max_positions = " << c.model.max_positions << '\n';
  out << "compress.rho_q = " << fmt_double(c.compress.rho_q) << '\n';
  out << "compress.rho_s = " << fmt_double(c.compress.rho_s) << '\n';
  out << "compress.g_fine = " << c.compress.g_fine << '\n';
  out << "compress.g_coarse = " << c.compress.g_coarse << '\n';
  out << "compress.mode = " << c.compress.mode << '\n';
  out << "compress.calib_sequences = " << c.compress.calib_sequences << '\n';
  out << "compress.calib_len = " << c.compress.calib_len << '\n';
  out << "trie.embed_dim = " << c.trie.embed_dim << '\n';
  out << "trie.k = " << c.trie.k << '\n';
  out << "trie.c = " << c.trie.c << '\n';
  out << "decode.beam_size = " << c.decode.beam_size << '\n';
  out << "decode.mode = " << c.decode.mode << '\n';
  out << "decode.forced_depth = " << c.decode.forced_depth << '\n';
  out << "decode.t_step = " << fmt_double(c.decode.t_step) << '\n';
  out << "decode.alpha = " << fmt_double(c.decode.alpha) << '\n';
  out << "decode.beta = " << fmt_double(c.decode.beta) << '\n';
  out << "decode.node_cap = " << c.decode.node_cap << '\n';
  out << "bench.shapes = " << c.bench.shapes << '\n';
  out << "bench.reps = " << c.bench.reps << '\n';
  out << "run.seed = " << c.seed << '\n';
  return out.str();
}

uint64_t config_hash(const RunConfig& config) {
  return fnv1a64(canonical_text(config));
}

std::vector<std::pair<uint32_t, uint32_t>> parse_shape_list(
    const std::string& spec) {
  std::vector<std::pair<uint32_t, uint32_t>> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::string t = trim(item);
    auto bad = [&] {
      throw FormatError("bench shapes: bad entry '" + t +
                        "' (want ROWSxCOLS)");
    };
    size_t x = t.find('x');
    if (x == std::string::npos) bad();
    uint32_t rows = 0, cols = 0;
    if (!parse_u32_str(t.substr(0, x), rows) ||
        !parse_u32_str(t.substr(x + 1), cols) || rows == 0 || cols == 0)
      bad();
    out.emplace_back(rows, cols);
  }
  if (out.empty()) throw FormatError("bench shapes: empty list");
  return out;
}

}  // namespace egt
