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

// egt <command> --config <file> [--section.key value ...]
//
// Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
// invariant violation. Errors print one machine-parsable line on stderr.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "egt/common.hpp"
#include "egt/config.hpp"
#include "egt/pipeline.hpp"

namespace {

bool parse_u64_arg(const char* s, uint64_t& out) {
  if (!s || !*s || *s == '-') return false;
  char* end = nullptr;
  out = std::strtoull(s, &end, 10);
  return end && *end == '\0';
}

int run(CLI::App& app, int argc, char** argv) {
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed_value = 0;
  const std::pair<const char*, const char*> commands[] = {
      {"init-model", "create and save a fresh seeded model"},
      {"compress", "quantize and prune a saved model"},
      {"build-trie", "cluster an identifier corpus into a decoding trie"},
      {"bench", "time the matrix-vector kernels"},
      {"decode", "run constrained decoding over a query file"},
      {"eval-recall", "compare compressed decoding against the baseline"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration file")
        ->required();
    sub->add_option("--seed", seed_value,
                    "override the seed (beats EGT_SEED and the config)");
    sub->allow_extras();
  }

  app.parse(argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  egt::RunConfig config = egt::load_run_config(config_path);

  // Leftover flags are config overrides, --section.key value or
  // --section.key=value.
  bool seed_from_flags = sub->count("--seed") > 0;
  std::vector<std::string> rest = sub->remaining();
  for (size_t i = 0; i < rest.size();) {
    std::string tok = rest[i];
    if (tok.rfind("--", 0) != 0)
      throw std::invalid_argument("unexpected argument '" + tok +
                                  "' (overrides look like --section.key value)");
    tok = tok.substr(2);
    std::string key, value;
    size_t eq = tok.find('=');
    if (eq != std::string::npos) {
      key = tok.substr(0, eq);
      value = tok.substr(eq + 1);
      i += 1;
    } else {
      if (i + 1 >= rest.size())
        throw std::invalid_argument("missing value for --" + tok);
      key = tok;
      value = rest[i + 1];
      i += 2;
    }
    egt::apply_override(config, key, value);
    if (key == "run.seed") seed_from_flags = true;
  }

  // Seed priority: config file < EGT_SEED < explicit flag.
  if (!seed_from_flags) {
    if (const char* env = std::getenv("EGT_SEED")) {
      uint64_t v = 0;
      if (!parse_u64_arg(env, v))
        throw std::invalid_argument("EGT_SEED must be an unsigned integer");
      config.seed = v;
    }
  }
  if (sub->count("--seed") > 0) config.seed = seed_value;

  egt::RunManifest manifest;
  const std::string name = sub->get_name();
  if (name == "init-model") manifest = egt::cmd_init_model(config);
  else if (name == "compress") manifest = egt::cmd_compress(config);
  else if (name == "build-trie") manifest = egt::cmd_build_trie(config);
  else if (name == "bench") manifest = egt::cmd_bench(config);
  else if (name == "decode") manifest = egt::cmd_decode(config);
  else manifest = egt::cmd_eval_recall(config).manifest;

  std::fputs(manifest.to_text().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy generative retrieval: compression, tries, fast decoding"};
  try {
    return run(app, argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 1;
  } catch (const egt::FormatError& e) {
    std::fprintf(stderr, "error: format: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 3;
  }
}
