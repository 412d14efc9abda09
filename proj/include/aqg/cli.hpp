#pragma once

// The `aqg` command line: run configuration, subcommands and exit codes.

#include <cstddef>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aqg/decoding.hpp"
#include "aqg/eval.hpp"
#include "aqg/model.hpp"
#include "aqg/training.hpp"

namespace aqg {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

int exit_code_for(const std::exception& e);

struct RunConfig {
  std::string profile = "desk";
  ModelConfig model;
  TrainConfig train;
  DecodeOptions decode;
  TextLimits limits;
  std::size_t vocab_max = 8000;
  bool vocab_size_set = false;  // otherwise taken from the vocabulary

  // Profile defaults. "paper" pins d, layers, lr, batch_size, steps and beam.
  static RunConfig for_profile(const std::string& profile);
  // Applies one key=value setting. Throws ConfigError for unknown keys,
  // unparsable values and values that contradict a pinned profile field.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_key_values() const;
  std::string serialize() const;
};

// `key=value` lines, '#' comments and blank lines skipped.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& source);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

// Profile from the overrides (last one wins, default desk), then every
// override in order.
RunConfig resolve_run_config(const std::vector<std::pair<std::string, std::string>>& settings);

// ---- prepared data ---------------------------------------------------------

struct SplitSpec {
  std::string name;
  std::filesystem::path ids;
};

struct PrepareSummary {
  std::size_t vocab_size = 0;
  std::vector<std::pair<std::string, std::size_t>> split_sizes;
  std::size_t skipped = 0;
};

// Writes <out>/vocab.tsv and <out>/<split>.jsonl. The vocabulary comes from
// the first split.
PrepareSummary prepare_data(const std::filesystem::path& squad, const std::vector<SplitSpec>& splits,
                            const std::filesystem::path& out, std::size_t vocab_max,
                            const TextLimits& limits, std::ostream& log);
std::vector<RawExample> load_prepared_split(const std::filesystem::path& path);

// Worker count for parallel stages: hardware threads capped by AQG_THREADS.
std::size_t worker_threads();

// Entry point; returns the process exit code. Errors are printed to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aqg
