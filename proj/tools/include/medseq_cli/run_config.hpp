// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medseq/synthcorpus.hpp"
#include "medseq/training.hpp"

namespace medseq::cli {

/// Resolved settings for every subcommand. Loaded from a flat key=value file
/// with dotted namespaces, then command-line overrides.
struct RunConfig {
  ExperimentConfig experiment;
  SynthConfig synth;
  GroupBy group_by = GroupBy::None;
  std::uint64_t seed = 0;

  /// key -> value text, every known key, used for the echo.
  std::map<std::string, std::string> resolved() const;
};

/// Parses `key = value` lines; '#' starts a comment. Duplicate keys keep the
/// last value.
std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                    const std::string& origin = "config");

/// Builds a RunConfig from defaults plus `values`; unknown keys and malformed
/// values throw std::invalid_argument naming the key. Seeds not set
/// explicitly inherit `seed`.
RunConfig make_run_config(const std::map<std::string, std::string>& values);

/// Loads `path` (optional), applies `overrides` (key=value strings) and an
/// optional seed, and validates everything.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed);

std::string format_config(const RunConfig& config);

}  // namespace medseq::cli
