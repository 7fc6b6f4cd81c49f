// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "medseq_cli/run_config.hpp"

namespace medseq::cli {

namespace fs = std::filesystem;

struct CommonArgs {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out = ".";
  std::vector<std::string> overrides;
};

struct DataArgs {
  fs::path records;
  std::optional<fs::path> folds;
  std::optional<int> fold;
};

/// parse -> filter -> preprocess check; writes the filtered raw records to
/// records.jsonl plus summary.json.
void cmd_ingest(const CommonArgs& common, const fs::path& in, std::ostream& log);
/// Writes records.jsonl and manifest.json.
void cmd_synth(const CommonArgs& common, std::ostream& log);
/// Writes folds.json.
void cmd_split(const CommonArgs& common, const fs::path& in, std::ostream& log);
/// Writes params.json and history.jsonl.
void cmd_train(const CommonArgs& common, const DataArgs& data, std::ostream& log);
/// With params: metrics.json and predictions.csv for the selected patients.
/// Without params: full k-fold run with per-fold histories.
void cmd_eval(const CommonArgs& common, const DataArgs& data, const std::optional<fs::path>& params,
              std::ostream& log);
/// Writes trace.json and attention.csv for one sample of `patient`.
void cmd_explain(const CommonArgs& common, const fs::path& in, const fs::path& params,
                 const std::string& patient, std::optional<int> sample_index, std::ostream& log);
/// Writes ablations.csv.
void cmd_ablate(const CommonArgs& common, const fs::path& in, std::ostream& log);
/// Reads predictions.csv from `eval_dir`; writes hourly.csv, groups_age.csv,
/// groups_same_label.csv, timeline.csv and drift.json.
void cmd_report(const CommonArgs& common, const fs::path& eval_dir, std::ostream& log);

/// Writes `content` to `path` via a temporary file and rename.
void write_atomic(const fs::path& path, const std::string& content);

std::vector<TestRecord> read_records(const fs::path& path);

FoldAssignment read_folds(const fs::path& path);
std::string folds_json(const FoldAssignment& folds);

}  // namespace medseq::cli
