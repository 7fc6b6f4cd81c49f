// SPDX-License-Identifier: Apache-2.0
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "medseq_cli/commands.hpp"

namespace {

using medseq::cli::CommonArgs;
using medseq::cli::DataArgs;

void add_common(CLI::App* app, CommonArgs& common) {
  app->add_option("--config", common.config, "key=value config file");
  app->add_option("--seed", common.seed, "Seed for every stochastic component");
  app->add_option("--out", common.out, "Output directory")->required();
  app->add_option("--set", common.overrides, "Override one config key (key=value)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"medseq: sequence-based medication status prediction"};
  app.require_subcommand(1);

  CommonArgs common;
  DataArgs data;
  std::filesystem::path in, eval_dir;
  std::optional<std::filesystem::path> params;
  std::filesystem::path explain_params;
  std::string patient;
  std::optional<int> sample_index;

  auto* ingest = app.add_subcommand("ingest", "Validate and filter a JSONL record file");
  add_common(ingest, common);
  ingest->add_option("--in", in, "Input JSONL")->required();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  add_common(synth, common);

  auto* split = app.add_subcommand("split", "Patient-grouped k-fold split");
  add_common(split, common);
  split->add_option("--in", in, "Record JSONL")->required();

  auto add_data = [&](CLI::App* cmd) {
    cmd->add_option("--in", data.records, "Record JSONL")->required();
    cmd->add_option("--folds", data.folds, "folds.json from split");
    cmd->add_option("--fold", data.fold, "Fold index");
  };
  auto* train = app.add_subcommand("train", "Train on all patients or the training side of a fold");
  add_common(train, common);
  add_data(train);

  auto* eval = app.add_subcommand("eval", "Evaluate trained params, or run full k-fold without --params");
  add_common(eval, common);
  add_data(eval);
  eval->add_option("--params", params, "params.json from train");

  auto* explain = app.add_subcommand("explain", "Attention trace for one sequence sample");
  add_common(explain, common);
  explain->add_option("--in", in, "Record JSONL")->required();
  explain->add_option("--params", explain_params, "params.json from train")->required();
  explain->add_option("--patient", patient, "Patient id")->required();
  explain->add_option("--sample", sample_index, "Sample index within the patient (default: last)");

  auto* ablate = app.add_subcommand("ablate", "Run the ablation grid under k-fold");
  add_common(ablate, common);
  ablate->add_option("--in", in, "Record JSONL")->required();

  auto* report = app.add_subcommand("report", "Figure-data CSV exports from eval outputs");
  add_common(report, common);
  report->add_option("--eval", eval_dir, "Directory written by eval")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto& log = std::cout;
    if (*ingest) medseq::cli::cmd_ingest(common, in, log);
    else if (*synth) medseq::cli::cmd_synth(common, log);
    else if (*split) medseq::cli::cmd_split(common, in, log);
    else if (*train) medseq::cli::cmd_train(common, data, log);
    else if (*eval) medseq::cli::cmd_eval(common, data, params, log);
    else if (*explain) medseq::cli::cmd_explain(common, in, explain_params, patient, sample_index, log);
    else if (*ablate) medseq::cli::cmd_ablate(common, in, log);
    else if (*report) medseq::cli::cmd_report(common, eval_dir, log);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error: " << msg << std::endl;
    return 1;
  }
  return 0;
}
