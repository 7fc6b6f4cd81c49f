// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "medseq/loss.hpp"
#include "medseq/metrics.hpp"
#include "medseq/model_config.hpp"
#include "medseq/optimizer.hpp"
#include "medseq/params.hpp"
#include "medseq/sequencer.hpp"
#include "medseq/shuffle_encoder.hpp"

namespace medseq {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 2;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  /// Redraw random history windows every epoch when training from timelines.
  bool resample_history = true;

  void validate() const;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  PreprocessConfig preprocess;
  CohortFilter filter;
  SequenceOptions train_sequences{4, QueryPolicy::AllEligible, HistoryPolicy::Random};
  SequenceOptions eval_sequences{4, QueryPolicy::AllEligible, HistoryPolicy::MostRecent};
  std::int64_t merge_window = kDefaultMergeWindow;
  int folds = 5;
  std::uint64_t split_seed = 0;
  std::uint64_t eval_seed = 0;  // fixed evaluation shuffle permutations

  void validate() const;
};

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

struct GradientResult {
  double loss = 0.0;
  GradientSet grads;
  Matrix logits;  // N x 3
};

/// Mean weighted cross-entropy of the batch under the given per-sample
/// shuffle plans. Weights default to class_weights of the batch labels.
double batch_loss(std::span<const SequenceSample> batch, const ModelParams& params,
                  const ModelConfig& config, std::span<const ShufflePlan> plans,
                  const std::optional<ClassWeights>& weights = std::nullopt);

/// Exact reverse-mode gradients of batch_loss. Throws std::runtime_error on a
/// non-finite loss.
GradientResult compute_gradients(std::span<const SequenceSample> batch, const ModelParams& params,
                                 const ModelConfig& config, std::span<const ShufflePlan> plans,
                                 const std::optional<ClassWeights>& weights = std::nullopt);

/// Draws one training plan per sample from `rng`, then differentiates.
GradientResult compute_gradients(std::span<const SequenceSample> batch, const ModelParams& params,
                                 const ModelConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  Metrics metrics;  // on the epoch's training predictions
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded init, seeded batch order, per-batch class weights and AdamW.
/// Divergence raises std::runtime_error naming the epoch and batch.
TrainResult train(std::span<const SequenceSample> dataset, const ModelConfig& model,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same loop, drawing samples from timelines; history windows are redrawn
/// each epoch when `config.resample_history` is set.
TrainResult train(std::span<const PatientTimeline> timelines, const SequenceOptions& sequences,
                  const ModelConfig& model, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// One JSON object per line: epoch, loss, accuracy, macro_f1, macro_auc.
std::string history_to_jsonl(std::span<const EpochRecord> history);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class GroupBy { None, AgeBucket, SameLabelHistory };

std::string_view to_string(GroupBy g);
GroupBy parse_group_by(std::string_view s);

/// Five-year age buckets from 45 upwards; "unknown" when age is absent.
std::string age_bucket(std::optional<double> age);

struct Prediction {
  std::string patient_id;
  double observation_time = 0.0;
  MedicationStatus label = MedicationStatus::AnotherTime;
  MedicationStatus predicted = MedicationStatus::AnotherTime;
  Logits probabilities = Logits::Zero();
  std::optional<double> age;
  int same_label_history = 0;
};

struct Evaluation {
  Metrics metrics;
  std::vector<Prediction> predictions;
};

Logits predict(const SequenceSample& sample, const ModelParams& params, const ModelConfig& config,
               std::uint64_t eval_seed);

Evaluation evaluate(const ModelParams& params, std::span<const SequenceSample> dataset,
                    const ModelConfig& config, std::uint64_t eval_seed = 0,
                    GroupBy group_by = GroupBy::None);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// filter -> preprocess -> synchronize -> per-patient timelines.
struct PreparedCohort {
  Cohort cohort;  // filtered, preprocessed records
  std::vector<PatientTimeline> timelines;
};

PreparedCohort prepare_cohort(std::span<const TestRecord> records, const ExperimentConfig& config);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over folds
};

struct FoldResult {
  int fold = 0;
  std::vector<std::string> train_patients;
  std::vector<std::string> eval_patients;
  TrainResult training;
  Evaluation evaluation;
};

struct KFoldResult {
  FoldAssignment assignment;
  std::vector<FoldResult> folds;
  MetricSummary accuracy;
  MetricSummary macro_f1;
  MetricSummary macro_auc;  // over folds with a defined AUC
};

struct KFoldOptions {
  GroupBy group_by = GroupBy::None;
  /// Restrict to these folds (all when empty).
  std::vector<int> only_folds;
  std::function<void(int fold, const EpochRecord&)> on_epoch;
};

/// Trains on the other folds' patients and evaluates each held-out fold.
/// Throws std::logic_error if an evaluated patient appears in training.
KFoldResult run_kfold(const PreparedCohort& prepared, const ExperimentConfig& config,
                      const KFoldOptions& options = {});

KFoldResult run_kfold(const PreparedCohort& prepared, const FoldAssignment& assignment,
                      const ExperimentConfig& config, const KFoldOptions& options = {});

struct AblationSetting {
  std::string axis;
  std::string name;
  ModelConfig model;
};

/// sequence modeling {on, off}; G {1, 2, 4}; encodings {none, +status,
/// +positional, +modality, +time}; shuffle-merge {on, off}.
std::vector<AblationSetting> ablation_grid(const ModelConfig& base);

struct AblationRow {
  AblationSetting setting;
  KFoldResult result;
};

std::vector<AblationRow> run_ablations(const PreparedCohort& prepared, const ExperimentConfig& config,
                                       std::span<const AblationSetting> grid,
                                       const std::function<void(const AblationRow&)>& on_row = {});

std::string ablations_to_csv(std::span<const AblationRow> rows);

/// Removes history so that only the query record is classified.
SequenceSample strip_history(const SequenceSample& sample);

}  // namespace medseq
