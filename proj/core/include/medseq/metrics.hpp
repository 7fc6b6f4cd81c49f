// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medseq/records.hpp"
#include "medseq/tensor.hpp"

namespace medseq {

/// Area under the ROC curve by trapezoidal integration, tied scores grouped
/// into one step. Empty when either class is missing.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> positive);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // one-vs-rest
  std::size_t support = 0;
};

struct GroupMetrics;

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> macro_auc;  // mean over classes with a defined AUC
  std::array<ClassMetrics, kStatusCount> per_class;
  std::vector<GroupMetrics> groups;
};

struct GroupMetrics {
  std::string key;
  Metrics metrics;
};

/// `scores` holds one row of class probabilities per sample; the prediction
/// is the row argmax (lowest index on ties).
Metrics compute_metrics(std::span<const MedicationStatus> labels, const Matrix& scores);

/// Metrics overall plus one entry per distinct group key, keys sorted.
Metrics compute_metrics(std::span<const MedicationStatus> labels, const Matrix& scores,
                        std::span<const std::string> group_keys);

int argmax(const Logits& row);

}  // namespace medseq
