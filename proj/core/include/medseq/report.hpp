// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "medseq/metrics.hpp"
#include "medseq/shuffle_encoder.hpp"
#include "medseq/training.hpp"

namespace medseq {

struct HourlyRow {
  int hour = 0;
  std::size_t count = 0;
  std::array<double, kStatusCount> truth{};      // status ratios among ground-truth labels
  std::array<double, kStatusCount> predicted{};  // status ratios among predictions
  std::array<double, kStatusCount> abs_diff{};
  double drift = 0.0;  // mean of abs_diff over statuses
};

struct DriftSummary {
  double mean = 0.0;
  double std = 0.0;  // population std over hours with data
  int hours = 0;
};

/// Always 24 rows; hours without predictions have zero counts and ratios.
std::vector<HourlyRow> hourly_ratios(std::span<const Prediction> predictions);
DriftSummary drift_summary(std::span<const HourlyRow> rows);

std::string hourly_csv(std::span<const HourlyRow> rows);
std::string groups_csv(const Metrics& metrics);

struct TimelineRow {
  std::string patient_id;
  int hour = 0;
  std::size_t count = 0;
  MedicationStatus truth = MedicationStatus::AnotherTime;
  MedicationStatus predicted = MedicationStatus::AnotherTime;
};

/// Status with the highest ratio per (patient, hour); ties go to the lower
/// status code.
std::vector<TimelineRow> dominant_timeline(std::span<const Prediction> predictions);
std::string timeline_csv(std::span<const TimelineRow> rows);

std::string predictions_csv(std::span<const Prediction> predictions);
std::vector<Prediction> parse_predictions_csv(std::istream& in);

std::string metrics_json(const Metrics& metrics);

/// Attention mass from query rows onto each history record, normalized over
/// history columns; one sample per (layer, head, query row).
struct HistoryAttention {
  std::vector<std::vector<double>> samples;  // per history record
  std::vector<double> mean;
  std::vector<double> median;
};

HistoryAttention aggregate_history_attention(const AttentionTrace& trace);

std::string trace_json(const AttentionTrace& trace);

}  // namespace medseq
