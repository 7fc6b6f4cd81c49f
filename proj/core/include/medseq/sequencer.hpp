// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "medseq/records.hpp"

namespace medseq {

/// Records of one patient and one status that fall inside the merge window,
/// at most one per modality.
struct SynchronizedObservation {
  std::string patient_id;
  MedicationStatus status = MedicationStatus::AnotherTime;
  double observation_time = 0.0;  // mean of member timestamps
  std::array<std::optional<TestRecord>, kModalityCount> members;

  const std::optional<TestRecord>& member(Modality m) const {
    return members[static_cast<std::size_t>(index_of(m))];
  }
  std::size_t member_count() const;
  std::int64_t earliest_timestamp() const;
  std::int64_t latest_timestamp() const;
};

using ObservationPtr = std::shared_ptr<const SynchronizedObservation>;

inline constexpr std::int64_t kDefaultMergeWindow = 1800;

/// Greedy left-to-right merge within each (patient, status) group. A record
/// joins the open subgroup iff it lies within `window` seconds of the
/// subgroup's earliest member and its modality is not yet present.
std::vector<SynchronizedObservation> synchronize(std::span<const TestRecord> records,
                                                 std::int64_t window = kDefaultMergeWindow);

struct PatientTimeline {
  std::string patient_id;
  std::vector<ObservationPtr> observations;  // chronological, across statuses
};

std::vector<PatientTimeline> group_timelines(std::vector<SynchronizedObservation> observations);

struct SequenceSample {
  std::string patient_id;
  std::vector<ObservationPtr> history;  // chronological
  ObservationPtr query;
  MedicationStatus label = MedicationStatus::AnotherTime;
};

enum class QueryPolicy { LastAsQuery, AllEligible };
enum class HistoryPolicy { Random, MostRecent, Earliest };

struct SequenceOptions {
  int k = 4;
  QueryPolicy query = QueryPolicy::AllEligible;
  HistoryPolicy history = HistoryPolicy::Random;
};

struct SequenceBuild {
  std::vector<SequenceSample> samples;
  std::size_t skipped_patients = 0;
};

/// History is drawn from observations strictly earlier than the query.
/// Patients with fewer than k+1 observations are skipped and counted.
SequenceBuild build_sequences(std::span<const PatientTimeline> timelines,
                              const SequenceOptions& options, std::mt19937_64& rng);

struct FoldAssignment {
  int fold_count = 5;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;

  std::vector<std::string> patients_in(int fold) const;
  std::vector<std::string> patients_not_in(int fold) const;
};

/// Patient-grouped split balancing record counts and label mix across folds.
FoldAssignment kfold_split(const Cohort& cohort, int folds = 5, std::uint64_t seed = 0);

}  // namespace medseq
