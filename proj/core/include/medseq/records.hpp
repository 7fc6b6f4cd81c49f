// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "medseq/tensor.hpp"

namespace medseq {

enum class Modality : std::uint8_t { Tapping = 0, Walking = 1, Memory = 2 };

inline constexpr int kModalityCount = 3;
inline constexpr std::array<Modality, kModalityCount> kModalities{
    Modality::Tapping, Modality::Walking, Modality::Memory};

struct ModalitySpec {
  int channels;
  int max_length;
};

constexpr ModalitySpec modality_spec(Modality m) {
  switch (m) {
    case Modality::Tapping: return {3, 1024};
    case Modality::Walking: return {3, 1024};
    case Modality::Memory: return {3, 32};
  }
  return {0, 0};
}

constexpr int index_of(Modality m) { return static_cast<int>(m); }

/// Tapping and walking carry accelerometer channels; memory carries
/// (actual, target, score) touch channels.
constexpr bool is_accelerometer(Modality m) { return m != Modality::Memory; }

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

enum class MedicationStatus : std::uint8_t {
  AnotherTime = 0,
  BeforeMedication = 1,
  AfterMedication = 2,
};

inline constexpr int kStatusCount = 3;
inline constexpr std::array<MedicationStatus, kStatusCount> kStatuses{
    MedicationStatus::AnotherTime, MedicationStatus::BeforeMedication,
    MedicationStatus::AfterMedication};

constexpr int index_of(MedicationStatus s) { return static_cast<int>(s); }
MedicationStatus status_from_index(int code);

std::string_view to_string(MedicationStatus s);
MedicationStatus parse_status(std::string_view s);

enum class Sex : std::uint8_t { Female, Male, Other };

struct Demographics {
  std::optional<double> age;
  std::optional<Sex> sex;
};

struct TestRecord {
  std::string patient_id;
  Modality modality = Modality::Tapping;
  std::int64_t timestamp = 0;  // epoch seconds, UTC
  MedicationStatus status = MedicationStatus::AnotherTime;
  bool is_pd = true;
  Matrix series;                    // raw_length x channels
  std::vector<double> sample_times; // seconds, nondecreasing
  Demographics demographics;
};

/// Raised for malformed input; `line()` is 1-based, 0 when not line-bound.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Parses one JSONL record. Sample rows are sorted by their time column if
/// the input is unsorted.
TestRecord parse_record(std::string_view line, std::size_t line_number = 0);

/// Parses a line-delimited stream; blank lines are skipped.
std::vector<TestRecord> parse_records(std::istream& in);

/// Inverse of parse_record (one line, no trailing newline).
std::string serialize_record(const TestRecord& record);

struct Cohort {
  std::map<std::string, std::vector<TestRecord>> patients;
  std::map<std::string, Demographics> demographics;

  std::size_t record_count() const;
  std::vector<std::string> patient_ids() const;
};

struct CohortFilter {
  std::array<bool, kStatusCount> keep_status{true, true, true};
  bool require_pd = true;
  std::size_t min_records = 6;
};

/// Status/PD filtering first, then drops patients with fewer than
/// `min_records` surviving records. Record order within a patient follows
/// the input order.
Cohort filter_cohort(std::span<const TestRecord> records, const CohortFilter& filter = {});
Cohort filter_cohort(const Cohort& cohort, const CohortFilter& filter = {});

/// Zero-phase first-order high-pass applied per channel (forward pass then
/// backward pass). Each pass starts from the steady state of its first input
/// sample, so a constant signal maps to exactly zero.
Matrix high_pass_filter(const Matrix& series, double sample_rate, double cutoff);

/// Keeps the earliest `length` rows, or appends zero rows.
Matrix pad_or_truncate(const Matrix& series, int length);

struct MemoryEvent {
  double time;
  double actual;
  double target;
  double score;
};

/// Memory-test touches as an (actual, target, score) matrix of the memory
/// modality's fixed length.
Matrix memory_series(std::span<const MemoryEvent> events);

struct PreprocessConfig {
  double sample_rate = 100.0;
  double cutoff = 0.3;
  bool high_pass = true;

  void validate() const;
};

/// Fixed-length model input for one record: high-pass for accelerometer
/// modalities, then pad/truncate to the modality's maximum length.
Matrix preprocess_series(const TestRecord& record, const PreprocessConfig& config);

/// Copy of `record` whose series is the preprocessed fixed-length matrix.
TestRecord preprocess_record(const TestRecord& record, const PreprocessConfig& config);

}  // namespace medseq
