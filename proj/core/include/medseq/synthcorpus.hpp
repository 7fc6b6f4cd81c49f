// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "medseq/records.hpp"

namespace medseq {

struct SynthConfig {
  int patients = 60;
  int records_min = 8;
  int records_max = 40;
  std::array<double, kModalityCount> modality_mix{0.56, 0.34, 0.10};
  std::array<double, kStatusCount> status_mix{0.506, 0.243, 0.251};
  /// Tremor amplitude multiplier per status (another, before, after).
  std::array<double, kStatusCount> status_multiplier{1.0, 1.5, 0.6};
  /// Per-patient base tremor amplitude, log-uniform on [min, max].
  double amplitude_min = 0.5;
  double amplitude_max = 2.0;
  double tremor_freq_min = 4.0;
  double tremor_freq_max = 6.0;
  double gait_freq_min = 1.5;
  double gait_freq_max = 2.2;
  double gait_amplitude = 1.0;
  double noise_sigma = 0.5;
  /// Mean memory-score shift per status (another, before, after).
  std::array<double, kStatusCount> memory_shift{0.0, -1.0, 1.0};
  double memory_base_min = 2.0;
  double memory_base_max = 6.0;
  double memory_noise = 0.5;
  /// Fraction of before/after sessions drawn around the peak hours.
  double peak_weight = 0.6;
  std::array<double, 2> peak_hours{10.0, 15.0};
  double peak_width_hours = 1.0;
  double day_start_hour = 7.0;
  double day_end_hour = 22.0;
  std::int64_t start_time = 1425859200;  // 2015-03-09T00:00:00Z
  int span_days = 180;
  int max_session_size = 3;
  double sample_rate = 100.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PatientLatent {
  std::string patient_id;
  double age = 0.0;
  Sex sex = Sex::Female;
  double amplitude = 0.0;
  double tremor_freq = 0.0;
  double phase = 0.0;
  double gait_freq = 0.0;
  double gait_phase = 0.0;
  double memory_base = 0.0;
  std::array<int, kStatusCount> status_counts{};
  std::array<int, kModalityCount> modality_counts{};
};

struct SynthCorpus {
  std::vector<TestRecord> records;  // grouped by patient, chronological
  std::vector<PatientLatent> latents;
};

SynthCorpus generate(const SynthConfig& config);

/// Config plus every per-patient latent, as JSON.
std::string manifest_json(const SynthConfig& config, const SynthCorpus& corpus);

/// One serialized record per line.
std::string corpus_jsonl(const SynthCorpus& corpus);

}  // namespace medseq
