// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#include "medseq/synthcorpus.hpp"
#include "oracles.hpp"

namespace medseq {
namespace {

using S = MedicationStatus;

SynthConfig small(std::uint64_t seed, int patients = 12) {
  SynthConfig c;
  c.patients = patients;
  c.records_max = 20;
  c.seed = seed;
  return c;
}

// Energy in the 4-6 Hz band summed over channels, mean removed per channel.
double band_energy(const TestRecord& r, double rate) {
  const auto n = r.series.rows();
  double e = 0.0;
  for (Eigen::Index ch = 0; ch < r.series.cols(); ++ch) {
    const double mean = r.series.col(ch).mean();
    const int k0 = static_cast<int>(std::ceil(4.0 * static_cast<double>(n) / rate));
    const int k1 = static_cast<int>(std::floor(6.0 * static_cast<double>(n) / rate));
    for (int k = k0; k <= k1; ++k) {
      double re = 0.0, im = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double w = 2.0 * std::numbers::pi * k * static_cast<double>(i) / static_cast<double>(n);
        const double v = r.series(i, ch) - mean;
        re += v * std::cos(w);
        im -= v * std::sin(w);
      }
      e += re * re + im * im;
    }
  }
  return e;
}

struct OracleAuc {
  double per_patient;
  double agnostic;
};

// Before (positive) vs after, scored by band energy; the per-patient score is
// relative to the median of that patient's another_time records.
OracleAuc band_oracle(const SynthCorpus& corpus, double rate) {
  std::map<std::string, std::vector<double>> baseline;
  std::vector<std::pair<const TestRecord*, double>> scored;
  for (const auto& r : corpus.records) {
    if (r.modality == Modality::Memory) continue;
    const double e = band_energy(r, rate);
    if (r.status == S::AnotherTime) {
      baseline[r.patient_id].push_back(e);
    } else {
      scored.emplace_back(&r, e);
    }
  }
  std::map<std::string, double> median;
  for (auto& [id, v] : baseline) {
    std::sort(v.begin(), v.end());
    median[id] = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  }
  std::vector<double> rel, raw;
  auto pos = std::make_unique<bool[]>(scored.size());
  std::size_t n = 0;
  for (const auto& [r, e] : scored) {
    if (!median.count(r->patient_id)) continue;
    rel.push_back(e / median[r->patient_id]);
    raw.push_back(e);
    pos[n++] = r->status == S::BeforeMedication;
  }
  const std::span<const bool> labels(pos.get(), n);
  return {testing::pairwise_auc(rel, labels), testing::pairwise_auc(raw, labels)};
}

TEST(Synth, Deterministic) {
  const auto a = corpus_jsonl(generate(small(5)));
  const auto b = corpus_jsonl(generate(small(5)));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, corpus_jsonl(generate(small(6))));
  EXPECT_EQ(manifest_json(small(5), generate(small(5))), manifest_json(small(5), generate(small(5))));
}

TEST(Synth, EveryLineParsesAndSurvivesFilter) {
  const auto cfg = small(7);
  const auto corpus = generate(cfg);
  std::istringstream in(corpus_jsonl(corpus));
  const auto parsed = parse_records(in);
  ASSERT_EQ(parsed.size(), corpus.records.size());
  const auto kept = filter_cohort(parsed);
  EXPECT_EQ(kept.record_count(), parsed.size());
  EXPECT_EQ(kept.patients.size(), static_cast<std::size_t>(cfg.patients));
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    EXPECT_EQ(parsed[i].patient_id, corpus.records[i].patient_id);
    EXPECT_EQ(parsed[i].series, corpus.records[i].series);
  }
}

TEST(Synth, PatientShape) {
  const auto cfg = small(8, 20);
  const auto corpus = generate(cfg);
  ASSERT_EQ(corpus.latents.size(), 20u);
  std::map<std::string, std::set<S>> statuses;
  std::map<std::string, int> counts;
  std::map<std::string, std::int64_t> last;
  for (const auto& r : corpus.records) {
    statuses[r.patient_id].insert(r.status);
    ++counts[r.patient_id];
    if (last.count(r.patient_id)) EXPECT_LE(last[r.patient_id], r.timestamp);
    last[r.patient_id] = r.timestamp;
    EXPECT_TRUE(r.is_pd);
    EXPECT_EQ(r.series.cols(), 3);
    EXPECT_LE(r.series.rows(), modality_spec(r.modality).max_length);
  }
  EXPECT_EQ(statuses.size(), 20u);
  for (const auto& [id, s] : statuses) EXPECT_EQ(s.size(), 3u) << id;
  for (const auto& [id, n] : counts) {
    EXPECT_GE(n, cfg.records_min) << id;
    EXPECT_LE(n, cfg.records_max) << id;
  }
}

TEST(Synth, MixesMatchConfig) {
  const SynthConfig cfg;  // default 60 patients
  const auto corpus = generate(cfg);
  std::array<double, kStatusCount> status{};
  std::array<double, kModalityCount> modality{};
  for (const auto& r : corpus.records) {
    status[static_cast<std::size_t>(index_of(r.status))] += 1.0;
    modality[static_cast<std::size_t>(index_of(r.modality))] += 1.0;
  }
  const auto n = static_cast<double>(corpus.records.size());
  for (std::size_t i = 0; i < kStatusCount; ++i) EXPECT_NEAR(status[i] / n, cfg.status_mix[i], 0.02);
  for (std::size_t i = 0; i < kModalityCount; ++i) EXPECT_NEAR(modality[i] / n, cfg.modality_mix[i], 0.03);
}

TEST(Synth, SessionsHoldDistinctModalities) {
  const auto corpus = generate(small(13));
  for (std::size_t i = 1; i < corpus.records.size(); ++i) {
    const auto& a = corpus.records[i - 1];
    const auto& b = corpus.records[i];
    if (a.patient_id != b.patient_id || a.status != b.status) continue;
    if (b.timestamp - a.timestamp <= 330) EXPECT_NE(a.modality, b.modality);
  }
}

TEST(Synth, TimesInsideDayWindow) {
  const auto cfg = small(9);
  for (const auto& r : generate(cfg).records) {
    const double h = static_cast<double>((r.timestamp - cfg.start_time) % 86400) / 3600.0;
    EXPECT_GE(h, cfg.day_start_hour);
    EXPECT_LT(h, cfg.day_end_hour);
    EXPECT_LT(r.timestamp, cfg.start_time + cfg.span_days * 86400LL);
  }
}

TEST(Synth, BandEnergyOracleSeparatesStatuses) {
  const auto cfg = small(10, 20);
  const auto auc = band_oracle(generate(cfg), cfg.sample_rate);
  EXPECT_GE(auc.per_patient, 0.95);
  EXPECT_LT(auc.agnostic, auc.per_patient);
}

TEST(Synth, FlatMultiplierCarriesNoSignal) {
  auto cfg = small(11, 30);
  cfg.status_multiplier = {1.0, 1.0, 1.0};
  const auto auc = band_oracle(generate(cfg), cfg.sample_rate);
  EXPECT_NEAR(auc.per_patient, 0.5, 0.1);
}

TEST(Synth, MemoryScoreShift) {
  auto cfg = small(12, 40);
  cfg.modality_mix = {0.0, 0.0, 1.0};
  cfg.max_session_size = 1;
  std::array<double, kStatusCount> sum{}, n{};
  for (const auto& r : generate(cfg).records) {
    ASSERT_EQ(r.modality, Modality::Memory);
    const auto si = static_cast<std::size_t>(index_of(r.status));
    sum[si] += r.series.col(2).mean();
    n[si] += 1.0;
  }
  EXPECT_LT(sum[1] / n[1], sum[0] / n[0]);
  EXPECT_GT(sum[2] / n[2], sum[0] / n[0]);
}

TEST(Synth, InvalidConfigRejected) {
  auto c = small(1);
  c.patients = 0;
  EXPECT_THROW(generate(c), std::invalid_argument);
  c = small(1);
  c.records_min = 2;
  EXPECT_THROW(generate(c), std::invalid_argument);
  c = small(1);
  c.tremor_freq_min = 7.0;
  EXPECT_THROW(generate(c), std::invalid_argument);
}

}  // namespace
}  // namespace medseq
