// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "medseq/sequencer.hpp"
#include "oracles.hpp"

namespace medseq {
namespace {

using testing::brute_force_synchronize;
using testing::make_record;
using M = Modality;
using S = MedicationStatus;

TEST(Synchronize, WindowSplitsLateRecord) {
  std::vector<TestRecord> recs{make_record("p", M::Tapping, 0, S::AnotherTime),
                               make_record("p", M::Walking, 600, S::AnotherTime),
                               make_record("p", M::Memory, 2700, S::AnotherTime)};
  const auto obs = synchronize(recs, 1800);
  ASSERT_EQ(obs.size(), 2u);
  EXPECT_EQ(obs[0].member_count(), 2u);
  EXPECT_TRUE(obs[0].member(M::Tapping));
  EXPECT_TRUE(obs[0].member(M::Walking));
  EXPECT_DOUBLE_EQ(obs[0].observation_time, 300.0);
  EXPECT_EQ(obs[1].member_count(), 1u);
  EXPECT_TRUE(obs[1].member(M::Memory));
}

TEST(Synchronize, DuplicateModalityOpensNewGroup) {
  std::vector<TestRecord> recs{make_record("p", M::Tapping, 0, S::AnotherTime),
                               make_record("p", M::Tapping, 60, S::AnotherTime)};
  EXPECT_EQ(synchronize(recs).size(), 2u);
}

TEST(Synchronize, SingleRecord) {
  std::vector<TestRecord> recs{make_record("p", M::Walking, 42, S::AfterMedication)};
  const auto obs = synchronize(recs);
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs[0].member_count(), 1u);
  EXPECT_EQ(obs[0].status, S::AfterMedication);
}

TEST(Synchronize, StatusesNeverMix) {
  std::vector<TestRecord> recs{make_record("p", M::Tapping, 0, S::AnotherTime),
                               make_record("p", M::Walking, 10, S::BeforeMedication)};
  EXPECT_EQ(synchronize(recs).size(), 2u);
}

std::vector<TestRecord> random_records(std::mt19937_64& rng) {
  std::vector<TestRecord> recs;
  const int n = 1 + static_cast<int>(rng() % 20);
  for (int i = 0; i < n; ++i) {
    // Tag every record with its input index to recover identity afterwards.
    recs.push_back(make_record("p" + std::to_string(rng() % 3), kModalities[rng() % 3],
                               static_cast<std::int64_t>(rng() % 86400), kStatuses[rng() % 3],
                               static_cast<double>(i)));
  }
  return recs;
}

TEST(Synchronize, AgreesWithBruteForce) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto recs = random_records(rng);
    const auto window = static_cast<std::int64_t>(rng() % 2 == 0 ? 1800 : 60 + rng() % 7200);
    const auto got = synchronize(recs, window);
    const auto want = brute_force_synchronize(recs, window);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t g = 0; g < got.size(); ++g) {
      EXPECT_EQ(got[g].patient_id, want[g].patient);
      EXPECT_EQ(got[g].status, want[g].status);
      std::multiset<int> a, b;
      for (const auto& m : got[g].members) {
        if (m) a.insert(static_cast<int>(m->series(0, 0)));
      }
      for (auto i : want[g].members) b.insert(static_cast<int>(i));
      EXPECT_EQ(a, b) << "trial " << trial << " group " << g;
    }
  }
}

TEST(Synchronize, Invariants) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto recs = random_records(rng);
    const auto obs = synchronize(recs, 1800);
    std::size_t members = 0;
    double last_time = -1.0;
    for (const auto& o : obs) {
      members += o.member_count();
      EXPECT_LE(o.latest_timestamp() - o.earliest_timestamp(), 1800);
      EXPECT_GE(o.observation_time, last_time);
      last_time = o.observation_time;
      for (const auto& m : o.members) {
        if (!m) continue;
        EXPECT_EQ(m->patient_id, o.patient_id);
        EXPECT_EQ(m->status, o.status);
      }
    }
    EXPECT_EQ(members, recs.size());
  }
}

// ---------------------------------------------------------------------------

PatientTimeline timeline(const std::string& id, int n, std::int64_t step = 86400) {
  std::vector<TestRecord> recs;
  for (int i = 0; i < n; ++i) {
    recs.push_back(make_record(id, M::Tapping, i * step, kStatuses[static_cast<std::size_t>(i % 3)]));
  }
  auto tls = group_timelines(synchronize(recs));
  return tls.at(0);
}

TEST(BuildSequences, ExactlyKPlusOneForcesHistory) {
  const std::vector<PatientTimeline> tls{timeline("p", 5)};
  std::mt19937_64 rng(1);
  const auto b = build_sequences(tls, {4, QueryPolicy::LastAsQuery, HistoryPolicy::Random}, rng);
  ASSERT_EQ(b.samples.size(), 1u);
  const auto& s = b.samples[0];
  ASSERT_EQ(s.history.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.history[i], tls[0].observations[i]);
  EXPECT_EQ(s.query, tls[0].observations[4]);
  EXPECT_EQ(s.label, tls[0].observations[4]->status);
}

TEST(BuildSequences, AllEligibleCount) {
  const std::vector<PatientTimeline> tls{timeline("p", 10)};
  std::mt19937_64 rng(1);
  const auto b = build_sequences(tls, {4, QueryPolicy::AllEligible, HistoryPolicy::Random}, rng);
  ASSERT_EQ(b.samples.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(b.samples[i].query, tls[0].observations[i + 4]);
  EXPECT_EQ(b.skipped_patients, 0u);
}

TEST(BuildSequences, TooFewSkipped) {
  const std::vector<PatientTimeline> tls{timeline("p", 4)};
  std::mt19937_64 rng(1);
  const auto b = build_sequences(tls, {4, QueryPolicy::AllEligible, HistoryPolicy::Random}, rng);
  EXPECT_TRUE(b.samples.empty());
  EXPECT_EQ(b.skipped_patients, 1u);
}

TEST(BuildSequences, MostRecentAndEarliest) {
  const std::vector<PatientTimeline> tls{timeline("p", 9)};
  std::mt19937_64 rng(1);
  const auto recent =
      build_sequences(tls, {3, QueryPolicy::LastAsQuery, HistoryPolicy::MostRecent}, rng);
  ASSERT_EQ(recent.samples.size(), 1u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(recent.samples[0].history[i], tls[0].observations[5 + i]);
  }
  const auto earliest =
      build_sequences(tls, {3, QueryPolicy::LastAsQuery, HistoryPolicy::Earliest}, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(earliest.samples[0].history[i], tls[0].observations[i]);
  }
}

TEST(BuildSequences, StrictPredecessorsAndDeterminism) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TestRecord> recs;
    const int n = 6 + static_cast<int>(gen() % 30);
    for (int i = 0; i < n; ++i) {
      // Coarse timestamps so that equal observation times occur.
      recs.push_back(make_record("p" + std::to_string(gen() % 3), kModalities[gen() % 3],
                                 static_cast<std::int64_t>(gen() % 12) * 3600, kStatuses[gen() % 3]));
    }
    const auto tls = group_timelines(synchronize(recs));
    for (auto policy : {HistoryPolicy::Random, HistoryPolicy::MostRecent}) {
      const SequenceOptions opts{2, QueryPolicy::AllEligible, policy};
      std::mt19937_64 r1(trial), r2(trial);
      const auto a = build_sequences(tls, opts, r1);
      const auto b = build_sequences(tls, opts, r2);
      ASSERT_EQ(a.samples.size(), b.samples.size());
      for (std::size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i].history, b.samples[i].history);
        EXPECT_EQ(a.samples[i].query, b.samples[i].query);
        ASSERT_EQ(a.samples[i].history.size(), 2u);
        double prev = -1.0;
        for (const auto& h : a.samples[i].history) {
          EXPECT_LT(h->observation_time, a.samples[i].query->observation_time);
          EXPECT_GE(h->observation_time, prev);
          prev = h->observation_time;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

Cohort random_cohort(int patients, std::mt19937_64& rng, bool equal_counts = false) {
  Cohort c;
  for (int p = 0; p < patients; ++p) {
    const std::string id = "p" + std::to_string(p);
    const int n = equal_counts ? 10 : 6 + static_cast<int>(rng() % 60);
    for (int i = 0; i < n; ++i) {
      c.patients[id].push_back(make_record(id, M::Tapping, i, kStatuses[rng() % 3]));
    }
  }
  return c;
}

TEST(KFold, EqualCountsTwoPerFold) {
  std::mt19937_64 rng(1);
  const auto c = random_cohort(10, rng, true);
  const auto f = kfold_split(c, 5, 3);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(f.patients_in(k).size(), 2u);
}

TEST(KFold, PartitionAndDeterminism) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5 + static_cast<int>(rng() % 60);
    const auto c = random_cohort(n, rng);
    const auto seed = rng();
    const auto f = kfold_split(c, 5, seed);
    EXPECT_EQ(f.assignment, kfold_split(c, 5, seed).assignment);
    ASSERT_EQ(f.assignment.size(), c.patients.size());
    std::set<std::string> seen;
    for (int k = 0; k < 5; ++k) {
      for (const auto& id : f.patients_in(k)) EXPECT_TRUE(seen.insert(id).second);
      const auto rest = f.patients_not_in(k);
      EXPECT_EQ(rest.size() + f.patients_in(k).size(), c.patients.size());
    }
  }
}

TEST(KFold, LargeCohortBalanced) {
  std::mt19937_64 rng(487);
  const auto c = random_cohort(487, rng);
  const auto f = kfold_split(c, 5, 0);
  std::array<double, 5> counts{};
  std::array<std::array<double, 3>, 5> labels{};
  std::array<double, 3> global{};
  for (const auto& [id, recs] : c.patients) {
    const auto k = static_cast<std::size_t>(f.assignment.at(id));
    counts[k] += static_cast<double>(recs.size());
    for (const auto& r : recs) {
      labels[k][static_cast<std::size_t>(index_of(r.status))] += 1.0;
      global[static_cast<std::size_t>(index_of(r.status))] += 1.0;
    }
  }
  const double total = static_cast<double>(c.record_count());
  const double mean = total / 5.0;
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_LE(std::abs(counts[k] - mean), 0.2 * mean);
    for (std::size_t s = 0; s < 3; ++s) {
      EXPECT_LE(std::abs(labels[k][s] / counts[k] - global[s] / total), 0.10);
    }
  }
}

TEST(KFold, TooFewPatients) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(kfold_split(random_cohort(4, rng), 5, 0), std::invalid_argument);
}

}  // namespace
}  // namespace medseq
