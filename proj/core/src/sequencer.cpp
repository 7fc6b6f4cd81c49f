// SPDX-License-Identifier: Apache-2.0
#include "medseq/sequencer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace medseq {

std::size_t SynchronizedObservation::member_count() const {
  return static_cast<std::size_t>(
      std::count_if(members.begin(), members.end(), [](const auto& m) { return m.has_value(); }));
}

std::int64_t SynchronizedObservation::earliest_timestamp() const {
  auto t = std::numeric_limits<std::int64_t>::max();
  for (const auto& m : members) {
    if (m) t = std::min(t, m->timestamp);
  }
  return t;
}

std::int64_t SynchronizedObservation::latest_timestamp() const {
  auto t = std::numeric_limits<std::int64_t>::min();
  for (const auto& m : members) {
    if (m) t = std::max(t, m->timestamp);
  }
  return t;
}

namespace {

SynchronizedObservation close_subgroup(const std::vector<const TestRecord*>& group) {
  SynchronizedObservation obs;
  obs.patient_id = group.front()->patient_id;
  obs.status = group.front()->status;
  double sum = 0.0;
  for (const auto* r : group) {
    obs.members[static_cast<std::size_t>(index_of(r->modality))] = *r;
    sum += static_cast<double>(r->timestamp);
  }
  obs.observation_time = sum / static_cast<double>(group.size());
  return obs;
}

}  // namespace

std::vector<SynchronizedObservation> synchronize(std::span<const TestRecord> records,
                                                 std::int64_t window) {
  std::map<std::pair<std::string, int>, std::vector<const TestRecord*>> groups;
  for (const auto& r : records) groups[{r.patient_id, index_of(r.status)}].push_back(&r);

  std::vector<SynchronizedObservation> out;
  for (auto& [key, group] : groups) {
    std::stable_sort(group.begin(), group.end(), [](const TestRecord* a, const TestRecord* b) {
      return a->timestamp < b->timestamp;
    });
    std::vector<const TestRecord*> open;
    std::array<bool, kModalityCount> present{};
    for (const auto* r : group) {
      const auto slot = static_cast<std::size_t>(index_of(r->modality));
      const bool fits = !open.empty() && r->timestamp - open.front()->timestamp <= window &&
                        !present[slot];
      if (!fits && !open.empty()) {
        out.push_back(close_subgroup(open));
        open.clear();
        present.fill(false);
      }
      open.push_back(r);
      present[slot] = true;
    }
    if (!open.empty()) out.push_back(close_subgroup(open));
  }

  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::forward_as_tuple(a.observation_time, a.patient_id, index_of(a.status)) <
           std::forward_as_tuple(b.observation_time, b.patient_id, index_of(b.status));
  });
  return out;
}

std::vector<PatientTimeline> group_timelines(std::vector<SynchronizedObservation> observations) {
  std::map<std::string, PatientTimeline> by_patient;
  for (auto& obs : observations) {
    auto& tl = by_patient[obs.patient_id];
    tl.patient_id = obs.patient_id;
    tl.observations.push_back(std::make_shared<const SynchronizedObservation>(std::move(obs)));
  }
  std::vector<PatientTimeline> out;
  out.reserve(by_patient.size());
  for (auto& [id, tl] : by_patient) {
    std::stable_sort(tl.observations.begin(), tl.observations.end(),
                     [](const ObservationPtr& a, const ObservationPtr& b) {
                       return a->observation_time < b->observation_time;
                     });
    out.push_back(std::move(tl));
  }
  return out;
}

namespace {

std::vector<ObservationPtr> pick_history(const std::vector<ObservationPtr>& past, int k,
                                         HistoryPolicy policy, std::mt19937_64& rng) {
  const auto n = past.size();
  const auto kk = static_cast<std::size_t>(k);
  std::vector<ObservationPtr> chosen;
  switch (policy) {
    case HistoryPolicy::MostRecent:
      chosen.assign(past.end() - static_cast<std::ptrdiff_t>(kk), past.end());
      break;
    case HistoryPolicy::Earliest:
      chosen.assign(past.begin(), past.begin() + static_cast<std::ptrdiff_t>(kk));
      break;
    case HistoryPolicy::Random: {
      // Partial Fisher-Yates over indices, then restore chronological order.
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < kk; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      idx.resize(kk);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) chosen.push_back(past[i]);
      break;
    }
  }
  return chosen;
}

}  // namespace

SequenceBuild build_sequences(std::span<const PatientTimeline> timelines,
                              const SequenceOptions& options, std::mt19937_64& rng) {
  if (options.k < 0) throw std::invalid_argument("sequence k must be non-negative");
  SequenceBuild result;
  for (const auto& tl : timelines) {
    const auto& obs = tl.observations;
    if (obs.size() < static_cast<std::size_t>(options.k) + 1) {
      ++result.skipped_patients;
      continue;
    }
    auto emit = [&](std::size_t q) {
      // Strict predecessors only: equal observation times never leak.
      std::vector<ObservationPtr> past;
      for (std::size_t j = 0; j < q; ++j) {
        if (obs[j]->observation_time < obs[q]->observation_time) past.push_back(obs[j]);
      }
      if (past.size() < static_cast<std::size_t>(options.k)) return false;
      SequenceSample s;
      s.patient_id = tl.patient_id;
      s.history = pick_history(past, options.k, options.history, rng);
      s.query = obs[q];
      s.label = obs[q]->status;
      result.samples.push_back(std::move(s));
      return true;
    };
    if (options.query == QueryPolicy::LastAsQuery) {
      if (!emit(obs.size() - 1)) ++result.skipped_patients;
    } else {
      bool any = false;
      for (std::size_t q = static_cast<std::size_t>(options.k); q < obs.size(); ++q) any |= emit(q);
      if (!any) ++result.skipped_patients;
    }
  }
  return result;
}

std::vector<std::string> FoldAssignment::patients_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldAssignment::patients_not_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f != fold) out.push_back(id);
  }
  return out;
}

FoldAssignment kfold_split(const Cohort& cohort, int folds, std::uint64_t seed) {
  if (folds < 1) throw std::invalid_argument("fold count must be >= 1");
  if (cohort.patients.size() < static_cast<std::size_t>(folds)) {
    throw std::invalid_argument("kfold_split: " + std::to_string(cohort.patients.size()) +
                                " patients cannot fill " + std::to_string(folds) + " folds");
  }

  struct Entry {
    std::string id;
    std::array<double, kStatusCount> labels{};
    double count = 0.0;
  };
  std::vector<Entry> entries;
  std::array<double, kStatusCount> global{};
  double total = 0.0;
  for (const auto& [id, recs] : cohort.patients) {
    Entry e{id, {}, static_cast<double>(recs.size())};
    for (const auto& r : recs) e.labels[static_cast<std::size_t>(index_of(r.status))] += 1.0;
    for (int c = 0; c < kStatusCount; ++c) global[static_cast<std::size_t>(c)] += e.labels[static_cast<std::size_t>(c)];
    total += e.count;
    entries.push_back(std::move(e));
  }
  for (auto& g : global) g /= total;

  // Seeded shuffle first so that the stable sort breaks count ties by seed.
  std::mt19937_64 rng(seed);
  std::shuffle(entries.begin(), entries.end(), rng);
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.count > b.count; });

  const double target = total / folds;
  std::vector<double> fold_count(static_cast<std::size_t>(folds), 0.0);
  std::vector<std::array<double, kStatusCount>> fold_labels(static_cast<std::size_t>(folds));

  FoldAssignment out;
  out.fold_count = folds;
  out.seed = seed;
  for (const auto& e : entries) {
    const double lightest = *std::min_element(fold_count.begin(), fold_count.end());
    int best = -1;
    double best_dev = 0.0;
    for (int f = 0; f < folds; ++f) {
      const auto fi = static_cast<std::size_t>(f);
      // Only folds near the lightest load compete; the label mix decides among them.
      if (fold_count[fi] > lightest + 0.1 * target) continue;
      const double n = fold_count[fi] + e.count;
      double dev = 0.0;
      for (std::size_t c = 0; c < kStatusCount; ++c) {
        dev += std::abs((fold_labels[fi][c] + e.labels[c]) / n - global[c]);
      }
      const bool better = best < 0 || dev < best_dev - 1e-12 ||
                          (std::abs(dev - best_dev) <= 1e-12 &&
                           fold_count[fi] < fold_count[static_cast<std::size_t>(best)]);
      if (better) {
        best = f;
        best_dev = dev;
      }
    }
    const auto bi = static_cast<std::size_t>(best);
    fold_count[bi] += e.count;
    for (std::size_t c = 0; c < kStatusCount; ++c) fold_labels[bi][c] += e.labels[c];
    out.assignment[e.id] = best;
  }
  return out;
}

}  // namespace medseq
