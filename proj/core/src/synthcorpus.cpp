// SPDX-License-Identifier: Apache-2.0
#include "medseq/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace medseq {

namespace {

constexpr double kGravity = 9.81;

double round4(double x) { return std::round(x * 1e4) / 1e4; }

template <std::size_t N>
void check_distribution(const std::array<double, N>& p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(name) + " must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(std::string(name) + " must sum to 1");
}

struct Session {
  std::int64_t time = 0;
  MedicationStatus status = MedicationStatus::AnotherTime;
  std::vector<Modality> modalities;
};

class PatientGenerator {
 public:
  PatientGenerator(const SynthConfig& config, std::mt19937_64& rng) : c_(config), rng_(rng) {}

  PatientLatent latent(int index) {
    PatientLatent p;
    p.patient_id = "synth-" + std::string(index < 10 ? "00" : index < 100 ? "0" : "") + std::to_string(index);
    p.age = std::round(uniform(45.0, 86.0));
    p.sex = uniform(0.0, 1.0) < 0.4 ? Sex::Female : Sex::Male;
    p.amplitude = std::exp(uniform(std::log(c_.amplitude_min), std::log(c_.amplitude_max)));
    p.tremor_freq = uniform(c_.tremor_freq_min, c_.tremor_freq_max);
    p.phase = uniform(0.0, 2.0 * std::numbers::pi);
    p.gait_freq = uniform(c_.gait_freq_min, c_.gait_freq_max);
    p.gait_phase = uniform(0.0, 2.0 * std::numbers::pi);
    p.memory_base = uniform(c_.memory_base_min, c_.memory_base_max);
    return p;
  }

  std::vector<Session> sessions(int record_target) {
    std::vector<Session> out;
    std::uniform_int_distribution<int> size_dist(1, c_.max_session_size);
    const auto quota = status_quota(record_target);
    std::discrete_distribution<int> modality_dist(c_.modality_mix.begin(), c_.modality_mix.end());
    for (auto status : kStatuses) {
      // i.i.d. modalities cut into sessions; a repeated modality opens a new one.
      std::vector<Modality> draws;
      for (int k = 0; k < quota[static_cast<std::size_t>(index_of(status))]; ++k) {
        draws.push_back(kModalities[static_cast<std::size_t>(modality_dist(rng_))]);
      }
      std::size_t i = 0;
      while (i < draws.size()) {
        Session s;
        s.status = status;
        const auto size = static_cast<std::size_t>(size_dist(rng_));
        while (i < draws.size() && s.modalities.size() < size &&
               std::find(s.modalities.begin(), s.modalities.end(), draws[i]) == s.modalities.end()) {
          s.modalities.push_back(draws[i++]);
        }
        std::sort(s.modalities.begin(), s.modalities.end());
        s.time = draw_time(status);
        out.push_back(std::move(s));
      }
    }
    std::sort(out.begin(), out.end(), [](const Session& a, const Session& b) { return a.time < b.time; });
    return out;
  }

  TestRecord record(const PatientLatent& p, const Session& s, Modality m, std::int64_t time) {
    TestRecord r;
    r.patient_id = p.patient_id;
    r.modality = m;
    r.timestamp = time;
    r.status = s.status;
    r.is_pd = true;
    r.demographics.age = p.age;
    r.demographics.sex = p.sex;
    const auto si = static_cast<std::size_t>(index_of(s.status));
    if (m == Modality::Memory) {
      std::uniform_int_distribution<int> touches(8, modality_spec(m).max_length);
      std::uniform_int_distribution<int> cell(0, 8);
      std::normal_distribution<double> noise(0.0, c_.memory_noise);
      const int n = touches(rng_);
      r.series.resize(n, 3);
      double t = 0.0;
      for (int i = 0; i < n; ++i) {
        const int target = cell(rng_);
        const bool correct = uniform(0.0, 1.0) < 0.8;
        const int actual = correct ? target : (target + 1 + cell(rng_) % 8) % 9;
        t += uniform(0.4, 1.2);
        r.sample_times.push_back(round4(t));
        r.series(i, 0) = actual;
        r.series(i, 1) = target;
        r.series(i, 2) = round4(p.memory_base + c_.memory_shift[si] + noise(rng_));
      }
      return r;
    }
    const int n = modality_spec(m).max_length;
    const double amp = p.amplitude * c_.status_multiplier[si];
    std::normal_distribution<double> noise(0.0, c_.noise_sigma);
    r.series.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      const double t = i / c_.sample_rate;
      r.sample_times.push_back(round4(t));
      const double tremor = amp * std::sin(2.0 * std::numbers::pi * p.tremor_freq * t + p.phase);
      const double gait = m == Modality::Walking
                              ? c_.gait_amplitude * std::sin(2.0 * std::numbers::pi * p.gait_freq * t + p.gait_phase)
                              : 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        double v = tremor / std::numbers::sqrt3 + noise(rng_);
        if (ch == 2) v += kGravity + gait;
        r.series(i, ch) = round4(v);
      }
    }
    return r;
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  std::int64_t draw_time(MedicationStatus status) {
    std::uniform_int_distribution<int> day(0, c_.span_days - 1);
    double hour = 0.0;
    const bool peaked = status != MedicationStatus::AnotherTime && uniform(0.0, 1.0) < c_.peak_weight;
    if (peaked) {
      const double center = c_.peak_hours[uniform(0.0, 1.0) < 0.5 ? 0 : 1];
      std::normal_distribution<double> spread(center, c_.peak_width_hours);
      hour = std::clamp(spread(rng_), c_.day_start_hour, c_.day_end_hour - 1e-6);
    } else {
      hour = uniform(c_.day_start_hour, c_.day_end_hour);
    }
    return c_.start_time + static_cast<std::int64_t>(day(rng_)) * 86400 +
           static_cast<std::int64_t>(hour * 3600.0);
  }

  // Records per status: floor of the expected share, leftovers assigned by
  // weighted draws on the fractional parts, every status with nonzero mix at
  // least once.
  std::array<int, kStatusCount> status_quota(int n) {
    std::array<int, kStatusCount> q{};
    std::array<double, kStatusCount> frac{};
    int assigned = 0;
    for (std::size_t i = 0; i < kStatusCount; ++i) {
      const double share = n * c_.status_mix[i];
      q[i] = static_cast<int>(std::floor(share));
      frac[i] = share - q[i];
      assigned += q[i];
    }
    for (; assigned < n; ++assigned) {
      std::discrete_distribution<int> d(frac.begin(), frac.end());
      const auto i = static_cast<std::size_t>(d(rng_));
      ++q[i];
      frac[i] = 0.0;
    }
    for (std::size_t i = 0; i < kStatusCount; ++i) {
      if (q[i] > 0 || c_.status_mix[i] <= 0.0) continue;
      ++q[i];
      --*std::max_element(q.begin(), q.end());
    }
    return q;
  }

  const SynthConfig& c_;
  std::mt19937_64& rng_;
};

}  // namespace

void SynthConfig::validate() const {
  if (patients < 1) throw std::invalid_argument("synth.patients must be >= 1");
  if (records_min < 3 || records_max < records_min) {
    throw std::invalid_argument("synth.records_min must be >= 3 and <= synth.records_max");
  }
  check_distribution(modality_mix, "synth.modality_mix");
  check_distribution(status_mix, "synth.status_mix");
  for (double m : status_multiplier) {
    if (!(m > 0.0)) throw std::invalid_argument("synth.status_multiplier values must be > 0");
  }
  if (!(amplitude_min > 0.0 && amplitude_max >= amplitude_min)) {
    throw std::invalid_argument("synth amplitude range must be positive and ordered");
  }
  if (!(tremor_freq_min > 0.0 && tremor_freq_max >= tremor_freq_min)) {
    throw std::invalid_argument("synth tremor frequency range must be positive and ordered");
  }
  if (!(gait_freq_min > 0.0 && gait_freq_max >= gait_freq_min)) {
    throw std::invalid_argument("synth gait frequency range must be positive and ordered");
  }
  if (noise_sigma < 0.0 || memory_noise < 0.0) throw std::invalid_argument("synth noise must be >= 0");
  if (!(peak_weight >= 0.0 && peak_weight <= 1.0)) {
    throw std::invalid_argument("synth.peak_weight must lie in [0, 1]");
  }
  if (!(day_start_hour >= 0.0 && day_end_hour <= 24.0 && day_start_hour < day_end_hour)) {
    throw std::invalid_argument("synth day hours must satisfy 0 <= start < end <= 24");
  }
  if (span_days < 1) throw std::invalid_argument("synth.span_days must be >= 1");
  if (max_session_size < 1 || max_session_size > kModalityCount) {
    throw std::invalid_argument("synth.max_session_size must lie in [1, 3]");
  }
  if (!(sample_rate > 0.0)) throw std::invalid_argument("synth.sample_rate must be > 0");
}

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  PatientGenerator gen(config, rng);
  std::uniform_int_distribution<int> count(config.records_min, config.records_max);
  std::uniform_int_distribution<int> offset(0, 300);
  SynthCorpus out;
  for (int n = 0; n < config.patients; ++n) {
    PatientLatent p = gen.latent(n);
    const auto sessions = gen.sessions(count(rng));
    for (const auto& s : sessions) {
      std::int64_t t = s.time;
      for (auto m : s.modalities) {
        out.records.push_back(gen.record(p, s, m, t));
        ++p.status_counts[static_cast<std::size_t>(index_of(s.status))];
        ++p.modality_counts[static_cast<std::size_t>(index_of(m))];
        t += 30 + offset(rng);
      }
    }
    out.latents.push_back(std::move(p));
  }
  return out;
}

std::string manifest_json(const SynthConfig& config, const SynthCorpus& corpus) {
  nlohmann::ordered_json j;
  auto& c = j["config"];
  c["patients"] = config.patients;
  c["records_min"] = config.records_min;
  c["records_max"] = config.records_max;
  c["modality_mix"] = config.modality_mix;
  c["status_mix"] = config.status_mix;
  c["status_multiplier"] = config.status_multiplier;
  c["amplitude_range"] = {config.amplitude_min, config.amplitude_max};
  c["tremor_freq_range"] = {config.tremor_freq_min, config.tremor_freq_max};
  c["gait_freq_range"] = {config.gait_freq_min, config.gait_freq_max};
  c["gait_amplitude"] = config.gait_amplitude;
  c["noise_sigma"] = config.noise_sigma;
  c["memory_shift"] = config.memory_shift;
  c["memory_base_range"] = {config.memory_base_min, config.memory_base_max};
  c["memory_noise"] = config.memory_noise;
  c["peak_weight"] = config.peak_weight;
  c["peak_hours"] = config.peak_hours;
  c["peak_width_hours"] = config.peak_width_hours;
  c["day_hours"] = {config.day_start_hour, config.day_end_hour};
  c["start_time"] = config.start_time;
  c["span_days"] = config.span_days;
  c["max_session_size"] = config.max_session_size;
  c["sample_rate"] = config.sample_rate;
  c["seed"] = config.seed;
  j["records"] = corpus.records.size();
  auto& pats = j["patients"];
  pats = nlohmann::ordered_json::array();
  for (const auto& p : corpus.latents) {
    nlohmann::ordered_json e;
    e["patient_id"] = p.patient_id;
    e["age"] = p.age;
    e["sex"] = p.sex == Sex::Female ? "female" : p.sex == Sex::Male ? "male" : "other";
    e["amplitude"] = p.amplitude;
    e["tremor_freq"] = p.tremor_freq;
    e["phase"] = p.phase;
    e["gait_freq"] = p.gait_freq;
    e["gait_phase"] = p.gait_phase;
    e["memory_base"] = p.memory_base;
    auto& sc = e["status_counts"];
    for (auto s : kStatuses) sc[std::string(to_string(s))] = p.status_counts[static_cast<std::size_t>(index_of(s))];
    auto& mc = e["modality_counts"];
    for (auto m : kModalities) mc[std::string(to_string(m))] = p.modality_counts[static_cast<std::size_t>(index_of(m))];
    pats.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string corpus_jsonl(const SynthCorpus& corpus) {
  std::string out;
  for (const auto& r : corpus.records) {
    out += serialize_record(r);
    out += '\n';
  }
  return out;
}

}  // namespace medseq
