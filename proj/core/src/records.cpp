// SPDX-License-Identifier: Apache-2.0
#include "medseq/records.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace medseq {

using nlohmann::json;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Tapping: return "tapping";
    case Modality::Walking: return "walking";
    case Modality::Memory: return "memory";
  }
  return "?";
}

Modality parse_modality(std::string_view s) {
  if (s == "tapping") return Modality::Tapping;
  if (s == "walking") return Modality::Walking;
  if (s == "memory") return Modality::Memory;
  throw std::invalid_argument("unknown modality '" + std::string(s) + "'");
}

MedicationStatus status_from_index(int code) {
  if (code < 0 || code >= kStatusCount) {
    throw std::out_of_range("status code " + std::to_string(code) + " out of range");
  }
  return static_cast<MedicationStatus>(code);
}

std::string_view to_string(MedicationStatus s) {
  switch (s) {
    case MedicationStatus::AnotherTime: return "another_time";
    case MedicationStatus::BeforeMedication: return "before_med";
    case MedicationStatus::AfterMedication: return "after_med";
  }
  return "?";
}

MedicationStatus parse_status(std::string_view s) {
  if (s == "another_time") return MedicationStatus::AnotherTime;
  if (s == "before_med") return MedicationStatus::BeforeMedication;
  if (s == "after_med") return MedicationStatus::AfterMedication;
  throw std::invalid_argument("unknown status '" + std::string(s) + "'");
}

namespace {

std::string_view sex_name(Sex s) {
  switch (s) {
    case Sex::Female: return "female";
    case Sex::Male: return "male";
    case Sex::Other: return "other";
  }
  return "other";
}

Sex parse_sex(std::string_view s) {
  if (s == "female") return Sex::Female;
  if (s == "male") return Sex::Male;
  if (s == "other") return Sex::Other;
  throw std::invalid_argument("unknown sex '" + std::string(s) + "'");
}

std::string line_prefix(std::size_t line) {
  return line > 0 ? "line " + std::to_string(line) + ": " : std::string{};
}

}  // namespace

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error(line_prefix(line) + what), line_(line) {}

TestRecord parse_record(std::string_view line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_number, "record is not a JSON object");

  TestRecord r;
  try {
    r.patient_id = j.at("patient_id").get<std::string>();
    r.modality = parse_modality(j.at("modality").get<std::string>());
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    r.status = parse_status(j.at("status").get<std::string>());
    if (auto it = j.find("is_pd"); it != j.end()) r.is_pd = it->get<bool>();
    if (auto it = j.find("age"); it != j.end() && !it->is_null()) {
      r.demographics.age = it->get<double>();
    }
    if (auto it = j.find("sex"); it != j.end() && !it->is_null()) {
      r.demographics.sex = parse_sex(it->get<std::string>());
    }

    const auto& samples = j.at("samples");
    if (!samples.is_array() || samples.empty()) {
      throw std::invalid_argument("'samples' must be a nonempty array");
    }
    const int channels = modality_spec(r.modality).channels;
    const auto n = static_cast<Eigen::Index>(samples.size());
    Matrix raw(n, channels + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& row = samples[static_cast<std::size_t>(i)];
      if (!row.is_array() || row.size() != static_cast<std::size_t>(channels + 1)) {
        throw std::invalid_argument("channel count mismatch at sample " + std::to_string(i) +
                                    ": expected time plus " + std::to_string(channels) +
                                    " channels for " + std::string(to_string(r.modality)));
      }
      for (int c = 0; c <= channels; ++c) raw(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return raw(a, 0) < raw(b, 0); });

    r.series.resize(n, channels);
    r.sample_times.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto src = order[static_cast<std::size_t>(i)];
      r.sample_times[static_cast<std::size_t>(i)] = raw(src, 0);
      r.series.row(i) = raw.row(src).tail(channels);
    }
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(line_number, e.what());
  }
  return r;
}

std::vector<TestRecord> parse_records(std::istream& in) {
  std::vector<TestRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, number));
  }
  return out;
}

std::string serialize_record(const TestRecord& r) {
  json j;
  j["patient_id"] = r.patient_id;
  j["modality"] = std::string(to_string(r.modality));
  j["timestamp"] = r.timestamp;
  j["status"] = std::string(to_string(r.status));
  j["is_pd"] = r.is_pd;
  if (r.demographics.age) j["age"] = *r.demographics.age;
  if (r.demographics.sex) j["sex"] = std::string(sex_name(*r.demographics.sex));
  json samples = json::array();
  for (Eigen::Index i = 0; i < r.series.rows(); ++i) {
    json row = json::array();
    row.push_back(i < static_cast<Eigen::Index>(r.sample_times.size())
                      ? r.sample_times[static_cast<std::size_t>(i)]
                      : 0.0);
    for (Eigen::Index c = 0; c < r.series.cols(); ++c) row.push_back(r.series(i, c));
    samples.push_back(std::move(row));
  }
  j["samples"] = std::move(samples);
  return j.dump();
}

std::size_t Cohort::record_count() const {
  std::size_t n = 0;
  for (const auto& [id, recs] : patients) n += recs.size();
  return n;
}

std::vector<std::string> Cohort::patient_ids() const {
  std::vector<std::string> ids;
  ids.reserve(patients.size());
  for (const auto& [id, recs] : patients) ids.push_back(id);
  return ids;
}

Cohort filter_cohort(std::span<const TestRecord> records, const CohortFilter& filter) {
  Cohort grouped;
  for (const auto& r : records) {
    if (filter.require_pd && !r.is_pd) continue;
    if (!filter.keep_status[static_cast<std::size_t>(index_of(r.status))]) continue;
    grouped.patients[r.patient_id].push_back(r);
  }
  Cohort out;
  for (auto& [id, recs] : grouped.patients) {
    if (recs.size() < filter.min_records) continue;
    Demographics demo;
    for (const auto& r : recs) {
      if (!demo.age && r.demographics.age) demo.age = r.demographics.age;
      if (!demo.sex && r.demographics.sex) demo.sex = r.demographics.sex;
    }
    out.demographics[id] = demo;
    out.patients[id] = std::move(recs);
  }
  return out;
}

Cohort filter_cohort(const Cohort& cohort, const CohortFilter& filter) {
  std::vector<TestRecord> flat;
  flat.reserve(cohort.record_count());
  for (const auto& [id, recs] : cohort.patients) flat.insert(flat.end(), recs.begin(), recs.end());
  return filter_cohort(flat, filter);
}

Matrix high_pass_filter(const Matrix& series, double sample_rate, double cutoff) {
  if (!(sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
  if (!(cutoff > 0.0)) throw std::invalid_argument("cutoff must be positive");
  if (!(sample_rate > 2.0 * cutoff)) {
    throw std::invalid_argument("sample_rate must exceed twice the cutoff");
  }
  if (!series.allFinite()) throw std::invalid_argument("high_pass_filter: non-finite input");

  const double rc = 1.0 / (2.0 * std::numbers::pi * cutoff);
  const double dt = 1.0 / sample_rate;
  const double alpha = rc / (rc + dt);
  const Eigen::Index n = series.rows();

  Matrix out(n, series.cols());
  if (n == 0) return out;
  std::vector<double> fwd(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < series.cols(); ++c) {
    fwd[0] = 0.0;
    for (Eigen::Index i = 1; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      fwd[k] = alpha * (fwd[k - 1] + series(i, c) - series(i - 1, c));
    }
    out(n - 1, c) = 0.0;
    for (Eigen::Index i = n - 2; i >= 0; --i) {
      const auto k = static_cast<std::size_t>(i);
      out(i, c) = alpha * (out(i + 1, c) + fwd[k] - fwd[k + 1]);
    }
  }
  return out;
}

Matrix pad_or_truncate(const Matrix& series, int length) {
  if (length < 1) throw std::invalid_argument("pad_or_truncate: length must be >= 1");
  Matrix out = Matrix::Zero(length, series.cols());
  const Eigen::Index keep = std::min<Eigen::Index>(series.rows(), length);
  out.topRows(keep) = series.topRows(keep);
  return out;
}

Matrix memory_series(std::span<const MemoryEvent> events) {
  const int length = modality_spec(Modality::Memory).max_length;
  Matrix out = Matrix::Zero(length, 3);
  const auto keep = std::min<std::size_t>(events.size(), static_cast<std::size_t>(length));
  for (std::size_t i = 0; i < keep; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out(row, 0) = events[i].actual;
    out(row, 1) = events[i].target;
    out(row, 2) = events[i].score;
  }
  return out;
}

void PreprocessConfig::validate() const {
  if (!(sample_rate > 0.0)) throw std::invalid_argument("records.sample_rate must be positive");
  if (!(cutoff > 0.0)) throw std::invalid_argument("records.cutoff must be positive");
  if (!(sample_rate > 2.0 * cutoff)) {
    throw std::invalid_argument("records.sample_rate must exceed twice records.cutoff");
  }
}

Matrix preprocess_series(const TestRecord& record, const PreprocessConfig& config) {
  const auto spec = modality_spec(record.modality);
  if (record.series.cols() != spec.channels) {
    throw std::invalid_argument("channel count mismatch for " + std::string(to_string(record.modality)));
  }
  if (record.modality == Modality::Memory) {
    std::vector<MemoryEvent> events;
    events.reserve(static_cast<std::size_t>(record.series.rows()));
    for (Eigen::Index i = 0; i < record.series.rows(); ++i) {
      const double t = i < static_cast<Eigen::Index>(record.sample_times.size())
                           ? record.sample_times[static_cast<std::size_t>(i)]
                           : 0.0;
      events.push_back({t, record.series(i, 0), record.series(i, 1), record.series(i, 2)});
    }
    return memory_series(events);
  }
  if (config.high_pass) {
    return pad_or_truncate(high_pass_filter(record.series, config.sample_rate, config.cutoff),
                           spec.max_length);
  }
  return pad_or_truncate(record.series, spec.max_length);
}

TestRecord preprocess_record(const TestRecord& record, const PreprocessConfig& config) {
  TestRecord out;
  out.patient_id = record.patient_id;
  out.modality = record.modality;
  out.timestamp = record.timestamp;
  out.status = record.status;
  out.is_pd = record.is_pd;
  out.demographics = record.demographics;
  out.series = preprocess_series(record, config);
  return out;
}

}  // namespace medseq
