// SPDX-License-Identifier: Apache-2.0
#include "medseq/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "medseq/tokenizer.hpp"

namespace medseq {

namespace {

int prediction_hour(const Prediction& p) {
  return hour_of(static_cast<std::int64_t>(std::floor(p.observation_time)));
}

MedicationStatus dominant(const std::array<std::size_t, kStatusCount>& counts) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kStatusCount; ++c) {
    if (counts[c] > counts[best]) best = c;
  }
  return status_from_index(static_cast<int>(best));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["count"] = m.count;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["macro_auc"] = m.macro_auc ? nlohmann::ordered_json(*m.macro_auc) : nlohmann::ordered_json(nullptr);
  auto& pc = j["per_class"];
  for (auto s : kStatuses) {
    const auto& c = m.per_class[static_cast<std::size_t>(index_of(s))];
    nlohmann::ordered_json e;
    e["support"] = c.support;
    e["precision"] = c.precision;
    e["recall"] = c.recall;
    e["f1"] = c.f1;
    e["auc"] = c.auc ? nlohmann::ordered_json(*c.auc) : nlohmann::ordered_json(nullptr);
    pc[std::string(to_string(s))] = std::move(e);
  }
  if (!m.groups.empty()) {
    auto& g = j["groups"];
    for (const auto& grp : m.groups) g[grp.key] = metrics_to_json(grp.metrics);
  }
  return j;
}

}  // namespace

std::vector<HourlyRow> hourly_ratios(std::span<const Prediction> predictions) {
  std::array<std::array<std::size_t, kStatusCount>, 24> truth{}, pred{};
  std::array<std::size_t, 24> count{};
  for (const auto& p : predictions) {
    const auto h = static_cast<std::size_t>(prediction_hour(p));
    ++count[h];
    ++truth[h][static_cast<std::size_t>(index_of(p.label))];
    ++pred[h][static_cast<std::size_t>(index_of(p.predicted))];
  }
  std::vector<HourlyRow> rows(24);
  for (std::size_t h = 0; h < 24; ++h) {
    auto& r = rows[h];
    r.hour = static_cast<int>(h);
    r.count = count[h];
    if (count[h] == 0) continue;
    double drift = 0.0;
    for (std::size_t c = 0; c < kStatusCount; ++c) {
      r.truth[c] = static_cast<double>(truth[h][c]) / static_cast<double>(count[h]);
      r.predicted[c] = static_cast<double>(pred[h][c]) / static_cast<double>(count[h]);
      r.abs_diff[c] = std::abs(r.truth[c] - r.predicted[c]);
      drift += r.abs_diff[c];
    }
    r.drift = drift / kStatusCount;
  }
  return rows;
}

DriftSummary drift_summary(std::span<const HourlyRow> rows) {
  DriftSummary s;
  double sum = 0.0;
  for (const auto& r : rows) {
    if (r.count == 0) continue;
    sum += r.drift;
    ++s.hours;
  }
  if (s.hours == 0) return s;
  s.mean = sum / s.hours;
  double ss = 0.0;
  for (const auto& r : rows) {
    if (r.count > 0) ss += (r.drift - s.mean) * (r.drift - s.mean);
  }
  s.std = std::sqrt(ss / s.hours);
  return s;
}

std::string hourly_csv(std::span<const HourlyRow> rows) {
  std::ostringstream os;
  os << "hour,count";
  for (const char* kind : {"gt", "pred", "absdiff"}) {
    for (auto s : kStatuses) os << ',' << kind << '_' << to_string(s);
  }
  os << ",drift\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& r : rows) {
    os << r.hour << ',' << r.count;
    for (const auto* arr : {&r.truth, &r.predicted, &r.abs_diff}) {
      for (double v : *arr) os << ',' << v;
    }
    os << ',' << r.drift << '\n';
  }
  return os.str();
}

std::string groups_csv(const Metrics& metrics) {
  std::ostringstream os;
  os << "group,count,accuracy,macro_f1,macro_auc\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& g : metrics.groups) {
    os << g.key << ',' << g.metrics.count << ',' << g.metrics.accuracy << ',' << g.metrics.macro_f1 << ',';
    if (g.metrics.macro_auc) os << *g.metrics.macro_auc;
    os << '\n';
  }
  return os.str();
}

std::vector<TimelineRow> dominant_timeline(std::span<const Prediction> predictions) {
  struct Cell {
    std::size_t count = 0;
    std::array<std::size_t, kStatusCount> truth{}, pred{};
  };
  std::map<std::pair<std::string, int>, Cell> cells;
  for (const auto& p : predictions) {
    auto& c = cells[{p.patient_id, prediction_hour(p)}];
    ++c.count;
    ++c.truth[static_cast<std::size_t>(index_of(p.label))];
    ++c.pred[static_cast<std::size_t>(index_of(p.predicted))];
  }
  std::vector<TimelineRow> rows;
  for (const auto& [key, c] : cells) {
    rows.push_back({key.first, key.second, c.count, dominant(c.truth), dominant(c.pred)});
  }
  return rows;
}

std::string timeline_csv(std::span<const TimelineRow> rows) {
  std::ostringstream os;
  os << "patient_id,hour,count,gt_dominant,pred_dominant\n";
  for (const auto& r : rows) {
    os << r.patient_id << ',' << r.hour << ',' << r.count << ',' << to_string(r.truth) << ','
       << to_string(r.predicted) << '\n';
  }
  return os.str();
}

std::string predictions_csv(std::span<const Prediction> predictions) {
  std::ostringstream os;
  os << "patient_id,observation_time,label,predicted,p_another_time,p_before_med,p_after_med,age,"
        "same_label_history\n";
  os.precision(17);
  for (const auto& p : predictions) {
    os << p.patient_id << ',' << p.observation_time << ',' << to_string(p.label) << ','
       << to_string(p.predicted);
    for (int c = 0; c < kStatusCount; ++c) os << ',' << p.probabilities(c);
    os << ',';
    if (p.age) os << *p.age;
    os << ',' << p.same_label_history << '\n';
  }
  return os.str();
}

std::vector<Prediction> parse_predictions_csv(std::istream& in) {
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 9) throw ParseError(line_no, "expected 9 columns, got " + std::to_string(cells.size()));
    try {
      Prediction p;
      p.patient_id = cells[0];
      p.observation_time = std::stod(cells[1]);
      p.label = parse_status(cells[2]);
      p.predicted = parse_status(cells[3]);
      for (int c = 0; c < kStatusCount; ++c) p.probabilities(c) = std::stod(cells[static_cast<std::size_t>(4 + c)]);
      if (!cells[7].empty()) p.age = std::stod(cells[7]);
      p.same_label_history = std::stoi(cells[8]);
      out.push_back(std::move(p));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

std::string metrics_json(const Metrics& metrics) { return metrics_to_json(metrics).dump(2) + "\n"; }

HistoryAttention aggregate_history_attention(const AttentionTrace& trace) {
  const auto n = static_cast<std::size_t>(trace.history_records);
  HistoryAttention out;
  out.samples.resize(n);
  for (const auto& layer : trace.layers) {
    for (const auto& probs : layer.heads) {
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        std::vector<double> mass(n, 0.0);
        double total = 0.0;
        for (std::size_t c = 0; c < layer.columns.size(); ++c) {
          const auto& tag = layer.columns[c];
          if (tag.is_query) continue;
          const double a = probs(r, static_cast<Eigen::Index>(c));
          mass[static_cast<std::size_t>(tag.record)] += a;
          total += a;
        }
        if (total <= 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.samples[j].push_back(mass[j] / total);
      }
    }
  }
  for (auto s : out.samples) {
    double mean = 0.0;
    for (double v : s) mean += v;
    out.mean.push_back(s.empty() ? 0.0 : mean / static_cast<double>(s.size()));
    std::sort(s.begin(), s.end());
    double median = 0.0;
    if (!s.empty()) {
      const std::size_t h = s.size() / 2;
      median = s.size() % 2 ? s[h] : 0.5 * (s[h - 1] + s[h]);
    }
    out.median.push_back(median);
  }
  return out;
}

std::string trace_json(const AttentionTrace& trace) {
  auto tag_json = [](const TokenTag& t) {
    nlohmann::ordered_json j;
    j["record"] = t.record;
    j["modality"] = to_string(t.modality);
    j["segments"] = t.segments;
    j["query"] = t.is_query;
    return j;
  };
  nlohmann::ordered_json j;
  j["history_records"] = trace.history_records;
  auto& layers = j["layers"];
  layers = nlohmann::ordered_json::array();
  for (const auto& l : trace.layers) {
    nlohmann::ordered_json lj;
    lj["rows"] = nlohmann::ordered_json::array();
    for (const auto& t : l.rows) lj["rows"].push_back(tag_json(t));
    lj["columns"] = nlohmann::ordered_json::array();
    for (const auto& t : l.columns) lj["columns"].push_back(tag_json(t));
    lj["heads"] = nlohmann::ordered_json::array();
    for (const auto& h : l.heads) {
      nlohmann::ordered_json hj = nlohmann::ordered_json::array();
      for (Eigen::Index r = 0; r < h.rows(); ++r) {
        hj.push_back(std::vector<double>(h.row(r).data(), h.row(r).data() + h.cols()));
      }
      lj["heads"].push_back(std::move(hj));
    }
    layers.push_back(std::move(lj));
  }
  return j.dump() + "\n";
}

}  // namespace medseq
