// SPDX-License-Identifier: Apache-2.0
#include "medseq/metrics.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace medseq {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  long long tp = 0, fp = 0, twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    long long dtp = 0, dfp = 0;
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      (positive[order[j]] ? dtp : dfp) += 1;
    }
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  if (tp == 0 || fp == 0) return std::nullopt;
  return static_cast<double>(twice_area) / (2.0 * static_cast<double>(tp) * static_cast<double>(fp));
}

int argmax(const Logits& row) {
  int best = 0;
  for (int c = 1; c < kStatusCount; ++c) {
    if (row(c) > row(best)) best = c;
  }
  return best;
}

Metrics compute_metrics(std::span<const MedicationStatus> labels, const Matrix& scores) {
  if (scores.rows() != static_cast<Eigen::Index>(labels.size()) || scores.cols() != kStatusCount) {
    throw std::invalid_argument("compute_metrics: scores must be N x 3 with N labels");
  }
  Metrics out;
  out.count = labels.size();
  if (labels.empty()) return out;

  std::array<std::size_t, kStatusCount> tp{}, predicted{}, actual{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = index_of(labels[i]);
    const int p = argmax(scores.row(static_cast<Eigen::Index>(i)));
    ++actual[static_cast<std::size_t>(y)];
    ++predicted[static_cast<std::size_t>(p)];
    if (y == p) {
      ++correct;
      ++tp[static_cast<std::size_t>(y)];
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  double f1_sum = 0.0, auc_sum = 0.0;
  int f1_classes = 0, auc_classes = 0;
  std::vector<double> column(labels.size());
  std::unique_ptr<bool[]> positive(new bool[labels.size()]);
  for (std::size_t c = 0; c < kStatusCount; ++c) {
    auto& cm = out.per_class[c];
    cm.support = actual[c];
    cm.precision = predicted[c] ? static_cast<double>(tp[c]) / static_cast<double>(predicted[c]) : 0.0;
    cm.recall = actual[c] ? static_cast<double>(tp[c]) / static_cast<double>(actual[c]) : 0.0;
    cm.f1 = cm.precision + cm.recall > 0.0
                ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                : 0.0;
    if (actual[c] || predicted[c]) {
      f1_sum += cm.f1;
      ++f1_classes;
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      positive[i] = index_of(labels[i]) == static_cast<int>(c);
    }
    cm.auc = roc_auc(column, std::span<const bool>(positive.get(), labels.size()));
    if (cm.auc) {
      auc_sum += *cm.auc;
      ++auc_classes;
    }
  }
  out.macro_f1 = f1_classes ? f1_sum / f1_classes : 0.0;
  if (auc_classes) out.macro_auc = auc_sum / auc_classes;
  return out;
}

Metrics compute_metrics(std::span<const MedicationStatus> labels, const Matrix& scores,
                        std::span<const std::string> group_keys) {
  if (group_keys.size() != labels.size()) {
    throw std::invalid_argument("compute_metrics: one group key per sample required");
  }
  Metrics out = compute_metrics(labels, scores);
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < group_keys.size(); ++i) members[group_keys[i]].push_back(i);
  for (const auto& [key, idx] : members) {
    std::vector<MedicationStatus> sub_labels;
    Matrix sub(static_cast<Eigen::Index>(idx.size()), kStatusCount);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      sub_labels.push_back(labels[idx[j]]);
      sub.row(static_cast<Eigen::Index>(j)) = scores.row(static_cast<Eigen::Index>(idx[j]));
    }
    out.groups.push_back({key, compute_metrics(sub_labels, sub)});
  }
  return out;
}

}  // namespace medseq
