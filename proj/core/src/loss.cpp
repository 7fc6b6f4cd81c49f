// SPDX-License-Identifier: Apache-2.0
#include "medseq/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace medseq {

ClassWeights class_weights(std::span<const MedicationStatus> labels) {
  if (labels.empty()) throw std::invalid_argument("class_weights: empty batch");
  std::array<long, kStatusCount> counts{};
  for (auto s : labels) ++counts[static_cast<std::size_t>(index_of(s))];
  long present = 0;
  for (long c : counts) present += c > 0 ? 1 : 0;
  ClassWeights w{};
  const auto n = static_cast<long>(labels.size());
  for (std::size_t c = 0; c < kStatusCount; ++c) {
    if (counts[c] > 0) {
      w[c] = static_cast<double>(n) / static_cast<double>(present * counts[c]);
    }
  }
  return w;
}

Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    auto row = p.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return p;
}

LossResult weighted_cross_entropy(const Matrix& logits, std::span<const MedicationStatus> labels,
                                  const ClassWeights& weights) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || logits.cols() != kStatusCount) {
    throw std::invalid_argument("weighted_cross_entropy: logits must be N x 3 with N labels");
  }
  if (!logits.allFinite()) throw std::invalid_argument("weighted_cross_entropy: non-finite logits");
  const auto n = static_cast<double>(labels.size());
  LossResult out;
  out.logit_grad = softmax(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = index_of(labels[static_cast<std::size_t>(i)]);
    const double w = weights[static_cast<std::size_t>(y)];
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += w * (lse - logits(i, y));
    auto g = out.logit_grad.row(i);
    g(y) -= 1.0;
    g *= w / n;
  }
  out.loss = total / n;
  return out;
}

}  // namespace medseq
