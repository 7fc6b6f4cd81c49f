// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>

#include "medseq/records.hpp"
#include "medseq/tensor.hpp"

namespace medseq {

using ClassWeights = std::array<double, kStatusCount>;

/// Inverse-frequency weights over the classes present in `labels`, scaled so
/// the count-weighted mean of present-class weights is 1. Absent classes get 0.
ClassWeights class_weights(std::span<const MedicationStatus> labels);

struct LossResult {
  double loss = 0.0;
  Matrix logit_grad;  // N x 3, d(loss)/d(logits)
};

/// -(1/N) sum_i w[y_i] log softmax(logits_i)[y_i], evaluated with log-sum-exp.
LossResult weighted_cross_entropy(const Matrix& logits, std::span<const MedicationStatus> labels,
                                  const ClassWeights& weights);

/// Row-wise softmax.
Matrix softmax(const Matrix& logits);

}  // namespace medseq
