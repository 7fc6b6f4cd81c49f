// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "medseq/params.hpp"

namespace medseq {

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static AdamWState zeros_like(const ModelParams& params);
};

/// Decoupled weight decay followed by the bias-corrected Adam update.
void adamw_step(ModelParams& params, const GradientSet& grads, AdamWState& state,
                const AdamWConfig& config);

}  // namespace medseq
