// SPDX-License-Identifier: Apache-2.0
#include "medseq/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace medseq {

AdamWState AdamWState::zeros_like(const ModelParams& params) {
  return AdamWState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ModelParams& params, const GradientSet& grads, AdamWState& state,
                const AdamWConfig& config) {
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("adamw: learning rate must be > 0");
  std::vector<const Matrix*> g;
  std::vector<Matrix*> m;
  std::vector<Matrix*> v;
  grads.visit([&](std::string_view, const Matrix& x) { g.push_back(&x); });
  state.m.visit([&](std::string_view, Matrix& x) { m.push_back(&x); });
  state.v.visit([&](std::string_view, Matrix& x) { v.push_back(&x); });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double lr = config.learning_rate;
  std::size_t i = 0;
  params.visit([&](std::string_view name, Matrix& p) {
    if (i >= g.size() || g[i]->rows() != p.rows() || g[i]->cols() != p.cols() ||
        m[i]->rows() != p.rows() || v[i]->rows() != p.rows()) {
      throw std::invalid_argument("adamw: shape mismatch at " + std::string(name));
    }
    p *= 1.0 - lr * config.weight_decay;
    *m[i] = config.beta1 * *m[i] + (1.0 - config.beta1) * *g[i];
    *v[i] = config.beta2 * *v[i] + (1.0 - config.beta2) * g[i]->cwiseAbs2();
    const auto m_hat = m[i]->array() / bc1;
    const auto denom = (v[i]->array() / bc2).sqrt() + config.eps;
    p.array() -= lr * m_hat / denom;
    ++i;
  });
}

}  // namespace medseq
