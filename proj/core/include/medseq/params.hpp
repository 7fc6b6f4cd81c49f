// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "medseq/model_config.hpp"
#include "medseq/tensor.hpp"

namespace medseq {

/// Affine map x * weight + bias; bias is stored as a 1 x out matrix.
struct Linear {
  Matrix weight;
  Matrix bias;

  int in_features() const { return static_cast<int>(weight.rows()); }
  int out_features() const { return static_cast<int>(weight.cols()); }
};

struct LayerNormParams {
  Matrix gamma;  // 1 x d
  Matrix beta;   // 1 x d
};

/// Learnable attribute tables added to first-order tokens.
struct EncodingTables {
  Matrix positional;  // max segments x d, shared across modalities
  Matrix time;        // 24 x d
  Matrix modality;    // 3 x d
  Matrix status;      // 3 x d, history records only
};

struct EncoderLayerParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  LayerNormParams attention_norm;
  Linear ff_in;
  Linear ff_out;
  LayerNormParams ff_norm;
  Linear merge;  // (G*d) x d; empty when merging is disabled
};

/// Every learnable tensor of the model. The same type doubles as the
/// gradient container and as AdamW moment storage.
struct ModelParams {
  std::array<Linear, kModalityCount> projection;  // (S_m*C_m) x d per modality
  EncodingTables tables;
  std::vector<EncoderLayerParams> layers;
  Linear head_hidden;  // d x d
  Linear head_out;     // d x 3

  /// Visits every tensor in a fixed order with a stable dotted name.
  void visit(const std::function<void(std::string_view, Matrix&)>& fn);
  void visit(const std::function<void(std::string_view, const Matrix&)>& fn) const;

  std::size_t scalar_count() const;
  std::size_t tensor_count() const;

  /// Flat view over all scalars in visit order.
  double& at(std::size_t flat_index);
  double at(std::size_t flat_index) const;

  void set_zero();
  ModelParams zeros_like() const;
  bool all_finite() const;

  /// this += scale * other (shapes must match).
  void axpy(double scale, const ModelParams& other);
};

using GradientSet = ModelParams;

/// Shapes for `config`, every tensor zero.
ModelParams zero_params(const ModelConfig& config);

/// Weights and biases uniform in +/- 1/sqrt(fan_in); layer-norm gains 1 and
/// offsets 0; encoding tables uniform in +/- 1/sqrt(d).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws if any tensor's shape disagrees with `config`.
void check_shapes(const ModelParams& params, const ModelConfig& config);

std::string params_to_json(const ModelParams& params);
ModelParams params_from_json(std::string_view text, const ModelConfig& config);

}  // namespace medseq
