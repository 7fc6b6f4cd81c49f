// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "medseq/records.hpp"

namespace medseq {

/// Which additive attribute encodings are applied to first-order tokens.
struct EncodingMask {
  bool positional = true;
  bool time = true;
  bool modality = true;
  bool status = true;

  bool operator==(const EncodingMask&) const = default;
};

struct TokenizerConfig {
  /// Segment length S per modality, indexed by Modality.
  std::array<int, kModalityCount> segment_length{32, 32, 8};
  EncodingMask encodings;

  int segments(Modality m) const {
    return modality_spec(m).max_length / segment_length[static_cast<std::size_t>(index_of(m))];
  }
  int segment_width(Modality m) const {
    return segment_length[static_cast<std::size_t>(index_of(m))] * modality_spec(m).channels;
  }
  int max_segments() const;

  bool operator==(const TokenizerConfig&) const = default;
};

struct EncoderConfig {
  int layers = 6;
  int heads = 8;
  int d_ff = 0;  // 0 selects 4 * d
  int merge_group = 2;
  bool shuffle = true;
  double norm_eps = 1e-5;

  bool merging() const { return merge_group >= 2; }

  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  int d = 64;
  TokenizerConfig tokenizer;
  EncoderConfig encoder;
  /// When off, only the query record is tokenized and no status encoding exists.
  bool sequence_modeling = true;

  int feed_forward_dim() const { return encoder.d_ff > 0 ? encoder.d_ff : 4 * d; }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace medseq
