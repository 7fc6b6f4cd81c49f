// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "medseq/model_config.hpp"
#include "medseq/params.hpp"
#include "medseq/sequencer.hpp"

namespace medseq {

/// One (record, modality) pair within a sequence sample. Shuffling and
/// merging never cross sources.
struct TokenSource {
  int record = 0;  // index within the sample; history first, query last
  Modality modality = Modality::Tapping;
  int offset = 0;  // first row in TokenBatch::tokens
  int count = 0;   // P_m
  int hour = 0;
  std::optional<MedicationStatus> status;  // history records only
  bool is_query = false;
};

struct TokenBatch {
  Matrix tokens;                // total tokens x d
  std::vector<TokenSource> sources;
  std::vector<int> position;    // per row: segment index within its source
  int history_records = 0;

  std::size_t token_count() const { return static_cast<std::size_t>(tokens.rows()); }
};

/// Row p holds samples [p*S, (p+1)*S) with channels interleaved per sample.
Matrix chunk(const Matrix& series, int segment_length);

/// segments * weight + bias (bias broadcast per row).
Matrix project(const Matrix& segments, const Linear& params);

struct AttributeIndices {
  int hour = 0;
  Modality modality = Modality::Tapping;
  std::optional<MedicationStatus> status;
};

/// Adds positional[position[p]] + time[hour] + modality[m] (+ status[s]) to
/// each row, honouring the mask.
Matrix encode_attributes(Matrix tokens, std::span<const int> positions,
                         const AttributeIndices& attrs, const EncodingTables& tables,
                         const EncodingMask& mask = {});

/// UTC hour of day.
int hour_of(std::int64_t epoch_seconds);

/// Tokenizes every present (record, modality) of a sample. Member series must
/// already be preprocessed to their modality's fixed length.
TokenBatch tokenize(const SequenceSample& sample, const ModelParams& params,
                    const ModelConfig& config);

/// Accumulates parameter gradients given d(loss)/d(tokens).
void tokenize_backward(const SequenceSample& sample, const TokenBatch& batch,
                       const Matrix& token_grad, const ModelConfig& config, ModelParams& grads);

}  // namespace medseq
