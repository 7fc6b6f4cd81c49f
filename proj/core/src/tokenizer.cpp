// SPDX-License-Identifier: Apache-2.0
#include "medseq/tokenizer.hpp"

#include <stdexcept>
#include <string>

namespace medseq {

namespace {

// A row-major L x C series is bit-identical in memory to its (L/S) x (S*C)
// chunked form, so chunking is a reinterpretation.
ConstMatrixMap chunk_view(const Matrix& series, int segment_length) {
  if (segment_length < 1 || series.rows() % segment_length != 0) {
    throw std::invalid_argument("chunk: segment length " + std::to_string(segment_length) +
                                " does not divide series length " +
                                std::to_string(series.rows()));
  }
  return ConstMatrixMap(series.data(), series.rows() / segment_length,
                        segment_length * series.cols());
}

template <class Fn>
void for_each_source(const SequenceSample& sample, const ModelConfig& config, Fn&& fn) {
  const bool use_history = config.sequence_modeling;
  const int n_hist = use_history ? static_cast<int>(sample.history.size()) : 0;
  for (int r = 0; r <= n_hist; ++r) {
    const bool is_query = r == n_hist;
    const auto& obs = is_query ? *sample.query : *sample.history[static_cast<std::size_t>(r)];
    for (auto m : kModalities) {
      const auto& rec = obs.member(m);
      if (!rec) continue;
      fn(r, is_query, obs, m, *rec);
    }
  }
}

}  // namespace

Matrix chunk(const Matrix& series, int segment_length) {
  return Matrix(chunk_view(series, segment_length));
}

Matrix project(const Matrix& segments, const Linear& params) {
  if (segments.cols() != params.weight.rows()) {
    throw std::invalid_argument("project: segment width " + std::to_string(segments.cols()) +
                                " does not match projection input " +
                                std::to_string(params.weight.rows()));
  }
  Matrix out = segments * params.weight;
  out.rowwise() += params.bias.row(0);
  return out;
}

Matrix encode_attributes(Matrix tokens, std::span<const int> positions,
                         const AttributeIndices& attrs, const EncodingTables& tables,
                         const EncodingMask& mask) {
  if (positions.size() != static_cast<std::size_t>(tokens.rows())) {
    throw std::invalid_argument("encode_attributes: one position index per token required");
  }
  if (attrs.hour < 0 || attrs.hour >= tables.time.rows()) {
    throw std::out_of_range("encode_attributes: hour " + std::to_string(attrs.hour) +
                            " out of range");
  }
  if (mask.positional) {
    for (std::size_t p = 0; p < positions.size(); ++p) {
      if (positions[p] < 0 || positions[p] >= tables.positional.rows()) {
        throw std::out_of_range("encode_attributes: position " + std::to_string(positions[p]) +
                                " out of range");
      }
      tokens.row(static_cast<Eigen::Index>(p)) += tables.positional.row(positions[p]);
    }
  }
  Eigen::RowVectorXd shared = Eigen::RowVectorXd::Zero(tokens.cols());
  if (mask.time) shared += tables.time.row(attrs.hour);
  if (mask.modality) shared += tables.modality.row(index_of(attrs.modality));
  if (mask.status && attrs.status) shared += tables.status.row(index_of(*attrs.status));
  tokens.rowwise() += shared;
  return tokens;
}

int hour_of(std::int64_t epoch_seconds) {
  constexpr std::int64_t kDay = 86400;
  std::int64_t in_day = epoch_seconds % kDay;
  if (in_day < 0) in_day += kDay;
  return static_cast<int>(in_day / 3600);
}

TokenBatch tokenize(const SequenceSample& sample, const ModelParams& params,
                    const ModelConfig& config) {
  if (!sample.query) throw std::invalid_argument("tokenize: sample has no query");
  TokenBatch batch;
  batch.history_records = config.sequence_modeling ? static_cast<int>(sample.history.size()) : 0;

  int total = 0;
  for_each_source(sample, config, [&](int r, bool is_query, const SynchronizedObservation& obs,
                                      Modality m, const TestRecord& rec) {
    TokenSource src;
    src.record = r;
    src.modality = m;
    src.offset = total;
    src.count = config.tokenizer.segments(m);
    src.hour = hour_of(rec.timestamp);
    src.is_query = is_query;
    if (!is_query) src.status = obs.status;
    total += src.count;
    batch.sources.push_back(src);
  });

  const EncodingMask& mask = config.tokenizer.encodings;
  batch.tokens.resize(total, config.d);
  batch.position.resize(static_cast<std::size_t>(total));
  std::size_t s = 0;
  for_each_source(sample, config, [&](int, bool, const SynchronizedObservation&, Modality m,
                                      const TestRecord& rec) {
    const auto& src = batch.sources[s++];
    const int seg_len = config.tokenizer.segment_length[static_cast<std::size_t>(index_of(m))];
    if (rec.series.rows() != modality_spec(m).max_length) {
      throw std::invalid_argument("tokenize: " + std::string(to_string(m)) +
                                  " series is not preprocessed to its fixed length");
    }
    const auto segments = chunk_view(rec.series, seg_len);
    auto block = batch.tokens.middleRows(src.offset, src.count);
    block.noalias() = segments * params.projection[static_cast<std::size_t>(index_of(m))].weight;
    block.rowwise() += params.projection[static_cast<std::size_t>(index_of(m))].bias.row(0);
    for (int p = 0; p < src.count; ++p) {
      batch.position[static_cast<std::size_t>(src.offset + p)] = p;
      if (mask.positional) block.row(p) += params.tables.positional.row(p);
    }
    Eigen::RowVectorXd shared = Eigen::RowVectorXd::Zero(config.d);
    if (mask.time) shared += params.tables.time.row(src.hour);
    if (mask.modality) shared += params.tables.modality.row(index_of(m));
    if (mask.status && src.status) shared += params.tables.status.row(index_of(*src.status));
    block.rowwise() += shared;
  });
  return batch;
}

void tokenize_backward(const SequenceSample& sample, const TokenBatch& batch,
                       const Matrix& token_grad, const ModelConfig& config, ModelParams& grads) {
  const EncodingMask& mask = config.tokenizer.encodings;
  std::size_t s = 0;
  for_each_source(sample, config, [&](int, bool, const SynchronizedObservation&, Modality m,
                                      const TestRecord& rec) {
    const auto& src = batch.sources[s++];
    const auto mi = static_cast<std::size_t>(index_of(m));
    const int seg_len = config.tokenizer.segment_length[mi];
    const auto segments = chunk_view(rec.series, seg_len);
    const auto g = token_grad.middleRows(src.offset, src.count);
    grads.projection[mi].weight.noalias() += segments.transpose() * g;
    const Eigen::RowVectorXd col_sum = g.colwise().sum();
    grads.projection[mi].bias.row(0) += col_sum;
    if (mask.positional) grads.tables.positional.topRows(src.count) += g;
    if (mask.time) grads.tables.time.row(src.hour) += col_sum;
    if (mask.modality) grads.tables.modality.row(index_of(m)) += col_sum;
    if (mask.status && src.status) grads.tables.status.row(index_of(*src.status)) += col_sum;
  });
}

}  // namespace medseq
