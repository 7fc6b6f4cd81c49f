// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "medseq/model_config.hpp"
#include "medseq/params.hpp"
#include "medseq/tokenizer.hpp"

namespace medseq {

// ---------------------------------------------------------------------------
// Attention traces
// ---------------------------------------------------------------------------

/// Identity of one attention row/column: the source it came from and the
/// original segment indices it covers (one for first-order tokens, G for
/// second-order tokens).
struct TokenTag {
  int record = 0;
  Modality modality = Modality::Tapping;
  std::vector<int> segments;
  bool is_query = false;

  bool merged() const { return segments.size() > 1; }
};

struct LayerTrace {
  std::vector<TokenTag> rows;     // first-order tokens of the query record
  std::vector<TokenTag> columns;  // every token in the attention union
  std::vector<Matrix> heads;      // rows x columns probabilities per head
};

struct AttentionTrace {
  int history_records = 0;
  std::vector<LayerTrace> layers;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct ShuffleResult {
  Matrix tokens;             // tokens.row(i) == input.row(permutation[i])
  std::vector<int> inverse;  // inverse[permutation[i]] == i
};

/// Throws std::invalid_argument unless `permutation` is a bijection on
/// [0, tokens.rows()).
ShuffleResult shuffle(const Matrix& tokens, std::span<const int> permutation);

/// Linear(Concat(group)) over consecutive runs of `group` rows; a trailing
/// remainder shorter than `group` is not merged.
Matrix merge_tokens(const Matrix& shuffled, int group, const Linear& merge);

struct AttentionResult {
  Matrix tokens;                     // LayerNorm(x + attention), query rows only
  std::vector<Matrix> probabilities; // per head, query rows x all rows
};

/// Multi-head scaled dot-product self-attention with output projection,
/// residual add and layer norm. Only the first `query_rows` rows are
/// evaluated as queries (all rows when negative); every row is a key.
AttentionResult self_attention(const Matrix& tokens, const EncoderLayerParams& layer, int heads,
                               double norm_eps, int query_rows = -1);

// ---------------------------------------------------------------------------
// Shuffle schedules
// ---------------------------------------------------------------------------

/// Per-layer, per-source permutations used by one forward pass.
class ShufflePlan {
 public:
  ShufflePlan() = default;

  static ShufflePlan identity(int layers, std::span<const int> source_sizes);
  /// Fresh uniform permutation per source and layer.
  static ShufflePlan random(int layers, std::span<const int> source_sizes, std::mt19937_64& rng);
  /// Deterministic per-layer permutation depending only on (seed, layer,
  /// source size); used for evaluation.
  static ShufflePlan fixed(int layers, std::span<const int> source_sizes, std::uint64_t seed);

  int layers() const { return static_cast<int>(perms_.size()); }
  const std::vector<int>& permutation(int layer, int source) const {
    return perms_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(source)];
  }

 private:
  std::vector<std::vector<std::vector<int>>> perms_;
};

std::vector<int> source_sizes(const TokenBatch& batch);

/// Identity when shuffling is disabled, otherwise ShufflePlan::random.
ShufflePlan training_plan(const TokenBatch& batch, const ModelConfig& config, std::mt19937_64& rng);
/// Identity when shuffling is disabled, otherwise ShufflePlan::fixed.
ShufflePlan evaluation_plan(const TokenBatch& batch, const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct NormCache {
  Matrix normalized;            // (x - mean) / std
  Eigen::VectorXd inv_std;
};

struct LayerCache {
  std::vector<int> gather;      // shuffled row i came from input row gather[i]
  Matrix shuffled;              // n1 x d
  std::vector<int> merge_rows;  // first shuffled row of every merged group
  Matrix concat;                // n2 x (G*d)
  Matrix unioned;               // (n1 + n2) x d
  Matrix q, k, v;
  std::vector<Matrix> probs;    // per head, n1 x (n1 + n2)
  Matrix context;               // n1 x d
  NormCache attention_norm;
  Matrix attended;              // n1 x d, attention add&norm output
  Matrix ff_hidden;             // n1 x d_ff, post-ReLU
  NormCache ff_norm;
};

struct LayerOutput {
  Matrix tokens;                // n1 x d, in the layer's shuffled order
  std::vector<int> gather;      // output row i derives from input row gather[i]
};

/// One shuffle-merge encoder layer. Token count is conserved; merged tokens
/// take part in attention and are dropped before the feed-forward block.
LayerOutput encoder_layer(const Matrix& tokens, std::span<const TokenSource> sources,
                          const EncoderLayerParams& layer, const ModelConfig& config,
                          const std::vector<std::vector<int>>& permutations,
                          LayerCache* cache = nullptr, int layer_index = 0);

struct EncoderState {
  std::vector<TokenSource> sources;
  std::vector<LayerCache> layers;
  Matrix final_tokens;
  Eigen::RowVectorXd pooled;
  Eigen::RowVectorXd head_pre;
  Logits logits = Logits::Zero();
  std::optional<AttentionTrace> trace;
};

/// Stacked layers, global average pooling and the classifier MLP.
EncoderState forward(const TokenBatch& batch, const ModelParams& params,
                     const ModelConfig& config, const ShufflePlan& plan,
                     bool capture_trace = false);

EncoderState forward(const TokenBatch& batch, const ModelParams& params,
                     const ModelConfig& config, std::mt19937_64& rng,
                     bool capture_trace = false);

/// Reverse-mode pass: accumulates parameter gradients into `grads` and
/// returns d(loss)/d(input tokens).
Matrix backward(const EncoderState& state, const Logits& logit_grad, const ModelParams& params,
                const ModelConfig& config, ModelParams& grads);

}  // namespace medseq
