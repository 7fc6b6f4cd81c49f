// SPDX-License-Identifier: Apache-2.0
#include "medseq/shuffle_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

namespace medseq {

namespace {

void layer_norm_forward(const Matrix& x, const LayerNormParams& p, double eps, Matrix& out,
                        NormCache* cache) {
  const Eigen::Index n = x.rows();
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  Matrix normalized(n, x.cols());
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() * inv_d;
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() * inv_d;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    normalized.row(i) = centered * inv_std(i);
  }
  out = normalized.array().rowwise() * p.gamma.row(0).array();
  out.rowwise() += p.beta.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
}

Matrix layer_norm_backward(const Matrix& dy, const NormCache& cache, const LayerNormParams& p,
                           LayerNormParams& grad) {
  grad.gamma.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  grad.beta.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  const Eigen::VectorXd mean_dxhat = dxhat.rowwise().sum() * inv_d;
  const Eigen::VectorXd mean_dxhat_xhat =
      (dxhat.array() * cache.normalized.array()).rowwise().sum().matrix() * inv_d;
  Matrix dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx -= (cache.normalized.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

void affine(const Matrix& x, const Linear& l, Matrix& out) {
  out.noalias() = x * l.weight;
  out.rowwise() += l.bias.row(0);
}

void affine_backward(const Matrix& x, const Matrix& dy, Linear& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias.row(0) += dy.colwise().sum();
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

struct AttentionCache {
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix context;
  NormCache norm;
};

// Attention over `unioned` with the first `n_query` rows as queries, then
// output projection, residual add on those rows and layer norm.
Matrix attention_forward(const Matrix& unioned, Eigen::Index n_query, const EncoderLayerParams& layer,
                         int heads, double eps, AttentionCache& cache) {
  const Eigen::Index d = unioned.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix queries = unioned.topRows(n_query);

  affine(queries, layer.query, cache.q);
  affine(unioned, layer.key, cache.k);
  affine(unioned, layer.value, cache.v);

  cache.probs.resize(static_cast<std::size_t>(heads));
  cache.context.resize(n_query, d);
  for (int h = 0; h < heads; ++h) {
    auto& a = cache.probs[static_cast<std::size_t>(h)];
    a.noalias() = cache.q.middleCols(h * dh, dh) * cache.k.middleCols(h * dh, dh).transpose();
    a *= scale;
    softmax_rows(a);
    cache.context.middleCols(h * dh, dh).noalias() = a * cache.v.middleCols(h * dh, dh);
  }
  Matrix residual;
  affine(cache.context, layer.output, residual);
  residual += queries;
  Matrix out;
  layer_norm_forward(residual, layer.attention_norm, eps, out, &cache.norm);
  return out;
}

// Returns d/d(unioned); parameter grads accumulate into `grad`.
Matrix attention_backward(const Matrix& d_out, const Matrix& unioned, Eigen::Index n_query,
                          const EncoderLayerParams& layer, int heads, const AttentionCache& cache,
                          EncoderLayerParams& grad) {
  const Eigen::Index d = unioned.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix d_residual = layer_norm_backward(d_out, cache.norm, layer.attention_norm,
                                                grad.attention_norm);
  Matrix d_unioned = Matrix::Zero(unioned.rows(), d);
  d_unioned.topRows(n_query) = d_residual;

  affine_backward(cache.context, d_residual, grad.output);
  const Matrix d_context = d_residual * layer.output.weight.transpose();

  Matrix dq(n_query, d);
  Matrix dk(unioned.rows(), d);
  Matrix dv(unioned.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& a = cache.probs[static_cast<std::size_t>(h)];
    const auto dc = d_context.middleCols(h * dh, dh);
    Matrix da = dc * cache.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dc;
    const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
    da.colwise() -= row_dot;
    Matrix ds = (da.array() * a.array()).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * cache.q.middleCols(h * dh, dh);
  }

  affine_backward(unioned.topRows(n_query), dq, grad.query);
  affine_backward(unioned, dk, grad.key);
  affine_backward(unioned, dv, grad.value);
  d_unioned.topRows(n_query).noalias() += dq * layer.query.weight.transpose();
  d_unioned.noalias() += dk * layer.key.weight.transpose();
  d_unioned.noalias() += dv * layer.value.weight.transpose();
  return d_unioned;
}

void check_permutation(std::span<const int> perm, std::size_t n) {
  if (perm.size() != n) {
    throw std::invalid_argument("shuffle: permutation length " + std::to_string(perm.size()) +
                                " does not match token count " + std::to_string(n));
  }
  std::vector<bool> seen(n, false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= n || seen[static_cast<std::size_t>(p)]) {
      throw std::invalid_argument("shuffle: permutation is not a bijection");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
}

}  // namespace

ShuffleResult shuffle(const Matrix& tokens, std::span<const int> permutation) {
  check_permutation(permutation, static_cast<std::size_t>(tokens.rows()));
  ShuffleResult out;
  out.tokens.resize(tokens.rows(), tokens.cols());
  out.inverse.resize(permutation.size());
  for (std::size_t i = 0; i < permutation.size(); ++i) {
    out.tokens.row(static_cast<Eigen::Index>(i)) = tokens.row(permutation[i]);
    out.inverse[static_cast<std::size_t>(permutation[i])] = static_cast<int>(i);
  }
  return out;
}

Matrix merge_tokens(const Matrix& shuffled, int group, const Linear& merge) {
  if (group < 2) throw std::invalid_argument("merge_tokens: group size must be >= 2");
  const Eigen::Index d = shuffled.cols();
  if (merge.weight.rows() != group * d) {
    throw std::invalid_argument("merge_tokens: merge weight expects " +
                                std::to_string(merge.weight.rows()) + " inputs, got " +
                                std::to_string(group * d));
  }
  const Eigen::Index n_groups = shuffled.rows() / group;
  // Consecutive row-major rows are already concatenated in memory.
  const ConstMatrixMap concat(shuffled.data(), n_groups, group * d);
  Matrix out = concat * merge.weight;
  out.rowwise() += merge.bias.row(0);
  return out;
}

AttentionResult self_attention(const Matrix& tokens, const EncoderLayerParams& layer, int heads,
                               double norm_eps, int query_rows) {
  if (heads < 1 || tokens.cols() % heads != 0) {
    throw std::invalid_argument("self_attention: token dim must be divisible by heads");
  }
  const Eigen::Index n_query = query_rows < 0 ? tokens.rows() : query_rows;
  AttentionCache cache;
  AttentionResult out;
  out.tokens = attention_forward(tokens, n_query, layer, heads, norm_eps, cache);
  if (!out.tokens.allFinite()) throw std::runtime_error("self_attention: non-finite activations");
  out.probabilities = std::move(cache.probs);
  return out;
}

// ---------------------------------------------------------------------------

ShufflePlan ShufflePlan::identity(int layers, std::span<const int> source_sizes) {
  ShufflePlan plan;
  plan.perms_.resize(static_cast<std::size_t>(layers));
  for (auto& layer : plan.perms_) {
    for (int n : source_sizes) {
      std::vector<int> p(static_cast<std::size_t>(n));
      std::iota(p.begin(), p.end(), 0);
      layer.push_back(std::move(p));
    }
  }
  return plan;
}

ShufflePlan ShufflePlan::random(int layers, std::span<const int> source_sizes,
                                std::mt19937_64& rng) {
  ShufflePlan plan = identity(layers, source_sizes);
  for (auto& layer : plan.perms_) {
    for (auto& p : layer) std::shuffle(p.begin(), p.end(), rng);
  }
  return plan;
}

ShufflePlan ShufflePlan::fixed(int layers, std::span<const int> source_sizes, std::uint64_t seed) {
  ShufflePlan plan = identity(layers, source_sizes);
  for (std::size_t l = 0; l < plan.perms_.size(); ++l) {
    for (auto& p : plan.perms_[l]) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(p.size())};
      std::mt19937_64 rng(seq);
      std::shuffle(p.begin(), p.end(), rng);
    }
  }
  return plan;
}

std::vector<int> source_sizes(const TokenBatch& batch) {
  std::vector<int> sizes;
  sizes.reserve(batch.sources.size());
  for (const auto& s : batch.sources) sizes.push_back(s.count);
  return sizes;
}

ShufflePlan training_plan(const TokenBatch& batch, const ModelConfig& config,
                          std::mt19937_64& rng) {
  const auto sizes = source_sizes(batch);
  return config.encoder.shuffle ? ShufflePlan::random(config.encoder.layers, sizes, rng)
                                : ShufflePlan::identity(config.encoder.layers, sizes);
}

ShufflePlan evaluation_plan(const TokenBatch& batch, const ModelConfig& config,
                            std::uint64_t seed) {
  const auto sizes = source_sizes(batch);
  return config.encoder.shuffle ? ShufflePlan::fixed(config.encoder.layers, sizes, seed)
                                : ShufflePlan::identity(config.encoder.layers, sizes);
}

// ---------------------------------------------------------------------------

LayerOutput encoder_layer(const Matrix& tokens, std::span<const TokenSource> sources,
                          const EncoderLayerParams& layer, const ModelConfig& config,
                          const std::vector<std::vector<int>>& permutations, LayerCache* cache,
                          int layer_index) {
  const Eigen::Index n1 = tokens.rows();
  const Eigen::Index d = tokens.cols();
  const int group = config.encoder.merge_group;
  if (permutations.size() != sources.size()) {
    throw std::invalid_argument("encoder_layer: one permutation per source required");
  }

  LayerCache local;
  LayerCache& c = cache ? *cache : local;

  // Shuffle within each source.
  c.gather.assign(static_cast<std::size_t>(n1), 0);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    const auto& perm = permutations[s];
    check_permutation(perm, static_cast<std::size_t>(src.count));
    for (int i = 0; i < src.count; ++i) {
      c.gather[static_cast<std::size_t>(src.offset + i)] = src.offset + perm[static_cast<std::size_t>(i)];
    }
  }
  c.shuffled.resize(n1, d);
  for (Eigen::Index i = 0; i < n1; ++i) c.shuffled.row(i) = tokens.row(c.gather[static_cast<std::size_t>(i)]);

  // Second-order tokens from consecutive shuffled runs.
  c.merge_rows.clear();
  if (group >= 2) {
    for (const auto& src : sources) {
      for (int g = 0; g + group <= src.count; g += group) c.merge_rows.push_back(src.offset + g);
    }
  }
  const auto n2 = static_cast<Eigen::Index>(c.merge_rows.size());
  c.unioned.resize(n1 + n2, d);
  c.unioned.topRows(n1) = c.shuffled;
  if (n2 > 0) {
    c.concat.resize(n2, group * d);
    for (Eigen::Index g = 0; g < n2; ++g) {
      std::memcpy(c.concat.row(g).data(), c.shuffled.row(c.merge_rows[static_cast<std::size_t>(g)]).data(),
                  sizeof(double) * static_cast<std::size_t>(group * d));
    }
    Matrix merged;
    affine(c.concat, layer.merge, merged);
    c.unioned.bottomRows(n2) = merged;
  } else {
    c.concat.resize(0, 0);
  }

  // Attention over the union; merged tokens are dropped afterwards, so only
  // first-order rows are evaluated as queries.
  AttentionCache ac;
  c.attended = attention_forward(c.unioned, n1, layer, config.encoder.heads, config.encoder.norm_eps, ac);
  c.q = std::move(ac.q);
  c.k = std::move(ac.k);
  c.v = std::move(ac.v);
  c.probs = std::move(ac.probs);
  c.context = std::move(ac.context);
  c.attention_norm = std::move(ac.norm);

  Matrix hidden;
  affine(c.attended, layer.ff_in, hidden);
  c.ff_hidden = hidden.cwiseMax(0.0);
  Matrix ff;
  affine(c.ff_hidden, layer.ff_out, ff);
  ff += c.attended;
  LayerOutput out;
  layer_norm_forward(ff, layer.ff_norm, config.encoder.norm_eps, out.tokens, &c.ff_norm);
  if (!out.tokens.allFinite()) {
    throw std::runtime_error("encoder layer " + std::to_string(layer_index) +
                             ": non-finite activations");
  }
  out.gather = c.gather;
  return out;
}

namespace {

TokenTag first_order_tag(const TokenSource& src, int segment) {
  return TokenTag{src.record, src.modality, {segment}, src.is_query};
}

LayerTrace make_layer_trace(const LayerCache& c, std::span<const TokenSource> sources,
                            const std::vector<int>& origin, int group) {
  LayerTrace t;
  std::vector<int> row_index;
  std::vector<TokenTag> first;
  for (const auto& src : sources) {
    for (int i = 0; i < src.count; ++i) {
      const int row = src.offset + i;
      auto tag = first_order_tag(src, origin[static_cast<std::size_t>(row)]);
      if (src.is_query) {
        row_index.push_back(row);
        t.rows.push_back(tag);
      }
      first.push_back(std::move(tag));
    }
  }
  t.columns = first;
  for (int start : c.merge_rows) {
    TokenTag tag = first[static_cast<std::size_t>(start)];
    for (int j = 1; j < group; ++j) {
      tag.segments.push_back(origin[static_cast<std::size_t>(start + j)]);
    }
    t.columns.push_back(std::move(tag));
  }
  for (const auto& a : c.probs) {
    Matrix rows(static_cast<Eigen::Index>(row_index.size()), a.cols());
    for (std::size_t r = 0; r < row_index.size(); ++r) {
      rows.row(static_cast<Eigen::Index>(r)) = a.row(row_index[r]);
    }
    t.heads.push_back(std::move(rows));
  }
  return t;
}

}  // namespace

EncoderState forward(const TokenBatch& batch, const ModelParams& params, const ModelConfig& config,
                     const ShufflePlan& plan, bool capture_trace) {
  if (batch.tokens.rows() == 0) throw std::invalid_argument("forward: empty token set");
  if (plan.layers() != config.encoder.layers) {
    throw std::invalid_argument("forward: shuffle plan layer count mismatch");
  }
  EncoderState st;
  st.sources = batch.sources;
  st.layers.resize(static_cast<std::size_t>(config.encoder.layers));
  if (capture_trace) {
    st.trace.emplace();
    st.trace->history_records = batch.history_records;
  }

  // origin[row] = original segment index of the token currently at `row`.
  std::vector<int> origin = batch.position;
  Matrix x = batch.tokens;
  for (int l = 0; l < config.encoder.layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    std::vector<std::vector<int>> perms;
    perms.reserve(batch.sources.size());
    for (std::size_t s = 0; s < batch.sources.size(); ++s) {
      perms.push_back(plan.permutation(l, static_cast<int>(s)));
    }
    auto out = encoder_layer(x, batch.sources, params.layers[li], config, perms, &st.layers[li], l);
    std::vector<int> next(origin.size());
    for (std::size_t i = 0; i < origin.size(); ++i) next[i] = origin[static_cast<std::size_t>(out.gather[i])];
    origin = std::move(next);
    if (capture_trace) {
      st.trace->layers.push_back(
          make_layer_trace(st.layers[li], batch.sources, origin, config.encoder.merge_group));
    }
    x = std::move(out.tokens);
  }

  st.final_tokens = std::move(x);
  st.pooled = st.final_tokens.colwise().mean();
  st.head_pre = st.pooled * params.head_hidden.weight + params.head_hidden.bias.row(0);
  const Eigen::RowVectorXd hidden = st.head_pre.cwiseMax(0.0);
  const Eigen::RowVectorXd logits = hidden * params.head_out.weight + params.head_out.bias.row(0);
  st.logits = logits;
  if (!st.logits.allFinite()) throw std::runtime_error("forward: non-finite logits");
  return st;
}

EncoderState forward(const TokenBatch& batch, const ModelParams& params, const ModelConfig& config,
                     std::mt19937_64& rng, bool capture_trace) {
  return forward(batch, params, config, training_plan(batch, config, rng), capture_trace);
}

Matrix backward(const EncoderState& st, const Logits& logit_grad, const ModelParams& params,
                const ModelConfig& config, ModelParams& grads) {
  // Classifier head.
  const Eigen::RowVectorXd hidden = st.head_pre.cwiseMax(0.0);
  const Eigen::RowVectorXd dl = logit_grad;
  grads.head_out.weight.noalias() += hidden.transpose() * dl;
  grads.head_out.bias.row(0) += dl;
  Eigen::RowVectorXd d_hidden = dl * params.head_out.weight.transpose();
  for (Eigen::Index j = 0; j < d_hidden.size(); ++j) {
    if (st.head_pre(j) <= 0.0) d_hidden(j) = 0.0;
  }
  grads.head_hidden.weight.noalias() += st.pooled.transpose() * d_hidden;
  grads.head_hidden.bias.row(0) += d_hidden;
  const Eigen::RowVectorXd d_pooled = d_hidden * params.head_hidden.weight.transpose();

  const Eigen::Index n1 = st.final_tokens.rows();
  Matrix dx(n1, st.final_tokens.cols());
  dx.rowwise() = d_pooled / static_cast<double>(n1);

  const int group = config.encoder.merge_group;
  const int heads = config.encoder.heads;
  for (int l = config.encoder.layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const auto& c = st.layers[li];
    const auto& p = params.layers[li];
    auto& g = grads.layers[li];

    // Feed-forward add&norm.
    const Matrix d_ff = layer_norm_backward(dx, c.ff_norm, p.ff_norm, g.ff_norm);
    Matrix d_attended = d_ff;
    affine_backward(c.ff_hidden, d_ff, g.ff_out);
    Matrix d_hidden_ff = d_ff * p.ff_out.weight.transpose();
    d_hidden_ff = (c.ff_hidden.array() > 0.0).select(d_hidden_ff, 0.0);
    affine_backward(c.attended, d_hidden_ff, g.ff_in);
    d_attended.noalias() += d_hidden_ff * p.ff_in.weight.transpose();

    // Attention add&norm over the union.
    AttentionCache ac;
    ac.q = c.q;
    ac.k = c.k;
    ac.v = c.v;
    ac.probs = c.probs;
    ac.context = c.context;
    ac.norm = c.attention_norm;
    const Matrix d_union = attention_backward(d_attended, c.unioned, n1, p, heads, ac, g);

    Matrix d_shuffled = d_union.topRows(n1);
    const auto n2 = static_cast<Eigen::Index>(c.merge_rows.size());
    if (n2 > 0) {
      const Matrix d_merged = d_union.bottomRows(n2);
      affine_backward(c.concat, d_merged, g.merge);
      const Matrix d_concat = d_merged * p.merge.weight.transpose();
      const Eigen::Index d = d_shuffled.cols();
      for (Eigen::Index gi = 0; gi < n2; ++gi) {
        const int start = c.merge_rows[static_cast<std::size_t>(gi)];
        for (int j = 0; j < group; ++j) {
          d_shuffled.row(start + j) += d_concat.row(gi).segment(j * d, d);
        }
      }
    }

    Matrix d_in = Matrix::Zero(n1, d_shuffled.cols());
    for (Eigen::Index i = 0; i < n1; ++i) d_in.row(c.gather[static_cast<std::size_t>(i)]) += d_shuffled.row(i);
    dx = std::move(d_in);
  }
  return dx;
}

}  // namespace medseq
