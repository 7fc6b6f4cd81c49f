// SPDX-License-Identifier: Apache-2.0
#include "medseq/params.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace medseq {

int TokenizerConfig::max_segments() const {
  int p = 0;
  for (auto m : kModalities) p = std::max(p, segments(m));
  return p;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  if (d < 1) fail("model.d must be >= 1");
  for (auto m : kModalities) {
    const int s = tokenizer.segment_length[static_cast<std::size_t>(index_of(m))];
    const int len = modality_spec(m).max_length;
    if (s < 1 || len % s != 0) {
      fail("segment length " + std::to_string(s) + " for " + std::string(to_string(m)) +
           " must divide " + std::to_string(len));
    }
  }
  if (encoder.layers < 1) fail("encoder.layers must be >= 1");
  if (encoder.heads < 1 || d % encoder.heads != 0) {
    fail("model.d (" + std::to_string(d) + ") must be divisible by encoder.heads (" +
         std::to_string(encoder.heads) + ")");
  }
  if (encoder.merge_group < 1) fail("encoder.merge_group must be >= 1");
  if (encoder.d_ff < 0) fail("encoder.d_ff must be >= 0");
  if (!(encoder.norm_eps > 0.0)) fail("encoder.norm_eps must be positive");
}

namespace {

Linear make_linear(int in, int out) { return {Matrix::Zero(in, out), Matrix::Zero(1, out)}; }

LayerNormParams make_norm(int d) { return {Matrix::Ones(1, d), Matrix::Zero(1, d)}; }

}  // namespace

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const int d = config.d;
  ModelParams p;
  for (auto m : kModalities) {
    p.projection[static_cast<std::size_t>(index_of(m))] =
        make_linear(config.tokenizer.segment_width(m), d);
  }
  p.tables.positional = Matrix::Zero(config.tokenizer.max_segments(), d);
  p.tables.time = Matrix::Zero(24, d);
  p.tables.modality = Matrix::Zero(kModalityCount, d);
  p.tables.status = Matrix::Zero(kStatusCount, d);
  const int ff = config.feed_forward_dim();
  p.layers.resize(static_cast<std::size_t>(config.encoder.layers));
  for (auto& layer : p.layers) {
    layer.query = make_linear(d, d);
    layer.key = make_linear(d, d);
    layer.value = make_linear(d, d);
    layer.output = make_linear(d, d);
    layer.attention_norm = make_norm(d);
    layer.ff_in = make_linear(d, ff);
    layer.ff_out = make_linear(ff, d);
    layer.ff_norm = make_norm(d);
    layer.merge = config.encoder.merging() ? make_linear(config.encoder.merge_group * d, d)
                                           : Linear{Matrix(0, d), Matrix(0, d)};
  }
  p.head_hidden = make_linear(d, d);
  p.head_out = make_linear(d, kStatusCount);
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  auto init_linear = [&](Linear& l) {
    if (l.weight.size() == 0) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features()));
    fill(l.weight, bound);
    fill(l.bias, bound);
  };
  for (auto& proj : p.projection) init_linear(proj);
  const double table_bound = 1.0 / std::sqrt(static_cast<double>(config.d));
  fill(p.tables.positional, table_bound);
  fill(p.tables.time, table_bound);
  fill(p.tables.modality, table_bound);
  fill(p.tables.status, table_bound);
  for (auto& layer : p.layers) {
    init_linear(layer.query);
    init_linear(layer.key);
    init_linear(layer.value);
    init_linear(layer.output);
    init_linear(layer.ff_in);
    init_linear(layer.ff_out);
    init_linear(layer.merge);
  }
  init_linear(p.head_hidden);
  init_linear(p.head_out);
  return p;
}

namespace {

template <class Params, class Fn>
void visit_impl(Params& p, Fn&& fn) {
  static constexpr std::array<std::string_view, kModalityCount> kProj{"projection.tapping",
                                                                      "projection.walking",
                                                                      "projection.memory"};
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    fn(std::string(kProj[m]) + ".weight", p.projection[m].weight);
    fn(std::string(kProj[m]) + ".bias", p.projection[m].bias);
  }
  fn("tables.positional", p.tables.positional);
  fn("tables.time", p.tables.time);
  fn("tables.modality", p.tables.modality);
  fn("tables.status", p.tables.status);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto lin = [&](const char* name, auto& linear) {
      fn(pre + name + ".weight", linear.weight);
      fn(pre + name + ".bias", linear.bias);
    };
    lin("query", layer.query);
    lin("key", layer.key);
    lin("value", layer.value);
    lin("output", layer.output);
    fn(pre + "attention_norm.gamma", layer.attention_norm.gamma);
    fn(pre + "attention_norm.beta", layer.attention_norm.beta);
    lin("ff_in", layer.ff_in);
    lin("ff_out", layer.ff_out);
    fn(pre + "ff_norm.gamma", layer.ff_norm.gamma);
    fn(pre + "ff_norm.beta", layer.ff_norm.beta);
    if (layer.merge.weight.size() > 0) lin("merge", layer.merge);
  }
  fn("head.hidden.weight", p.head_hidden.weight);
  fn("head.hidden.bias", p.head_hidden.bias);
  fn("head.out.weight", p.head_out.weight);
  fn("head.out.bias", p.head_out.bias);
}

}  // namespace

void ModelParams::visit(const std::function<void(std::string_view, Matrix&)>& fn) {
  visit_impl(*this, [&](const std::string& name, Matrix& m) { fn(name, m); });
}

void ModelParams::visit(const std::function<void(std::string_view, const Matrix&)>& fn) const {
  visit_impl(*this, [&](const std::string& name, const Matrix& m) { fn(name, m); });
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

std::size_t ModelParams::tensor_count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const Matrix&) { ++n; });
  return n;
}

double& ModelParams::at(std::size_t flat_index) {
  double* hit = nullptr;
  std::size_t offset = 0;
  visit([&](std::string_view, Matrix& m) {
    const auto size = static_cast<std::size_t>(m.size());
    if (!hit && flat_index < offset + size) hit = m.data() + (flat_index - offset);
    offset += size;
  });
  if (!hit) throw std::out_of_range("ModelParams::at: flat index out of range");
  return *hit;
}

double ModelParams::at(std::size_t flat_index) const {
  return const_cast<ModelParams&>(*this).at(flat_index);
}

void ModelParams::set_zero() {
  visit([](std::string_view, Matrix& m) { m.setZero(); });
}

ModelParams ModelParams::zeros_like() const {
  ModelParams out = *this;
  out.set_zero();
  return out;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](std::string_view, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

void ModelParams::axpy(double scale, const ModelParams& other) {
  std::vector<const Matrix*> src;
  other.visit([&](std::string_view, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  visit([&](std::string_view name, Matrix& m) {
    if (i >= src.size() || src[i]->rows() != m.rows() || src[i]->cols() != m.cols()) {
      throw std::invalid_argument("axpy: shape mismatch at " + std::string(name));
    }
    m += scale * *src[i++];
  });
}

void check_shapes(const ModelParams& params, const ModelConfig& config) {
  const ModelParams expected = zero_params(config);
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> want;
  expected.visit([&](std::string_view name, const Matrix& m) {
    want.push_back({std::string(name), {m.rows(), m.cols()}});
  });
  std::size_t i = 0;
  params.visit([&](std::string_view name, const Matrix& m) {
    if (i >= want.size() || want[i].first != name ||
        want[i].second != std::make_pair(m.rows(), m.cols())) {
      throw std::invalid_argument("parameter shape mismatch at " + std::string(name));
    }
    ++i;
  });
  if (i != want.size()) throw std::invalid_argument("parameter tensor count mismatch");
}

std::string params_to_json(const ModelParams& params) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  params.visit([&](std::string_view name, const Matrix& m) {
    nlohmann::ordered_json t;
    t["rows"] = m.rows();
    t["cols"] = m.cols();
    t["data"] = std::vector<double>(m.data(), m.data() + m.size());
    j[std::string(name)] = std::move(t);
  });
  return j.dump();
}

ModelParams params_from_json(std::string_view text, const ModelConfig& config) {
  const auto j = nlohmann::json::parse(text);
  ModelParams p = zero_params(config);
  p.visit([&](std::string_view name, Matrix& m) {
    const auto it = j.find(std::string(name));
    if (it == j.end()) throw std::invalid_argument("parameter file lacks " + std::string(name));
    if (it->at("rows").get<Eigen::Index>() != m.rows() ||
        it->at("cols").get<Eigen::Index>() != m.cols()) {
      throw std::invalid_argument("parameter file shape mismatch at " + std::string(name));
    }
    const auto data = it->at("data").get<std::vector<double>>();
    if (data.size() != static_cast<std::size_t>(m.size())) {
      throw std::invalid_argument("parameter file size mismatch at " + std::string(name));
    }
    std::copy(data.begin(), data.end(), m.data());
  });
  return p;
}

}  // namespace medseq
