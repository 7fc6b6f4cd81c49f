// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <algorithm>
#include <map>
#include <random>

#include "medseq/shuffle_encoder.hpp"
#include "medseq/synthcorpus.hpp"
#include "medseq/tokenizer.hpp"
#include "medseq/training.hpp"

namespace {

using namespace medseq;

struct Fixture {
  ModelConfig model;
  ModelParams params;
  std::vector<SequenceSample> samples;
};

// Desk-scale model over a small synthetic cohort.
const Fixture& fixture(int merge_group) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(merge_group);
  if (it != cache.end()) return it->second;
  SynthConfig synth;
  synth.patients = 8;
  synth.seed = 1;
  ExperimentConfig exp;
  exp.model.d = 32;
  exp.model.encoder.layers = 2;
  exp.model.encoder.heads = 4;
  exp.model.encoder.merge_group = merge_group;
  exp.model.tokenizer.segment_length = {128, 128, 8};
  const auto prepared = prepare_cohort(generate(synth).records, exp);
  std::mt19937_64 rng(2);
  Fixture f;
  f.model = exp.model;
  f.params = init_params(exp.model, 3);
  f.samples = build_sequences(prepared.timelines, exp.eval_sequences, rng).samples;
  f.samples.resize(std::min<std::size_t>(f.samples.size(), 16));
  return cache.emplace(merge_group, std::move(f)).first->second;
}

void BM_HighPass(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(1024, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(high_pass_filter(x, 100.0, 0.3));
}
BENCHMARK(BM_HighPass);

void BM_Tokenize(benchmark::State& state) {
  const auto& f = fixture(2);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tokenize(f.samples[i++ % f.samples.size()], f.params, f.model));
  }
}
BENCHMARK(BM_Tokenize);

void BM_Forward(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)));
  std::vector<TokenBatch> batches;
  for (const auto& s : f.samples) batches.push_back(tokenize(s, f.params, f.model));
  std::mt19937_64 rng(5);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(batches[i++ % batches.size()], f.params, f.model, rng));
  }
  state.counters["tokens"] = static_cast<double>(batches[0].tokens.rows());
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond);

void BM_Gradients(benchmark::State& state) {
  const auto& f = fixture(2);
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::span<const SequenceSample> batch(f.samples.data(), std::min(n, f.samples.size()));
  std::mt19937_64 rng(6);
  for (auto _ : state) benchmark::DoNotOptimize(compute_gradients(batch, f.params, f.model, rng).loss);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch.size()));
}
BENCHMARK(BM_Gradients)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
