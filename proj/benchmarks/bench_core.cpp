#include <benchmark/benchmark.h>

#include <random>

#include "crossat/data.hpp"
#include "crossat/network.hpp"
#include "crossat/retrieval.hpp"
#include "crossat/trainer.hpp"

namespace {

using namespace crossat;

Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed,
                     bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(n * d);
  for (double& x : v) x = -1.0 + 2.0 * double(rng() >> 11) * 0x1.0p-53;
  return Tensor({n, d}, std::move(v), requires_grad);
}

TernaryCode random_code(std::size_t len, std::mt19937_64& rng) {
  TernaryCode c;
  for (std::size_t i = 0; i < len; ++i) {
    c.trits.push_back(static_cast<std::int8_t>(int(rng() % 3) - 1));
  }
  return c;
}

void BM_AffineForward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Tensor x = random_matrix(n, 512, 1);
  Tensor w = random_matrix(512, 64, 2);
  Tensor b = Tensor::zeros({64});
  for (auto _ : state) {
    Tensor out = affine(nullptr, x, w, b);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(n));
}
BENCHMARK(BM_AffineForward)->Arg(32)->Arg(256);

void BM_AffineBackward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Tensor x = random_matrix(n, 512, 1);
  Tensor w = random_matrix(512, 64, 2, true);
  Tensor b = Tensor::zeros({64}, true);
  for (auto _ : state) {
    Tape tape;
    Tensor out = affine(&tape, x, w, b);
    Tensor loss = mean_row_sq_dist(&tape, out, Tensor::zeros({n, 64}));
    tape.backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(n));
}
BENCHMARK(BM_AffineBackward)->Arg(32)->Arg(256);

void BM_HammingNaive(benchmark::State& state) {
  std::mt19937_64 rng(3);
  TernaryCode a = random_code(64, rng);
  TernaryCode b = random_code(64, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(hamming_distance(a, b));
  }
}
BENCHMARK(BM_HammingNaive);

void BM_HammingPacked(benchmark::State& state) {
  std::mt19937_64 rng(3);
  PackedTernary a = pack_ternary(random_code(64, rng));
  PackedTernary b = pack_ternary(random_code(64, rng));
  for (auto _ : state) {
    benchmark::DoNotOptimize(hamming_distance(a, b));
  }
}
BENCHMARK(BM_HammingPacked);

void BM_QueryKnn(benchmark::State& state) {
  SynthConfig cfg;
  cfg.classes = 8;
  cfg.per_class_per_modality = std::size_t(state.range(0));
  cfg.d_in = 32;
  cfg.word_dim = 16;
  cfg.rng_seed = 5;
  SynthResult synth = synth_generate(cfg);
  ArchConfig arch;
  arch.d_in = 32;
  arch.d_w = 16;
  arch.d_shared = 16;
  arch.hidden_width = 64;
  ModelParams params = init_model(arch, synth.dataset.labels(), 7);
  GalleryIndex index =
      build_index(synth.dataset.records(), params, Modality::Image,
                  Metric::Euclidean, Gating::Unconditioned);
  const FeatureRecord& query = synth.dataset.record(1);  // a sketch
  for (auto _ : state) {
    QueryResult res = query_knn(index, query, params, 10);
    benchmark::DoNotOptimize(res.hits.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(index.size()));
}
BENCHMARK(BM_QueryKnn)->Arg(50)->Arg(200);

void BM_TrainEpoch(benchmark::State& state) {
  SynthConfig cfg;
  cfg.classes = 6;
  cfg.per_class_per_modality = 20;
  cfg.d_in = 32;
  cfg.word_dim = 32;
  cfg.rng_seed = 9;
  SynthResult synth = synth_generate(cfg);
  ZeroShotSplit split = make_split(synth.dataset.labels(), 2, 9);
  ArchConfig arch;
  arch.d_shared = 16;
  arch.hidden_width = 128;
  TrainConfig train;
  train.batch_size = 64;
  train.epochs = 1;
  train.triads_per_epoch = 256;
  for (auto _ : state) {
    FitResult result = fit(synth.dataset, split, synth.word_table, arch, train);
    benchmark::DoNotOptimize(result.epochs_run);
  }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
