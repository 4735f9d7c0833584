#include "crossat/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "crossat/semantics.hpp"
#include "doctest.h"

using namespace crossat;

namespace {

struct Fixture {
  Dataset dataset;
  WordTable words;
  ZeroShotSplit split;
};

Fixture make_fixture(std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.classes = 5;
  cfg.per_class_per_modality = 6;
  cfg.d_in = 8;
  cfg.word_dim = 6;
  cfg.modality_shift = 0.5;
  cfg.noise = 0.2;
  cfg.rng_seed = seed;
  SynthResult synth = synth_generate(cfg);
  ZeroShotSplit split = make_split(synth.dataset.labels(), 1, seed);
  return {std::move(synth.dataset), std::move(synth.word_table), std::move(split)};
}

ArchConfig small_arch() {
  ArchConfig a;
  a.d_shared = 4;
  a.hidden_width = 8;
  a.hidden_layers = 1;
  a.att_pool_groups = 4;
  return a;
}

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig t;
  t.batch_size = 16;
  t.epochs = epochs;
  t.triads_per_epoch = 64;
  t.mode = TrainMode::CrossModal;
  t.seed = 11;
  return t;
}

}  // namespace

TEST_CASE("adam_step matches the hand-computed recurrences") {
  SUBCASE("first step with unit gradient moves by about -lr") {
    Tensor w({1, 1}, {0.0}, true);
    w.grad()[0] = 1.0;
    std::vector<Tensor> params{w};
    AdamState state(params);
    adam_step(params, state, AdamConfig{0.001, 0.9, 0.999, 1e-8});
    // Bias correction makes m_hat / sqrt(v_hat) = 1 on the first step.
    CHECK(std::abs(w.values()[0] + 0.001) < 1e-10);
    CHECK(state.steps() == 1);
  }
  SUBCASE("zero gradient is a fixed point") {
    Tensor w({2}, {1.25, -0.5}, true);
    std::vector<Tensor> params{w};
    AdamState state(params);
    adam_step(params, state, AdamConfig{});
    CHECK(w.values()[0] == 1.25);
    CHECK(w.values()[1] == -0.5);
  }
  SUBCASE("non-finite gradient rejects the step") {
    Tensor w({1}, {0.0}, true);
    w.grad()[0] = std::numeric_limits<double>::infinity();
    std::vector<Tensor> params{w};
    AdamState state(params);
    CHECK_THROWS_AS(adam_step(params, state, AdamConfig{}), NumericError);
  }
}

TEST_CASE("fit reduces the objective on synthetic data") {
  Fixture fx = make_fixture();
  FitResult result = fit(fx.dataset, fx.split, fx.words, small_arch(),
                         quick_train(50));
  REQUIRE(result.epochs_run >= 10);
  CHECK(!result.diverged);
  CHECK(result.epoch_losses.back().total < result.epoch_losses.front().total);
}

TEST_CASE("alternating optimization also reduces the objective") {
  Fixture fx = make_fixture();
  TrainConfig cfg = quick_train(20);
  cfg.alternating = true;
  FitResult result = fit(fx.dataset, fx.split, fx.words, small_arch(), cfg);
  CHECK(!result.diverged);
  CHECK(result.epoch_losses.back().total < result.epoch_losses.front().total);
}

TEST_CASE("all-zero loss weights fail before any step") {
  Fixture fx = make_fixture();
  TrainConfig cfg = quick_train(5);
  cfg.weights.lambda1 = cfg.weights.lambda2 = cfg.weights.lambda3 =
      cfg.weights.lambda4 = cfg.weights.lambda5 = 0.0;
  CHECK_THROWS_AS(fit(fx.dataset, fx.split, fx.words, small_arch(), cfg),
                  ConfigError);
}

TEST_CASE("zero epochs returns the initialized parameters untouched") {
  Fixture fx = make_fixture();
  TrainConfig cfg = quick_train(0);
  FitResult result = fit(fx.dataset, fx.split, fx.words, small_arch(), cfg);
  CHECK(result.epochs_run == 0);
  CHECK(result.metrics_lines.empty());
  ArchConfig arch = small_arch();
  arch.d_in = 8;
  arch.d_w = 6;
  ModelParams fresh = init_model(arch, fx.split.seen, cfg.seed);
  auto a = result.params.named_parameters();
  auto b = fresh.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::equal(a[i].second.values().begin(), a[i].second.values().end(),
                     b[i].second.values().begin()));
  }
}

TEST_CASE("identical seeds give bitwise-identical runs") {
  Fixture fx = make_fixture();
  FitResult r1 = fit(fx.dataset, fx.split, fx.words, small_arch(), quick_train(8));
  FitResult r2 = fit(fx.dataset, fx.split, fx.words, small_arch(), quick_train(8));
  CHECK(r1.metrics_lines == r2.metrics_lines);
  auto a = r1.params.named_parameters();
  auto b = r2.params.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::equal(a[i].second.values().begin(), a[i].second.values().end(),
                     b[i].second.values().begin()));
  }
}

TEST_CASE("a zero decoder weight leaves the decoders exactly untouched") {
  Fixture fx = make_fixture();
  TrainConfig cfg = quick_train(3);
  cfg.weights.lambda2 = 0.0;
  ArchConfig arch = small_arch();
  arch.d_in = 8;
  arch.d_w = 6;
  ModelParams fresh = init_model(arch, fx.split.seen, cfg.seed);
  FitResult result = fit(fx.dataset, fx.split, fx.words, small_arch(), cfg);
  for (auto [before, after] :
       {std::pair{fresh.decoder_sketch_to_image.weight,
                  result.params.decoder_sketch_to_image.weight},
        std::pair{fresh.decoder_image_to_sketch.weight,
                  result.params.decoder_image_to_sketch.weight}}) {
    CHECK(std::equal(before.values().begin(), before.values().end(),
                     after.values().begin()));
  }
  // The rest of the model did train.
  CHECK(!std::equal(
      fresh.sketch_encoder.layers[0].weight.values().begin(),
      fresh.sketch_encoder.layers[0].weight.values().end(),
      result.params.sketch_encoder.layers[0].weight.values().begin()));
}

TEST_CASE("triplet-only training drives margin violations downward") {
  Fixture fx = make_fixture();
  TrainConfig base = quick_train(0);
  base.weights.lambda1 = base.weights.lambda2 = base.weights.lambda4 = 0.0;
  base.weights.lambda3 = 1.0;
  // A fixed evaluation set of triads, reused at every probe.
  const auto probe_triads =
      sample_triads(fx.dataset, fx.split, 128, TriadMode::Balanced, 999);

  double prev = 2.0;
  for (std::size_t epochs : {0u, 10u, 20u, 30u, 40u}) {
    TrainConfig cfg = base;
    cfg.epochs = epochs;
    FitResult r = fit(fx.dataset, fx.split, fx.words, small_arch(), cfg);
    const double frac =
        margin_violation_fraction(r.params, probe_triads, cfg.weights.alpha);
    CHECK(frac <= prev + 1e-12);
    prev = frac;
  }
  CHECK(prev < 1.0);
}

TEST_CASE("divergence aborts with the last good parameters") {
  Fixture fx = make_fixture();
  TrainConfig cfg = quick_train(10);
  cfg.learning_rate = 1e5;  // drives the forward pass out of range
  FitResult result = fit(fx.dataset, fx.split, fx.words, small_arch(), cfg);
  CHECK(result.diverged);
  for (const auto& [name, t] : result.params.named_parameters()) {
    (void)name;
    for (double v : t.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("semantic pretraining runs and keeps the pipeline healthy") {
  Fixture fx = make_fixture();
  TrainConfig cfg = quick_train(5);
  cfg.semantic_pretrain_epochs = 4;
  cfg.weights.lambda5 = 0.05;
  ArchConfig arch = small_arch();
  arch.semantic_decoder = true;
  FitResult result = fit(fx.dataset, fx.split, fx.words, arch, cfg);
  CHECK(!result.diverged);
  CHECK(result.epochs_run == 5);

  SUBCASE("pretraining without the decoder head is rejected") {
    TrainConfig bad = quick_train(2);
    bad.semantic_pretrain_epochs = 2;
    CHECK_THROWS_AS(fit(fx.dataset, fx.split, fx.words, small_arch(), bad),
                    ConfigError);
  }
}

TEST_CASE("checkpoints round-trip the trained model") {
  Fixture fx = make_fixture();
  FitResult result = fit(fx.dataset, fx.split, fx.words, small_arch(),
                         quick_train(4));
  const std::string path =
      (std::filesystem::temp_directory_path() / "crossat_trainer_ckpt.bin")
          .string();
  save_checkpoint(result.params, path);
  ModelParams restored = load_checkpoint(path);

  // The loss on a fixed batch is unchanged by the round trip.
  const auto batch = sample_triads(fx.dataset, fx.split, 16,
                                   TriadMode::Balanced, 777);
  WordTable scoped;
  scoped.dim = fx.words.dim;
  for (const auto& l : fx.split.seen) {
    scoped.labels.push_back(l);
    scoped.vectors.push_back(fx.words.vector_of(l));
  }
  SemanticGraph graph = build_semantic_graph(scoped);
  Tensor words = word_matrix(graph, scoped);
  LossWeights weights;
  const double before =
      evaluate_batch_loss(nullptr, result.params, graph, words, batch, weights)
          .total;
  const double after =
      evaluate_batch_loss(nullptr, restored, graph, words, batch, weights).total;
  CHECK(before == after);
}

TEST_CASE("metrics logs round-trip through their header") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "crossat_trainer_metrics.csv")
          .string();
  std::vector<std::string> lines{"1,0.5,0.25,1,2,1.345", "2,0.4,0.2,0.9,1.9,1.2"};
  write_metrics(lines, path);
  CHECK(read_metrics(path) == lines);
  std::ofstream bad(path);
  bad << "not a metrics file\n";
  bad.close();
  CHECK_THROWS_AS(read_metrics(path), FormatError);
}
