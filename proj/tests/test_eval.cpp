#include "crossat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "crossat/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace crossat;

namespace {

struct Fixture {
  Dataset dataset;
  ModelParams params;
  ZeroShotSplit split;
};

Fixture make_fixture(double noise, std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.classes = 5;
  cfg.per_class_per_modality = 6;
  cfg.d_in = 8;
  cfg.word_dim = 6;
  cfg.modality_shift = 0.0;
  cfg.noise = noise;
  cfg.rng_seed = seed;
  SynthResult synth = synth_generate(cfg);
  ArchConfig arch;
  arch.d_in = 8;
  arch.d_w = 6;
  arch.d_shared = 4;
  arch.hidden_width = 6;
  arch.att_pool_groups = 4;
  ModelParams params = init_model(arch, synth.dataset.labels(), seed + 1);
  ZeroShotSplit split = make_split(synth.dataset.labels(), 2, seed);
  return {std::move(synth.dataset), std::move(params), std::move(split)};
}

}  // namespace

TEST_CASE("average_precision follows the direct formula") {
  std::vector<int> a{1, 1, 0};
  CHECK(average_precision(a, 2) == 1.0);
  std::vector<int> b{1, 0, 1};
  CHECK(average_precision(b, 2) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  std::vector<int> c{0, 0, 1};
  CHECK(average_precision(c, 1) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(average_precision(a, 0), ProtocolError);
  std::vector<int> bad{1, 2, 0};
  CHECK_THROWS_AS(average_precision(bad, 2), ContractError);
}

TEST_CASE("average_precision equals the precision/recall-step oracle") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 300; ++t) {
    const std::size_t len = 1 + rng() % 40;
    std::vector<int> rel(len);
    std::size_t total = 0;
    for (int& r : rel) {
      r = int(rng() % 2);
      total += std::size_t(r);
    }
    if (total == 0) {
      rel[rng() % len] = 1;
      total = 1;
    }
    CHECK(average_precision(rel, total) ==
          doctest::Approx(oracles::brute_force_ap(rel, total)).epsilon(1e-13));
  }
}

TEST_CASE("precision_at_k uses a fixed denominator") {
  std::vector<int> a{1, 0};
  CHECK(precision_at_k(a, 2) == 0.5);
  std::vector<int> all_rel{1, 1, 1, 1};
  CHECK(precision_at_k(all_rel, 3) == 1.0);
  // 40-item gallery, 10 hits, k = 100: the denominator stays 100.
  std::vector<int> gallery(40, 0);
  for (int i = 0; i < 10; ++i) gallery[i] = 1;
  CHECK(precision_at_k(gallery, 100) == doctest::Approx(0.10));
  CHECK_THROWS_AS(precision_at_k(a, 0), ConfigError);
}

TEST_CASE("AP dominates P@R on random rankings") {
  // With R = total relevant, AP >= relevant-count-weighted precision when the
  // ranking is complete; spot-check the documented sanity inequality.
  std::mt19937_64 rng(29);
  for (int t = 0; t < 100; ++t) {
    const std::size_t len = 5 + rng() % 30;
    std::vector<int> rel(len, 0);
    const std::size_t total = 1 + rng() % (len / 2 + 1);
    std::vector<std::size_t> pos(len);
    for (std::size_t i = 0; i < len; ++i) pos[i] = i;
    for (std::size_t i = 0; i < total; ++i) {
      std::swap(pos[i], pos[i + rng() % (len - i)]);
      rel[pos[i]] = 1;
    }
    const double ap = average_precision(rel, total);
    const double brute = oracles::brute_force_ap(rel, total);
    CHECK(ap == doctest::Approx(brute).epsilon(1e-12));
    CHECK(ap <= 1.0);
    CHECK(ap >= 0.0);
  }
}

TEST_CASE("self-retrieval with collapsed classes reaches mAP 1") {
  // noise 0 makes every record of a class identical, so same-class items sit
  // at distance 0 and everything else strictly farther.
  Fixture fx = make_fixture(0.0);
  EvalReport report = evaluate(fx.params, fx.dataset, fx.split,
                               Task::SketchToSketch, Metric::Euclidean, 10);
  CHECK(report.map == doctest::Approx(1.0));
  CHECK(report.num_queries == 12);  // 2 unseen classes x 6 sketches
}

TEST_CASE("report internals stay consistent") {
  Fixture fx = make_fixture(0.3);
  EvalReport report = evaluate(fx.params, fx.dataset, fx.split,
                               Task::SketchToImage, Metric::Euclidean, 5);
  CHECK(report.map >= 0.0);
  CHECK(report.map <= 1.0);
  CHECK(report.p_at_k >= 0.0);
  CHECK(report.p_at_k <= 1.0);
  // per-class APs average (weighted by query counts) back to the mAP.
  double weighted = 0.0;
  for (const auto& [label, ap] : report.per_class) {
    (void)label;
    weighted += ap * 6.0;  // 6 queries per class in this fixture
  }
  CHECK(weighted / double(report.num_queries) == doctest::Approx(report.map));

  SUBCASE("evaluation is deterministic run to run") {
    EvalReport again = evaluate(fx.params, fx.dataset, fx.split,
                                Task::SketchToImage, Metric::Euclidean, 5);
    CHECK(again.map == report.map);
    CHECK(again.p_at_k == report.p_at_k);
  }
  SUBCASE("hamming evaluation runs end to end") {
    EvalReport hashed = evaluate(fx.params, fx.dataset, fx.split,
                                 Task::SketchToImage, Metric::Hamming, 5);
    CHECK(hashed.map >= 0.0);
    CHECK(hashed.map <= 1.0);
  }
  SUBCASE("map cutoff variant stays within bounds") {
    EvalOptions opt;
    opt.map_cutoff = 3;
    EvalReport cut = evaluate(fx.params, fx.dataset, fx.split,
                              Task::SketchToImage, Metric::Euclidean, 5, opt);
    CHECK(cut.map >= 0.0);
    CHECK(cut.map <= 1.0);
  }
}

TEST_CASE("seen-class records never influence the evaluation") {
  Fixture fx = make_fixture(0.3);
  EvalReport before = evaluate(fx.params, fx.dataset, fx.split,
                               Task::SketchToImage, Metric::Euclidean, 5);
  // Corrupt every seen-class record; the unseen-only protocol must not see it.
  std::vector<FeatureRecord> records;
  for (const FeatureRecord& r : fx.dataset.records()) {
    FeatureRecord copy = r;
    if (fx.split.is_seen(r.label)) {
      for (double& v : copy.feature) v = 1e3;
    }
    records.push_back(std::move(copy));
  }
  Dataset corrupted(std::move(records));
  EvalReport after = evaluate(fx.params, corrupted, fx.split,
                              Task::SketchToImage, Metric::Euclidean, 5);
  CHECK(after.map == before.map);
  CHECK(after.p_at_k == before.p_at_k);
}

TEST_CASE("shuffled labels land at the permutation null") {
  Fixture fx = make_fixture(0.3);
  // Shuffle unseen-record labels within each modality.
  Rng rng(99);
  std::vector<FeatureRecord> records(fx.dataset.records().begin(),
                                     fx.dataset.records().end());
  for (Modality m : {Modality::Sketch, Modality::Image}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].modality == m && fx.split.is_unseen(records[i].label)) {
        idx.push_back(i);
      }
    }
    std::vector<std::string> labels;
    for (std::size_t i : idx) labels.push_back(records[i].label);
    rng.shuffle(labels);
    for (std::size_t j = 0; j < idx.size(); ++j) records[idx[j]].label = labels[j];
  }
  Dataset shuffled(std::move(records));
  EvalReport report = evaluate(fx.params, shuffled, fx.split,
                               Task::SketchToImage, Metric::Euclidean, 5);

  std::vector<std::string> query_labels, gallery_labels;
  for (const FeatureRecord& r : shuffled.records()) {
    if (!fx.split.is_unseen(r.label)) continue;
    if (r.modality == Modality::Sketch) query_labels.push_back(r.label);
    if (r.modality == Modality::Image) gallery_labels.push_back(r.label);
  }
  NullEstimate null =
      permutation_null_map(query_labels, gallery_labels, 300, 123);
  CHECK(std::abs(report.map - null.mean) <= 3.0 * null.stddev + 1e-9);
}

TEST_CASE("queries with zero relevant gallery items are excluded with a count") {
  Fixture fx = make_fixture(0.3);
  // Drop all images of one unseen class: its sketches become undefined queries.
  const std::string victim = fx.split.unseen[0];
  std::vector<FeatureRecord> records;
  for (const FeatureRecord& r : fx.dataset.records()) {
    if (r.label == victim && r.modality == Modality::Image) continue;
    records.push_back(r);
  }
  Dataset pruned(std::move(records));
  EvalReport report = evaluate(fx.params, pruned, fx.split,
                               Task::SketchToImage, Metric::Euclidean, 5);
  CHECK(report.excluded_queries == 6);
  CHECK(report.num_queries == 6);
}

TEST_CASE("empty galleries are protocol errors") {
  Fixture fx = make_fixture(0.3);
  std::vector<FeatureRecord> records;
  for (const FeatureRecord& r : fx.dataset.records()) {
    if (fx.split.is_unseen(r.label) && r.modality == Modality::Image) continue;
    records.push_back(r);
  }
  Dataset no_images(std::move(records));
  CHECK_THROWS_AS(evaluate(fx.params, no_images, fx.split, Task::SketchToImage,
                           Metric::Euclidean, 5),
                  ProtocolError);
}

TEST_CASE("machine line carries the six documented fields") {
  EvalReport report;
  report.task = Task::SketchToImage;
  report.metric = Metric::Hamming;
  report.map = 0.25;
  report.p_at_k = 0.125;
  report.k = 100;
  report.num_queries = 42;
  CHECK(report_machine_line(report) ==
        "sketch_to_image,hamming,0.250000,0.125000,100,42");
}
