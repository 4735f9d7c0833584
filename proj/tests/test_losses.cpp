#include "crossat/losses.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

using namespace crossat;

namespace {

Tensor rows(std::vector<std::vector<double>> data) {
  const std::size_t n = data.size(), d = data.front().size();
  std::vector<double> flat;
  for (auto& r : data) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({n, d}, std::move(flat));
}

Tensor random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::vector<double> v(n * d);
  for (double& x : v) x = -1.0 + 2.0 * double(rng() >> 11) * 0x1.0p-53;
  return Tensor({n, d}, std::move(v));
}

EmbeddedTriads triads_from(Tensor a, Tensor p, Tensor n) {
  EmbeddedTriads t;
  t.anchors = a;
  t.positives = p;
  t.negatives = n;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    t.anchor_labels.push_back("same");
    t.positive_labels.push_back("same");
    t.negative_labels.push_back("other");
  }
  return t;
}

ModelParams tiny_model(std::uint64_t seed = 3) {
  ArchConfig a;
  a.d_in = 4;
  a.d_w = 4;
  a.d_shared = 2;
  a.hidden_width = 3;
  a.att_pool_groups = 4;
  return init_model(a, {"same", "other"}, seed);
}

}  // namespace

TEST_CASE("loss_cmd examples") {
  SUBCASE("perfect alignment scores zero") {
    Tensor e = rows({{0.5, -1.0}, {2.0, 0.0}});
    CHECK(loss_cmd(nullptr, e, e, e).item() == 0.0);
  }
  SUBCASE("unit residuals sum to two") {
    Tensor fx = rows({{1.0, 0.0}});
    Tensor fy = rows({{0.0, 1.0}});
    Tensor fw = rows({{0.0, 0.0}});
    CHECK(loss_cmd(nullptr, fx, fy, fw).item() == 2.0);
  }
  SUBCASE("doubling the residuals quadruples the loss") {
    std::mt19937_64 rng(1);
    Tensor fw = random_rows(3, 4, rng);
    Tensor fx = random_rows(3, 4, rng);
    Tensor fy = random_rows(3, 4, rng);
    const double base = loss_cmd(nullptr, fx, fy, fw).item();
    auto stretch = [&](const Tensor& t) {
      std::vector<double> v(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        v[i] = fw.values()[i] + 2.0 * (t.values()[i] - fw.values()[i]);
      }
      return Tensor({3, 4}, std::move(v));
    };
    const double doubled =
        loss_cmd(nullptr, stretch(fx), stretch(fy), fw).item();
    CHECK(doubled == doctest::Approx(4.0 * base).epsilon(1e-12));
  }
  SUBCASE("row mismatch is a pairing error") {
    CHECK_THROWS_AS(loss_cmd(nullptr, rows({{1, 2}}), rows({{1, 2}, {3, 4}}),
                             rows({{1, 2}})),
                    PairingError);
  }
}

TEST_CASE("loss_triplet examples") {
  SUBCASE("satisfied margin contributes nothing") {
    EmbeddedTriads t = triads_from(rows({{0.0, 0.0}}), rows({{0.0, 0.0}}),
                                   rows({{2.0, 0.0}}));
    CHECK(loss_triplet(nullptr, t, 1.0).item() == 0.0);
  }
  SUBCASE("equal distances degenerate to the margin") {
    EmbeddedTriads t = triads_from(rows({{0.0, 0.0}}), rows({{1.0, 0.0}}),
                                   rows({{0.0, 1.0}}));
    CHECK(loss_triplet(nullptr, t, 1.0).item() == 1.0);
  }
  SUBCASE("value matches an independent per-triad recomputation") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_rows(6, 3, rng);
      Tensor p = random_rows(6, 3, rng);
      Tensor n = random_rows(6, 3, rng);
      EmbeddedTriads t = triads_from(a, p, n);
      const double alpha = 0.5 + 0.1 * trial;
      double expected = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        double dp = 0.0, dn = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          dp += std::pow(a.at(i, j) - p.at(i, j), 2);
          dn += std::pow(a.at(i, j) - n.at(i, j), 2);
        }
        expected += std::max(std::sqrt(dp) - std::sqrt(dn) + alpha, 0.0);
      }
      expected /= 6.0;
      CHECK(loss_triplet(nullptr, t, alpha).item() ==
            doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("mismatched positive label is a contract error") {
    EmbeddedTriads t = triads_from(rows({{0.0, 0.0}}), rows({{1.0, 0.0}}),
                                   rows({{0.0, 1.0}}));
    t.positive_labels[0] = "other";
    CHECK_THROWS_AS(loss_triplet(nullptr, t, 1.0), ContractError);
    t.positive_labels[0] = "same";
    t.negative_labels[0] = "same";
    CHECK_THROWS_AS(loss_triplet(nullptr, t, 1.0), ContractError);
  }
}

TEST_CASE("loss_decoder examples") {
  ModelParams params = tiny_model();
  auto make_identity = [&](Dense& d) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        d.weight.values()[i * 2 + j] = i == j ? 1.0 : 0.0;
      }
    }
    for (double& v : d.bias.values()) v = 0.0;
  };
  make_identity(params.decoder_sketch_to_image);
  make_identity(params.decoder_image_to_sketch);

  SUBCASE("identity decoders on equal embeddings score zero") {
    Tensor e = rows({{0.25, -1.5}, {2.0, 0.5}});
    CHECK(loss_decoder(nullptr, params, {e, EmbeddingKind::Sketch},
                       {e, EmbeddingKind::Image})
              .item() == 0.0);
  }
  SUBCASE("unit gap in both directions sums to two") {
    Tensor fx = rows({{1.0, 0.0}});
    Tensor fy = rows({{0.0, 0.0}});
    CHECK(loss_decoder(nullptr, params, {fx, EmbeddingKind::Sketch},
                       {fy, EmbeddingKind::Image})
              .item() == 2.0);
  }
  SUBCASE("symmetric under swapping the modal roles and decoders") {
    std::mt19937_64 rng(9);
    Tensor fx = random_rows(4, 2, rng);
    Tensor fy = random_rows(4, 2, rng);
    ModelParams swapped = tiny_model();
    // swapped: g_xy' = g_yx, g_yx' = g_xy from a fresh random model
    ModelParams base = tiny_model(11);
    swapped.decoder_sketch_to_image = base.decoder_image_to_sketch;
    swapped.decoder_image_to_sketch = base.decoder_sketch_to_image;
    const double forward =
        loss_decoder(nullptr, base, {fx, EmbeddingKind::Sketch},
                     {fy, EmbeddingKind::Image})
            .item();
    const double mirrored =
        loss_decoder(nullptr, swapped, {fy, EmbeddingKind::Sketch},
                     {fx, EmbeddingKind::Image})
            .item();
    CHECK(forward == doctest::Approx(mirrored).epsilon(1e-12));
  }
}

TEST_CASE("loss_ce examples") {
  ModelParams params = tiny_model();
  SUBCASE("uniform logits give 2 ln C") {
    ArchConfig a;
    a.d_in = 4;
    a.d_w = 4;
    a.d_shared = 2;
    a.hidden_width = 3;
    a.att_pool_groups = 4;
    ModelParams four = init_model(a, {"a", "b", "c", "d"}, 5);
    for (double& v : four.classifier.weight.values()) v = 0.0;
    for (double& v : four.classifier.bias.values()) v = 0.0;
    Tensor codes = rows({{0.3, -0.7}, {0.1, 0.9}});
    std::vector<std::size_t> labels{0, 3};
    const double ce = loss_ce(nullptr, four, codes, codes, labels).item();
    CHECK(ce == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("nonnegative on random inputs") {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 10; ++t) {
      Tensor s = random_rows(3, 2, rng);
      Tensor i = random_rows(3, 2, rng);
      std::vector<std::size_t> labels{0, 1, 0};
      CHECK(loss_ce(nullptr, params, s, i, labels).item() >= 0.0);
    }
  }
  SUBCASE("label out of range is a contract error") {
    Tensor codes = rows({{0.3, -0.7}});
    std::vector<std::size_t> labels{7};
    CHECK_THROWS_AS(loss_ce(nullptr, params, codes, codes, labels),
                    ContractError);
  }
}

TEST_CASE("loss_total composition") {
  LossComponents comps;
  comps.cmd = Tensor::scalar(3.0);
  comps.dl = Tensor::scalar(5.0);
  comps.triplet = Tensor::scalar(7.0);
  comps.ce = Tensor::scalar(11.0);

  SUBCASE("a single positive lambda masks everything else") {
    LossWeights w;
    w.lambda1 = 1.0;
    w.lambda2 = w.lambda3 = w.lambda4 = 0.0;
    LossBreakdown bd = loss_total(nullptr, comps, w);
    CHECK(bd.total == 3.0);
    CHECK(bd.total_node.item() == 3.0);
  }
  SUBCASE("the default weighting matches the hand sum") {
    LossWeights w;  // 0.1, 0.1, 1, 0.01
    LossBreakdown bd = loss_total(nullptr, comps, w);
    CHECK(bd.total ==
          doctest::Approx(0.1 * 3 + 0.1 * 5 + 1.0 * 7 + 0.01 * 11).epsilon(1e-15));
    CHECK(bd.total == bd.total_node.item());  // same fold order, exact
  }
  SUBCASE("all-zero components score zero") {
    LossComponents zeros;
    zeros.cmd = Tensor::scalar(0.0);
    zeros.dl = Tensor::scalar(0.0);
    zeros.triplet = Tensor::scalar(0.0);
    zeros.ce = Tensor::scalar(0.0);
    LossWeights w;
    CHECK(loss_total(nullptr, zeros, w).total == 0.0);
  }
  SUBCASE("negative lambda is a configuration error") {
    LossWeights w;
    w.lambda2 = -0.1;
    CHECK_THROWS_AS(loss_total(nullptr, comps, w), ConfigError);
  }
  SUBCASE("all-zero lambdas are a configuration error") {
    LossWeights w;
    w.lambda1 = w.lambda2 = w.lambda3 = w.lambda4 = w.lambda5 = 0.0;
    CHECK_THROWS_AS(loss_total(nullptr, comps, w), ConfigError);
  }
  SUBCASE("total is linear in the lambda vector") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 50; ++t) {
      LossWeights w;
      w.lambda1 = double(rng() % 100) / 50.0;
      w.lambda2 = double(rng() % 100) / 50.0;
      w.lambda3 = double(rng() % 100) / 50.0;
      w.lambda4 = double(rng() % 100) / 50.0;
      if (w.lambda1 + w.lambda2 + w.lambda3 + w.lambda4 == 0.0) w.lambda3 = 1.0;
      LossBreakdown bd = loss_total(nullptr, comps, w);
      double expected = 0.0;
      if (w.lambda1 != 0.0) expected += w.lambda1 * 3.0;
      if (w.lambda2 != 0.0) expected += w.lambda2 * 5.0;
      if (w.lambda3 != 0.0) expected += w.lambda3 * 7.0;
      if (w.lambda4 != 0.0) expected += w.lambda4 * 11.0;
      CHECK(bd.total == expected);
    }
  }
}

TEST_CASE("component losses stay nonnegative on random inputs") {
  std::mt19937_64 rng(19);
  ModelParams params = tiny_model();
  for (int t = 0; t < 25; ++t) {
    Tensor a = random_rows(4, 2, rng);
    Tensor b = random_rows(4, 2, rng);
    Tensor c = random_rows(4, 2, rng);
    CHECK(loss_cmd(nullptr, a, b, c).item() >= 0.0);
    CHECK(loss_triplet(nullptr, triads_from(a, b, c), 1.0).item() >= 0.0);
    CHECK(loss_decoder(nullptr, params, {a, EmbeddingKind::Sketch},
                       {b, EmbeddingKind::Image})
              .item() >= 0.0);
  }
}
