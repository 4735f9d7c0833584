#include "crossat/semantics.hpp"

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"

using namespace crossat;

namespace {

WordTable table_from(const std::vector<std::string>& labels,
                     const std::vector<std::vector<double>>& vectors) {
  WordTable t;
  t.labels = labels;
  t.vectors = vectors;
  t.dim = vectors.front().size();
  return t;
}

}  // namespace

TEST_CASE("two classes produce the single possible spanning tree") {
  WordTable t = table_from({"a", "b"}, {{0, 0}, {3, 4}});
  SemanticGraph g = build_semantic_graph(t);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0].weight == doctest::Approx(5.0));
  CHECK(g.adjacency[0 * 2 + 1] == 1.0);
  CHECK(g.adjacency[1 * 2 + 0] == 1.0);
  CHECK(g.adjacency[0] == 1.0);  // self-loops
  CHECK(g.adjacency[3] == 1.0);
}

TEST_CASE("collinear embeddings give the path graph") {
  WordTable t = table_from({"p0", "p1", "p2", "p3"},
                           {{0.0}, {1.0}, {2.0}, {3.0}});
  SemanticGraph g = build_semantic_graph(t);
  REQUIRE(g.edges.size() == 3);
  CHECK(g.total_weight() == doctest::Approx(3.0));
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (const auto& e : g.edges) edges.insert({e.a, e.b});
  CHECK(edges == std::set<std::pair<std::size_t, std::size_t>>{
                     {0, 1}, {1, 2}, {2, 3}});
  // The brute-force enumeration over all 16 spanning trees of K4 agrees.
  oracles::BruteMst brute =
      oracles::brute_force_mst({{0.0}, {1.0}, {2.0}, {3.0}});
  CHECK(g.total_weight() == doctest::Approx(brute.weight));
}

TEST_CASE("MST matches exhaustive enumeration on random word sets") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 3 + trial % 4;
    std::vector<std::vector<double>> points(c, std::vector<double>(4));
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < c; ++i) {
      labels.push_back("cls" + std::to_string(i));
      for (double& v : points[i]) {
        v = -1.0 + 2.0 * double(rng() >> 11) * 0x1.0p-53;
      }
    }
    SemanticGraph g = build_semantic_graph(table_from(labels, points));
    CHECK(g.edges.size() == c - 1);
    oracles::BruteMst brute = oracles::brute_force_mst(points);
    CHECK(g.total_weight() == doctest::Approx(brute.weight).epsilon(1e-12));
  }
}

TEST_CASE("uniform scaling keeps the MST edge set") {
  std::mt19937_64 rng(73);
  std::vector<std::vector<double>> points(5, std::vector<double>(3));
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < 5; ++i) {
    labels.push_back("s" + std::to_string(i));
    for (double& v : points[i]) {
      v = -1.0 + 2.0 * double(rng() >> 11) * 0x1.0p-53;
    }
  }
  SemanticGraph base = build_semantic_graph(table_from(labels, points));
  std::vector<std::vector<double>> scaled = points;
  for (auto& p : scaled) {
    for (double& v : p) v *= 4.5;
  }
  SemanticGraph big = build_semantic_graph(table_from(labels, scaled));
  REQUIRE(base.edges.size() == big.edges.size());
  for (std::size_t i = 0; i < base.edges.size(); ++i) {
    CHECK(base.edges[i].a == big.edges[i].a);
    CHECK(base.edges[i].b == big.edges[i].b);
    CHECK(big.edges[i].weight == doctest::Approx(4.5 * base.edges[i].weight));
  }
}

TEST_CASE("duplicate class labels are rejected") {
  CHECK_THROWS_AS(build_semantic_graph(table_from({"a", "a"}, {{0.0}, {1.0}})),
                  SchemaError);
}

TEST_CASE("graph convolution propagation") {
  SUBCASE("self-loops only with identity weight is the identity map") {
    std::vector<double> adjacency{1, 0, 0, 1};  // 2x2, loops only
    Tensor features({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor out = graph_convolve(nullptr, adjacency, features,
                                Tensor::identity(3));
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out.values()[i] == features.values()[i]);
    }
  }
  SUBCASE("one symmetric edge with constant features keeps rows equal") {
    std::vector<double> adjacency{1, 1, 1, 1};
    Tensor features = Tensor::full({2, 2}, 3.0);
    Tensor out = graph_convolve(nullptr, adjacency, features,
                                Tensor::identity(2));
    CHECK(out.values()[0] == doctest::Approx(out.values()[2]));
    CHECK(out.values()[1] == doctest::Approx(out.values()[3]));
  }
  SUBCASE("3-node path matches the hand-computed normalization") {
    // Path 0-1-2 with self-loops: degrees 2, 3, 2.
    std::vector<double> adjacency{1, 1, 0, 1, 1, 1, 0, 1, 1};
    std::vector<double> a_hat = normalized_adjacency(adjacency, 3);
    const double d0 = 2.0, d1 = 3.0;
    CHECK(a_hat[0 * 3 + 0] == doctest::Approx(1.0 / d0));
    CHECK(a_hat[0 * 3 + 1] == doctest::Approx(1.0 / std::sqrt(d0 * d1)));
    CHECK(a_hat[0 * 3 + 2] == 0.0);
    CHECK(a_hat[1 * 3 + 1] == doctest::Approx(1.0 / d1));
    // Symmetry.
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(a_hat[i * 3 + j] == doctest::Approx(a_hat[j * 3 + i]));
      }
    }
    // Check out = A_hat * F * W against direct arithmetic.
    Tensor features({3, 2}, {1, 0, 0, 1, 1, 1});
    Tensor weight({2, 2}, {2, 0, 0, 2});
    Tensor out = graph_convolve(nullptr, adjacency, features, weight);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
          s += a_hat[i * 3 + k] * features.values()[k * 2 + j];
        }
        CHECK(out.values()[i * 2 + j] == doctest::Approx(2.0 * s));
      }
    }
  }
  SUBCASE("rows of a regular self-looped graph sum to one") {
    // 4-cycle plus self-loops: every degree is 3.
    std::vector<double> adjacency{1, 1, 0, 1,  1, 1, 1, 0,
                                  0, 1, 1, 1,  1, 0, 1, 1};
    std::vector<double> a_hat = normalized_adjacency(adjacency, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) row += a_hat[i * 4 + j];
      CHECK(row == doctest::Approx(1.0));
    }
  }
  SUBCASE("zero-degree nodes are impossible inputs") {
    std::vector<double> adjacency{0, 0, 0, 0};
    CHECK_THROWS_AS(normalized_adjacency(adjacency, 2), NumericError);
  }
}

TEST_CASE("prototype composition") {
  WordTable t = table_from({"a", "b", "c"},
                           {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
  SemanticGraph g = build_semantic_graph(t);

  SUBCASE("composed width is twice the word width") {
    auto protos = compose_prototypes(g, t, Tensor::identity(4));
    REQUIRE(protos.size() == 3);
    for (const auto& p : protos) {
      CHECK(p.composed.size() == 8);
      CHECK(p.word_vec.size() == 4);
      CHECK(p.graph_vec.size() == 4);
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(p.composed[i] == p.word_vec[i]);
        CHECK(p.composed[4 + i] == p.graph_vec[i]);
      }
    }
  }
  SUBCASE("a zero gcn weight zeroes the graph half") {
    auto protos = compose_prototypes(g, t, Tensor::zeros({4, 4}));
    for (const auto& p : protos) {
      CHECK(p.word_vec == t.vector_of(p.label));
      for (double v : p.graph_vec) CHECK(v == 0.0);
    }
  }
  SUBCASE("label mismatch is named") {
    WordTable wrong = table_from({"a", "b", "zz"},
                                 {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
    try {
      word_matrix(g, wrong);
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("zz") != std::string::npos);
      CHECK(msg.find("c") != std::string::npos);
    }
  }
}
