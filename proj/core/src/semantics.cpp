#include "crossat/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace crossat {

double SemanticGraph::total_weight() const {
  double w = 0.0;
  for (const Edge& e : edges) w += e.weight;
  return w;
}

SemanticGraph build_semantic_graph(const WordTable& table) {
  if (table.labels.size() < 2) {
    throw ConfigError("semantic graph needs at least two classes");
  }
  {
    std::set<std::string> dedup(table.labels.begin(), table.labels.end());
    if (dedup.size() != table.labels.size()) {
      throw SchemaError("duplicate class labels in word-vector table");
    }
  }

  SemanticGraph graph;
  graph.labels.assign(table.labels.begin(), table.labels.end());
  std::sort(graph.labels.begin(), graph.labels.end());
  const std::size_t c = graph.labels.size();

  std::vector<const std::vector<double>*> vecs(c);
  for (std::size_t i = 0; i < c; ++i) vecs[i] = &table.vector_of(graph.labels[i]);

  // All pairwise Euclidean distances; ties broken by the lexicographic label
  // pair so the tree is deterministic.
  struct Candidate {
    double weight;
    std::size_t a, b;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(c * (c - 1) / 2);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i + 1; j < c; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < table.dim; ++k) {
        const double d = (*vecs[i])[k] - (*vecs[j])[k];
        s += d * d;
      }
      candidates.push_back({std::sqrt(s), i, j});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& x, const Candidate& y) {
              if (x.weight != y.weight) return x.weight < y.weight;
              if (x.a != y.a) return x.a < y.a;
              return x.b < y.b;
            });

  // Kruskal with union-find.
  std::vector<std::size_t> parent(c);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  graph.adjacency.assign(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) graph.adjacency[i * c + i] = 1.0;
  for (const Candidate& cand : candidates) {
    const std::size_t ra = find(cand.a), rb = find(cand.b);
    if (ra == rb) continue;
    parent[ra] = rb;
    graph.edges.push_back({cand.a, cand.b, cand.weight});
    graph.adjacency[cand.a * c + cand.b] = 1.0;
    graph.adjacency[cand.b * c + cand.a] = 1.0;
    if (graph.edges.size() == c - 1) break;
  }
  return graph;
}

std::vector<double> normalized_adjacency(const std::vector<double>& adjacency,
                                         std::size_t c) {
  if (adjacency.size() != c * c) {
    throw DimensionError("adjacency must be " + std::to_string(c) + "x" +
                         std::to_string(c));
  }
  std::vector<double> degree(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) degree[i] += adjacency[i * c + j];
    if (degree[i] <= 0.0) {
      throw NumericError("node " + std::to_string(i) +
                         " has zero degree; self-loops are required");
    }
  }
  std::vector<double> out(c * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = adjacency[i * c + j] / std::sqrt(degree[i] * degree[j]);
    }
  }
  return out;
}

Tensor graph_convolve(Tape* tape, const std::vector<double>& adjacency,
                      const Tensor& features, const Tensor& weight) {
  const std::size_t c = features.rows();
  Tensor a_hat({c, c}, normalized_adjacency(adjacency, c));
  return matmul(tape, matmul(tape, a_hat, features), weight);
}

Tensor graph_convolve(Tape* tape, const SemanticGraph& graph,
                      const Tensor& features, const Tensor& weight) {
  if (features.rows() != graph.labels.size()) {
    throw DimensionError("graph_convolve: " + std::to_string(features.rows()) +
                         " feature rows for " +
                         std::to_string(graph.labels.size()) + " graph nodes");
  }
  return graph_convolve(tape, graph.adjacency, features, weight);
}

Tensor word_matrix(const SemanticGraph& graph, const WordTable& table) {
  std::vector<std::string> missing, extra;
  for (const std::string& l : graph.labels) {
    if (!table.contains(l)) missing.push_back(l);
  }
  for (const std::string& l : table.labels) {
    if (!std::binary_search(graph.labels.begin(), graph.labels.end(), l)) {
      extra.push_back(l);
    }
  }
  if (!missing.empty() || !extra.empty()) {
    std::ostringstream os;
    os << "graph and word table label sets differ:";
    for (const auto& l : missing) os << " missing '" << l << "'";
    for (const auto& l : extra) os << " extra '" << l << "'";
    throw SchemaError(os.str());
  }
  std::vector<double> data;
  data.reserve(graph.labels.size() * table.dim);
  for (const std::string& l : graph.labels) {
    const auto& v = table.vector_of(l);
    data.insert(data.end(), v.begin(), v.end());
  }
  return Tensor({graph.labels.size(), table.dim}, std::move(data));
}

Tensor compose_prototype_matrix(Tape* tape, const SemanticGraph& graph,
                                const Tensor& words, const Tensor& gcn_weight) {
  Tensor graph_part = graph_convolve(tape, graph, words, gcn_weight);
  return concat_cols(tape, words, graph_part);
}

std::vector<ClassPrototype> compose_prototypes(const SemanticGraph& graph,
                                               const WordTable& table,
                                               const Tensor& gcn_weight) {
  Tensor words = word_matrix(graph, table);
  Tensor graph_part = graph_convolve(nullptr, graph, words, gcn_weight);
  const std::size_t c = graph.labels.size(), d = table.dim;
  std::vector<ClassPrototype> prototypes(c);
  for (std::size_t i = 0; i < c; ++i) {
    ClassPrototype& p = prototypes[i];
    p.label = graph.labels[i];
    p.word_vec.assign(words.values().begin() + i * d,
                      words.values().begin() + (i + 1) * d);
    p.graph_vec.assign(graph_part.values().begin() + i * d,
                       graph_part.values().begin() + (i + 1) * d);
    p.composed = p.word_vec;
    p.composed.insert(p.composed.end(), p.graph_vec.begin(), p.graph_vec.end());
  }
  return prototypes;
}

}  // namespace crossat
