#pragma once

#include <string>
#include <vector>

#include "crossat/data.hpp"
#include "crossat/tensor.hpp"

namespace crossat {

// Minimum spanning tree over pairwise Euclidean distances of class word
// vectors. The adjacency stores edge presence as binary 1 plus unit
// self-loops; the distances only pick which edges survive.
struct SemanticGraph {
  std::vector<std::string> labels;  // sorted; node i is labels[i]
  struct Edge {
    std::size_t a = 0, b = 0;  // a < b
    double weight = 0.0;
  };
  std::vector<Edge> edges;       // exactly labels.size() - 1 entries
  std::vector<double> adjacency; // row-major C x C, MST edges + self-loops
  double total_weight() const;
};

// Per-class semantic input: word vector, its graph-convolved counterpart and
// their concatenation.
struct ClassPrototype {
  std::string label;
  std::vector<double> word_vec;
  std::vector<double> graph_vec;
  std::vector<double> composed;
};

SemanticGraph build_semantic_graph(const WordTable& table);

// Symmetrically normalized adjacency D^{-1/2} A D^{-1/2} of a self-looped
// adjacency matrix (row-major C x C).
std::vector<double> normalized_adjacency(const std::vector<double>& adjacency,
                                         std::size_t c);

// out = normalize(adjacency) * features * weight, recorded on the tape so the
// weight is learnable.
Tensor graph_convolve(Tape* tape, const SemanticGraph& graph,
                      const Tensor& features, const Tensor& weight);
Tensor graph_convolve(Tape* tape, const std::vector<double>& adjacency,
                      const Tensor& features, const Tensor& weight);

// Word vectors of the graph's classes as a C x d_w tensor (graph node order).
Tensor word_matrix(const SemanticGraph& graph, const WordTable& table);

// [word | graph] composition as a C x 2*d_w tensor on the tape.
Tensor compose_prototype_matrix(Tape* tape, const SemanticGraph& graph,
                                const Tensor& words, const Tensor& gcn_weight);

// Frozen per-class view of the same composition.
std::vector<ClassPrototype> compose_prototypes(const SemanticGraph& graph,
                                               const WordTable& table,
                                               const Tensor& gcn_weight);

}  // namespace crossat
