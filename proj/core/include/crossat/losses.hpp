#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crossat/network.hpp"
#include "crossat/tensor.hpp"

namespace crossat {

// Weights of the four objective terms plus the triplet margin. lambda5 drives
// the optional semantic reconstruction term and defaults to off.
struct LossWeights {
  double lambda1 = 0.1;   // cross-modal latent
  double lambda2 = 0.1;   // decoder
  double lambda3 = 1.0;   // cross-triplet
  double lambda4 = 0.01;  // classification
  double lambda5 = 0.0;   // semantic reconstruction (optional)
  double alpha = 1.0;     // triplet margin

  void validate() const;  // nonnegative lambdas, at least one positive, alpha > 0
};

// Per-term values and their weighted sum. total_node is the scalar on the
// tape; the double mirrors repeat the same sum in the same order.
struct LossBreakdown {
  double cmd = 0.0;
  double dl = 0.0;
  double triplet = 0.0;
  double ce = 0.0;
  double recon = 0.0;
  double total = 0.0;
  Tensor total_node;
};

// Embedded triad batch: row i of each tensor belongs to triad i. Labels are
// carried for the contract check (positive matches anchor, negative differs).
struct EmbeddedTriads {
  Tensor anchors;
  Tensor positives;
  Tensor negatives;
  std::vector<std::string> anchor_labels;
  std::vector<std::string> positive_labels;
  std::vector<std::string> negative_labels;
};

// ||f_x - f_w||_F^2 + ||f_y - f_w||_F^2, mean over class-aligned rows.
Tensor loss_cmd(Tape* tape, const Tensor& sketch_emb, const Tensor& image_emb,
                const Tensor& semantic_emb);

// Mean over triads of max(d(a,p) - d(a,n) + alpha, 0), Euclidean d.
Tensor loss_triplet(Tape* tape, const EmbeddedTriads& triads, double alpha);

// ||g_xy(f_x) - f_y||_F^2 + ||g_yx(f_y) - f_x||_F^2, mean over aligned rows.
Tensor loss_decoder(Tape* tape, const ModelParams& params,
                    const EmbeddingBatch& sketch_emb,
                    const EmbeddingBatch& image_emb);

// CE(classify(S_X)) + CE(classify(S_Y)), batch means, on relaxed codes.
Tensor loss_ce(Tape* tape, const ModelParams& params, const Tensor& sketch_codes,
               const Tensor& image_codes, std::span<const std::size_t> labels);

struct LossComponents {
  std::optional<Tensor> cmd;
  std::optional<Tensor> dl;
  std::optional<Tensor> triplet;
  std::optional<Tensor> ce;
  std::optional<Tensor> recon;
};

// Weighted sum; terms with zero weight contribute nothing to the tape so the
// corresponding parameters receive exactly zero gradient.
LossBreakdown loss_total(Tape* tape, const LossComponents& components,
                         const LossWeights& weights);

}  // namespace crossat
