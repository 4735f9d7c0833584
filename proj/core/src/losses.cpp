#include "crossat/losses.hpp"

#include <cmath>

namespace crossat {

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3, lambda4, lambda5}) {
    if (l < 0.0 || !std::isfinite(l)) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
  if (lambda1 == 0.0 && lambda2 == 0.0 && lambda3 == 0.0 && lambda4 == 0.0 &&
      lambda5 == 0.0) {
    throw ConfigError("at least one loss weight must be positive");
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("triplet margin alpha must be positive");
  }
}

Tensor loss_cmd(Tape* tape, const Tensor& sketch_emb, const Tensor& image_emb,
                const Tensor& semantic_emb) {
  if (sketch_emb.rows() != image_emb.rows() ||
      sketch_emb.rows() != semantic_emb.rows()) {
    throw PairingError("loss_cmd batches are not class-aligned: " +
                       std::to_string(sketch_emb.rows()) + "/" +
                       std::to_string(image_emb.rows()) + "/" +
                       std::to_string(semantic_emb.rows()) + " rows");
  }
  Tensor a = mean_row_sq_dist(tape, sketch_emb, semantic_emb);
  Tensor b = mean_row_sq_dist(tape, image_emb, semantic_emb);
  return add(tape, a, b);
}

Tensor loss_triplet(Tape* tape, const EmbeddedTriads& triads, double alpha) {
  const std::size_t n = triads.anchors.rows();
  if (triads.positives.rows() != n || triads.negatives.rows() != n) {
    throw PairingError("loss_triplet rows disagree across anchors/positives/negatives");
  }
  if (triads.anchor_labels.size() != n || triads.positive_labels.size() != n ||
      triads.negative_labels.size() != n) {
    throw PairingError("loss_triplet label lists disagree with the batch size");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (triads.anchor_labels[i] != triads.positive_labels[i]) {
      throw ContractError("triad " + std::to_string(i) + ": positive class '" +
                          triads.positive_labels[i] +
                          "' differs from the anchor class '" +
                          triads.anchor_labels[i] + "'");
    }
    if (triads.anchor_labels[i] == triads.negative_labels[i]) {
      throw ContractError("triad " + std::to_string(i) +
                          ": negative shares the anchor class '" +
                          triads.anchor_labels[i] + "'");
    }
  }
  Tensor d_pos = row_l2_distance(tape, triads.anchors, triads.positives);
  Tensor d_neg = row_l2_distance(tape, triads.anchors, triads.negatives);
  return triplet_hinge_mean(tape, d_pos, d_neg, alpha);
}

Tensor loss_decoder(Tape* tape, const ModelParams& params,
                    const EmbeddingBatch& sketch_emb,
                    const EmbeddingBatch& image_emb) {
  if (sketch_emb.kind != EmbeddingKind::Sketch ||
      image_emb.kind != EmbeddingKind::Image) {
    throw ContractError("loss_decoder expects a sketch batch and an image batch");
  }
  if (sketch_emb.rows.rows() != image_emb.rows.rows()) {
    throw PairingError("loss_decoder batches are not class-aligned");
  }
  Tensor to_image = decode_cross(tape, params, sketch_emb,
                                 DecodeDirection::SketchToImage);
  Tensor to_sketch = decode_cross(tape, params, image_emb,
                                  DecodeDirection::ImageToSketch);
  Tensor a = mean_row_sq_dist(tape, to_image, image_emb.rows);
  Tensor b = mean_row_sq_dist(tape, to_sketch, sketch_emb.rows);
  return add(tape, a, b);
}

Tensor loss_ce(Tape* tape, const ModelParams& params, const Tensor& sketch_codes,
               const Tensor& image_codes, std::span<const std::size_t> labels) {
  for (std::size_t lbl : labels) {
    if (lbl >= params.num_seen()) {
      throw ContractError("class index " + std::to_string(lbl) +
                          " out of range for " + std::to_string(params.num_seen()) +
                          " seen classes");
    }
  }
  Tensor ce_sketch = softmax_cross_entropy(
      tape, classify_logits(tape, params, sketch_codes), labels);
  Tensor ce_image = softmax_cross_entropy(
      tape, classify_logits(tape, params, image_codes), labels);
  return add(tape, ce_sketch, ce_image);
}

LossBreakdown loss_total(Tape* tape, const LossComponents& components,
                         const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  auto value_of = [](const std::optional<Tensor>& t) {
    return t.has_value() ? t->item() : 0.0;
  };
  out.cmd = value_of(components.cmd);
  out.dl = value_of(components.dl);
  out.triplet = value_of(components.triplet);
  out.ce = value_of(components.ce);
  out.recon = value_of(components.recon);

  Tensor acc;
  auto fold = [tape, &acc](const std::optional<Tensor>& term, double lambda) {
    if (lambda == 0.0 || !term.has_value()) return;
    Tensor scaled = scale(tape, *term, lambda);
    acc = acc.defined() ? add(tape, acc, scaled) : scaled;
  };
  fold(components.cmd, weights.lambda1);
  fold(components.dl, weights.lambda2);
  fold(components.triplet, weights.lambda3);
  fold(components.ce, weights.lambda4);
  fold(components.recon, weights.lambda5);
  if (!acc.defined()) acc = Tensor::scalar(0.0);

  out.total_node = acc;
  // Mirror of the tape sum, folded in the same order.
  double total = 0.0;
  if (weights.lambda1 != 0.0 && components.cmd) total += weights.lambda1 * out.cmd;
  if (weights.lambda2 != 0.0 && components.dl) total += weights.lambda2 * out.dl;
  if (weights.lambda3 != 0.0 && components.triplet) {
    total += weights.lambda3 * out.triplet;
  }
  if (weights.lambda4 != 0.0 && components.ce) total += weights.lambda4 * out.ce;
  if (weights.lambda5 != 0.0 && components.recon) {
    total += weights.lambda5 * out.recon;
  }
  out.total = total;
  return out;
}

}  // namespace crossat
