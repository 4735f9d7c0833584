#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crossat/data.hpp"
#include "crossat/semantics.hpp"
#include "crossat/tensor.hpp"

namespace crossat {

// Architecture knobs. The encoder stacks run d_in -> hidden_width (repeated
// hidden_layers times) -> d_shared with leaky-ReLU between layers; the
// attention branch pools the raw sketch feature into att_pool_groups values
// and maps them through two fully-connected layers to a sigmoid gate.
struct ArchConfig {
  std::size_t d_in = 2048;
  std::size_t d_w = 300;
  std::size_t d_shared = 64;
  std::size_t hidden_width = 512;
  std::size_t hidden_layers = 1;
  std::size_t att_pool_groups = 8;
  double hash_beta = 1.0;
  double leaky_slope = 0.01;
  bool use_graph = true;
  bool fixed_semantic = false;     // raw word vectors as the shared space
  bool semantic_decoder = false;   // optional reconstruction head
};

struct Dense {
  Tensor weight;
  Tensor bias;
};

struct EncoderStack {
  std::vector<Dense> layers;
};

enum class EmbeddingKind { Sketch, Image, Semantic };

struct EmbeddingBatch {
  Tensor rows;  // n x d_shared
  EmbeddingKind kind = EmbeddingKind::Sketch;
};

enum class DecodeDirection { SketchToImage, ImageToSketch };

// Fixed-length vector of trits in {-1, 0, +1}.
struct TernaryCode {
  std::vector<std::int8_t> trits;
};

// All learnable parameter tensors. Groups that the configuration disables
// (e.g. the semantic encoder in fixed-semantic mode) hold no tensors and are
// absent from parameters().
struct ModelParams {
  ArchConfig arch;
  std::vector<std::string> seen_labels;  // sorted; classifier column order

  EncoderStack sketch_encoder;    // f_x
  EncoderStack image_encoder;     // f_y
  Dense att_fc1, att_fc2;         // attention branch
  EncoderStack semantic_encoder;  // f_w
  Dense decoder_sketch_to_image;  // g_xy
  Dense decoder_image_to_sketch;  // g_yx
  Tensor hash_projection;         // W_t, d_shared x d_shared
  Dense classifier;               // d_shared -> |seen_labels|
  Tensor gcn_weight;              // d_w x d_w
  Dense semantic_reconstructor;   // optional, d_shared -> semantic input width

  std::size_t num_seen() const { return seen_labels.size(); }
  std::size_t semantic_input_width() const;
  // Class index used by the classifier; throws ContractError for non-seen labels.
  std::size_t seen_index(const std::string& label) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

ModelParams init_model(const ArchConfig& config,
                       std::vector<std::string> seen_labels,
                       std::uint64_t rng_seed);

// ---- Forward passes --------------------------------------------------------

Tensor encoder_forward(Tape* tape, const EncoderStack& stack, const Tensor& x,
                       double leaky_slope);

// sigmoid(FC2(FC1(gap(sketch_feature)))); every entry strictly in (0, 1).
Tensor attention_gate(Tape* tape, const ModelParams& params,
                      const Tensor& sketch_feature);

EmbeddingBatch encode_sketch(Tape* tape, const ModelParams& params,
                             const Tensor& x);

// gate_source, when present, must pair 1:1 with the image rows; the encoding
// is then attention_gate(gate_source) * f_y(y). Without it the result is
// f_y(y) exactly (the ones-gate used for unconditioned galleries).
EmbeddingBatch encode_image(Tape* tape, const ModelParams& params,
                            const Tensor& y,
                            const std::optional<Tensor>& gate_source = std::nullopt);

EmbeddingBatch encode_semantic(Tape* tape, const ModelParams& params,
                               const Tensor& composed);

// Full semantic path for the configured mode: fixed -> the word rows
// themselves; latent -> f_w of the (graph-augmented) composition. Rows follow
// graph.labels order.
EmbeddingBatch semantic_embeddings(Tape* tape, const ModelParams& params,
                                   const SemanticGraph& graph,
                                   const Tensor& words);
// Composition fed to f_w in latent mode (word rows, optionally || graph rows).
Tensor semantic_composition(Tape* tape, const ModelParams& params,
                            const SemanticGraph& graph, const Tensor& words);

Tensor decode_cross(Tape* tape, const ModelParams& params,
                    const EmbeddingBatch& e, DecodeDirection direction);

// W_t * e per row (the hash projection, before any nonlinearity).
Tensor hash_project(Tape* tape, const ModelParams& params, const Tensor& emb);
// tanh(beta * W_t * e): the differentiable surrogate used in training.
Tensor relaxed_codes(Tape* tape, const ModelParams& params, const Tensor& emb,
                     double beta);
// sgn(W_t * e) with sgn(0) = 0; inference-time hard codes.
std::vector<TernaryCode> hard_codes(const ModelParams& params, const Tensor& emb);

Tensor classify_logits(Tape* tape, const ModelParams& params, const Tensor& codes);

// ---- Checkpoints -----------------------------------------------------------
// Versioned container: text magic line, then binary config entries, seen
// labels and named tensors with shape headers. save -> load -> save is
// byte-identical.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace crossat
