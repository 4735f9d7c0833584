#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossat/errors.hpp"

namespace crossat {

// Flat key-value run configuration. Defaults are overridden by the config
// file, which is overridden by command-line "key=value" pairs.
struct RunConfig {
  // Artifact paths.
  std::string features = "features.tsv";
  std::string word_vectors = "word_vectors.txt";
  std::string checkpoint = "model.ckpt";
  std::string metrics_log = "metrics.csv";
  std::string index_file = "gallery.index";
  std::string embeddings_file = "embeddings.index";
  std::string report_file = "report.txt";
  std::string ablation_file = "ablation.csv";

  // Architecture.
  std::size_t d_shared = 64;
  std::size_t hidden_width = 512;
  std::size_t hidden_layers = 1;
  std::size_t att_pool_groups = 8;
  double hash_beta = 1.0;
  double leaky_slope = 0.01;

  // Semantic side.
  bool use_graph = true;
  std::string semantic_space = "latent";  // latent | fixed
  std::string graph_scope = "seen";       // seen | seen_unseen
  bool semantic_decoder = false;
  std::size_t semantic_pretrain_epochs = 0;

  // Zero-shot split.
  std::size_t unseen_count = 25;

  // Training.
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  double learning_rate = 0.001;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  double lambda3 = 1.0;
  double lambda4 = 0.01;
  double lambda5 = 0.0;
  double alpha = 1.0;
  std::string mode = "sbir";  // sbir | cross_modal
  bool alternating = false;
  std::uint64_t seed = 1;
  std::size_t triads_per_epoch = 2000;

  // Retrieval / evaluation.
  std::string task = "sketch_to_image";
  std::string metric = "euclidean";  // euclidean | hamming
  std::size_t k = 100;
  std::string gating = "unconditioned";  // unconditioned | query_conditioned
  std::size_t map_cutoff = 0;
  std::string query_id;

  // Synthetic generator.
  std::size_t synth_classes = 8;
  std::size_t synth_per_class = 40;
  std::size_t synth_d_in = 32;
  std::size_t synth_word_dim = 300;
  double synth_shift = 1.0;
  double synth_noise = 0.3;
};

// Defaults <- file <- overrides; rejects unknown keys with a nearest-key
// suggestion and mistyped values with the expected type. The file holds
// "key = value" lines; blank lines and lines starting with '#' are skipped.
RunConfig parse_config(const std::optional<std::string>& file_path,
                       std::span<const std::string> overrides);

// One "key = value  # type" line per documented key, in registry order.
std::vector<std::string> config_key_help();

}  // namespace crossat
