#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossat/data.hpp"
#include "crossat/losses.hpp"
#include "crossat/network.hpp"

namespace crossat {

enum class TrainMode { Sbir, CrossModal };

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  double learning_rate = 0.001;
  LossWeights weights;
  TrainMode mode = TrainMode::Sbir;  // sbir: sketch-anchored triads only
  bool alternating = false;          // optimize one loss term per sub-step
  std::uint64_t seed = 1;
  std::size_t triads_per_epoch = 2000;
  std::size_t semantic_pretrain_epochs = 0;
  bool graph_over_all_classes = false;  // build the MST over seen+unseen

  // Convergence: stop once the total improves by less than this relative
  // amount over a 10-epoch window.
  double convergence_rel_improvement = 1e-6;
  std::size_t convergence_window = 10;
  double divergence_threshold = 1e6;

  void validate() const;
};

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moment estimates, one pair per parameter tensor.
class AdamState {
 public:
  explicit AdamState(const std::vector<Tensor>& params);
  std::uint64_t steps() const { return t_; }
  friend void adam_step(std::vector<Tensor>& params, AdamState& state,
                        const AdamConfig& config);

 private:
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> sizes_;
  std::uint64_t t_ = 0;
};

// Bias-corrected Adam update applied in place, reading each parameter's
// accumulated gradient. A non-finite gradient rejects the whole step.
void adam_step(std::vector<Tensor>& params, AdamState& state,
               const AdamConfig& config);

struct FitResult {
  ModelParams params;
  std::vector<LossBreakdown> epoch_losses;
  std::vector<std::string> metrics_lines;  // "epoch,cmd,dl,triplet,ce,total"
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  bool diverged = false;
};

// Algorithm: per epoch, sample triads from the seen classes, embed them,
// minimize the weighted objective with Adam, and log the loss breakdown.
// Training touches seen-class records only; this is asserted per batch.
FitResult fit(const Dataset& dataset, const ZeroShotSplit& split,
              const WordTable& words, const ArchConfig& arch,
              const TrainConfig& config);

// Embeds one triad batch and evaluates the weighted objective on the tape —
// the same construction fit() optimizes. `words` holds the word vectors in
// graph-label order.
LossBreakdown evaluate_batch_loss(Tape* tape, const ModelParams& params,
                                  const SemanticGraph& graph, const Tensor& words,
                                  std::span<const Triad> batch,
                                  const LossWeights& weights);

// Metrics log: versioned header plus one line per epoch.
void write_metrics(const std::vector<std::string>& lines, const std::string& path);
std::vector<std::string> read_metrics(const std::string& path);

// Fraction of triads violating the margin under the current model; used to
// track triplet-loss progress.
double margin_violation_fraction(const ModelParams& params,
                                 const std::vector<Triad>& triads, double alpha);

}  // namespace crossat
