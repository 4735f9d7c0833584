#pragma once

#include <iosfwd>
#include <string>

#include "crossat/config.hpp"
#include "crossat/eval.hpp"
#include "crossat/network.hpp"
#include "crossat/trainer.hpp"

namespace crossat {

// Commands wired by the CLI. Data goes to files and `out`; diagnostics go to
// `err`. Returns 0 on success, 2 on usage errors, 1 otherwise.
int run_command(const std::string& command, const RunConfig& config,
                std::ostream& out, std::ostream& err);

// Conversions from the flat run configuration.
ArchConfig arch_from(const RunConfig& config);
TrainConfig train_from(const RunConfig& config);

// One ablation grid cell: a named switch setting and its scores.
struct AblationRow {
  std::string name;
  double map = 0.0;
  double p_at_k = 0.0;
};

// The switch grid behind the `ablate` command: full model, graph off, decoder
// loss off, triplet loss off, fixed semantic space, seen+unseen graph.
std::vector<AblationRow> run_ablation_grid(const Dataset& dataset,
                                           const WordTable& words,
                                           const RunConfig& config,
                                           std::ostream& err);

}  // namespace crossat
