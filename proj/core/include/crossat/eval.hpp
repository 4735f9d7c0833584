#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crossat/data.hpp"
#include "crossat/network.hpp"
#include "crossat/retrieval.hpp"

namespace crossat {

enum class Task { SketchToImage, ImageToSketch, SketchToSketch, ImageToImage };

std::string to_string(Task t);
Task task_from_string(const std::string& s);
Modality source_modality(Task t);
Modality target_modality(Task t);

// AP over the full ranking: (1/total_relevant) * sum over hit positions i of
// hits_up_to_i / i. Entries must be 0/1 and total_relevant >= 1.
double average_precision(std::span<const int> ranked_relevance,
                         std::size_t total_relevant);

// Hits among the first min(k, len) positions divided by k (fixed denominator).
double precision_at_k(std::span<const int> ranked_relevance, std::size_t k);

struct EvalReport {
  Task task = Task::SketchToImage;
  Metric metric = Metric::Euclidean;
  double map = 0.0;
  double p_at_k = 0.0;
  std::size_t k = 100;
  std::vector<std::pair<std::string, double>> per_class;  // label -> mean AP
  std::size_t num_queries = 0;      // queries included in the mean
  std::size_t excluded_queries = 0; // zero-relevant queries, logged and skipped
};

struct EvalOptions {
  Gating gating = Gating::Unconditioned;
  // 0 = mAP over the full ranking; otherwise truncate to the first map_cutoff
  // hits with denominator min(total_relevant, map_cutoff).
  std::size_t map_cutoff = 0;
};

// Scores every unseen-class query of the source modality against the full
// unseen-class gallery of the target modality; relevance is label equality.
// Never touches a seen-class record.
EvalReport evaluate(const ModelParams& params, const Dataset& dataset,
                    const ZeroShotSplit& split, Task task, Metric metric,
                    std::size_t k, const EvalOptions& options = {});

// Monte-Carlo estimate of the chance-level mAP: gallery labels are shuffled
// and AP recomputed against the unchanged ranking.
struct NullEstimate {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t shuffles = 0;
};
NullEstimate permutation_null_map(const std::vector<std::string>& query_labels,
                                  const std::vector<std::string>& gallery_labels,
                                  std::size_t shuffles, std::uint64_t seed);

// "task,metric,mAP,P@k,k,num_queries"
std::string report_machine_line(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& path);

}  // namespace crossat
