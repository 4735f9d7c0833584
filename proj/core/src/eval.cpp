#include "crossat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "crossat/rng.hpp"

namespace crossat {

std::string to_string(Task t) {
  switch (t) {
    case Task::SketchToImage: return "sketch_to_image";
    case Task::ImageToSketch: return "image_to_sketch";
    case Task::SketchToSketch: return "sketch_to_sketch";
    case Task::ImageToImage: return "image_to_image";
  }
  throw ConfigError("unknown task");
}

Task task_from_string(const std::string& s) {
  if (s == "sketch_to_image") return Task::SketchToImage;
  if (s == "image_to_sketch") return Task::ImageToSketch;
  if (s == "sketch_to_sketch") return Task::SketchToSketch;
  if (s == "image_to_image") return Task::ImageToImage;
  throw ConfigError("task must be one of sketch_to_image, image_to_sketch, "
                    "sketch_to_sketch, image_to_image; got '" + s + "'");
}

Modality source_modality(Task t) {
  return (t == Task::SketchToImage || t == Task::SketchToSketch)
             ? Modality::Sketch
             : Modality::Image;
}

Modality target_modality(Task t) {
  return (t == Task::ImageToSketch || t == Task::SketchToSketch)
             ? Modality::Sketch
             : Modality::Image;
}

double average_precision(std::span<const int> ranked_relevance,
                         std::size_t total_relevant) {
  if (total_relevant == 0) {
    throw ProtocolError("average_precision undefined with zero relevant items");
  }
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked_relevance.size(); ++i) {
    const int r = ranked_relevance[i];
    if (r != 0 && r != 1) {
      throw ContractError("relevance entries must be 0 or 1");
    }
    if (r == 1) {
      ++hits;
      ap += double(hits) / double(i + 1);
    }
  }
  return ap / double(total_relevant);
}

double precision_at_k(std::span<const int> ranked_relevance, std::size_t k) {
  if (k == 0) throw ConfigError("precision_at_k needs k >= 1");
  std::size_t hits = 0;
  const std::size_t upto = std::min(k, ranked_relevance.size());
  for (std::size_t i = 0; i < upto; ++i) {
    if (ranked_relevance[i] == 1) ++hits;
  }
  return double(hits) / double(k);
}

EvalReport evaluate(const ModelParams& params, const Dataset& dataset,
                    const ZeroShotSplit& split, Task task, Metric metric,
                    std::size_t k, const EvalOptions& options) {
  const Modality src = source_modality(task);
  const Modality dst = target_modality(task);

  std::vector<const FeatureRecord*> queries;
  std::vector<FeatureRecord> gallery;
  for (const FeatureRecord& r : dataset.records()) {
    if (!split.is_unseen(r.label)) continue;
    if (r.modality == src) queries.push_back(&r);
    if (r.modality == dst) gallery.push_back(r);
  }
  if (gallery.empty()) {
    throw ProtocolError("evaluation gallery is empty for modality " +
                        to_string(dst));
  }
  if (queries.empty()) {
    throw ProtocolError("no queries of modality " + to_string(src) +
                        " among unseen classes");
  }
  if (options.gating == Gating::QueryConditioned && task != Task::SketchToImage) {
    throw ContractError("query-conditioned gating requires the sketch_to_image task");
  }

  std::map<std::string, std::size_t> relevant_count;
  for (const FeatureRecord& g : gallery) ++relevant_count[g.label];

  GalleryIndex index = build_index(gallery, params, dst, metric, options.gating);

  EvalReport report;
  report.task = task;
  report.metric = metric;
  report.k = k;
  double ap_sum = 0.0, pk_sum = 0.0;
  std::map<std::string, std::pair<double, std::size_t>> per_class;

  for (const FeatureRecord* q : queries) {
    const std::size_t total_rel =
        relevant_count.count(q->label) ? relevant_count[q->label] : 0;
    if (total_rel == 0) {
      ++report.excluded_queries;
      continue;
    }
    QueryResult ranked = query_knn(index, *q, params, index.size());
    std::vector<int> relevance;
    relevance.reserve(ranked.hits.size());
    for (const QueryHit& h : ranked.hits) {
      relevance.push_back(h.label == q->label ? 1 : 0);
    }
    double ap;
    if (options.map_cutoff == 0) {
      ap = average_precision(relevance, total_rel);
    } else {
      std::vector<int> truncated(
          relevance.begin(),
          relevance.begin() + std::min(options.map_cutoff, relevance.size()));
      ap = average_precision(truncated, std::min(total_rel, options.map_cutoff));
    }
    ap_sum += ap;
    pk_sum += precision_at_k(relevance, k);
    auto& agg = per_class[q->label];
    agg.first += ap;
    agg.second += 1;
    ++report.num_queries;
  }
  if (report.num_queries == 0) {
    throw ProtocolError("every query had zero relevant gallery items");
  }
  report.map = ap_sum / double(report.num_queries);
  report.p_at_k = pk_sum / double(report.num_queries);
  for (const auto& [label, agg] : per_class) {
    report.per_class.emplace_back(label, agg.first / double(agg.second));
  }
  return report;
}

NullEstimate permutation_null_map(const std::vector<std::string>& query_labels,
                                  const std::vector<std::string>& gallery_labels,
                                  std::size_t shuffles, std::uint64_t seed) {
  if (shuffles == 0) throw ConfigError("permutation null needs >= 1 shuffle");
  if (query_labels.empty() || gallery_labels.empty()) {
    throw ProtocolError("permutation null needs queries and a gallery");
  }
  Rng rng(seed);
  std::vector<std::string> labels = gallery_labels;
  std::vector<double> trials;
  trials.reserve(shuffles);
  for (std::size_t t = 0; t < shuffles; ++t) {
    rng.shuffle(labels);
    double ap_sum = 0.0;
    std::size_t used = 0;
    for (const std::string& q : query_labels) {
      std::size_t total_rel = 0;
      std::vector<int> relevance(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        relevance[i] = labels[i] == q ? 1 : 0;
        total_rel += relevance[i];
      }
      if (total_rel == 0) continue;
      ap_sum += average_precision(relevance, total_rel);
      ++used;
    }
    if (used == 0) continue;
    trials.push_back(ap_sum / double(used));
  }
  if (trials.empty()) {
    throw ProtocolError("permutation null produced no usable trials");
  }
  NullEstimate est;
  est.shuffles = trials.size();
  for (double v : trials) est.mean += v;
  est.mean /= double(trials.size());
  double var = 0.0;
  for (double v : trials) var += (v - est.mean) * (v - est.mean);
  est.stddev = trials.size() > 1 ? std::sqrt(var / double(trials.size() - 1)) : 0.0;
  return est;
}

std::string report_machine_line(const EvalReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%zu,%zu",
                to_string(report.task).c_str(), to_string(report.metric).c_str(),
                report.map, report.p_at_k, report.k, report.num_queries);
  return buf;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report '" + path + "'");
  char buf[64];
  out << "#crossat-report v1\n";
  out << "task = " << to_string(report.task) << "\n";
  out << "metric = " << to_string(report.metric) << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", report.map);
  out << "map = " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", report.p_at_k);
  out << "p_at_k = " << buf << "\n";
  out << "k = " << report.k << "\n";
  out << "num_queries = " << report.num_queries << "\n";
  out << "excluded_queries = " << report.excluded_queries << "\n";
  for (const auto& [label, ap] : report.per_class) {
    std::snprintf(buf, sizeof(buf), "%.6f", ap);
    out << "class_ap " << label << " = " << buf << "\n";
  }
  out << "csv = " << report_machine_line(report) << "\n";
}

}  // namespace crossat
