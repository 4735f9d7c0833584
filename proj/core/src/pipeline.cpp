#include "crossat/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>

namespace crossat {

ArchConfig arch_from(const RunConfig& config) {
  ArchConfig arch;
  arch.d_shared = config.d_shared;
  arch.hidden_width = config.hidden_width;
  arch.hidden_layers = config.hidden_layers;
  arch.att_pool_groups = config.att_pool_groups;
  arch.hash_beta = config.hash_beta;
  arch.leaky_slope = config.leaky_slope;
  arch.use_graph = config.use_graph;
  arch.fixed_semantic = config.semantic_space == "fixed";
  arch.semantic_decoder = config.semantic_decoder;
  return arch;
}

TrainConfig train_from(const RunConfig& config) {
  TrainConfig t;
  t.batch_size = config.batch_size;
  t.epochs = config.epochs;
  t.learning_rate = config.learning_rate;
  t.weights.lambda1 = config.lambda1;
  t.weights.lambda2 = config.lambda2;
  t.weights.lambda3 = config.lambda3;
  t.weights.lambda4 = config.lambda4;
  t.weights.lambda5 = config.lambda5;
  t.weights.alpha = config.alpha;
  t.mode = config.mode == "sbir" ? TrainMode::Sbir : TrainMode::CrossModal;
  t.alternating = config.alternating;
  t.seed = config.seed;
  t.triads_per_epoch = config.triads_per_epoch;
  t.semantic_pretrain_epochs = config.semantic_pretrain_epochs;
  t.graph_over_all_classes = config.graph_scope == "seen_unseen";
  return t;
}

namespace {

SynthConfig synth_from(const RunConfig& config) {
  SynthConfig s;
  s.classes = config.synth_classes;
  s.per_class_per_modality = config.synth_per_class;
  s.d_in = config.synth_d_in;
  s.word_dim = config.synth_word_dim;
  s.modality_shift = config.synth_shift;
  s.noise = config.synth_noise;
  s.rng_seed = config.seed;
  return s;
}

EvalOptions eval_options_from(const RunConfig& config) {
  EvalOptions o;
  o.gating = gating_from_string(config.gating);
  o.map_cutoff = config.map_cutoff;
  return o;
}

std::string format_distance(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require_checkpoint(const RunConfig& config) {
  if (!std::filesystem::exists(config.checkpoint)) {
    throw UsageError("checkpoint '" + config.checkpoint +
                     "' does not exist; run `crossat train` first");
  }
}

int cmd_synth(const RunConfig& config, std::ostream& err) {
  SynthResult result = synth_generate(synth_from(config));
  save_features(result.dataset, config.features);
  save_word_vectors(result.word_table, config.word_vectors);
  err << "synth: wrote " << result.dataset.size() << " records to "
      << config.features << " and " << result.word_table.labels.size()
      << " word vectors to " << config.word_vectors << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& err) {
  Dataset dataset = load_features(config.features);
  WordTable words = load_word_vectors(config.word_vectors);
  ZeroShotSplit split =
      make_split(dataset.labels(), config.unseen_count, config.seed);
  ArchConfig arch = arch_from(config);
  if (arch.fixed_semantic) arch.d_shared = words.dim;
  FitResult result = fit(dataset, split, words, arch, train_from(config));
  if (result.diverged) {
    save_checkpoint(result.params, config.checkpoint);
    write_metrics(result.metrics_lines, config.metrics_log);
    err << "train: diverged after epoch " << result.epochs_run
        << "; last good checkpoint written to " << config.checkpoint << "\n";
    return 1;
  }
  save_checkpoint(result.params, config.checkpoint);
  write_metrics(result.metrics_lines, config.metrics_log);
  err << "train: " << result.epochs_run << " epochs"
      << (result.early_stopped ? " (early stop)" : "") << ", final total "
      << (result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back().total)
      << "; checkpoint " << config.checkpoint << ", metrics "
      << config.metrics_log << "\n";
  return 0;
}

int cmd_encode(const RunConfig& config, std::ostream& err) {
  require_checkpoint(config);
  ModelParams params = load_checkpoint(config.checkpoint);
  Dataset dataset = load_features(config.features);
  std::ofstream out_file(config.embeddings_file);
  if (!out_file) {
    throw DataError("cannot write embeddings file '" + config.embeddings_file + "'");
  }
  out_file << "#crossat-index v1 metric=euclidean d=" << params.arch.d_shared
           << "\n";
  for (const FeatureRecord& r : dataset.records()) {
    Tensor raw({1, r.feature.size()}, r.feature);
    Tensor emb = r.modality == Modality::Sketch
                     ? encode_sketch(nullptr, params, raw).rows
                     : encode_image(nullptr, params, raw).rows;
    out_file << r.id << '\t' << r.label << '\t';
    for (std::size_t j = 0; j < emb.size(); ++j) {
      if (j) out_file << ',';
      out_file << format_distance(emb.values()[j]);
    }
    out_file << '\n';
  }
  err << "encode: wrote " << dataset.size() << " embeddings to "
      << config.embeddings_file << "\n";
  return 0;
}

int cmd_index(const RunConfig& config, std::ostream& err) {
  require_checkpoint(config);
  ModelParams params = load_checkpoint(config.checkpoint);
  Dataset dataset = load_features(config.features);
  const Gating gating = gating_from_string(config.gating);
  if (gating == Gating::QueryConditioned) {
    throw UsageError("a query-conditioned gallery defers encoding to query time "
                     "and cannot be exported; use gating=unconditioned");
  }
  GalleryIndex index =
      build_index(dataset.records(), params,
                  target_modality(task_from_string(config.task)),
                  metric_from_string(config.metric), gating);
  export_index(index, config.index_file);
  err << "index: wrote " << index.size() << " entries to " << config.index_file
      << "\n";
  return 0;
}

int cmd_query(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (config.query_id.empty()) {
    throw UsageError("query needs query_id=<record id>");
  }
  require_checkpoint(config);
  ModelParams params = load_checkpoint(config.checkpoint);
  Dataset dataset = load_features(config.features);
  const FeatureRecord& query = dataset.record(dataset.index_of(config.query_id));
  GalleryIndex index =
      build_index(dataset.records(), params,
                  target_modality(task_from_string(config.task)),
                  metric_from_string(config.metric),
                  gating_from_string(config.gating));
  QueryResult result = query_knn(index, query, params, config.k);
  if (result.truncated) {
    err << "query: k=" << config.k << " exceeds the gallery size "
        << index.size() << "; results truncated\n";
  }
  for (const QueryHit& hit : result.hits) {
    out << hit.id << '\t' << hit.label << '\t' << format_distance(hit.distance)
        << '\n';
  }
  return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err) {
  require_checkpoint(config);
  ModelParams params = load_checkpoint(config.checkpoint);
  Dataset dataset = load_features(config.features);
  ZeroShotSplit split =
      make_split(dataset.labels(), config.unseen_count, config.seed);
  EvalReport report = evaluate(params, dataset, split,
                               task_from_string(config.task),
                               metric_from_string(config.metric), config.k,
                               eval_options_from(config));
  write_report(report, config.report_file);
  if (report.excluded_queries > 0) {
    err << "eval: excluded " << report.excluded_queries
        << " queries with zero relevant gallery items\n";
  }
  out << report_machine_line(report) << "\n";
  err << "eval: report written to " << config.report_file << "\n";
  return 0;
}

}  // namespace

std::vector<AblationRow> run_ablation_grid(const Dataset& dataset,
                                           const WordTable& words,
                                           const RunConfig& config,
                                           std::ostream& err) {
  struct Cell {
    std::string name;
    std::function<void(RunConfig&)> tweak;
  };
  const std::vector<Cell> grid = {
      {"full", [](RunConfig&) {}},
      {"without_graph", [](RunConfig& c) { c.use_graph = false; }},
      {"without_decoder_loss", [](RunConfig& c) { c.lambda2 = 0.0; }},
      {"without_triplet_loss", [](RunConfig& c) { c.lambda3 = 0.0; }},
      {"fixed_semantic_space",
       [](RunConfig& c) { c.semantic_space = "fixed"; }},
      {"seen_unseen_graph",
       [](RunConfig& c) { c.graph_scope = "seen_unseen"; }},
  };

  ZeroShotSplit split =
      make_split(dataset.labels(), config.unseen_count, config.seed);
  std::vector<AblationRow> rows;
  for (const Cell& cell : grid) {
    RunConfig cfg = config;
    cell.tweak(cfg);
    ArchConfig arch = arch_from(cfg);
    if (arch.fixed_semantic) arch.d_shared = words.dim;
    err << "ablate: training '" << cell.name << "'\n";
    FitResult fitted = fit(dataset, split, words, arch, train_from(cfg));
    EvalReport report = evaluate(fitted.params, dataset, split,
                                 task_from_string(cfg.task),
                                 metric_from_string(cfg.metric), cfg.k,
                                 eval_options_from(cfg));
    rows.push_back({cell.name, report.map, report.p_at_k});
  }
  return rows;
}

namespace {

int cmd_ablate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  Dataset dataset = load_features(config.features);
  WordTable words = load_word_vectors(config.word_vectors);
  const std::vector<AblationRow> rows =
      run_ablation_grid(dataset, words, config, err);
  std::ofstream file(config.ablation_file);
  if (!file) {
    throw DataError("cannot write ablation table '" + config.ablation_file + "'");
  }
  file << "#crossat-ablation v1\n";
  char buf[128];
  for (const AblationRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f", row.name.c_str(), row.map,
                  row.p_at_k);
    file << buf << "\n";
    out << buf << "\n";
  }
  err << "ablate: table written to " << config.ablation_file << "\n";
  return 0;
}

}  // namespace

int run_command(const std::string& command, const RunConfig& config,
                std::ostream& out, std::ostream& err) {
  try {
    if (command == "synth") return cmd_synth(config, err);
    if (command == "train") return cmd_train(config, err);
    if (command == "encode") return cmd_encode(config, err);
    if (command == "index") return cmd_index(config, err);
    if (command == "query") return cmd_query(config, out, err);
    if (command == "eval") return cmd_eval(config, out, err);
    if (command == "ablate") return cmd_ablate(config, out, err);
    throw UsageError("unknown command '" + command +
                     "'; expected synth, train, encode, index, query, eval or "
                     "ablate");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace crossat
