#include "crossat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "crossat/rng.hpp"
#include "crossat/semantics.hpp"

namespace crossat {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (triads_per_epoch == 0) throw ConfigError("triads_per_epoch must be positive");
  weights.validate();
}

// ---- Adam -------------------------------------------------------------------

AdamState::AdamState(const std::vector<Tensor>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
    sizes_.push_back(p.size());
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != state.sizes_.size()) {
    throw ContractError("adam_step: parameter list does not match the state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.sizes_[i]) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) +
                           " changed size");
    }
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step rejected: non-finite gradient in parameter " +
                           std::to_string(i));
      }
    }
  }
  const std::uint64_t t = ++state.t_;
  const double bc1 = 1.0 - std::pow(config.beta1, double(t));
  const double bc2 = 1.0 - std::pow(config.beta2, double(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto vals = params[i].values();
    auto grads = params[i].grad();
    auto& m = state.m_[i];
    auto& v = state.v_[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double g = grads[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      vals[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

// ---- Batch embedding ----------------------------------------------------------

namespace {

struct GraphContext {
  SemanticGraph graph;
  Tensor words;  // [C_graph x d_w], graph-label order
  std::map<std::string, std::size_t> row_of;
};

GraphContext make_graph_context(const WordTable& table,
                                const std::vector<std::string>& classes) {
  WordTable scoped;
  scoped.dim = table.dim;
  std::vector<std::string> missing;
  for (const std::string& c : classes) {
    if (!table.contains(c)) {
      missing.push_back(c);
      continue;
    }
    scoped.labels.push_back(c);
    scoped.vectors.push_back(table.vector_of(c));
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "word-vector table misses classes:";
    for (const auto& l : missing) os << " '" << l << "'";
    throw SchemaError(os.str());
  }
  GraphContext ctx;
  ctx.graph = build_semantic_graph(scoped);
  ctx.words = word_matrix(ctx.graph, scoped);
  for (std::size_t i = 0; i < ctx.graph.labels.size(); ++i) {
    ctx.row_of[ctx.graph.labels[i]] = i;
  }
  return ctx;
}

Tensor features_of(const std::vector<const FeatureRecord*>& records) {
  const std::size_t n = records.size();
  const std::size_t d = records.front()->feature.size();
  std::vector<double> data;
  data.reserve(n * d);
  for (const FeatureRecord* r : records) {
    data.insert(data.end(), r->feature.begin(), r->feature.end());
  }
  return Tensor({n, d}, std::move(data));
}

struct BatchEmbeddings {
  std::optional<EmbeddedTriads> sketch_anchored;  // anchors f_x; pos/neg gated f_y
  std::optional<EmbeddedTriads> image_anchored;   // anchors gated f_y; pos/neg f_x
  Tensor sketch_rows;  // class-aligned sketch embeddings
  Tensor image_rows;   // class-aligned image embeddings, gated by their pair
  std::vector<std::string> pair_labels;
};

Tensor image_forward(Tape* tape, const ModelParams& params, const Tensor& raw) {
  return encoder_forward(tape, params.image_encoder, raw, params.arch.leaky_slope);
}

BatchEmbeddings embed_batch(Tape* tape, const ModelParams& params,
                            std::span<const Triad> batch) {
  std::vector<const Triad*> sk, im;
  for (const Triad& t : batch) {
    (t.anchor_modality == Modality::Sketch ? sk : im).push_back(&t);
  }
  BatchEmbeddings out;
  std::vector<Tensor> sketch_parts, image_parts;

  if (!sk.empty()) {
    std::vector<const FeatureRecord*> a, p, n;
    EmbeddedTriads e;
    for (const Triad* t : sk) {
      a.push_back(&t->anchor);
      p.push_back(&t->positive);
      n.push_back(&t->negative);
      e.anchor_labels.push_back(t->anchor.label);
      e.positive_labels.push_back(t->positive.label);
      e.negative_labels.push_back(t->negative.label);
    }
    Tensor raw_a = features_of(a);
    Tensor gate = attention_gate(tape, params, raw_a);
    e.anchors = encode_sketch(tape, params, raw_a).rows;
    e.positives = hadamard(tape, gate, image_forward(tape, params, features_of(p)));
    e.negatives = hadamard(tape, gate, image_forward(tape, params, features_of(n)));
    sketch_parts.push_back(e.anchors);
    image_parts.push_back(e.positives);
    for (const Triad* t : sk) out.pair_labels.push_back(t->anchor.label);
    out.sketch_anchored = std::move(e);
  }

  if (!im.empty()) {
    std::vector<const FeatureRecord*> a, p, n;
    EmbeddedTriads e;
    for (const Triad* t : im) {
      a.push_back(&t->anchor);
      p.push_back(&t->positive);
      n.push_back(&t->negative);
      e.anchor_labels.push_back(t->anchor.label);
      e.positive_labels.push_back(t->positive.label);
      e.negative_labels.push_back(t->negative.label);
    }
    Tensor raw_p = features_of(p);
    Tensor gate = attention_gate(tape, params, raw_p);  // positive sketch gates
    e.anchors = hadamard(tape, gate, image_forward(tape, params, features_of(a)));
    e.positives = encode_sketch(tape, params, raw_p).rows;
    e.negatives = encode_sketch(tape, params, features_of(n)).rows;
    sketch_parts.push_back(e.positives);
    image_parts.push_back(e.anchors);
    for (const Triad* t : im) out.pair_labels.push_back(t->anchor.label);
    out.image_anchored = std::move(e);
  }

  out.sketch_rows = sketch_parts.size() == 2
                        ? concat_rows(tape, sketch_parts[0], sketch_parts[1])
                        : sketch_parts.front();
  out.image_rows = image_parts.size() == 2
                       ? concat_rows(tape, image_parts[0], image_parts[1])
                       : image_parts.front();
  return out;
}

struct SemanticPieces {
  Tensor rows;         // aligned with pair_labels
  Tensor composition;  // defined for the reconstruction term
  Tensor all;          // one row per graph class
};

SemanticPieces semantic_rows(Tape* tape, const ModelParams& params,
                             const GraphContext& ctx,
                             const std::vector<std::string>& labels,
                             bool with_reconstruction) {
  SemanticPieces out;
  if (params.arch.fixed_semantic) {
    out.all = ctx.words;
  } else {
    out.composition = semantic_composition(tape, params, ctx.graph, ctx.words);
    out.all = encode_semantic(tape, params, out.composition).rows;
  }
  if (!labels.empty()) {
    std::vector<std::size_t> rows;
    rows.reserve(labels.size());
    for (const std::string& l : labels) {
      auto it = ctx.row_of.find(l);
      if (it == ctx.row_of.end()) {
        throw SchemaError("class '" + l + "' is absent from the semantic graph");
      }
      rows.push_back(it->second);
    }
    out.rows = gather_rows(tape, out.all, rows);
  }
  (void)with_reconstruction;
  return out;
}

Tensor reconstruction_loss(Tape* tape, const ModelParams& params,
                           const SemanticPieces& sem) {
  Tensor decoded = affine(tape, sem.all, params.semantic_reconstructor.weight,
                          params.semantic_reconstructor.bias);
  return mean_row_sq_dist(tape, decoded, sem.composition);
}

Tensor combined_triplet(Tape* tape, const BatchEmbeddings& be, double alpha) {
  std::optional<Tensor> ts, ti;
  if (be.sketch_anchored) ts = loss_triplet(tape, *be.sketch_anchored, alpha);
  if (be.image_anchored) ti = loss_triplet(tape, *be.image_anchored, alpha);
  if (ts && ti) {
    return add(tape, scale(tape, *ts, 0.5), scale(tape, *ti, 0.5));
  }
  return ts ? *ts : *ti;
}

struct ComponentMask {
  bool cmd = true, dl = true, triplet = true, ce = true, recon = true;
};

LossComponents compute_components(Tape* tape, const ModelParams& params,
                                  const GraphContext& ctx,
                                  std::span<const Triad> batch,
                                  const LossWeights& weights,
                                  const ComponentMask& mask) {
  BatchEmbeddings be = embed_batch(tape, params, batch);

  const bool want_recon = weights.lambda5 > 0.0 && mask.recon &&
                          params.arch.semantic_decoder &&
                          !params.arch.fixed_semantic;
  const bool sem_on_tape = (weights.lambda1 > 0.0 && mask.cmd) || want_recon;
  SemanticPieces sem = semantic_rows(sem_on_tape ? tape : nullptr, params, ctx,
                                     be.pair_labels, want_recon);

  std::vector<std::size_t> class_indices;
  class_indices.reserve(be.pair_labels.size());
  for (const std::string& l : be.pair_labels) {
    class_indices.push_back(params.seen_index(l));
  }

  LossComponents comps;
  {
    Tape* t = (weights.lambda1 > 0.0 && mask.cmd) ? tape : nullptr;
    comps.cmd = loss_cmd(t, be.sketch_rows, be.image_rows, sem.rows);
  }
  {
    Tape* t = (weights.lambda2 > 0.0 && mask.dl) ? tape : nullptr;
    comps.dl = loss_decoder(t, params,
                            {be.sketch_rows, EmbeddingKind::Sketch},
                            {be.image_rows, EmbeddingKind::Image});
  }
  {
    Tape* t = (weights.lambda3 > 0.0 && mask.triplet) ? tape : nullptr;
    comps.triplet = combined_triplet(t, be, weights.alpha);
  }
  {
    Tape* t = (weights.lambda4 > 0.0 && mask.ce) ? tape : nullptr;
    Tensor s_codes = relaxed_codes(t, params, be.sketch_rows, params.arch.hash_beta);
    Tensor i_codes = relaxed_codes(t, params, be.image_rows, params.arch.hash_beta);
    comps.ce = loss_ce(t, params, s_codes, i_codes, class_indices);
  }
  if (want_recon) {
    comps.recon = reconstruction_loss(tape, params, sem);
  } else if (params.arch.semantic_decoder && !params.arch.fixed_semantic) {
    comps.recon = reconstruction_loss(nullptr, params, sem);
  }
  return comps;
}

std::string breakdown_line(std::size_t epoch, const LossBreakdown& bd) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", epoch,
                bd.cmd, bd.dl, bd.triplet, bd.ce, bd.total);
  return buf;
}

std::vector<double> snapshot_values(const std::vector<Tensor>& params) {
  std::vector<double> out;
  for (const Tensor& p : params) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

void restore_values(std::vector<Tensor>& params, const std::vector<double>& snap) {
  std::size_t off = 0;
  for (Tensor& p : params) {
    std::copy_n(snap.begin() + off, p.size(), p.values().begin());
    off += p.size();
  }
}

}  // namespace

LossBreakdown evaluate_batch_loss(Tape* tape, const ModelParams& params,
                                  const SemanticGraph& graph, const Tensor& words,
                                  std::span<const Triad> batch,
                                  const LossWeights& weights) {
  if (batch.empty()) throw ContractError("evaluate_batch_loss needs triads");
  GraphContext ctx;
  ctx.graph = graph;
  ctx.words = words;
  for (std::size_t i = 0; i < graph.labels.size(); ++i) {
    ctx.row_of[graph.labels[i]] = i;
  }
  LossComponents comps = compute_components(tape, params, ctx, batch, weights, {});
  return loss_total(tape, comps, weights);
}

// ---- fit -------------------------------------------------------------------------

FitResult fit(const Dataset& dataset, const ZeroShotSplit& split,
              const WordTable& words, const ArchConfig& arch,
              const TrainConfig& config) {
  config.validate();
  if (config.weights.lambda5 > 0.0 && !arch.semantic_decoder) {
    throw ConfigError("lambda5 > 0 requires the semantic_decoder head");
  }
  if (config.semantic_pretrain_epochs > 0 &&
      (!arch.semantic_decoder || arch.fixed_semantic)) {
    throw ConfigError("semantic pretraining needs semantic_decoder and a latent "
                      "semantic space");
  }

  ArchConfig model_arch = arch;
  model_arch.d_in = dataset.feature_dim(Modality::Sketch);
  if (model_arch.d_in == 0) model_arch.d_in = dataset.feature_dim(Modality::Image);
  model_arch.d_w = words.dim;

  const std::vector<std::string>& graph_classes =
      config.graph_over_all_classes ? dataset.labels() : split.seen;
  GraphContext ctx = make_graph_context(words, graph_classes);

  FitResult result;
  result.params = init_model(model_arch, split.seen, config.seed);
  if (config.epochs == 0) return result;

  const std::set<std::string> seen_set(split.seen.begin(), split.seen.end());
  std::vector<Tensor> param_list = result.params.parameters();
  AdamState adam(param_list);
  const AdamConfig adam_cfg{config.learning_rate, 0.9, 0.999, 1e-8};

  // Optional pre-phase: fit the semantic autoencoder alone.
  if (config.semantic_pretrain_epochs > 0) {
    std::vector<Tensor> sem_params;
    for (const Dense& d : result.params.semantic_encoder.layers) {
      sem_params.push_back(d.weight);
      sem_params.push_back(d.bias);
    }
    if (model_arch.use_graph) sem_params.push_back(result.params.gcn_weight);
    sem_params.push_back(result.params.semantic_reconstructor.weight);
    sem_params.push_back(result.params.semantic_reconstructor.bias);
    AdamState pre_adam(sem_params);
    for (std::size_t e = 0; e < config.semantic_pretrain_epochs; ++e) {
      Tape tape;
      SemanticPieces sem = semantic_rows(&tape, result.params, ctx, {}, true);
      Tensor loss = reconstruction_loss(&tape, result.params, sem);
      tape.backward(loss);
      adam_step(sem_params, pre_adam, adam_cfg);
    }
  }

  const TriadMode mode = config.mode == TrainMode::Sbir
                             ? TriadMode::SketchAnchored
                             : TriadMode::Balanced;

  std::vector<double> last_good = snapshot_values(param_list);
  std::vector<double> totals;

  std::vector<std::pair<int, double>> active_terms;  // alternating order
  {
    const LossWeights& w = config.weights;
    if (w.lambda1 > 0.0) active_terms.emplace_back(0, w.lambda1);
    if (w.lambda2 > 0.0) active_terms.emplace_back(1, w.lambda2);
    if (w.lambda3 > 0.0) active_terms.emplace_back(2, w.lambda3);
    if (w.lambda4 > 0.0) active_terms.emplace_back(3, w.lambda4);
    if (w.lambda5 > 0.0) active_terms.emplace_back(4, w.lambda5);
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::vector<Triad> triads =
        sample_triads(dataset, split, config.triads_per_epoch, mode,
                      derive_seed(config.seed, epoch));
    double sum_cmd = 0, sum_dl = 0, sum_tri = 0, sum_ce = 0, sum_recon = 0,
           sum_total = 0;
    std::size_t total_rows = 0;
    bool bad_step = false;

    for (std::size_t start = 0; start < triads.size() && !bad_step;
         start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, triads.size() - start);
      std::span<const Triad> batch(triads.data() + start, len);
      for (const Triad& t : batch) {
        if (!seen_set.count(t.anchor.label) || !seen_set.count(t.positive.label) ||
            !seen_set.count(t.negative.label)) {
          throw ContractError("zero-shot violation: unseen-class record in a "
                              "training batch");
        }
      }

      LossBreakdown bd;
      try {
        if (!config.alternating) {
          Tape tape;
          LossComponents comps = compute_components(&tape, result.params, ctx,
                                                    batch, config.weights, {});
          bd = loss_total(&tape, comps, config.weights);
          tape.backward(bd.total_node);
          adam_step(param_list, adam, adam_cfg);
        } else {
          // One sub-step per active term; the others stay out of the gradient.
          double vals[5] = {0, 0, 0, 0, 0};
          for (const auto& [term, lambda] : active_terms) {
            Tape tape;
            ComponentMask mask{term == 0, term == 1, term == 2, term == 3,
                               term == 4};
            LossWeights w = config.weights;
            w.lambda1 = term == 0 ? lambda : 0.0;
            w.lambda2 = term == 1 ? lambda : 0.0;
            w.lambda3 = term == 2 ? lambda : 0.0;
            w.lambda4 = term == 3 ? lambda : 0.0;
            w.lambda5 = term == 4 ? lambda : 0.0;
            LossComponents comps =
                compute_components(&tape, result.params, ctx, batch, w, mask);
            LossBreakdown sub = loss_total(&tape, comps, w);
            tape.backward(sub.total_node);
            adam_step(param_list, adam, adam_cfg);
            const double v[5] = {sub.cmd, sub.dl, sub.triplet, sub.ce, sub.recon};
            vals[term] = v[term];
          }
          bd.cmd = vals[0];
          bd.dl = vals[1];
          bd.triplet = vals[2];
          bd.ce = vals[3];
          bd.recon = vals[4];
          const LossWeights& w = config.weights;
          bd.total = 0.0;
          if (w.lambda1 > 0.0) bd.total += w.lambda1 * bd.cmd;
          if (w.lambda2 > 0.0) bd.total += w.lambda2 * bd.dl;
          if (w.lambda3 > 0.0) bd.total += w.lambda3 * bd.triplet;
          if (w.lambda4 > 0.0) bd.total += w.lambda4 * bd.ce;
          if (w.lambda5 > 0.0) bd.total += w.lambda5 * bd.recon;
        }
      } catch (const NumericError&) {
        bad_step = true;
        break;
      }

      if (!std::isfinite(bd.total) || bd.total > config.divergence_threshold) {
        bad_step = true;
        break;
      }
      sum_cmd += bd.cmd * double(len);
      sum_dl += bd.dl * double(len);
      sum_tri += bd.triplet * double(len);
      sum_ce += bd.ce * double(len);
      sum_recon += bd.recon * double(len);
      sum_total += bd.total * double(len);
      total_rows += len;
    }

    if (bad_step) {
      restore_values(param_list, last_good);
      result.diverged = true;
      break;
    }

    LossBreakdown epoch_bd;
    epoch_bd.cmd = sum_cmd / double(total_rows);
    epoch_bd.dl = sum_dl / double(total_rows);
    epoch_bd.triplet = sum_tri / double(total_rows);
    epoch_bd.ce = sum_ce / double(total_rows);
    epoch_bd.recon = sum_recon / double(total_rows);
    epoch_bd.total = sum_total / double(total_rows);
    result.epoch_losses.push_back(epoch_bd);
    result.metrics_lines.push_back(breakdown_line(epoch, epoch_bd));
    result.epochs_run = epoch;
    last_good = snapshot_values(param_list);

    totals.push_back(epoch_bd.total);
    if (totals.size() > config.convergence_window) {
      const double before = totals[totals.size() - 1 - config.convergence_window];
      const double now = totals.back();
      if (before - now < config.convergence_rel_improvement *
                            std::max(1.0, std::abs(before))) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

// ---- Metrics log ------------------------------------------------------------------

namespace {
constexpr const char* kMetricsMagic = "#crossat-metrics v1";
}

void write_metrics(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics log '" + path + "'");
  out << kMetricsMagic << "\n";
  for (const std::string& l : lines) out << l << "\n";
}

std::vector<std::string> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics log '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsMagic) {
    throw FormatError("metrics log '" + path + "' has an unsupported header");
  }
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

double margin_violation_fraction(const ModelParams& params,
                                 const std::vector<Triad>& triads, double alpha) {
  if (triads.empty()) throw ContractError("no triads to evaluate");
  BatchEmbeddings be = embed_batch(nullptr, params, triads);
  std::size_t violations = 0, count = 0;
  for (const auto& sub : {be.sketch_anchored, be.image_anchored}) {
    if (!sub) continue;
    Tensor d_pos = row_l2_distance(nullptr, sub->anchors, sub->positives);
    Tensor d_neg = row_l2_distance(nullptr, sub->anchors, sub->negatives);
    for (std::size_t i = 0; i < d_pos.size(); ++i) {
      if (d_pos.values()[i] - d_neg.values()[i] + alpha > 0.0) ++violations;
      ++count;
    }
  }
  return double(violations) / double(count);
}

}  // namespace crossat
