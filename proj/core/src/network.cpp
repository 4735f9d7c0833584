#include "crossat/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "crossat/rng.hpp"

namespace crossat {

namespace {

void validate_arch(const ArchConfig& a) {
  if (a.d_in == 0 || a.d_w == 0 || a.d_shared == 0 || a.hidden_width == 0) {
    throw ConfigError("architecture widths must be positive");
  }
  if (a.att_pool_groups == 0) {
    throw ConfigError("att_pool_groups must be positive");
  }
  if (a.d_in % a.att_pool_groups != 0) {
    throw ConfigError("d_in=" + std::to_string(a.d_in) +
                      " is not divisible by att_pool_groups=" +
                      std::to_string(a.att_pool_groups));
  }
  if (!(a.leaky_slope > 0.0 && a.leaky_slope < 1.0)) {
    throw ConfigError("leaky_slope must lie in (0,1)");
  }
  if (a.hash_beta <= 0.0) throw ConfigError("hash_beta must be positive");
  if (a.fixed_semantic && a.d_shared != a.d_w) {
    throw ConfigError("fixed semantic space requires d_shared == d_w (got " +
                      std::to_string(a.d_shared) + " vs " +
                      std::to_string(a.d_w) + ")");
  }
}

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

Dense make_dense(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  return Dense{glorot(rng, fan_in, fan_out),
               Tensor::zeros({fan_out}, true)};
}

EncoderStack make_stack(Rng& rng, std::size_t d_in, std::size_t hidden,
                        std::size_t hidden_layers, std::size_t d_out) {
  EncoderStack stack;
  std::size_t w = d_in;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    stack.layers.push_back(make_dense(rng, w, hidden));
    w = hidden;
  }
  stack.layers.push_back(make_dense(rng, w, d_out));
  return stack;
}

void append_stack(std::vector<std::pair<std::string, Tensor>>& out,
                  const std::string& prefix, const EncoderStack& stack) {
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i) + ".weight",
                     stack.layers[i].weight);
    out.emplace_back(prefix + "." + std::to_string(i) + ".bias",
                     stack.layers[i].bias);
  }
}

void append_dense(std::vector<std::pair<std::string, Tensor>>& out,
                  const std::string& prefix, const Dense& dense) {
  out.emplace_back(prefix + ".weight", dense.weight);
  out.emplace_back(prefix + ".bias", dense.bias);
}

}  // namespace

std::size_t ModelParams::semantic_input_width() const {
  return arch.use_graph ? 2 * arch.d_w : arch.d_w;
}

std::size_t ModelParams::seen_index(const std::string& label) const {
  const auto it = std::lower_bound(seen_labels.begin(), seen_labels.end(), label);
  if (it == seen_labels.end() || *it != label) {
    throw ContractError("label '" + label + "' is not a seen class");
  }
  return static_cast<std::size_t>(it - seen_labels.begin());
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  append_stack(out, "theta_x", sketch_encoder);
  append_stack(out, "theta_y", image_encoder);
  append_dense(out, "theta_att.fc1", att_fc1);
  append_dense(out, "theta_att.fc2", att_fc2);
  if (!arch.fixed_semantic) append_stack(out, "theta_w", semantic_encoder);
  append_dense(out, "theta_xy", decoder_sketch_to_image);
  append_dense(out, "theta_yx", decoder_image_to_sketch);
  out.emplace_back("hash_projection", hash_projection);
  append_dense(out, "classifier", classifier);
  if (arch.use_graph && !arch.fixed_semantic) {
    out.emplace_back("gcn_weight", gcn_weight);
  }
  if (arch.semantic_decoder && !arch.fixed_semantic) {
    append_dense(out, "semantic_reconstructor", semantic_reconstructor);
  }
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) {
    (void)name;
    out.push_back(t);
  }
  return out;
}

ModelParams init_model(const ArchConfig& config,
                       std::vector<std::string> seen_labels,
                       std::uint64_t rng_seed) {
  validate_arch(config);
  if (seen_labels.empty()) throw ConfigError("init_model needs seen classes");
  std::sort(seen_labels.begin(), seen_labels.end());

  Rng rng(rng_seed);
  ModelParams p;
  p.arch = config;
  p.seen_labels = std::move(seen_labels);
  p.sketch_encoder = make_stack(rng, config.d_in, config.hidden_width,
                                config.hidden_layers, config.d_shared);
  p.image_encoder = make_stack(rng, config.d_in, config.hidden_width,
                               config.hidden_layers, config.d_shared);
  p.att_fc1 = make_dense(rng, config.att_pool_groups, config.d_shared);
  p.att_fc2 = make_dense(rng, config.d_shared, config.d_shared);
  if (!config.fixed_semantic) {
    p.semantic_encoder = make_stack(rng, p.semantic_input_width(),
                                    config.hidden_width, config.hidden_layers,
                                    config.d_shared);
  }
  p.decoder_sketch_to_image = make_dense(rng, config.d_shared, config.d_shared);
  p.decoder_image_to_sketch = make_dense(rng, config.d_shared, config.d_shared);
  p.hash_projection = glorot(rng, config.d_shared, config.d_shared);
  p.classifier = make_dense(rng, config.d_shared, p.seen_labels.size());
  if (config.use_graph && !config.fixed_semantic) {
    p.gcn_weight = glorot(rng, config.d_w, config.d_w);
  }
  if (config.semantic_decoder && !config.fixed_semantic) {
    p.semantic_reconstructor =
        make_dense(rng, config.d_shared, p.semantic_input_width());
  }
  return p;
}

// ---- Forward passes ----------------------------------------------------------

Tensor encoder_forward(Tape* tape, const EncoderStack& stack, const Tensor& x,
                       double leaky_slope) {
  if (stack.layers.empty()) throw ContractError("encoder stack has no layers");
  Tensor h = x;
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    h = affine(tape, h, stack.layers[i].weight, stack.layers[i].bias);
    if (i + 1 < stack.layers.size()) {
      h = activation(tape, h, Activation::LeakyRelu, leaky_slope);
    }
  }
  return h;
}

Tensor attention_gate(Tape* tape, const ModelParams& params,
                      const Tensor& sketch_feature) {
  Tensor pooled =
      global_average_pool(tape, sketch_feature, params.arch.att_pool_groups);
  Tensor h = affine(tape, pooled, params.att_fc1.weight, params.att_fc1.bias);
  h = affine(tape, h, params.att_fc2.weight, params.att_fc2.bias);
  return activation(tape, h, Activation::Sigmoid);
}

EmbeddingBatch encode_sketch(Tape* tape, const ModelParams& params,
                             const Tensor& x) {
  return {encoder_forward(tape, params.sketch_encoder, x, params.arch.leaky_slope),
          EmbeddingKind::Sketch};
}

EmbeddingBatch encode_image(Tape* tape, const ModelParams& params,
                            const Tensor& y,
                            const std::optional<Tensor>& gate_source) {
  Tensor fy = encoder_forward(tape, params.image_encoder, y, params.arch.leaky_slope);
  if (!gate_source.has_value()) {
    return {fy, EmbeddingKind::Image};  // ones-gate: bitwise equal to f_y
  }
  if (gate_source->rows() != y.rows()) {
    throw PairingError("encode_image: gate source has " +
                       std::to_string(gate_source->rows()) + " rows for " +
                       std::to_string(y.rows()) + " images");
  }
  Tensor gate = attention_gate(tape, params, *gate_source);
  return {hadamard(tape, gate, fy), EmbeddingKind::Image};
}

EmbeddingBatch encode_semantic(Tape* tape, const ModelParams& params,
                               const Tensor& composed) {
  if (params.arch.fixed_semantic) {
    throw ContractError("encode_semantic is unavailable in fixed-semantic mode");
  }
  if (composed.cols() != params.semantic_input_width()) {
    throw DimensionError("encode_semantic expects width " +
                         std::to_string(params.semantic_input_width()) +
                         ", got " + std::to_string(composed.cols()));
  }
  return {encoder_forward(tape, params.semantic_encoder, composed,
                          params.arch.leaky_slope),
          EmbeddingKind::Semantic};
}

Tensor semantic_composition(Tape* tape, const ModelParams& params,
                            const SemanticGraph& graph, const Tensor& words) {
  if (params.arch.use_graph) {
    return compose_prototype_matrix(tape, graph, words, params.gcn_weight);
  }
  return words;
}

EmbeddingBatch semantic_embeddings(Tape* tape, const ModelParams& params,
                                   const SemanticGraph& graph,
                                   const Tensor& words) {
  if (params.arch.fixed_semantic) {
    return {words, EmbeddingKind::Semantic};
  }
  return encode_semantic(tape, params,
                         semantic_composition(tape, params, graph, words));
}

Tensor decode_cross(Tape* tape, const ModelParams& params,
                    const EmbeddingBatch& e, DecodeDirection direction) {
  if (direction == DecodeDirection::SketchToImage) {
    if (e.kind != EmbeddingKind::Sketch) {
      throw ContractError("sketch->image decoder fed a non-sketch embedding");
    }
    return affine(tape, e.rows, params.decoder_sketch_to_image.weight,
                  params.decoder_sketch_to_image.bias);
  }
  if (e.kind != EmbeddingKind::Image) {
    throw ContractError("image->sketch decoder fed a non-image embedding");
  }
  return affine(tape, e.rows, params.decoder_image_to_sketch.weight,
                params.decoder_image_to_sketch.bias);
}

Tensor hash_project(Tape* tape, const ModelParams& params, const Tensor& emb) {
  return matmul(tape, emb, params.hash_projection);
}

Tensor relaxed_codes(Tape* tape, const ModelParams& params, const Tensor& emb,
                     double beta) {
  if (beta <= 0.0) throw ConfigError("relaxed hash beta must be positive");
  Tensor z = hash_project(tape, params, emb);
  return activation(tape, scale(tape, z, beta), Activation::Tanh);
}

std::vector<TernaryCode> hard_codes(const ModelParams& params, const Tensor& emb) {
  Tensor s = hard_sign(hash_project(nullptr, params, emb));
  const std::size_t n = s.rows(), d = s.cols();
  std::vector<TernaryCode> codes(n);
  for (std::size_t i = 0; i < n; ++i) {
    codes[i].trits.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      codes[i].trits[j] = static_cast<std::int8_t>(s.values()[i * d + j]);
    }
  }
  return codes;
}

Tensor classify_logits(Tape* tape, const ModelParams& params, const Tensor& codes) {
  if (codes.cols() != params.arch.d_shared) {
    throw DimensionError("classify_logits expects width " +
                         std::to_string(params.arch.d_shared) + ", got " +
                         std::to_string(codes.cols()));
  }
  return affine(tape, codes, params.classifier.weight, params.classifier.bias);
}

// ---- Checkpoints ----------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "#crossat-checkpoint v1";

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (1ull << 24)) throw FormatError("checkpoint string length corrupt");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError("checkpoint truncated");
  return s;
}

std::vector<std::pair<std::string, std::string>> arch_entries(const ArchConfig& a) {
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  return {
      {"d_in", std::to_string(a.d_in)},
      {"d_w", std::to_string(a.d_w)},
      {"d_shared", std::to_string(a.d_shared)},
      {"hidden_width", std::to_string(a.hidden_width)},
      {"hidden_layers", std::to_string(a.hidden_layers)},
      {"att_pool_groups", std::to_string(a.att_pool_groups)},
      {"hash_beta", fmt(a.hash_beta)},
      {"leaky_slope", fmt(a.leaky_slope)},
      {"use_graph", a.use_graph ? "1" : "0"},
      {"fixed_semantic", a.fixed_semantic ? "1" : "0"},
      {"semantic_decoder", a.semantic_decoder ? "1" : "0"},
  };
}

ArchConfig arch_from_entries(
    const std::vector<std::pair<std::string, std::string>>& entries) {
  std::map<std::string, std::string> m(entries.begin(), entries.end());
  auto need = [&m](const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("checkpoint misses config key '" + key + "'");
    return it->second;
  };
  ArchConfig a;
  a.d_in = std::stoul(need("d_in"));
  a.d_w = std::stoul(need("d_w"));
  a.d_shared = std::stoul(need("d_shared"));
  a.hidden_width = std::stoul(need("hidden_width"));
  a.hidden_layers = std::stoul(need("hidden_layers"));
  a.att_pool_groups = std::stoul(need("att_pool_groups"));
  a.hash_beta = std::stod(need("hash_beta"));
  a.leaky_slope = std::stod(need("leaky_slope"));
  a.use_graph = need("use_graph") == "1";
  a.fixed_semantic = need("fixed_semantic") == "1";
  a.semantic_decoder = need("semantic_decoder") == "1";
  return a;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out << kCheckpointMagic << "\n";

  const auto entries = arch_entries(params.arch);
  write_u64(out, entries.size());
  for (const auto& [k, v] : entries) {
    write_string(out, k);
    write_string(out, v);
  }
  write_u64(out, params.seen_labels.size());
  for (const auto& l : params.seen_labels) write_string(out, l);

  const auto named = params.named_parameters();
  write_u64(out, named.size());
  for (const auto& [name, t] : named) {
    write_string(out, name);
    write_u64(out, t.rank());
    for (std::size_t e : t.shape()) write_u64(out, e);
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw DataError("write to checkpoint '" + path + "' failed");
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw FormatError("checkpoint '" + path + "' has unsupported header '" +
                      magic + "'");
  }
  std::vector<std::pair<std::string, std::string>> entries;
  const std::uint64_t n_entries = read_u64(in);
  for (std::uint64_t i = 0; i < n_entries; ++i) {
    std::string k = read_string(in);
    std::string v = read_string(in);
    entries.emplace_back(std::move(k), std::move(v));
  }
  std::vector<std::string> labels;
  const std::uint64_t n_labels = read_u64(in);
  for (std::uint64_t i = 0; i < n_labels; ++i) labels.push_back(read_string(in));

  ModelParams params = init_model(arch_from_entries(entries), labels, 0);

  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : params.named_parameters()) by_name.emplace(name, t);

  const std::uint64_t n_tensors = read_u64(in);
  if (n_tensors != by_name.size()) {
    throw FormatError("checkpoint holds " + std::to_string(n_tensors) +
                      " tensors, model expects " + std::to_string(by_name.size()));
  }
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_string(in);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint tensor '" + name + "' unknown to this model");
    }
    const std::uint64_t rank = read_u64(in);
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = read_u64(in);
    if (shape != it->second.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' shape mismatch");
    }
    in.read(reinterpret_cast<char*>(it->second.values().data()),
            static_cast<std::streamsize>(it->second.size() * sizeof(double)));
    if (!in) throw FormatError("checkpoint truncated");
    for (double v : it->second.values()) {
      if (!std::isfinite(v)) {
        throw FormatError("checkpoint tensor '" + name + "' holds non-finite values");
      }
    }
  }
  return params;
}

}  // namespace crossat
