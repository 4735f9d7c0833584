#include "crossat/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace crossat {

namespace {

struct KeyEntry {
  std::string name;
  std::string type;  // "string" | "int" | "float" | "bool" | enum list
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t consumed = 0;
    const long long v = std::stoll(value, &consumed);
    if (consumed != value.size() || v < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a nonnegative integer, got '" +
                      value + "'");
  }
}

double parse_float(const std::string& key, const std::string& value) {
  try {
    std::size_t consumed = 0;
    const double v = std::stod(value, &consumed);
    if (consumed != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a float, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("key '" + key + "' expects a bool (true/false), got '" +
                    value + "'");
}

std::string check_enum(const std::string& key, const std::string& value,
                       std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return value;
  }
  std::ostringstream os;
  os << "key '" << key << "' expects one of {";
  bool first = true;
  for (const char* a : allowed) {
    if (!first) os << ", ";
    os << a;
    first = false;
  }
  os << "}, got '" << value << "'";
  throw ConfigError(os.str());
}

std::string fmt_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

#define STRING_KEY(field) \
  KeyEntry{#field, "string", \
           [](RunConfig& c, const std::string& v) { c.field = v; }, \
           [](const RunConfig& c) { return c.field; }}
#define SIZE_KEY(field) \
  KeyEntry{#field, "int", \
           [](RunConfig& c, const std::string& v) { c.field = parse_size(#field, v); }, \
           [](const RunConfig& c) { return std::to_string(c.field); }}
#define FLOAT_KEY(field) \
  KeyEntry{#field, "float", \
           [](RunConfig& c, const std::string& v) { c.field = parse_float(#field, v); }, \
           [](const RunConfig& c) { return fmt_float(c.field); }}
#define BOOL_KEY(field) \
  KeyEntry{#field, "bool", \
           [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }, \
           [](const RunConfig& c) { return c.field ? std::string("true") : std::string("false"); }}
#define ENUM_KEY(field, ...) \
  KeyEntry{#field, "enum", \
           [](RunConfig& c, const std::string& v) { \
             c.field = check_enum(#field, v, {__VA_ARGS__}); \
           }, \
           [](const RunConfig& c) { return c.field; }}

const std::vector<KeyEntry>& registry() {
  static const std::vector<KeyEntry> keys = {
      STRING_KEY(features),
      STRING_KEY(word_vectors),
      STRING_KEY(checkpoint),
      STRING_KEY(metrics_log),
      STRING_KEY(index_file),
      STRING_KEY(embeddings_file),
      STRING_KEY(report_file),
      STRING_KEY(ablation_file),
      SIZE_KEY(d_shared),
      SIZE_KEY(hidden_width),
      SIZE_KEY(hidden_layers),
      SIZE_KEY(att_pool_groups),
      FLOAT_KEY(hash_beta),
      FLOAT_KEY(leaky_slope),
      BOOL_KEY(use_graph),
      ENUM_KEY(semantic_space, "latent", "fixed"),
      ENUM_KEY(graph_scope, "seen", "seen_unseen"),
      BOOL_KEY(semantic_decoder),
      SIZE_KEY(semantic_pretrain_epochs),
      SIZE_KEY(unseen_count),
      SIZE_KEY(batch_size),
      SIZE_KEY(epochs),
      FLOAT_KEY(learning_rate),
      FLOAT_KEY(lambda1),
      FLOAT_KEY(lambda2),
      FLOAT_KEY(lambda3),
      FLOAT_KEY(lambda4),
      FLOAT_KEY(lambda5),
      FLOAT_KEY(alpha),
      ENUM_KEY(mode, "sbir", "cross_modal"),
      BOOL_KEY(alternating),
      KeyEntry{"seed", "int",
               [](RunConfig& c, const std::string& v) {
                 c.seed = static_cast<std::uint64_t>(parse_size("seed", v));
               },
               [](const RunConfig& c) { return std::to_string(c.seed); }},
      SIZE_KEY(triads_per_epoch),
      ENUM_KEY(task, "sketch_to_image", "image_to_sketch", "sketch_to_sketch",
               "image_to_image"),
      ENUM_KEY(metric, "euclidean", "hamming"),
      SIZE_KEY(k),
      ENUM_KEY(gating, "unconditioned", "query_conditioned"),
      SIZE_KEY(map_cutoff),
      STRING_KEY(query_id),
      SIZE_KEY(synth_classes),
      SIZE_KEY(synth_per_class),
      SIZE_KEY(synth_d_in),
      SIZE_KEY(synth_word_dim),
      FLOAT_KEY(synth_shift),
      FLOAT_KEY(synth_noise),
  };
  return keys;
}

#undef STRING_KEY
#undef SIZE_KEY
#undef FLOAT_KEY
#undef BOOL_KEY
#undef ENUM_KEY

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void apply(RunConfig& config, const std::string& key, const std::string& value) {
  for (const KeyEntry& entry : registry()) {
    if (entry.name == key) {
      entry.set(config, value);
      return;
    }
  }
  std::string best;
  std::size_t best_dist = 4;  // suggest only close misses
  for (const KeyEntry& entry : registry()) {
    const std::size_t d = edit_distance(key, entry.name);
    if (d < best_dist) {
      best_dist = d;
      best = entry.name;
    }
  }
  if (!best.empty()) {
    throw ConfigError("unknown key '" + key + "'; did you mean '" + best + "'?");
  }
  std::ostringstream os;
  os << "unknown key '" << key << "'; valid keys:";
  for (const KeyEntry& entry : registry()) os << " " << entry.name;
  throw ConfigError(os.str());
}

}  // namespace

RunConfig parse_config(const std::optional<std::string>& file_path,
                       std::span<const std::string> overrides) {
  RunConfig config;
  if (file_path.has_value()) {
    std::ifstream in(*file_path);
    if (!in) throw ConfigError("cannot open config file '" + *file_path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string stripped = trim(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected 'key = value', got '" + stripped + "'");
      }
      apply(config, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
  }
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + ov + "' must look like key=value");
    }
    apply(config, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return config;
}

std::vector<std::string> config_key_help() {
  RunConfig defaults;
  std::vector<std::string> lines;
  for (const KeyEntry& entry : registry()) {
    lines.push_back(entry.name + " = " + entry.get(defaults) + "  # " + entry.type);
  }
  return lines;
}

}  // namespace crossat
