#include "crossat/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "crossat/rng.hpp"

namespace crossat {

namespace {

// Shortest representation that still round-trips a double exactly.
std::string format_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) return buf;
  }
  return buf;
}

double parse_double(const std::string& token, std::size_t line_no) {
  std::size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &consumed);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad float '" +
                     token + "'");
  }
  if (consumed != token.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad float '" +
                     token + "'");
  }
  return v;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      break;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

constexpr const char* kFeatureMagic = "#crossat-features v1";
constexpr double kCentroidRadius = 2.5;

}  // namespace

std::string to_string(Modality m) {
  return m == Modality::Sketch ? "sketch" : "image";
}

Modality modality_from_string(const std::string& s) {
  if (s == "sketch") return Modality::Sketch;
  if (s == "image") return Modality::Image;
  throw SchemaError("modality must be 'sketch' or 'image', got '" + s + "'");
}

// ---- Dataset ----------------------------------------------------------------

Dataset::Dataset(std::vector<FeatureRecord> records) : records_(std::move(records)) {
  std::set<std::string> label_set;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const FeatureRecord& r = records_[i];
    if (r.feature.empty()) {
      throw SchemaError("record '" + r.id + "' has an empty feature vector");
    }
    std::size_t& dim = r.modality == Modality::Sketch ? sketch_dim_ : image_dim_;
    if (dim == 0) {
      dim = r.feature.size();
    } else if (dim != r.feature.size()) {
      throw SchemaError("record '" + r.id + "' has feature width " +
                        std::to_string(r.feature.size()) + ", expected " +
                        std::to_string(dim) + " for modality " +
                        to_string(r.modality));
    }
    if (!by_id_.emplace(r.id, i).second) {
      throw SchemaError("duplicate record id '" + r.id + "'");
    }
    label_set.insert(r.label);
    by_label_[{r.label, r.modality}].push_back(i);
  }
  labels_.assign(label_set.begin(), label_set.end());
}

std::size_t Dataset::feature_dim(Modality m) const {
  return m == Modality::Sketch ? sketch_dim_ : image_dim_;
}

bool Dataset::has_record(const std::string& label, Modality m) const {
  return by_label_.count({label, m}) != 0;
}

const std::vector<std::size_t>& Dataset::records_of(const std::string& label,
                                                    Modality m) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_label_.find({label, m});
  return it == by_label_.end() ? kEmpty : it->second;
}

std::size_t Dataset::index_of(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw DataError("no record with id '" + id + "'");
  return it->second;
}

// ---- WordTable ---------------------------------------------------------------

const std::vector<double>& WordTable::vector_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return vectors[i];
  }
  throw DataError("no word vector for class '" + label + "'");
}

bool WordTable::contains(const std::string& label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

// ---- ZeroShotSplit ------------------------------------------------------------

bool ZeroShotSplit::is_seen(const std::string& label) const {
  return std::binary_search(seen.begin(), seen.end(), label);
}

bool ZeroShotSplit::is_unseen(const std::string& label) const {
  return std::binary_search(unseen.begin(), unseen.end(), label);
}

// ---- Feature file I/O ----------------------------------------------------------

Dataset load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feature file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("feature file '" + path + "' is empty");
  }
  std::size_t d_in = 0;
  {
    std::istringstream hs(line);
    std::string magic, version, field;
    hs >> magic >> version >> field;
    if (magic + " " + version != kFeatureMagic ||
        field.rfind("d_in=", 0) != 0) {
      throw FormatError("feature file '" + path +
                        "' missing header '" + kFeatureMagic + " d_in=<int>'");
    }
    try {
      d_in = std::stoul(field.substr(5));
    } catch (const std::exception&) {
      throw FormatError("feature file header has bad d_in '" + field + "'");
    }
    if (d_in == 0) throw FormatError("feature file header d_in must be positive");
  }

  std::vector<FeatureRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_on(line, '\t');
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 "
                       "tab-separated fields, got " + std::to_string(fields.size()));
    }
    FeatureRecord r;
    r.id = fields[0];
    r.modality = modality_from_string(fields[1]);
    r.label = fields[2];
    const std::vector<std::string> nums = split_on(fields[3], ',');
    if (nums.size() != d_in) {
      throw SchemaError("line " + std::to_string(line_no) + ": record '" + r.id +
                        "' has " + std::to_string(nums.size()) +
                        " feature values, header says d_in=" + std::to_string(d_in));
    }
    r.feature.reserve(nums.size());
    for (const std::string& t : nums) r.feature.push_back(parse_double(t, line_no));
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records));
}

void save_features(const Dataset& dataset, const std::string& path) {
  if (dataset.empty()) throw DataError("refusing to save an empty dataset");
  const std::size_t sketch_dim = dataset.feature_dim(Modality::Sketch);
  const std::size_t image_dim = dataset.feature_dim(Modality::Image);
  const std::size_t d_in = sketch_dim ? sketch_dim : image_dim;
  if (sketch_dim && image_dim && sketch_dim != image_dim) {
    throw SchemaError("feature file format stores one d_in; dataset has sketch "
                      "width " + std::to_string(sketch_dim) + " and image width " +
                      std::to_string(image_dim));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write feature file '" + path + "'");
  out << kFeatureMagic << " d_in=" << d_in << "\n";
  for (const FeatureRecord& r : dataset.records()) {
    out << r.id << '\t' << to_string(r.modality) << '\t' << r.label << '\t';
    for (std::size_t i = 0; i < r.feature.size(); ++i) {
      if (i) out << ',';
      out << format_double(r.feature[i]);
    }
    out << '\n';
  }
}

// ---- Word-vector file I/O -------------------------------------------------------

WordTable load_word_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open word-vector file '" + path + "'");
  WordTable table;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> vec;
    std::string num;
    while (ls >> num) vec.push_back(parse_double(num, line_no));
    if (vec.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": word vector for '" +
                       token + "' has no values");
    }
    if (table.dim == 0) {
      table.dim = vec.size();
    } else if (table.dim != vec.size()) {
      throw SchemaError("line " + std::to_string(line_no) + ": word vector for '" +
                        token + "' has width " + std::to_string(vec.size()) +
                        ", expected " + std::to_string(table.dim));
    }
    if (!seen.insert(token).second) {
      throw SchemaError("duplicate word vector for class '" + token + "'");
    }
    table.labels.push_back(token);
    table.vectors.push_back(std::move(vec));
  }
  if (table.labels.empty()) {
    throw ParseError("word-vector file '" + path + "' holds no vectors");
  }
  return table;
}

void save_word_vectors(const WordTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write word-vector file '" + path + "'");
  for (std::size_t i = 0; i < table.labels.size(); ++i) {
    out << table.labels[i];
    for (double v : table.vectors[i]) out << ' ' << format_double(v);
    out << '\n';
  }
}

// ---- make_split -----------------------------------------------------------------

ZeroShotSplit make_split(const std::vector<std::string>& labels,
                         std::size_t unseen_count, std::uint64_t rng_seed) {
  if (unseen_count == 0 || unseen_count >= labels.size()) {
    throw ConfigError("unseen_count must satisfy 0 < unseen_count < " +
                      std::to_string(labels.size()));
  }
  std::vector<std::string> pool(labels);
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  if (unseen_count >= pool.size()) {
    throw ConfigError("unseen_count must be below the number of distinct labels");
  }
  Rng rng(rng_seed);
  rng.shuffle(pool);
  ZeroShotSplit split;
  split.unseen.assign(pool.begin(), pool.begin() + unseen_count);
  split.seen.assign(pool.begin() + unseen_count, pool.end());
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  return split;
}

// ---- sample_triads ----------------------------------------------------------------

namespace {

Triad draw_triad(const Dataset& dataset, const std::vector<std::string>& seen,
                 Modality anchor_modality, Rng& rng) {
  const Modality other =
      anchor_modality == Modality::Sketch ? Modality::Image : Modality::Sketch;
  const std::size_t ci = rng.index(seen.size());
  const std::string& cls = seen[ci];
  std::size_t cj = rng.index(seen.size() - 1);
  if (cj >= ci) ++cj;  // uniform over the other seen classes
  const std::string& neg_cls = seen[cj];

  const auto& anchors = dataset.records_of(cls, anchor_modality);
  const auto& positives = dataset.records_of(cls, other);
  const auto& negatives = dataset.records_of(neg_cls, other);
  Triad t;
  t.anchor = dataset.record(anchors[rng.index(anchors.size())]);
  t.positive = dataset.record(positives[rng.index(positives.size())]);
  t.negative = dataset.record(negatives[rng.index(negatives.size())]);
  t.anchor_modality = anchor_modality;
  return t;
}

}  // namespace

std::vector<Triad> sample_triads(const Dataset& dataset, const ZeroShotSplit& split,
                                 std::size_t count, TriadMode mode,
                                 std::uint64_t rng_seed) {
  if (split.seen.size() < 2) {
    throw DataError("triad sampling needs at least two seen classes");
  }
  for (const std::string& cls : split.seen) {
    for (Modality m : {Modality::Sketch, Modality::Image}) {
      if (dataset.records_of(cls, m).empty()) {
        throw DataError("seen class '" + cls + "' has no " + to_string(m) +
                        " records");
      }
    }
  }
  Rng rng(rng_seed);
  std::vector<Triad> triads;
  triads.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Modality anchor;
    switch (mode) {
      case TriadMode::SketchAnchored: anchor = Modality::Sketch; break;
      case TriadMode::ImageAnchored: anchor = Modality::Image; break;
      case TriadMode::Balanced:
      default:
        anchor = (i % 2 == 0) ? Modality::Sketch : Modality::Image;
        break;
    }
    triads.push_back(draw_triad(dataset, split.seen, anchor, rng));
  }
  return triads;
}

// ---- synth_generate -------------------------------------------------------------

SynthResult synth_generate(const SynthConfig& config) {
  if (config.classes < 2) throw ConfigError("synth_generate needs >= 2 classes");
  if (config.d_in < 4) throw ConfigError("synth_generate needs d_in >= 4");
  if (config.per_class_per_modality == 0) {
    throw ConfigError("synth_generate needs >= 1 record per class per modality");
  }
  if (config.word_dim == 0) throw ConfigError("synth word_dim must be positive");
  if (config.noise < 0.0 || config.modality_shift < 0.0) {
    throw ConfigError("synth noise and modality_shift must be nonnegative");
  }

  Rng rng(config.rng_seed);

  // Class centroids on a sphere of fixed radius.
  std::vector<std::vector<double>> centroids(config.classes);
  for (auto& c : centroids) {
    c.resize(config.d_in);
    double norm = 0.0;
    for (double& v : c) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v = kCentroidRadius * v / norm;
  }

  // One fixed translation applied to every sketch sample.
  std::vector<double> shift(config.d_in, 0.0);
  {
    double norm = 0.0;
    for (double& v : shift) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : shift) v = config.modality_shift * v / norm;
  }

  const int digits = config.classes > 100 ? 3 : 2;
  auto class_name = [digits](std::size_t c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class_%0*zu", digits, c);
    return std::string(buf);
  };

  std::vector<FeatureRecord> records;
  records.reserve(config.classes * config.per_class_per_modality * 2);
  for (std::size_t c = 0; c < config.classes; ++c) {
    const std::string label = class_name(c);
    for (std::size_t i = 0; i < config.per_class_per_modality; ++i) {
      FeatureRecord img;
      img.id = "img_" + label + "_" + std::to_string(i);
      img.modality = Modality::Image;
      img.label = label;
      img.feature.resize(config.d_in);
      for (std::size_t j = 0; j < config.d_in; ++j) {
        img.feature[j] = centroids[c][j] + config.noise * rng.normal();
      }
      records.push_back(std::move(img));

      FeatureRecord sk;
      sk.id = "sk_" + label + "_" + std::to_string(i);
      sk.modality = Modality::Sketch;
      sk.label = label;
      sk.feature.resize(config.d_in);
      for (std::size_t j = 0; j < config.d_in; ++j) {
        sk.feature[j] = centroids[c][j] + shift[j] + config.noise * rng.normal();
      }
      records.push_back(std::move(sk));
    }
  }

  // Word vectors: a common random projection of the centroids, scaled by
  // 1/sqrt(d_in) so inter-class distances land on the centroid scale.
  std::vector<double> projection(config.word_dim * config.d_in);
  for (double& v : projection) v = rng.normal() / std::sqrt(double(config.d_in));
  WordTable table;
  table.dim = config.word_dim;
  for (std::size_t c = 0; c < config.classes; ++c) {
    std::vector<double> w(config.word_dim, 0.0);
    for (std::size_t r = 0; r < config.word_dim; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < config.d_in; ++j) {
        s += projection[r * config.d_in + j] * centroids[c][j];
      }
      w[r] = s;
    }
    table.labels.push_back(class_name(c));
    table.vectors.push_back(std::move(w));
  }

  return SynthResult{Dataset(std::move(records)), std::move(table)};
}

}  // namespace crossat
