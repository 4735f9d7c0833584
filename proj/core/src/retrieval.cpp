#include "crossat/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace crossat {

std::string to_string(Metric m) {
  return m == Metric::Euclidean ? "euclidean" : "hamming";
}

Metric metric_from_string(const std::string& s) {
  if (s == "euclidean") return Metric::Euclidean;
  if (s == "hamming") return Metric::Hamming;
  throw ConfigError("metric must be 'euclidean' or 'hamming', got '" + s + "'");
}

std::string to_string(Gating g) {
  return g == Gating::Unconditioned ? "unconditioned" : "query_conditioned";
}

Gating gating_from_string(const std::string& s) {
  if (s == "unconditioned") return Gating::Unconditioned;
  if (s == "query_conditioned") return Gating::QueryConditioned;
  throw ConfigError("gating must be 'unconditioned' or 'query_conditioned', got '" +
                    s + "'");
}

// ---- Hamming ----------------------------------------------------------------

int hamming_distance(const TernaryCode& a, const TernaryCode& b) {
  if (a.trits.size() != b.trits.size()) {
    throw DimensionError("hamming_distance: code lengths " +
                         std::to_string(a.trits.size()) + " vs " +
                         std::to_string(b.trits.size()));
  }
  int d = 0;
  for (std::size_t i = 0; i < a.trits.size(); ++i) {
    d += a.trits[i] != b.trits[i] ? 1 : 0;
  }
  return d;
}

PackedTernary pack_ternary(const TernaryCode& code) {
  PackedTernary packed;
  packed.length = code.trits.size();
  packed.words.assign((code.trits.size() + 31) / 32, 0);
  for (std::size_t i = 0; i < code.trits.size(); ++i) {
    const std::int8_t t = code.trits[i];
    if (t < -1 || t > 1) throw ContractError("trit outside {-1,0,+1}");
    const std::uint64_t bits = t == -1 ? 0b01u : (t == 1 ? 0b10u : 0b00u);
    packed.words[i / 32] |= bits << (2 * (i % 32));
  }
  return packed;
}

int hamming_distance(const PackedTernary& a, const PackedTernary& b) {
  if (a.length != b.length) {
    throw DimensionError("hamming_distance: packed code lengths differ");
  }
  constexpr std::uint64_t kLowBits = 0x5555555555555555ull;
  int d = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) {
    const std::uint64_t x = a.words[w] ^ b.words[w];
    d += std::popcount((x | (x >> 1)) & kLowBits);
  }
  return d;
}

// ---- GalleryIndex -------------------------------------------------------------

std::span<const double> GalleryIndex::embedding(std::size_t i) const {
  if (embeddings_.empty()) {
    throw ContractError("index stores no real-valued embeddings");
  }
  return std::span<const double>(embeddings_.data() + i * dim_, dim_);
}

const TernaryCode& GalleryIndex::code(std::size_t i) const {
  if (codes_.empty()) throw ContractError("index stores no ternary codes");
  return codes_[i];
}

namespace {

Tensor batch_features(std::span<const FeatureRecord* const> records) {
  const std::size_t n = records.size();
  const std::size_t d = records.front()->feature.size();
  std::vector<double> data;
  data.reserve(n * d);
  for (const FeatureRecord* r : records) {
    data.insert(data.end(), r->feature.begin(), r->feature.end());
  }
  return Tensor({n, d}, std::move(data));
}

Tensor encode_records(const ModelParams& params, Modality modality,
                      std::span<const FeatureRecord* const> records) {
  Tensor raw = batch_features(records);
  if (modality == Modality::Sketch) {
    return encode_sketch(nullptr, params, raw).rows;
  }
  return encode_image(nullptr, params, raw).rows;  // ones-gate
}

}  // namespace

GalleryIndex build_index(std::span<const FeatureRecord> records,
                         const ModelParams& params, Modality target,
                         Metric metric, Gating gating) {
  std::vector<const FeatureRecord*> selected;
  for (const FeatureRecord& r : records) {
    if (r.modality == target) selected.push_back(&r);
  }
  if (selected.empty()) {
    throw DataError("no records of modality " + to_string(target) +
                    " to index");
  }
  if (gating == Gating::QueryConditioned && target != Modality::Image) {
    throw ContractError("query-conditioned gating applies to image galleries only");
  }

  GalleryIndex index;
  index.metric_ = metric;
  index.gating_ = gating;
  index.target_ = target;
  index.dim_ = params.arch.d_shared;
  index.entries_.reserve(selected.size());
  for (const FeatureRecord* r : selected) {
    index.entries_.push_back({r->id, r->label});
  }

  if (gating == Gating::QueryConditioned) {
    // Deferred: encoding happens per query, gated by the query sketch.
    index.raw_features_.reserve(selected.size());
    for (const FeatureRecord* r : selected) index.raw_features_.push_back(r->feature);
    return index;
  }

  Tensor emb = encode_records(params, target, selected);
  if (metric == Metric::Euclidean) {
    index.embeddings_.assign(emb.values().begin(), emb.values().end());
  } else {
    index.codes_ = hard_codes(params, emb);
    index.packed_.reserve(index.codes_.size());
    for (const TernaryCode& c : index.codes_) {
      index.packed_.push_back(pack_ternary(c));
    }
  }
  return index;
}

// ---- query_knn -----------------------------------------------------------------

// Friend of GalleryIndex; reaches the deferred/packed internals for queries.
struct IndexAccess {
  static const std::vector<std::vector<double>>& raw(const GalleryIndex& g) {
    return g.raw_features_;
  }
  static const std::vector<PackedTernary>& packed(const GalleryIndex& g) {
    return g.packed_;
  }
};

namespace {

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Tensor encode_query(const ModelParams& params, const FeatureRecord& query) {
  Tensor raw({1, query.feature.size()}, query.feature);
  if (query.modality == Modality::Sketch) {
    return encode_sketch(nullptr, params, raw).rows;
  }
  return encode_image(nullptr, params, raw).rows;
}

}  // namespace

QueryResult query_knn(const GalleryIndex& index, const FeatureRecord& query,
                      const ModelParams& params, std::size_t k) {
  if (k == 0) throw ConfigError("query_knn needs k >= 1");
  if (index.size() == 0) throw ProtocolError("query against an empty gallery");

  struct Scored {
    double distance;
    std::size_t entry;
  };
  std::vector<Scored> scored;
  scored.reserve(index.size());

  Tensor query_emb = encode_query(params, query);

  if (index.gating() == Gating::QueryConditioned) {
    if (query.modality != Modality::Sketch) {
      throw ContractError("query-conditioned retrieval requires a sketch query");
    }
    // Re-encode the whole gallery gated by this query's sketch feature.
    Tensor query_raw({1, query.feature.size()}, query.feature);
    Tensor gate = attention_gate(nullptr, params, query_raw);
    std::vector<const std::vector<double>*> features;
    features.reserve(index.size());
    for (const auto& f : IndexAccess::raw(index)) features.push_back(&f);
    const std::size_t d_in = features.front()->size();
    std::vector<double> data;
    data.reserve(features.size() * d_in);
    for (const auto* f : features) data.insert(data.end(), f->begin(), f->end());
    Tensor gallery_raw({features.size(), d_in}, std::move(data));
    Tensor fy = encode_image(nullptr, params, gallery_raw).rows;
    // Row-broadcast the single gate row over the gallery.
    const std::size_t d = fy.cols();
    std::vector<double> gated(fy.values().begin(), fy.values().end());
    for (std::size_t i = 0; i < fy.rows(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gated[i * d + j] *= gate.values()[j];
    }
    if (index.metric() == Metric::Euclidean) {
      for (std::size_t i = 0; i < index.size(); ++i) {
        scored.push_back({euclidean(query_emb.values(),
                                    std::span<const double>(gated.data() + i * d, d)),
                          i});
      }
    } else {
      Tensor gated_t({index.size(), d}, gated);
      std::vector<TernaryCode> codes = hard_codes(params, gated_t);
      const PackedTernary q = pack_ternary(hard_codes(params, query_emb)[0]);
      for (std::size_t i = 0; i < index.size(); ++i) {
        scored.push_back({double(hamming_distance(q, pack_ternary(codes[i]))), i});
      }
    }
  } else if (index.metric() == Metric::Euclidean) {
    if (index.dim() != query_emb.cols()) {
      throw DimensionError("index dimension " + std::to_string(index.dim()) +
                           " does not match model d_shared " +
                           std::to_string(query_emb.cols()));
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
      scored.push_back({euclidean(query_emb.values(), index.embedding(i)), i});
    }
  } else {
    const TernaryCode q_code = hard_codes(params, query_emb)[0];
    if (q_code.trits.size() != index.dim()) {
      throw DimensionError("index dimension does not match model d_shared");
    }
    const PackedTernary q = pack_ternary(q_code);
    const auto& packed = IndexAccess::packed(index);
    for (std::size_t i = 0; i < index.size(); ++i) {
      scored.push_back({double(hamming_distance(q, packed[i])), i});
    }
  }

  std::sort(scored.begin(), scored.end(), [&index](const Scored& a, const Scored& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return index.entries()[a.entry].id < index.entries()[b.entry].id;
  });

  QueryResult result;
  result.truncated = k > scored.size();
  const std::size_t take = std::min(k, scored.size());
  result.hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& e = index.entries()[scored[i].entry];
    result.hits.push_back({e.id, e.label, scored[i].distance});
  }
  return result;
}

// ---- Import/export ---------------------------------------------------------------

namespace {

constexpr const char* kIndexMagicPrefix = "#crossat-index v1";

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

}  // namespace

void export_index(const GalleryIndex& index, const std::string& path) {
  if (index.gating() == Gating::QueryConditioned) {
    throw ContractError("query-conditioned indexes defer encoding to query time "
                        "and cannot be exported");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write index file '" + path + "'");
  out << kIndexMagicPrefix << " metric=" << to_string(index.metric())
      << " d=" << index.dim() << "\n";
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& e = index.entries()[i];
    out << e.id << '\t' << e.label << '\t';
    if (index.metric() == Metric::Euclidean) {
      auto emb = index.embedding(i);
      for (std::size_t j = 0; j < emb.size(); ++j) {
        if (j) out << ',';
        out << format_double(emb[j]);
      }
    } else {
      const auto& code = index.code(i);
      for (std::size_t j = 0; j < code.trits.size(); ++j) {
        if (j) out << ',';
        out << int(code.trits[j]);
      }
    }
    out << '\n';
  }
}

GalleryIndex import_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open index file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("index file '" + path + "' empty");
  Metric metric;
  std::size_t dim = 0;
  {
    std::istringstream hs(line);
    std::string magic, version, metric_field, d_field;
    hs >> magic >> version >> metric_field >> d_field;
    if (magic + " " + version != kIndexMagicPrefix ||
        metric_field.rfind("metric=", 0) != 0 || d_field.rfind("d=", 0) != 0) {
      throw FormatError("index file '" + path + "' has an unsupported header");
    }
    metric = metric_from_string(metric_field.substr(7));
    try {
      dim = std::stoul(d_field.substr(2));
    } catch (const std::exception&) {
      throw FormatError("index header has bad d field '" + d_field + "'");
    }
  }
  GalleryIndex index;
  index.metric_ = metric;
  index.gating_ = Gating::Unconditioned;
  index.dim_ = dim;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int i = 0; i < 2; ++i) {
      const std::size_t pos = line.find('\t', start);
      if (pos == std::string::npos) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected 3 tab-separated fields");
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    fields.push_back(line.substr(start));
    std::vector<double> values;
    std::istringstream vs(fields[2]);
    std::string token;
    while (std::getline(vs, token, ',')) {
      try {
        values.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad value '" +
                         token + "'");
      }
    }
    if (values.size() != dim) {
      throw SchemaError("line " + std::to_string(line_no) + ": entry has " +
                        std::to_string(values.size()) + " values, header says d=" +
                        std::to_string(dim));
    }
    index.entries_.push_back({fields[0], fields[1]});
    if (metric == Metric::Euclidean) {
      index.embeddings_.insert(index.embeddings_.end(), values.begin(), values.end());
    } else {
      TernaryCode code;
      code.trits.reserve(values.size());
      for (double v : values) {
        if (v != -1.0 && v != 0.0 && v != 1.0) {
          throw SchemaError("line " + std::to_string(line_no) +
                            ": trit outside {-1,0,1}");
        }
        code.trits.push_back(static_cast<std::int8_t>(v));
      }
      index.packed_.push_back(pack_ternary(code));
      index.codes_.push_back(std::move(code));
    }
  }
  if (index.entries_.empty()) {
    throw FormatError("index file '" + path + "' holds no entries");
  }
  return index;
}

}  // namespace crossat
