#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crossat/data.hpp"
#include "crossat/network.hpp"

namespace crossat {

enum class Metric { Euclidean, Hamming };
enum class Gating { Unconditioned, QueryConditioned };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);
std::string to_string(Gating g);
Gating gating_from_string(const std::string& s);

// Count of positions where two trit vectors differ (generalized Hamming).
int hamming_distance(const TernaryCode& a, const TernaryCode& b);

// Two-bit packing of a trit vector: 32 trits per 64-bit word, -1 -> 01,
// 0 -> 00, +1 -> 10; XOR + popcount gives the distance.
struct PackedTernary {
  std::vector<std::uint64_t> words;
  std::size_t length = 0;
};
PackedTernary pack_ternary(const TernaryCode& code);
int hamming_distance(const PackedTernary& a, const PackedTernary& b);

// Frozen gallery. Unconditioned indexes precompute one representation per
// record (real embeddings or hard ternary codes). Query-conditioned indexes
// keep raw image features and defer encoding to query time, where each
// gallery image is re-gated by the query sketch.
class GalleryIndex {
 public:
  struct Entry {
    std::string id;
    std::string label;
  };

  Metric metric() const { return metric_; }
  Gating gating() const { return gating_; }
  Modality target_modality() const { return target_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::span<const double> embedding(std::size_t i) const;
  const TernaryCode& code(std::size_t i) const;

  friend GalleryIndex build_index(std::span<const FeatureRecord> records,
                                  const ModelParams& params, Modality target,
                                  Metric metric, Gating gating);
  friend GalleryIndex import_index(const std::string& path);
  friend struct IndexAccess;

 private:
  Metric metric_ = Metric::Euclidean;
  Gating gating_ = Gating::Unconditioned;
  Modality target_ = Modality::Image;
  std::size_t dim_ = 0;
  std::vector<Entry> entries_;
  std::vector<double> embeddings_;       // row-major, euclidean unconditioned
  std::vector<TernaryCode> codes_;       // hamming unconditioned
  std::vector<PackedTernary> packed_;    // fast path aligned with codes_
  std::vector<std::vector<double>> raw_features_;  // query-conditioned only

  friend struct QueryRunner;
};

GalleryIndex build_index(std::span<const FeatureRecord> records,
                         const ModelParams& params, Modality target,
                         Metric metric, Gating gating);

struct QueryHit {
  std::string id;
  std::string label;
  double distance = 0.0;
};

struct QueryResult {
  std::vector<QueryHit> hits;  // ascending distance, ties broken by id
  bool truncated = false;      // k exceeded the gallery size
};

QueryResult query_knn(const GalleryIndex& index, const FeatureRecord& query,
                      const ModelParams& params, std::size_t k);

// Text export: "#crossat-index v1 metric=<m> d=<int>" then one
// "<id>\t<label>\t<v1,v2,...>" line per entry (trits as -1/0/1). Exporting a
// query-conditioned index is a contract error: nothing is precomputed.
void export_index(const GalleryIndex& index, const std::string& path);
GalleryIndex import_index(const std::string& path);

}  // namespace crossat
