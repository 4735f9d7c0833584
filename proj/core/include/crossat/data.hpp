#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "crossat/errors.hpp"

namespace crossat {

enum class Modality { Sketch, Image };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// One pre-extracted visual feature vector with identity, modality and class.
struct FeatureRecord {
  std::string id;
  Modality modality = Modality::Sketch;
  std::string label;
  std::vector<double> feature;
};

// Immutable after construction. Validates that ids are unique, that feature
// widths are uniform per modality, and indexes records by (label, modality).
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<FeatureRecord> records);

  const std::vector<FeatureRecord>& records() const { return records_; }
  const FeatureRecord& record(std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // Sorted unique class labels present in the dataset.
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t feature_dim(Modality m) const;
  bool has_record(const std::string& label, Modality m) const;
  // Indices of records with the given label and modality (possibly empty).
  const std::vector<std::size_t>& records_of(const std::string& label,
                                             Modality m) const;
  // Index of the record with the given id; throws DataError when absent.
  std::size_t index_of(const std::string& id) const;

 private:
  std::vector<FeatureRecord> records_;
  std::vector<std::string> labels_;
  std::size_t sketch_dim_ = 0, image_dim_ = 0;
  std::map<std::pair<std::string, Modality>, std::vector<std::size_t>> by_label_;
  std::map<std::string, std::size_t> by_id_;
};

// Class-name -> word-vector table, all vectors the same width.
struct WordTable {
  std::vector<std::string> labels;            // in file order
  std::vector<std::vector<double>> vectors;   // aligned with labels
  std::size_t dim = 0;

  const std::vector<double>& vector_of(const std::string& label) const;
  bool contains(const std::string& label) const;
};

// Disjoint seen/unseen class partition covering every dataset label.
struct ZeroShotSplit {
  std::vector<std::string> seen;    // sorted
  std::vector<std::string> unseen;  // sorted

  bool is_seen(const std::string& label) const;
  bool is_unseen(const std::string& label) const;
};

// (anchor, positive, negative) with a cross-modal structure: a sketch anchor
// pairs with two images, an image anchor with two sketches.
struct Triad {
  FeatureRecord anchor;
  FeatureRecord positive;
  FeatureRecord negative;
  Modality anchor_modality = Modality::Sketch;
};

enum class TriadMode { SketchAnchored, ImageAnchored, Balanced };

// ---- File formats ----------------------------------------------------------
// Feature file: "#crossat-features v1 d_in=<int>" header, then one record per
// line: "<id>\t<sketch|image>\t<label>\t<v1,v2,...>". Floats are printed so a
// save -> load -> save cycle is byte-identical.
Dataset load_features(const std::string& path);
void save_features(const Dataset& dataset, const std::string& path);

// Word-vector file: plain text "<token> <v1> ... <v_dw>" per line.
WordTable load_word_vectors(const std::string& path);
void save_word_vectors(const WordTable& table, const std::string& path);

// ---- Splits and sampling ---------------------------------------------------

ZeroShotSplit make_split(const std::vector<std::string>& labels,
                         std::size_t unseen_count, std::uint64_t rng_seed);

std::vector<Triad> sample_triads(const Dataset& dataset, const ZeroShotSplit& split,
                                 std::size_t count, TriadMode mode,
                                 std::uint64_t rng_seed);

// ---- Synthetic generator ---------------------------------------------------

struct SynthConfig {
  std::size_t classes = 8;
  std::size_t per_class_per_modality = 40;
  std::size_t d_in = 32;
  std::size_t word_dim = 300;
  double modality_shift = 1.0;
  double noise = 0.3;
  std::uint64_t rng_seed = 1;
};

struct SynthResult {
  Dataset dataset;
  WordTable word_table;
};

// Class centroids on a sphere; sketches are images translated by one fixed
// shift vector of the requested magnitude; word vectors are a random linear
// projection of the centroids so inter-class distances carry over.
SynthResult synth_generate(const SynthConfig& config);

}  // namespace crossat
