#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace dualprompt {

/// Class names plus per-class token embeddings (the CLS slot of a prompt)
/// and, for synthetic data, a unit-norm prototype per class.
struct ClassCatalog {
  std::vector<std::string> names;
  Eigen::MatrixXd token_embeddings;  // M x D
  Eigen::MatrixXd prototypes;        // M x D, rows unit norm

  int num_classes() const { return int(names.size()); }
  int dim() const { return int(token_embeddings.cols()); }
  void validate() const;
};

/// Per-(image, class) annotation state: +1 present, -1 absent, 0 unknown.
struct LabelMatrix {
  int n_images = 0;
  int n_classes = 0;
  std::vector<std::int8_t> values;  // row-major, n_images x n_classes

  LabelMatrix() = default;
  LabelMatrix(int n, int m) : n_images(n), n_classes(m), values(std::size_t(n) * m, 0) {}

  std::int8_t& at(int i, int m) { return values[std::size_t(i) * n_classes + m]; }
  std::int8_t at(int i, int m) const { return values[std::size_t(i) * n_classes + m]; }
  int count_nonzero() const;
  void validate() const;  // every entry in {-1, 0, +1}
};

/// H x W grid of D_v-dimensional region features, row-major (H, W, D).
struct RegionFeatureMap {
  int h = 0, w = 0, d = 0;
  std::vector<float> values;

  int regions() const { return h * w; }
  float at(int r, int c, int k) const {
    return values[(std::size_t(r) * w + c) * d + k];
  }
  /// Region features as an (H*W) x D_v double matrix, row-major over (H, W).
  Eigen::MatrixXd as_matrix() const;
  void validate() const;  // dims >= 1, all values finite
};

struct ImageRecord {
  std::string id;
  RegionFeatureMap feature_map;
};

/// Seen / unseen class index partition for zero-shot evaluation.
struct ZslSplit {
  std::set<int> seen;
  std::set<int> unseen;
};

struct Dataset {
  ClassCatalog catalog;
  std::vector<ImageRecord> images;
  LabelMatrix labels;
};

/// Samples M class prototypes uniformly on the unit sphere in R^D and sets
/// token_embeddings equal to the prototypes ("aligned" catalog).
ClassCatalog make_synthetic_catalog(int n_classes, int dim, std::uint64_t seed);

struct SynthConfig {
  int n_images = 2000;
  int grid_h = 8;
  int grid_w = 8;
  int labels_min = 1;
  int labels_max = 3;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// Deterministic synthetic dataset: each image gets a uniformly sampled
/// positive label set; each positive class occupies one distinct grid cell
/// (prototype + N(0, sigma^2) noise), remaining cells hold pure noise.
/// Labels come out fully annotated (+1/-1, no zeros).
Dataset synth_dataset(const ClassCatalog& catalog, const SynthConfig& cfg);

/// Keeps exactly round(keep_fraction * N * M) uniformly chosen cells,
/// zeroing the rest. Input must be fully annotated.
LabelMatrix mask_labels(const LabelMatrix& full, double keep_fraction,
                        std::uint64_t seed);

ZslSplit make_zsl_split(const ClassCatalog& catalog,
                        const std::set<int>& unseen_indices);

/// Zeroes every unseen column; seen columns pass through.
LabelMatrix restrict_labels_to_seen(const LabelMatrix& labels,
                                    const ZslSplit& split);

// -- on-disk formats ---------------------------------------------------------

/// Writes manifest.json plus one DCFM feature file per image into dir.
/// The catalog's token embeddings and prototypes are written alongside as
/// DCFM matrices and referenced from the manifest.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Accepts either the dataset directory or the manifest path itself.
Dataset load_dataset(const std::filesystem::path& path);

/// CSV label export: header row of class names, one row per image id.
void save_labels_csv(const LabelMatrix& labels,
                     const std::vector<std::string>& class_names,
                     const std::vector<std::string>& image_ids,
                     const std::filesystem::path& path);

void save_split_json(const ZslSplit& split, const std::filesystem::path& path);
ZslSplit load_split_json(const std::filesystem::path& path);

}  // namespace dualprompt
