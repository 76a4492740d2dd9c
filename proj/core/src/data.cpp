#include "dualprompt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dualprompt/io.hpp"

namespace dualprompt {

using nlohmann::json;

void ClassCatalog::validate() const {
  if (names.empty()) throw std::invalid_argument("catalog has no classes");
  std::set<std::string> uniq(names.begin(), names.end());
  if (uniq.size() != names.size() || uniq.count(""))
    throw std::invalid_argument("class names must be unique and non-empty");
  if (token_embeddings.rows() != Eigen::Index(names.size()))
    throw std::invalid_argument("token_embeddings count != class count");
  if (prototypes.size() > 0) {
    if (prototypes.rows() != token_embeddings.rows())
      throw std::invalid_argument("prototype count != class count");
    for (Eigen::Index m = 0; m < prototypes.rows(); ++m) {
      if (std::abs(prototypes.row(m).norm() - 1.0) > 1e-6)
        throw std::invalid_argument("prototype row is not unit norm");
    }
  }
}

int LabelMatrix::count_nonzero() const {
  int n = 0;
  for (auto v : values) n += (v != 0);
  return n;
}

void LabelMatrix::validate() const {
  if (values.size() != std::size_t(n_images) * n_classes)
    throw std::invalid_argument("label matrix size mismatch");
  for (auto v : values)
    if (v != 1 && v != -1 && v != 0)
      throw std::invalid_argument("label entries must be +1, -1 or 0");
}

Eigen::MatrixXd RegionFeatureMap::as_matrix() const {
  Eigen::MatrixXd m(regions(), d);
  for (int r = 0; r < regions(); ++r)
    for (int k = 0; k < d; ++k) m(r, k) = double(values[std::size_t(r) * d + k]);
  return m;
}

void RegionFeatureMap::validate() const {
  if (h < 1 || w < 1 || d < 1)
    throw std::invalid_argument("feature map dims must be >= 1");
  if (values.size() != std::size_t(h) * w * d)
    throw std::invalid_argument("feature map value count mismatch");
  for (float v : values)
    if (!std::isfinite(v))
      throw std::invalid_argument("feature map contains non-finite values");
}

ClassCatalog make_synthetic_catalog(int n_classes, int dim,
                                    std::uint64_t seed) {
  if (n_classes < 1 || dim < 1)
    throw std::invalid_argument("catalog needs n_classes >= 1, dim >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ClassCatalog cat;
  cat.prototypes.resize(n_classes, dim);
  for (int m = 0; m < n_classes; ++m) {
    Eigen::VectorXd v(dim);
    do {
      for (int k = 0; k < dim; ++k) v(k) = gauss(rng);
    } while (v.norm() < 1e-12);
    cat.prototypes.row(m) = v.transpose() / v.norm();
    cat.names.push_back("class_" + std::to_string(m));
  }
  cat.token_embeddings = cat.prototypes;
  cat.validate();
  return cat;
}

Dataset synth_dataset(const ClassCatalog& catalog, const SynthConfig& cfg) {
  catalog.validate();
  const int M = catalog.num_classes();
  const int D = catalog.dim();
  const int cells = cfg.grid_h * cfg.grid_w;
  if (cfg.n_images < 1) throw std::invalid_argument("need n_images >= 1");
  if (cfg.noise_sigma < 0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (cfg.labels_min < 1 || cfg.labels_min > cfg.labels_max)
    throw std::invalid_argument("need 1 <= labels_min <= labels_max");
  if (cfg.labels_max > M)
    throw std::invalid_argument("labels_max exceeds class count");
  if (cfg.labels_max > cells) {
    std::ostringstream ss;
    ss << "grid " << cfg.grid_h << "x" << cfg.grid_w << " has only " << cells
       << " cells, cannot host " << cfg.labels_max << " distinct label cells";
    throw std::invalid_argument(ss.str());
  }
  if (catalog.prototypes.size() == 0)
    throw std::invalid_argument("synthetic generation needs class prototypes");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> n_labels(cfg.labels_min, cfg.labels_max);

  // Partial Fisher-Yates draw of k distinct values from [0, n).
  auto sample_distinct = [&rng](int n, int k) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<int> out;
    out.reserve(k);
    for (int j = 0; j < k; ++j) {
      std::uniform_int_distribution<int> pick(j, n - 1);
      std::swap(pool[j], pool[pick(rng)]);
      out.push_back(pool[j]);
    }
    return out;
  };

  Dataset ds;
  ds.catalog = catalog;
  ds.labels = LabelMatrix(cfg.n_images, M);
  std::fill(ds.labels.values.begin(), ds.labels.values.end(), std::int8_t(-1));
  ds.images.reserve(cfg.n_images);

  for (int i = 0; i < cfg.n_images; ++i) {
    const int k = n_labels(rng);
    const std::vector<int> classes = sample_distinct(M, k);
    const std::vector<int> host_cells = sample_distinct(cells, k);

    RegionFeatureMap fm;
    fm.h = cfg.grid_h;
    fm.w = cfg.grid_w;
    fm.d = D;
    fm.values.resize(std::size_t(cells) * D);
    for (auto& v : fm.values) v = float(cfg.noise_sigma * gauss(rng));
    for (int j = 0; j < k; ++j) {
      ds.labels.at(i, classes[j]) = 1;
      float* cell = fm.values.data() + std::size_t(host_cells[j]) * D;
      for (int t = 0; t < D; ++t)
        cell[t] = float(catalog.prototypes(classes[j], t) +
                        cfg.noise_sigma * gauss(rng));
    }

    char id[32];
    std::snprintf(id, sizeof(id), "img_%05d", i);
    ds.images.push_back({id, std::move(fm)});
  }
  return ds;
}

LabelMatrix mask_labels(const LabelMatrix& full, double keep_fraction,
                        std::uint64_t seed) {
  full.validate();
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw std::invalid_argument("keep_fraction must be in (0, 1]");
  for (auto v : full.values)
    if (v == 0)
      throw std::invalid_argument("mask_labels input must be fully annotated");

  const std::size_t total = full.values.size();
  const std::size_t keep =
      std::size_t(std::llround(keep_fraction * double(total)));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  LabelMatrix out(full.n_images, full.n_classes);
  for (std::size_t j = 0; j < keep; ++j) out.values[idx[j]] = full.values[idx[j]];
  return out;
}

ZslSplit make_zsl_split(const ClassCatalog& catalog,
                        const std::set<int>& unseen_indices) {
  const int M = catalog.num_classes();
  if (unseen_indices.empty())
    throw std::invalid_argument("unseen set must be non-empty");
  for (int m : unseen_indices)
    if (m < 0 || m >= M)
      throw std::invalid_argument("unseen index out of range");
  if (int(unseen_indices.size()) == M)
    throw std::invalid_argument("unseen set must be a proper subset");
  ZslSplit split;
  split.unseen = unseen_indices;
  for (int m = 0; m < M; ++m)
    if (!unseen_indices.count(m)) split.seen.insert(m);
  return split;
}

LabelMatrix restrict_labels_to_seen(const LabelMatrix& labels,
                                    const ZslSplit& split) {
  labels.validate();
  LabelMatrix out = labels;
  for (int i = 0; i < out.n_images; ++i)
    for (int m : split.unseen) {
      if (m >= out.n_classes)
        throw std::invalid_argument("split index exceeds label matrix width");
      out.at(i, m) = 0;
    }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  io::write_matrix_dcfm(dir / "class_embeddings.dcfm",
                        ds.catalog.token_embeddings);
  if (ds.catalog.prototypes.size() > 0)
    io::write_matrix_dcfm(dir / "class_prototypes.dcfm", ds.catalog.prototypes);

  json manifest;
  manifest["classes"] = ds.catalog.names;
  manifest["class_embeddings"] = "class_embeddings.dcfm";
  if (ds.catalog.prototypes.size() > 0)
    manifest["class_prototypes"] = "class_prototypes.dcfm";
  manifest["images"] = json::array();
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& img = ds.images[i];
    const std::string rel = "features/" + img.id + ".dcfm";
    io::write_dcfm(dir / rel, std::uint32_t(img.feature_map.h),
                   std::uint32_t(img.feature_map.w),
                   std::uint32_t(img.feature_map.d), img.feature_map.values);
    json rec;
    rec["id"] = img.id;
    rec["feature_file"] = rel;
    std::vector<int> labels(ds.labels.n_classes);
    for (int m = 0; m < ds.labels.n_classes; ++m)
      labels[m] = ds.labels.at(int(i), m);
    rec["labels"] = labels;
    manifest["images"].push_back(rec);
  }
  io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path manifest_path =
      fs::is_directory(path) ? path / "manifest.json" : path;
  const fs::path dir = manifest_path.parent_path();
  json manifest = json::parse(io::read_text_file(manifest_path));

  Dataset ds;
  ds.catalog.names = manifest.at("classes").get<std::vector<std::string>>();
  ds.catalog.token_embeddings =
      io::read_matrix_dcfm(dir / manifest.at("class_embeddings").get<std::string>());
  if (manifest.contains("class_prototypes"))
    ds.catalog.prototypes =
        io::read_matrix_dcfm(dir / manifest.at("class_prototypes").get<std::string>());
  ds.catalog.validate();

  const auto& images = manifest.at("images");
  const int M = ds.catalog.num_classes();
  ds.labels = LabelMatrix(int(images.size()), M);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& rec = images[i];
    ImageRecord img;
    img.id = rec.at("id").get<std::string>();
    const io::DcfmFile f =
        io::read_dcfm(dir / rec.at("feature_file").get<std::string>());
    img.feature_map.h = int(f.h);
    img.feature_map.w = int(f.w);
    img.feature_map.d = int(f.d);
    img.feature_map.values = f.values;
    const auto labels = rec.at("labels").get<std::vector<int>>();
    if (int(labels.size()) != M)
      throw std::runtime_error("label row length mismatch for image " + img.id);
    for (int m = 0; m < M; ++m) ds.labels.at(int(i), m) = std::int8_t(labels[m]);
    ds.images.push_back(std::move(img));
  }
  ds.labels.validate();
  return ds;
}

void save_labels_csv(const LabelMatrix& labels,
                     const std::vector<std::string>& class_names,
                     const std::vector<std::string>& image_ids,
                     const std::filesystem::path& path) {
  if (int(class_names.size()) != labels.n_classes ||
      int(image_ids.size()) != labels.n_images)
    throw std::invalid_argument("labels csv: name/id counts mismatch");
  std::ostringstream ss;
  ss << "id";
  for (const auto& c : class_names) ss << "," << c;
  ss << "\n";
  for (int i = 0; i < labels.n_images; ++i) {
    ss << image_ids[i];
    for (int m = 0; m < labels.n_classes; ++m) ss << "," << int(labels.at(i, m));
    ss << "\n";
  }
  io::write_text_file(path, ss.str());
}

void save_split_json(const ZslSplit& split, const std::filesystem::path& path) {
  json j;
  j["seen"] = std::vector<int>(split.seen.begin(), split.seen.end());
  j["unseen"] = std::vector<int>(split.unseen.begin(), split.unseen.end());
  io::write_text_file(path, j.dump(2) + "\n");
}

ZslSplit load_split_json(const std::filesystem::path& path) {
  json j = json::parse(io::read_text_file(path));
  ZslSplit s;
  for (int m : j.at("seen").get<std::vector<int>>()) s.seen.insert(m);
  for (int m : j.at("unseen").get<std::vector<int>>()) s.unseen.insert(m);
  if (s.seen.empty() || s.unseen.empty())
    throw std::runtime_error("split file must list seen and unseen classes");
  return s;
}

}  // namespace dualprompt
