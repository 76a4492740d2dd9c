#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualprompt/data.hpp"
#include "dualprompt/encoders.hpp"
#include "dualprompt/loss.hpp"
#include "dualprompt/prompts.hpp"
#include "dualprompt/scoring.hpp"

namespace dualprompt {

struct TrainConfig {
  double lr0 = 0.002;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double momentum = 0.0;          // plain SGD by default
  bool per_step_schedule = true;  // cosine decay per step rather than per epoch
  LossConfig loss;
  ClassifierConfig classifier;
  PromptConfig prompt;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> mean_loss;
  std::vector<double> lr;
  std::vector<double> seconds;

  void save_csv(const std::filesystem::path& path) const;
};

/// Thrown when the forward pass produces a non-finite value; carries a
/// JSON diagnostic naming the stage.
struct TrainAbortError : std::runtime_error {
  explicit TrainAbortError(const std::string& diag_json)
      : std::runtime_error("training aborted: " + diag_json),
        diagnostic_json(diag_json) {}
  std::string diagnostic_json;
};

/// Positive/negative text features for every class under the current bank.
struct TextFeatures {
  std::vector<TextEncoding> pos;  // one per class
  std::vector<TextEncoding> neg;
  Eigen::MatrixXd f_pos;  // M x D_t, unit rows
  Eigen::MatrixXd f_neg;
};

TextFeatures compute_text_features(const PromptBank& bank,
                                   const ClassCatalog& catalog,
                                   const EncoderSet& enc);

/// Row-normalized projected region features for one image (R x D_t);
/// cosine against a unit text feature reduces to a dot product.
Eigen::MatrixXd encode_image_regions(const RegionFeatureMap& fm,
                                     const EncoderSet& enc);

/// ASL over every known (image, class) cell of the batch, reduced per
/// LossConfig. label_rows[i] indexes the LabelMatrix row for batch[i].
double batch_loss(const PromptBank& bank, const ClassCatalog& catalog,
                  const EncoderSet& enc,
                  const std::vector<const ImageRecord*>& batch,
                  const LabelMatrix& labels, const std::vector<int>& label_rows,
                  const LossConfig& loss_cfg, const ClassifierConfig& cls_cfg);

/// Exact analytic gradient of batch_loss w.r.t. every context entry.
/// Returned pairs mirror the bank's pair layout.
std::vector<PromptPair> loss_gradients(
    const PromptBank& bank, const ClassCatalog& catalog, const EncoderSet& enc,
    const std::vector<const ImageRecord*>& batch, const LabelMatrix& labels,
    const std::vector<int>& label_rows, const LossConfig& loss_cfg,
    const ClassifierConfig& cls_cfg);

/// lr0 * 0.5 * (1 + cos(pi * t / T)).
double cosine_lr(std::int64_t step, std::int64_t total, double lr0);

struct TrainResult {
  PromptBank bank;
  TrainHistory history;
};

/// SGD over prompt contexts only. Labels are taken from the dataset; when
/// a split is given they are first restricted to seen classes.
TrainResult train(const TrainConfig& cfg, const Dataset& dataset,
                  const std::optional<ZslSplit>& split, const EncoderSet& enc);

}  // namespace dualprompt
