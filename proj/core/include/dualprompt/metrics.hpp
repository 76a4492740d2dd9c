#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualprompt/data.hpp"
#include "dualprompt/encoders.hpp"
#include "dualprompt/prompts.hpp"
#include "dualprompt/scoring.hpp"

namespace dualprompt {

enum class EvalKind { partial_label, zsl, gzsl };

std::string to_string(EvalKind k);
EvalKind eval_kind_from_string(const std::string& s);

struct EvalMode {
  EvalKind kind = EvalKind::partial_label;
  std::vector<int> topk = {3};
  std::optional<ZslSplit> split;  // required for zsl / gzsl

  void validate() const;
};

struct TopkResult {
  int k = 0;
  double precision = 0, recall = 0, f1 = 0;
};

struct ThresholdedMetrics {
  double cp = 0, cr = 0, cf1 = 0;  // per-class means
  double op = 0, orr = 0, of1 = 0;  // pooled totals
};

struct MetricsReport {
  double map = 0;
  ThresholdedMetrics thresholded;
  std::vector<TopkResult> topk;
  std::vector<int> class_indices;     // evaluated class subset, ascending
  std::vector<double> per_class_ap;   // aligned with class_indices; NaN when excluded
  std::vector<int> excluded_classes;  // classes with no positives (no AP)

  std::string to_json() const;
  /// One flat CSV row; `key` labels the run (e.g. the swept variable value).
  std::string to_csv_row(const std::string& key) const;
  static std::string csv_header();
};

/// AP by "precision at each positive's rank, averaged"; ties in the score
/// ranking break by ascending item index. Throws without any positive.
double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels);

/// Thresholded P/R/F1; truth cells with 0 are excluded from counting.
/// Classes with no known positives are skipped in the CR mean.
ThresholdedMetrics classwise_overall_metrics(const LabelMatrix& predictions,
                                             const LabelMatrix& truth);

/// Top-K over each image's probability row; ties pick the lower class
/// index. Truth 0-cells count as not-positive.
TopkResult topk_metrics(const Eigen::MatrixXd& probabilities,
                        const LabelMatrix& truth, int k);

MetricsReport evaluate(const PromptBank& bank, const ClassCatalog& catalog,
                       const EncoderSet& enc, const Dataset& dataset,
                       const EvalMode& mode, const ClassifierConfig& cls_cfg);

}  // namespace dualprompt
