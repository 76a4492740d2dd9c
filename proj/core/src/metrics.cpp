#include "dualprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dualprompt/trainer.hpp"

namespace dualprompt {

using nlohmann::json;

std::string to_string(EvalKind k) {
  switch (k) {
    case EvalKind::partial_label: return "partial_label";
    case EvalKind::zsl: return "zsl";
    case EvalKind::gzsl: return "gzsl";
  }
  throw std::logic_error("unreachable");
}

EvalKind eval_kind_from_string(const std::string& s) {
  if (s == "partial_label" || s == "partial") return EvalKind::partial_label;
  if (s == "zsl") return EvalKind::zsl;
  if (s == "gzsl") return EvalKind::gzsl;
  throw std::invalid_argument("unknown eval mode: " + s);
}

void EvalMode::validate() const {
  for (int k : topk)
    if (k < 1) throw std::invalid_argument("topk entries must be >= 1");
  if ((kind == EvalKind::zsl || kind == EvalKind::gzsl) && !split)
    throw std::invalid_argument("zsl/gzsl evaluation requires a class split");
}

namespace {
double f1_of(double p, double r) {
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}
double ratio(std::int64_t num, std::int64_t den) {
  return den > 0 ? double(num) / double(den) : 0.0;
}
}  // namespace

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores/labels size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  std::int64_t positives_seen = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] == 1) {
      ++positives_seen;
      sum += double(positives_seen) / double(rank + 1);
    }
  }
  if (positives_seen == 0)
    throw std::invalid_argument("average precision undefined without positives");
  return sum / double(positives_seen);
}

ThresholdedMetrics classwise_overall_metrics(const LabelMatrix& predictions,
                                             const LabelMatrix& truth) {
  if (predictions.n_images != truth.n_images ||
      predictions.n_classes != truth.n_classes)
    throw std::invalid_argument("prediction/truth shape mismatch");

  std::int64_t tp_total = 0, fp_total = 0, fn_total = 0;
  double cp_sum = 0, cr_sum = 0;
  int cr_classes = 0;
  for (int m = 0; m < truth.n_classes; ++m) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < truth.n_images; ++i) {
      const int t = truth.at(i, m);
      if (t == 0) continue;
      const int pr = predictions.at(i, m);
      if (pr == 1 && t == 1) ++tp;
      else if (pr == 1 && t == -1) ++fp;
      else if (pr == -1 && t == 1) ++fn;
    }
    tp_total += tp;
    fp_total += fp;
    fn_total += fn;
    cp_sum += ratio(tp, tp + fp);
    if (tp + fn > 0) {  // classes without known positives skip the CR mean
      cr_sum += ratio(tp, tp + fn);
      ++cr_classes;
    }
  }

  ThresholdedMetrics out;
  out.cp = cp_sum / double(truth.n_classes);
  out.cr = cr_classes > 0 ? cr_sum / double(cr_classes) : 0.0;
  out.cf1 = f1_of(out.cp, out.cr);
  out.op = ratio(tp_total, tp_total + fp_total);
  out.orr = ratio(tp_total, tp_total + fn_total);
  out.of1 = f1_of(out.op, out.orr);
  return out;
}

TopkResult topk_metrics(const Eigen::MatrixXd& probabilities,
                        const LabelMatrix& truth, int k) {
  const int n = int(probabilities.rows());
  const int m = int(probabilities.cols());
  if (n != truth.n_images || m != truth.n_classes)
    throw std::invalid_argument("probabilities/truth shape mismatch");
  if (k < 1 || k > m) throw std::invalid_argument("K must lie in [1, M]");

  std::int64_t hits = 0, positives = 0;
  std::vector<int> idx(m);
  for (int i = 0; i < n; ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    // Stable partial sort keeps the lower class index on ties.
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return probabilities(i, a) > probabilities(i, b);
    });
    for (int j = 0; j < k; ++j)
      if (truth.at(i, idx[j]) == 1) ++hits;
    for (int c = 0; c < m; ++c)
      if (truth.at(i, c) == 1) ++positives;
  }

  TopkResult out;
  out.k = k;
  out.precision = ratio(hits, std::int64_t(k) * n);
  out.recall = ratio(hits, positives);
  out.f1 = f1_of(out.precision, out.recall);
  return out;
}

MetricsReport evaluate(const PromptBank& bank, const ClassCatalog& catalog,
                       const EncoderSet& enc, const Dataset& dataset,
                       const EvalMode& mode, const ClassifierConfig& cls_cfg) {
  mode.validate();
  cls_cfg.validate();
  bank.validate();
  if (mode.kind != EvalKind::partial_label &&
      bank.config.mode == PromptMode::class_specific)
    throw std::invalid_argument(
        "class_specific checkpoint cannot score unseen classes; zsl/gzsl "
        "evaluation needs a shared-mode checkpoint");

  std::vector<int> subset;
  if (mode.kind == EvalKind::zsl) {
    subset.assign(mode.split->unseen.begin(), mode.split->unseen.end());
  } else if (mode.kind == EvalKind::gzsl) {
    for (int c : mode.split->seen) subset.push_back(c);
    for (int c : mode.split->unseen) subset.push_back(c);
    std::sort(subset.begin(), subset.end());
  } else {
    subset.resize(catalog.num_classes());
    std::iota(subset.begin(), subset.end(), 0);
  }
  for (int c : subset)
    if (c < 0 || c >= catalog.num_classes())
      throw std::invalid_argument("split class index out of catalog range");

  const TextFeatures tf = compute_text_features(bank, catalog, enc);
  const int n = int(dataset.images.size());
  const int ms = int(subset.size());

  Eigen::MatrixXd probs(n, ms);
  LabelMatrix preds(n, ms), truth(n, ms);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd g =
        encode_image_regions(dataset.images[i].feature_map, enc);
    RegionLogits rl;
    rl.pos = g * tf.f_pos.transpose();
    rl.neg = g * tf.f_neg.transpose();
    const ScorePair sp = score_pair(rl, cls_cfg);
    const Eigen::VectorXi pred = predict_labels(sp);
    for (int j = 0; j < ms; ++j) {
      probs(i, j) = sp.p(subset[j]);
      preds.at(i, j) = std::int8_t(pred(subset[j]));
      truth.at(i, j) = dataset.labels.at(i, subset[j]);
    }
  }

  MetricsReport report;
  report.class_indices = subset;
  report.per_class_ap.assign(ms, std::nan(""));
  double ap_sum = 0;
  int ap_classes = 0;
  for (int j = 0; j < ms; ++j) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      if (truth.at(i, j) == 0) continue;
      scores.push_back(probs(i, j));
      labels.push_back(truth.at(i, j));
    }
    const bool has_positive =
        std::find(labels.begin(), labels.end(), 1) != labels.end();
    if (!has_positive) {
      report.excluded_classes.push_back(subset[j]);
      continue;
    }
    report.per_class_ap[j] = average_precision(scores, labels);
    ap_sum += report.per_class_ap[j];
    ++ap_classes;
  }
  report.map = ap_classes > 0 ? ap_sum / double(ap_classes) : 0.0;
  report.thresholded = classwise_overall_metrics(preds, truth);
  for (int k : mode.topk) {
    if (k > ms)
      throw std::invalid_argument("topk K exceeds evaluated class count");
    report.topk.push_back(topk_metrics(probs, truth, k));
  }
  return report;
}

std::string MetricsReport::to_json() const {
  json j;
  j["mAP"] = map;
  j["CP"] = thresholded.cp;
  j["CR"] = thresholded.cr;
  j["CF1"] = thresholded.cf1;
  j["OP"] = thresholded.op;
  j["OR"] = thresholded.orr;
  j["OF1"] = thresholded.of1;
  j["topk"] = json::array();
  for (const auto& t : topk)
    j["topk"].push_back({{"k", t.k},
                         {"precision", t.precision},
                         {"recall", t.recall},
                         {"f1", t.f1}});
  j["classes"] = class_indices;
  j["per_class_ap"] = json::array();
  for (double ap : per_class_ap) {
    if (std::isnan(ap)) j["per_class_ap"].push_back(nullptr);
    else j["per_class_ap"].push_back(ap);
  }
  j["excluded_classes"] = excluded_classes;
  return j.dump(2) + "\n";
}

std::string MetricsReport::csv_header() {
  return "key,mAP,CP,CR,CF1,OP,OR,OF1,topk";
}

std::string MetricsReport::to_csv_row(const std::string& key) const {
  std::ostringstream ss;
  ss.precision(10);
  ss << key << "," << map << "," << thresholded.cp << "," << thresholded.cr
     << "," << thresholded.cf1 << "," << thresholded.op << ","
     << thresholded.orr << "," << thresholded.of1 << ",";
  for (std::size_t i = 0; i < topk.size(); ++i) {
    if (i) ss << ";";
    ss << "k=" << topk[i].k << ":P=" << topk[i].precision
       << ":R=" << topk[i].recall << ":F1=" << topk[i].f1;
  }
  return ss.str();
}

}  // namespace dualprompt
