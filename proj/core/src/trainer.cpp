#include "dualprompt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "dualprompt/io.hpp"

namespace dualprompt {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr0 >= 0)) throw std::invalid_argument("lr0 must be >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("momentum must lie in [0, 1)");
  loss.validate();
  classifier.validate();
  prompt.validate();
}

void TrainHistory::save_csv(const std::filesystem::path& path) const {
  std::ostringstream ss;
  ss.precision(17);
  // Wall time stays out of the file so identical seeds write identical bytes.
  ss << "epoch,mean_loss,lr\n";
  for (std::size_t e = 0; e < mean_loss.size(); ++e)
    ss << e << "," << mean_loss[e] << "," << lr[e] << "\n";
  io::write_text_file(path, ss.str());
}

TextFeatures compute_text_features(const PromptBank& bank,
                                   const ClassCatalog& catalog,
                                   const EncoderSet& enc) {
  bank.validate();
  const int M = catalog.num_classes();
  if (bank.config.mode == PromptMode::class_specific && bank.n_classes != M)
    throw std::invalid_argument("bank class count does not match catalog");
  TextFeatures tf;
  tf.pos.reserve(M);
  tf.neg.reserve(M);
  tf.f_pos.resize(M, enc.text.w_t.rows());
  tf.f_neg.resize(M, enc.text.w_t.rows());
  for (int m = 0; m < M; ++m) {
    const PromptPair& pair = bank.pair_for_class(m);
    const Eigen::VectorXd token = catalog.token_embeddings.row(m).transpose();
    tf.pos.push_back(encode_text_detailed(
        assemble_prompt(pair, token, Polarity::positive), enc.text));
    tf.neg.push_back(encode_text_detailed(
        assemble_prompt(pair, token, Polarity::negative), enc.text));
    tf.f_pos.row(m) = tf.pos.back().feature.transpose();
    tf.f_neg.row(m) = tf.neg.back().feature.transpose();
  }
  return tf;
}

Eigen::MatrixXd encode_image_regions(const RegionFeatureMap& fm,
                                     const EncoderSet& enc) {
  Eigen::MatrixXd f_v = project_regions(fm, enc.visual);
  for (Eigen::Index r = 0; r < f_v.rows(); ++r) {
    const double n = f_v.row(r).norm();
    if (n < 1e-12)
      throw std::invalid_argument(
          "zero-norm projected region: cosine similarity undefined");
    f_v.row(r) /= n;
  }
  return f_v;
}

namespace {

struct CellGrads {
  // Accumulated dLoss/d(text feature) per class, M x D_t.
  Eigen::MatrixXd f_pos;
  Eigen::MatrixXd f_neg;
};

[[noreturn]] void abort_nonfinite(const char* stage, int batch_index) {
  json diag;
  diag["stage"] = stage;
  diag["batch_index"] = batch_index;
  diag["error"] = "non-finite value in forward pass";
  throw TrainAbortError(diag.dump());
}

// Forward pass over one batch; optionally accumulates gradients w.r.t. the
// per-class text features. Returns (loss sum over known cells, known count).
std::pair<double, std::int64_t> batch_forward(
    const TextFeatures& tf,
    const std::vector<const Eigen::MatrixXd*>& region_feats,
    const LabelMatrix& labels, const std::vector<int>& label_rows,
    const LossConfig& loss_cfg, const ClassifierConfig& cls_cfg,
    CellGrads* grads, int batch_index = -1) {
  const int M = int(tf.f_pos.rows());
  double loss_sum = 0.0;
  std::int64_t known = 0;

  for (std::size_t b = 0; b < region_feats.size(); ++b) {
    const Eigen::MatrixXd& g = *region_feats[b];  // R x D_t, unit rows
    const int row = label_rows[b];
    const Eigen::Index R = g.rows();

    // All classes at once; only known cells contribute.
    const Eigen::MatrixXd s_pos = g * tf.f_pos.transpose();  // R x M
    const Eigen::MatrixXd s_neg = g * tf.f_neg.transpose();
    if (!s_pos.allFinite() || !s_neg.allFinite())
      abort_nonfinite("region_logits", batch_index);

    for (int m = 0; m < M; ++m) {
      const int y = labels.at(row, m);
      if (y == 0) continue;
      ++known;

      double agg_pos = 0, agg_neg = 0;
      Eigen::VectorXd w;      // softmax weights (softmax_weighted only)
      Eigen::Index best = 0;  // argmax region (max only)
      switch (cls_cfg.aggregation) {
        case Aggregation::softmax_weighted:
          w = aggregation_weights(s_pos.col(m), cls_cfg.spatial_temp);
          agg_pos = w.dot(s_pos.col(m));
          agg_neg = w.dot(s_neg.col(m));
          break;
        case Aggregation::average:
          agg_pos = s_pos.col(m).mean();
          agg_neg = s_neg.col(m).mean();
          break;
        case Aggregation::max:
          s_pos.col(m).maxCoeff(&best);
          agg_pos = s_pos(best, m);
          agg_neg = s_neg(best, m);
          break;
      }

      // Guard against fp saturation at small tau; the loss needs p in (0,1).
      const double p = std::clamp(class_probability(agg_pos, agg_neg, cls_cfg.tau),
                                  1e-15, 1.0 - 1e-15);
      if (!std::isfinite(p)) abort_nonfinite("class_probability", batch_index);
      const double cell_loss = asl_loss(p, y, loss_cfg);
      if (!std::isfinite(cell_loss)) abort_nonfinite("asl_loss", batch_index);
      loss_sum += cell_loss;

      if (!grads) continue;
      const double dldp = asl_loss_dp(p, y, loss_cfg);
      const double gp = dldp * p * (1.0 - p) / cls_cfg.tau;  // dL/dS+_m
      const double gn = -gp;                                 // dL/dS-_m

      Eigen::VectorXd a(R), bvec(R);  // dL/ds_i+ and dL/ds_i-
      switch (cls_cfg.aggregation) {
        case Aggregation::softmax_weighted: {
          const double t = cls_cfg.spatial_temp;
          a = gp * (w.array() * (1.0 + (s_pos.col(m).array() - agg_pos) / t)) +
              gn * (w.array() * (s_neg.col(m).array() - agg_neg) / t);
          bvec = gn * w;
          break;
        }
        case Aggregation::average:
          a.setConstant(gp / double(R));
          bvec.setConstant(gn / double(R));
          break;
        case Aggregation::max:
          a.setZero();
          bvec.setZero();
          a(best) = gp;
          bvec(best) = gn;
          break;
      }
      grads->f_pos.row(m) += (g.transpose() * a).transpose();
      grads->f_neg.row(m) += (g.transpose() * bvec).transpose();
    }
  }
  return {loss_sum, known};
}

std::vector<PromptPair> zero_grads(const PromptBank& bank) {
  std::vector<PromptPair> g(bank.pairs.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i].pos_ctx = Eigen::MatrixXd::Zero(bank.config.n_ctx_pos, bank.config.dim);
    g[i].neg_ctx = Eigen::MatrixXd::Zero(bank.config.n_ctx_neg, bank.config.dim);
  }
  return g;
}

// Pushes accumulated text-feature gradients back through encode_text into
// the context rows (the class token receives no gradient).
void backprop_to_contexts(const PromptBank& bank, const EncoderSet& enc,
                          const TextFeatures& tf, const CellGrads& cell,
                          double scale, std::vector<PromptPair>& out) {
  const int M = int(tf.f_pos.rows());
  for (int m = 0; m < M; ++m) {
    const std::size_t pair_idx =
        bank.config.mode == PromptMode::class_specific ? std::size_t(m) : 0;
    const Eigen::VectorXd gf_pos = cell.f_pos.row(m).transpose() * scale;
    const Eigen::VectorXd gf_neg = cell.f_neg.row(m).transpose() * scale;
    if (!gf_pos.isZero(0.0)) {
      const Eigen::VectorXd row =
          encode_text_token_grad(enc.text, tf.pos[m], gf_pos);
      out[pair_idx].pos_ctx.rowwise() += row.transpose();
    }
    if (!gf_neg.isZero(0.0)) {
      const Eigen::VectorXd row =
          encode_text_token_grad(enc.text, tf.neg[m], gf_neg);
      out[pair_idx].neg_ctx.rowwise() += row.transpose();
    }
  }
}

std::vector<const Eigen::MatrixXd*> as_pointers(
    const std::vector<Eigen::MatrixXd>& v) {
  std::vector<const Eigen::MatrixXd*> out;
  out.reserve(v.size());
  for (const auto& m : v) out.push_back(&m);
  return out;
}

}  // namespace

double batch_loss(const PromptBank& bank, const ClassCatalog& catalog,
                  const EncoderSet& enc,
                  const std::vector<const ImageRecord*>& batch,
                  const LabelMatrix& labels, const std::vector<int>& label_rows,
                  const LossConfig& loss_cfg, const ClassifierConfig& cls_cfg) {
  if (batch.empty()) throw std::invalid_argument("batch must be non-empty");
  if (batch.size() != label_rows.size())
    throw std::invalid_argument("batch/label row count mismatch");
  cls_cfg.validate();
  loss_cfg.validate();
  const TextFeatures tf = compute_text_features(bank, catalog, enc);
  std::vector<Eigen::MatrixXd> feats;
  feats.reserve(batch.size());
  for (const auto* img : batch)
    feats.push_back(encode_image_regions(img->feature_map, enc));
  const auto [sum, known] = batch_forward(tf, as_pointers(feats), labels,
                                          label_rows, loss_cfg, cls_cfg, nullptr);
  if (known == 0) return 0.0;
  return loss_cfg.reduction == Reduction::mean_over_known ? sum / double(known)
                                                          : sum;
}

std::vector<PromptPair> loss_gradients(
    const PromptBank& bank, const ClassCatalog& catalog, const EncoderSet& enc,
    const std::vector<const ImageRecord*>& batch, const LabelMatrix& labels,
    const std::vector<int>& label_rows, const LossConfig& loss_cfg,
    const ClassifierConfig& cls_cfg) {
  if (batch.empty()) throw std::invalid_argument("batch must be non-empty");
  if (!enc.supports_gradients())
    throw std::runtime_error(
        "encoder backend does not provide gradients; training unsupported");
  cls_cfg.validate();
  loss_cfg.validate();
  const TextFeatures tf = compute_text_features(bank, catalog, enc);
  std::vector<Eigen::MatrixXd> feats;
  feats.reserve(batch.size());
  for (const auto* img : batch)
    feats.push_back(encode_image_regions(img->feature_map, enc));

  CellGrads cell;
  cell.f_pos = Eigen::MatrixXd::Zero(tf.f_pos.rows(), tf.f_pos.cols());
  cell.f_neg = Eigen::MatrixXd::Zero(tf.f_neg.rows(), tf.f_neg.cols());
  const auto [sum, known] = batch_forward(tf, as_pointers(feats), labels,
                                          label_rows, loss_cfg, cls_cfg, &cell);
  (void)sum;
  std::vector<PromptPair> grads = zero_grads(bank);
  if (known == 0) return grads;
  const double scale =
      loss_cfg.reduction == Reduction::mean_over_known ? 1.0 / double(known) : 1.0;
  backprop_to_contexts(bank, enc, tf, cell, scale, grads);
  return grads;
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr0) {
  if (total < 1) throw std::invalid_argument("total steps must be >= 1");
  if (step < 0 || step > total)
    throw std::invalid_argument("step must lie in [0, total]");
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total)));
}

TrainResult train(const TrainConfig& cfg, const Dataset& dataset,
                  const std::optional<ZslSplit>& split, const EncoderSet& enc) {
  cfg.validate();
  if (dataset.images.empty())
    throw std::invalid_argument("training dataset is empty");
  const std::string frozen_digest = encoder_digest(enc);

  const LabelMatrix labels =
      split ? restrict_labels_to_seen(dataset.labels, *split) : dataset.labels;

  TrainResult result;
  result.bank = init_prompts(cfg.prompt, dataset.catalog.num_classes(),
                             cfg.seed);

  // Frozen per-image region features.
  std::vector<Eigen::MatrixXd> feats;
  feats.reserve(dataset.images.size());
  for (const auto& img : dataset.images)
    feats.push_back(encode_image_regions(img.feature_map, enc));

  const int n = int(dataset.images.size());
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  std::vector<PromptPair> velocity;
  if (cfg.momentum > 0) velocity = zero_grads(result.bank);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::int64_t epoch_batches = 0;
    const double epoch_lr = cosine_lr(
        cfg.per_step_schedule ? step : std::int64_t(epoch) * steps_per_epoch,
        total_steps, cfg.lr0);

    for (int start = 0; start < n; start += cfg.batch_size, ++step) {
      const int end = std::min(n, start + cfg.batch_size);
      std::vector<const Eigen::MatrixXd*> batch_feats;
      std::vector<int> rows;
      for (int j = start; j < end; ++j) {
        batch_feats.push_back(&feats[order[j]]);
        rows.push_back(order[j]);
      }

      const TextFeatures tf =
          compute_text_features(result.bank, dataset.catalog, enc);
      CellGrads cell;
      cell.f_pos = Eigen::MatrixXd::Zero(tf.f_pos.rows(), tf.f_pos.cols());
      cell.f_neg = Eigen::MatrixXd::Zero(tf.f_neg.rows(), tf.f_neg.cols());
      const auto [sum, known] =
          batch_forward(tf, batch_feats, labels, rows, cfg.loss, cfg.classifier,
                        &cell, int(step));
      const double scale =
          known == 0 ? 0.0
          : cfg.loss.reduction == Reduction::mean_over_known
              ? 1.0 / double(known)
              : 1.0;
      epoch_loss += sum * scale;
      ++epoch_batches;

      std::vector<PromptPair> grads = zero_grads(result.bank);
      if (known > 0)
        backprop_to_contexts(result.bank, enc, tf, cell, scale, grads);

      const double lr = cosine_lr(
          cfg.per_step_schedule ? step : std::int64_t(epoch) * steps_per_epoch,
          total_steps, cfg.lr0);
      for (std::size_t i = 0; i < result.bank.pairs.size(); ++i) {
        if (cfg.momentum > 0) {
          velocity[i].pos_ctx =
              cfg.momentum * velocity[i].pos_ctx - lr * grads[i].pos_ctx;
          velocity[i].neg_ctx =
              cfg.momentum * velocity[i].neg_ctx - lr * grads[i].neg_ctx;
          result.bank.pairs[i].pos_ctx += velocity[i].pos_ctx;
          result.bank.pairs[i].neg_ctx += velocity[i].neg_ctx;
        } else {
          result.bank.pairs[i].pos_ctx -= lr * grads[i].pos_ctx;
          result.bank.pairs[i].neg_ctx -= lr * grads[i].neg_ctx;
        }
      }
    }

    const auto t1 = std::chrono::steady_clock::now();
    result.history.mean_loss.push_back(epoch_loss / double(epoch_batches));
    result.history.lr.push_back(epoch_lr);
    result.history.seconds.push_back(
        std::chrono::duration<double>(t1 - t0).count());
  }

  if (encoder_digest(enc) != frozen_digest)
    throw std::logic_error("frozen contract violated: encoder digest changed");
  return result;
}

}  // namespace dualprompt
