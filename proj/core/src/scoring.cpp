#include "dualprompt/scoring.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dualprompt/io.hpp"

namespace dualprompt {

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::softmax_weighted: return "softmax_weighted";
    case Aggregation::average: return "average";
    case Aggregation::max: return "max";
  }
  throw std::logic_error("unreachable");
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "softmax_weighted") return Aggregation::softmax_weighted;
  if (s == "average") return Aggregation::average;
  if (s == "max") return Aggregation::max;
  throw std::invalid_argument("unknown aggregation mode: " + s);
}

void ClassifierConfig::validate() const {
  if (!(tau > 0)) throw std::invalid_argument("tau must be > 0");
  if (!(spatial_temp > 0))
    throw std::invalid_argument("spatial_temp must be > 0");
}

namespace {
Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& m, const char* what) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n < 1e-12)
      throw std::invalid_argument(std::string("zero-norm row in ") + what +
                                  ": cosine similarity undefined");
    out.row(r) = m.row(r) / n;
  }
  return out;
}
}  // namespace

RegionLogits region_logits(const Eigen::MatrixXd& f_v,
                           const Eigen::MatrixXd& f_t_pos,
                           const Eigen::MatrixXd& f_t_neg) {
  if (f_t_pos.rows() != f_t_neg.rows() || f_t_pos.cols() != f_t_neg.cols())
    throw std::invalid_argument("positive/negative text feature shape mismatch");
  if (f_v.cols() != f_t_pos.cols())
    throw std::invalid_argument("visual/text feature dimension mismatch");
  const Eigen::MatrixXd gv = normalized_rows(f_v, "region features");
  const Eigen::MatrixXd gp = normalized_rows(f_t_pos, "positive text features");
  const Eigen::MatrixXd gn = normalized_rows(f_t_neg, "negative text features");
  RegionLogits rl;
  rl.pos = gv * gp.transpose();
  rl.neg = gv * gn.transpose();
  return rl;
}

Eigen::VectorXd aggregation_weights(const Eigen::VectorXd& pos_column,
                                    double spatial_temp) {
  if (pos_column.size() < 1)
    throw std::invalid_argument("aggregation over an empty region set");
  if (!(spatial_temp > 0))
    throw std::invalid_argument("spatial_temp must be > 0");
  Eigen::VectorXd z = pos_column / spatial_temp;
  const double mx = z.maxCoeff();
  Eigen::VectorXd w = (z.array() - mx).exp();
  return w / w.sum();
}

void aggregate(const RegionLogits& rl, const ClassifierConfig& cfg,
               Eigen::VectorXd& s_pos, Eigen::VectorXd& s_neg) {
  cfg.validate();
  const Eigen::Index R = rl.pos.rows();
  const Eigen::Index M = rl.pos.cols();
  if (R < 1) throw std::invalid_argument("aggregation over an empty region set");
  if (rl.neg.rows() != R || rl.neg.cols() != M)
    throw std::invalid_argument("region logit shape mismatch");
  s_pos.resize(M);
  s_neg.resize(M);
  switch (cfg.aggregation) {
    case Aggregation::softmax_weighted:
      for (Eigen::Index m = 0; m < M; ++m) {
        const Eigen::VectorXd w =
            aggregation_weights(rl.pos.col(m), cfg.spatial_temp);
        s_pos(m) = w.dot(rl.pos.col(m));
        s_neg(m) = w.dot(rl.neg.col(m));  // positive-derived weights
      }
      break;
    case Aggregation::average:
      s_pos = rl.pos.colwise().mean();
      s_neg = rl.neg.colwise().mean();
      break;
    case Aggregation::max:
      for (Eigen::Index m = 0; m < M; ++m) {
        Eigen::Index best = 0;
        rl.pos.col(m).maxCoeff(&best);
        s_pos(m) = rl.pos(best, m);
        s_neg(m) = rl.neg(best, m);
      }
      break;
  }
}

double class_probability(double s_pos, double s_neg, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("tau must be > 0");
  return 1.0 / (1.0 + std::exp((s_neg - s_pos) / tau));
}

ScorePair score_pair(const RegionLogits& rl, const ClassifierConfig& cfg) {
  ScorePair sp;
  aggregate(rl, cfg, sp.s_pos, sp.s_neg);
  sp.p.resize(sp.s_pos.size());
  for (Eigen::Index m = 0; m < sp.p.size(); ++m)
    sp.p(m) = class_probability(sp.s_pos(m), sp.s_neg(m), cfg.tau);
  return sp;
}

Eigen::VectorXi predict_labels(const ScorePair& sp) {
  Eigen::VectorXi out(sp.s_pos.size());
  for (Eigen::Index m = 0; m < out.size(); ++m)
    out(m) = sp.s_pos(m) > sp.s_neg(m) ? 1 : -1;
  return out;
}

Eigen::MatrixXd export_attention_map(const RegionLogits& rl,
                                     const ClassifierConfig& cfg,
                                     int class_index, int h, int w) {
  cfg.validate();
  if (cfg.aggregation != Aggregation::softmax_weighted)
    throw std::invalid_argument(
        "attention maps are defined for softmax_weighted aggregation only");
  if (class_index < 0 || class_index >= rl.pos.cols())
    throw std::invalid_argument("class index out of range");
  if (Eigen::Index(h) * w != rl.pos.rows())
    throw std::invalid_argument("grid shape does not match region count");
  const Eigen::VectorXd weights =
      aggregation_weights(rl.pos.col(class_index), cfg.spatial_temp);
  Eigen::MatrixXd grid(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) grid(r, c) = weights(Eigen::Index(r) * w + c);
  return grid;
}

void save_attention_csv(const Eigen::MatrixXd& grid,
                        const std::filesystem::path& path) {
  std::ostringstream ss;
  ss.precision(17);
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      if (c) ss << ",";
      ss << grid(r, c);
    }
    ss << "\n";
  }
  io::write_text_file(path, ss.str());
}

void save_attention_pgm(const Eigen::MatrixXd& grid,
                        const std::filesystem::path& path) {
  const double lo = grid.minCoeff();
  const double hi = grid.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  std::ostringstream ss;
  ss << "P5\n" << grid.cols() << " " << grid.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < grid.rows(); ++r)
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      const int v = int(std::lround((grid(r, c) - lo) / span * 255.0));
      ss.put(char(v));
    }
  io::write_text_file(path, ss.str());
}

}  // namespace dualprompt
