#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace dualprompt {

enum class Aggregation { softmax_weighted, average, max };

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

struct ClassifierConfig {
  double tau = 0.01;
  Aggregation aggregation = Aggregation::softmax_weighted;
  double spatial_temp = 1.0;

  void validate() const;
};

/// Per-region cosine similarities against the positive and negative text
/// features, R regions x M classes.
struct RegionLogits {
  Eigen::MatrixXd pos;  // S+_{i,m}
  Eigen::MatrixXd neg;  // S-_{i,m}
};

struct ScorePair {
  Eigen::VectorXd s_pos;  // S+_m
  Eigen::VectorXd s_neg;  // S-_m
  Eigen::VectorXd p;      // class probabilities, entries in (0,1)
};

/// Cosine similarity of every projected region row against every class
/// text feature. Rejects zero-norm rows.
RegionLogits region_logits(const Eigen::MatrixXd& f_v,
                           const Eigen::MatrixXd& f_t_pos,
                           const Eigen::MatrixXd& f_t_neg);

/// Aggregates per-region logits into per-class (S+_m, S-_m). In
/// softmax_weighted mode the weights are derived from the positive logits
/// and reused for the negative side.
void aggregate(const RegionLogits& rl, const ClassifierConfig& cfg,
               Eigen::VectorXd& s_pos, Eigen::VectorXd& s_neg);

/// Spatial softmax weights for one class (softmax_weighted mode only).
Eigen::VectorXd aggregation_weights(const Eigen::VectorXd& pos_column,
                                    double spatial_temp);

/// p = 1 / (1 + exp((S- - S+)/tau)), the stable form of the two-way softmax.
double class_probability(double s_pos, double s_neg, double tau);

ScorePair score_pair(const RegionLogits& rl, const ClassifierConfig& cfg);

/// +1 iff S+_m > S-_m; ties predict -1.
Eigen::VectorXi predict_labels(const ScorePair& sp);

/// Per-class spatial attention map: softmax weights reshaped to H x W.
Eigen::MatrixXd export_attention_map(const RegionLogits& rl,
                                     const ClassifierConfig& cfg,
                                     int class_index, int h, int w);

void save_attention_csv(const Eigen::MatrixXd& grid,
                        const std::filesystem::path& path);
/// 8-bit PGM with weights linearly rescaled to 0..255.
void save_attention_pgm(const Eigen::MatrixXd& grid,
                        const std::filesystem::path& path);

}  // namespace dualprompt
