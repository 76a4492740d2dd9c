#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dualprompt/data.hpp"

namespace dualprompt {

struct TextEncoderParams {
  Eigen::MatrixXd w_t;  // D_t x D, frozen
};

struct VisualProjectionParams {
  Eigen::MatrixXd w_v;     // D_emb x D_v, the v(.) embedding
  Eigen::MatrixXd w_proj;  // D_t x D_emb, the visual-to-text projection
};

struct AttnPoolParams {
  Eigen::MatrixXd w_q;  // D_emb x D_v
  Eigen::MatrixXd w_k;  // D_emb x D_v
  double scale = 1.0;   // softmax temperature C, > 0
};

enum class EncoderMode { aligned, random_frozen };

struct EncoderDims {
  int d_token = 64;  // prompt/token embedding dimension D
  int d_v = 64;      // region feature dimension
  int d_emb = 64;    // intermediate embedding dimension
  int d_t = 64;      // text-space dimension
};

/// A frozen toy encoder stack. "aligned" mode uses identity maps (requires
/// all dims equal); "random_frozen" draws seeded Gaussian matrices once.
struct EncoderSet {
  EncoderMode mode = EncoderMode::aligned;
  EncoderDims dims;
  TextEncoderParams text;
  VisualProjectionParams visual;
  AttnPoolParams attn;

  /// Toy encoders always provide exact input gradients for encode_text.
  bool supports_gradients() const { return true; }
};

EncoderSet make_encoders(EncoderMode mode, const EncoderDims& dims,
                         std::uint64_t seed);

/// Text feature plus the pre-normalization magnitude needed for backprop.
struct TextEncoding {
  Eigen::VectorXd feature;  // unit norm D_t vector
  double pre_norm = 0.0;    // ||W_t * mean(tokens)|| before normalization
  int n_tokens = 0;
};

/// normalize(W_t * mean over token rows). Throws on a pre-normalization
/// zero vector.
TextEncoding encode_text_detailed(const Eigen::MatrixXd& tokens,
                                  const TextEncoderParams& params);
Eigen::VectorXd encode_text(const Eigen::MatrixXd& tokens,
                            const TextEncoderParams& params);

/// Gradient of encode_text output w.r.t. any single token row, applied to
/// an upstream gradient on the unit feature. Mean pooling makes the
/// per-row gradient identical across rows.
Eigen::VectorXd encode_text_token_grad(const TextEncoderParams& params,
                                       const TextEncoding& enc,
                                       const Eigen::VectorXd& grad_feature);

/// Region projection: row i = W_proj * (W_v * x_i), row-major over (H, W).
Eigen::MatrixXd project_regions(const RegionFeatureMap& fm,
                                const VisualProjectionParams& params);

/// Attention-pool baseline: softmax(q(mean) . k(x_i) / C) weighted sum of
/// projected region features.
Eigen::VectorXd attn_pool(const RegionFeatureMap& fm,
                          const VisualProjectionParams& vp,
                          const AttnPoolParams& ap);

/// Attention-pool weights alone (sum to 1).
Eigen::VectorXd attn_pool_weights(const RegionFeatureMap& fm,
                                  const AttnPoolParams& ap);

/// SHA-256 over all encoder parameter bytes; the frozen contract is
/// asserted by comparing digests before and after training.
std::string encoder_digest(const EncoderSet& enc);

/// Parameter dump: one DCFM file per matrix plus a JSON index naming each
/// matrix and its shape.
void save_encoder_dump(const EncoderSet& enc, const std::filesystem::path& dir);
EncoderSet load_encoder_dump(const std::filesystem::path& dir);

}  // namespace dualprompt
