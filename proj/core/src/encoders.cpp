#include "dualprompt/encoders.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <stdexcept>

#include "dualprompt/io.hpp"

namespace dualprompt {

using nlohmann::json;

namespace {

Eigen::MatrixXd seeded_gaussian(int rows, int cols, std::mt19937_64& rng,
                                double sigma) {
  std::normal_distribution<double> gauss(0.0, sigma);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = gauss(rng);
  return m;
}

}  // namespace

EncoderSet make_encoders(EncoderMode mode, const EncoderDims& dims,
                         std::uint64_t seed) {
  if (dims.d_token < 1 || dims.d_v < 1 || dims.d_emb < 1 || dims.d_t < 1)
    throw std::invalid_argument("encoder dims must be >= 1");
  EncoderSet enc;
  enc.mode = mode;
  enc.dims = dims;
  enc.attn.scale = std::sqrt(double(dims.d_emb));
  if (mode == EncoderMode::aligned) {
    if (dims.d_token != dims.d_v || dims.d_v != dims.d_emb ||
        dims.d_emb != dims.d_t)
      throw std::invalid_argument(
          "aligned mode requires D == D_v == D_emb == D_t");
    enc.text.w_t = Eigen::MatrixXd::Identity(dims.d_t, dims.d_token);
    enc.visual.w_v = Eigen::MatrixXd::Identity(dims.d_emb, dims.d_v);
    enc.visual.w_proj = Eigen::MatrixXd::Identity(dims.d_t, dims.d_emb);
    enc.attn.w_q = Eigen::MatrixXd::Identity(dims.d_emb, dims.d_v);
    enc.attn.w_k = Eigen::MatrixXd::Identity(dims.d_emb, dims.d_v);
  } else {
    std::mt19937_64 rng(seed);
    const double s_t = 1.0 / std::sqrt(double(dims.d_token));
    const double s_v = 1.0 / std::sqrt(double(dims.d_v));
    const double s_e = 1.0 / std::sqrt(double(dims.d_emb));
    enc.text.w_t = seeded_gaussian(dims.d_t, dims.d_token, rng, s_t);
    enc.visual.w_v = seeded_gaussian(dims.d_emb, dims.d_v, rng, s_v);
    enc.visual.w_proj = seeded_gaussian(dims.d_t, dims.d_emb, rng, s_e);
    enc.attn.w_q = seeded_gaussian(dims.d_emb, dims.d_v, rng, s_v);
    enc.attn.w_k = seeded_gaussian(dims.d_emb, dims.d_v, rng, s_v);
  }
  return enc;
}

TextEncoding encode_text_detailed(const Eigen::MatrixXd& tokens,
                                  const TextEncoderParams& params) {
  if (tokens.rows() < 1)
    throw std::invalid_argument("encode_text needs at least one token");
  if (tokens.cols() != params.w_t.cols())
    throw std::invalid_argument("token dimension mismatch with text encoder");
  const Eigen::VectorXd mean = tokens.colwise().mean().transpose();
  const Eigen::VectorXd u = params.w_t * mean;
  const double norm = u.norm();
  if (norm < 1e-12)
    throw std::invalid_argument(
        "encode_text: degenerate input, zero vector before normalization");
  TextEncoding enc;
  enc.feature = u / norm;
  enc.pre_norm = norm;
  enc.n_tokens = int(tokens.rows());
  return enc;
}

Eigen::VectorXd encode_text(const Eigen::MatrixXd& tokens,
                            const TextEncoderParams& params) {
  return encode_text_detailed(tokens, params).feature;
}

Eigen::VectorXd encode_text_token_grad(const TextEncoderParams& params,
                                       const TextEncoding& enc,
                                       const Eigen::VectorXd& grad_feature) {
  // d(u/|u|)/du = (I - f f^T)/|u|; mean pooling contributes 1/L per row.
  const Eigen::VectorXd tangent =
      (grad_feature - enc.feature * enc.feature.dot(grad_feature)) /
      enc.pre_norm;
  return params.w_t.transpose() * tangent / double(enc.n_tokens);
}

Eigen::MatrixXd project_regions(const RegionFeatureMap& fm,
                                const VisualProjectionParams& params) {
  fm.validate();
  if (fm.d != params.w_v.cols())
    throw std::invalid_argument("feature map depth mismatch with W_v");
  if (params.w_v.rows() != params.w_proj.cols())
    throw std::invalid_argument("W_v / W_proj dimension mismatch");
  const Eigen::MatrixXd x = fm.as_matrix();  // R x D_v
  return x * params.w_v.transpose() * params.w_proj.transpose();
}

Eigen::VectorXd attn_pool_weights(const RegionFeatureMap& fm,
                                  const AttnPoolParams& ap) {
  fm.validate();
  if (fm.d != ap.w_q.cols() || fm.d != ap.w_k.cols())
    throw std::invalid_argument("feature map depth mismatch with q/k maps");
  if (!(ap.scale > 0)) throw std::invalid_argument("attention scale must be > 0");
  const Eigen::MatrixXd x = fm.as_matrix();
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::VectorXd q = ap.w_q * mean;
  Eigen::VectorXd logits = (x * ap.w_k.transpose()) * q / ap.scale;
  const double mx = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - mx).exp();
  return w / w.sum();
}

Eigen::VectorXd attn_pool(const RegionFeatureMap& fm,
                          const VisualProjectionParams& vp,
                          const AttnPoolParams& ap) {
  const Eigen::VectorXd w = attn_pool_weights(fm, ap);
  const Eigen::MatrixXd projected = project_regions(fm, vp);  // R x D_t
  return projected.transpose() * w;
}

std::string encoder_digest(const EncoderSet& enc) {
  std::string bytes;
  auto append = [&bytes](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        bytes.append(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  };
  append(enc.text.w_t);
  append(enc.visual.w_v);
  append(enc.visual.w_proj);
  append(enc.attn.w_q);
  append(enc.attn.w_k);
  bytes.append(reinterpret_cast<const char*>(&enc.attn.scale),
               sizeof(enc.attn.scale));
  return io::sha256_hex(bytes);
}

namespace {
struct NamedMatrix {
  const char* name;
  const Eigen::MatrixXd* m;
};
}  // namespace

void save_encoder_dump(const EncoderSet& enc,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const NamedMatrix mats[] = {{"w_t", &enc.text.w_t},
                              {"w_v", &enc.visual.w_v},
                              {"w_proj", &enc.visual.w_proj},
                              {"w_q", &enc.attn.w_q},
                              {"w_k", &enc.attn.w_k}};
  json index;
  index["mode"] = enc.mode == EncoderMode::aligned ? "aligned" : "random_frozen";
  index["scale"] = enc.attn.scale;
  index["dims"] = {{"d_token", enc.dims.d_token},
                   {"d_v", enc.dims.d_v},
                   {"d_emb", enc.dims.d_emb},
                   {"d_t", enc.dims.d_t}};
  index["matrices"] = json::array();
  for (const auto& nm : mats) {
    const std::string file = std::string(nm.name) + ".dcfm";
    io::write_matrix_dcfm(dir / file, *nm.m);
    index["matrices"].push_back({{"name", nm.name},
                                 {"file", file},
                                 {"rows", nm.m->rows()},
                                 {"cols", nm.m->cols()}});
  }
  io::write_text_file(dir / "index.json", index.dump(2) + "\n");
}

EncoderSet load_encoder_dump(const std::filesystem::path& dir) {
  const json index = json::parse(io::read_text_file(dir / "index.json"));
  EncoderSet enc;
  enc.mode = index.at("mode").get<std::string>() == "aligned"
                 ? EncoderMode::aligned
                 : EncoderMode::random_frozen;
  enc.attn.scale = index.at("scale").get<double>();
  enc.dims.d_token = index.at("dims").at("d_token").get<int>();
  enc.dims.d_v = index.at("dims").at("d_v").get<int>();
  enc.dims.d_emb = index.at("dims").at("d_emb").get<int>();
  enc.dims.d_t = index.at("dims").at("d_t").get<int>();
  for (const auto& rec : index.at("matrices")) {
    const std::string name = rec.at("name").get<std::string>();
    Eigen::MatrixXd m = io::read_matrix_dcfm(dir / rec.at("file").get<std::string>());
    if (m.rows() != rec.at("rows").get<Eigen::Index>() ||
        m.cols() != rec.at("cols").get<Eigen::Index>())
      throw std::runtime_error("encoder dump shape mismatch for " + name);
    if (name == "w_t") enc.text.w_t = std::move(m);
    else if (name == "w_v") enc.visual.w_v = std::move(m);
    else if (name == "w_proj") enc.visual.w_proj = std::move(m);
    else if (name == "w_q") enc.attn.w_q = std::move(m);
    else if (name == "w_k") enc.attn.w_k = std::move(m);
    else throw std::runtime_error("unknown matrix in encoder dump: " + name);
  }
  return enc;
}

}  // namespace dualprompt
