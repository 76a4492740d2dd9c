#include "dualprompt/prompts.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "dualprompt/io.hpp"

namespace dualprompt {

std::string to_string(PromptMode mode) {
  return mode == PromptMode::shared ? "shared" : "class_specific";
}

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "shared") return PromptMode::shared;
  if (s == "class_specific") return PromptMode::class_specific;
  throw std::invalid_argument("unknown prompt mode: " + s);
}

void PromptConfig::validate() const {
  if (n_ctx_pos < 1 || n_ctx_neg < 1 || dim < 1)
    throw std::invalid_argument("prompt config needs N+ >= 1, N- >= 1, D >= 1");
  if (!(init_sigma > 0))
    throw std::invalid_argument("init_sigma must be > 0");
}

std::size_t PromptBank::parameter_count() const {
  return std::size_t(config.n_ctx_pos + config.n_ctx_neg) * config.dim *
         pairs.size();
}

void PromptBank::validate() const {
  config.validate();
  const std::size_t expect =
      config.mode == PromptMode::class_specific ? std::size_t(n_classes) : 1;
  if (pairs.size() != expect)
    throw std::invalid_argument("prompt bank pair count mismatch");
  for (const auto& p : pairs) {
    if (p.pos_ctx.rows() != config.n_ctx_pos || p.pos_ctx.cols() != config.dim ||
        p.neg_ctx.rows() != config.n_ctx_neg || p.neg_ctx.cols() != config.dim)
      throw std::invalid_argument("prompt pair shape mismatch with config");
    if (!p.pos_ctx.allFinite() || !p.neg_ctx.allFinite())
      throw std::invalid_argument("prompt contexts contain non-finite values");
  }
}

PromptBank init_prompts(const PromptConfig& config, int n_classes,
                        std::uint64_t seed) {
  config.validate();
  if (n_classes < 1) throw std::invalid_argument("need n_classes >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, config.init_sigma);

  PromptBank bank;
  bank.config = config;
  bank.n_classes = n_classes;
  const int n_pairs =
      config.mode == PromptMode::class_specific ? n_classes : 1;
  bank.pairs.resize(n_pairs);
  for (auto& pair : bank.pairs) {
    pair.pos_ctx.resize(config.n_ctx_pos, config.dim);
    pair.neg_ctx.resize(config.n_ctx_neg, config.dim);
    for (int r = 0; r < config.n_ctx_pos; ++r)
      for (int c = 0; c < config.dim; ++c) pair.pos_ctx(r, c) = gauss(rng);
    for (int r = 0; r < config.n_ctx_neg; ++r)
      for (int c = 0; c < config.dim; ++c) pair.neg_ctx(r, c) = gauss(rng);
  }
  return bank;
}

Eigen::MatrixXd assemble_prompt(const PromptPair& pair,
                                const Eigen::VectorXd& class_token,
                                Polarity polarity) {
  const Eigen::MatrixXd& ctx =
      polarity == Polarity::positive ? pair.pos_ctx : pair.neg_ctx;
  if (class_token.size() != ctx.cols())
    throw std::invalid_argument("class token dimension mismatch with contexts");
  Eigen::MatrixXd tokens(ctx.rows() + 1, ctx.cols());
  tokens.topRows(ctx.rows()) = ctx;
  tokens.bottomRows(1) = class_token.transpose();
  return tokens;
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;

void write_ctx_f32(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) io::write_f32(os, float(m(r, c)));
}

Eigen::MatrixXd read_ctx_f32(std::istream& is, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = double(io::read_f32(is, "context values"));
  return m;
}
}  // namespace

void save_checkpoint(const PromptBank& bank, const std::string& meta_json,
                     const std::filesystem::path& path) {
  bank.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write("DCPT", 4);
  io::write_u32(os, kCheckpointVersion);
  io::write_u8(os, std::uint8_t(bank.config.mode));
  io::write_u32(os, std::uint32_t(bank.n_classes));
  io::write_u32(os, std::uint32_t(bank.config.n_ctx_pos));
  io::write_u32(os, std::uint32_t(bank.config.n_ctx_neg));
  io::write_u32(os, std::uint32_t(bank.config.dim));
  for (const auto& pair : bank.pairs) write_ctx_f32(os, pair.pos_ctx);
  for (const auto& pair : bank.pairs) write_ctx_f32(os, pair.neg_ctx);
  io::write_u32(os, std::uint32_t(meta_json.size()));
  os.write(meta_json.data(), std::streamsize(meta_json.size()));
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, "DCPT", 4) != 0)
    throw std::runtime_error("bad magic in checkpoint: " + path.string());
  const std::uint32_t version = io::read_u32(is, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  const std::uint8_t mode_flag = io::read_u8(is, "mode flag");
  if (mode_flag > 1)
    throw std::runtime_error("invalid mode flag in checkpoint");

  Checkpoint ck;
  ck.bank.config.mode = PromptMode(mode_flag);
  ck.bank.n_classes = int(io::read_u32(is, "class count"));
  ck.bank.config.n_ctx_pos = int(io::read_u32(is, "N+"));
  ck.bank.config.n_ctx_neg = int(io::read_u32(is, "N-"));
  ck.bank.config.dim = int(io::read_u32(is, "D"));
  if (ck.bank.n_classes < 1 || ck.bank.config.n_ctx_pos < 1 ||
      ck.bank.config.n_ctx_neg < 1 || ck.bank.config.dim < 1)
    throw std::runtime_error("checkpoint header has degenerate shapes");

  const int n_pairs = ck.bank.config.mode == PromptMode::class_specific
                          ? ck.bank.n_classes
                          : 1;
  ck.bank.pairs.resize(n_pairs);
  for (auto& pair : ck.bank.pairs)
    pair.pos_ctx =
        read_ctx_f32(is, ck.bank.config.n_ctx_pos, ck.bank.config.dim);
  for (auto& pair : ck.bank.pairs)
    pair.neg_ctx =
        read_ctx_f32(is, ck.bank.config.n_ctx_neg, ck.bank.config.dim);

  const std::uint32_t meta_len = io::read_u32(is, "metadata length");
  ck.meta_json.resize(meta_len);
  if (!is.read(ck.meta_json.data(), std::streamsize(meta_len)))
    throw std::runtime_error("truncated metadata trailer: " + path.string());
  ck.bank.validate();
  return ck;
}

}  // namespace dualprompt
