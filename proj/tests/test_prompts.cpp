#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dualprompt/io.hpp"
#include "dualprompt/prompts.hpp"

using namespace dualprompt;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dp_prompt_" + name);
  fs::remove(p);
  return p;
}

// f32-quantized copy; checkpoints store contexts as float32.
PromptBank quantized(PromptBank bank) {
  for (auto& pair : bank.pairs) {
    pair.pos_ctx = pair.pos_ctx.cast<float>().cast<double>();
    pair.neg_ctx = pair.neg_ctx.cast<float>().cast<double>();
  }
  return bank;
}
}  // namespace

TEST_CASE("init_prompts: class_specific gives one pair per class") {
  PromptConfig cfg;
  cfg.n_ctx_pos = cfg.n_ctx_neg = 16;
  cfg.dim = 8;
  const PromptBank bank = init_prompts(cfg, 20, 0);
  REQUIRE(bank.pairs.size() == 20);
  for (const auto& p : bank.pairs) {
    CHECK(p.pos_ctx.rows() == 16);
    CHECK(p.pos_ctx.cols() == 8);
    CHECK(p.neg_ctx.rows() == 16);
  }
}

TEST_CASE("init_prompts: shared mode holds exactly one pair") {
  PromptConfig cfg;
  cfg.n_ctx_pos = cfg.n_ctx_neg = 64;
  cfg.dim = 8;
  cfg.mode = PromptMode::shared;
  const PromptBank bank = init_prompts(cfg, 1000, 0);
  CHECK(bank.pairs.size() == 1);
  CHECK(&bank.pair_for_class(999) == &bank.pairs[0]);
}

TEST_CASE("init_prompts: same seed reproduces the bank exactly") {
  PromptConfig cfg;
  cfg.dim = 8;
  const PromptBank a = init_prompts(cfg, 5, 77);
  const PromptBank b = init_prompts(cfg, 5, 77);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].pos_ctx == b.pairs[i].pos_ctx);
    CHECK(a.pairs[i].neg_ctx == b.pairs[i].neg_ctx);
  }
}

TEST_CASE("parameter count matches the expected magnitude") {
  // D=512, N+=N-=16, M=20 gives 0.33M trainable parameters.
  PromptConfig cfg;
  cfg.n_ctx_pos = cfg.n_ctx_neg = 16;
  cfg.dim = 512;
  const PromptBank bank = init_prompts(cfg, 20, 0);
  CHECK(bank.parameter_count() == 327680u);
}

TEST_CASE("assemble_prompt: contexts then class token, input untouched") {
  PromptPair pair;
  pair.pos_ctx.resize(2, 3);
  pair.pos_ctx << 1, 2, 3, 4, 5, 6;
  pair.neg_ctx.resize(1, 3);
  pair.neg_ctx << -1, -2, -3;
  Eigen::VectorXd token(3);
  token << 7, 8, 9;

  const Eigen::MatrixXd before = pair.pos_ctx;
  const Eigen::MatrixXd seq = assemble_prompt(pair, token, Polarity::positive);
  REQUIRE(seq.rows() == 3);
  CHECK(seq.row(0) == pair.pos_ctx.row(0));
  CHECK(seq.row(1) == pair.pos_ctx.row(1));
  CHECK(seq.row(2) == token.transpose());
  CHECK(pair.pos_ctx == before);

  const Eigen::MatrixXd neg = assemble_prompt(pair, token, Polarity::negative);
  REQUIRE(neg.rows() == 2);
  CHECK(neg.row(0) == pair.neg_ctx.row(0));
  CHECK(neg.row(1) == token.transpose());

  Eigen::VectorXd bad(2);
  CHECK_THROWS_AS(assemble_prompt(pair, bad, Polarity::positive),
                  std::invalid_argument);
}

TEST_CASE("checkpoint: load(save(x)) is exact for f32-representable banks") {
  PromptConfig cfg;
  cfg.n_ctx_pos = 3;
  cfg.n_ctx_neg = 2;
  cfg.dim = 4;
  const PromptBank bank = quantized(init_prompts(cfg, 6, 5));
  const fs::path p = temp_file("rt.dcpt");
  save_checkpoint(bank, R"({"note":"test"})", p);
  const Checkpoint ck = load_checkpoint(p);
  CHECK(ck.meta_json == R"({"note":"test"})");
  CHECK(ck.bank.n_classes == 6);
  CHECK(ck.bank.config.mode == PromptMode::class_specific);
  REQUIRE(ck.bank.pairs.size() == bank.pairs.size());
  for (std::size_t i = 0; i < bank.pairs.size(); ++i) {
    CHECK(ck.bank.pairs[i].pos_ctx == bank.pairs[i].pos_ctx);
    CHECK(ck.bank.pairs[i].neg_ctx == bank.pairs[i].neg_ctx);
  }

  // write -> read -> write gives byte-identical files
  const fs::path p2 = temp_file("rt2.dcpt");
  save_checkpoint(ck.bank, ck.meta_json, p2);
  CHECK(io::sha256_file_hex(p) == io::sha256_file_hex(p2));
}

TEST_CASE("checkpoint: truncation and bad magic give distinct diagnostics") {
  PromptConfig cfg;
  cfg.dim = 4;
  const PromptBank bank = init_prompts(cfg, 2, 0);
  const fs::path p = temp_file("trunc.dcpt");
  save_checkpoint(bank, "{}", p);

  const std::string bytes = io::read_text_file(p);
  io::write_text_file(p, bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("truncated"),
                       std::runtime_error);

  std::string corrupt = bytes;
  corrupt[0] = 'X';
  io::write_text_file(p, corrupt);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("bad magic"),
                       std::runtime_error);
}

TEST_CASE("checkpoint mode flag distinguishes shared from class_specific") {
  PromptConfig cs;
  cs.dim = 4;
  PromptConfig sh = cs;
  sh.mode = PromptMode::shared;
  const fs::path p_cs = temp_file("cs.dcpt");
  const fs::path p_sh = temp_file("sh.dcpt");
  save_checkpoint(init_prompts(cs, 3, 0), "{}", p_cs);
  save_checkpoint(init_prompts(sh, 3, 0), "{}", p_sh);
  CHECK(load_checkpoint(p_cs).bank.config.mode == PromptMode::class_specific);
  CHECK(load_checkpoint(p_sh).bank.config.mode == PromptMode::shared);
}
