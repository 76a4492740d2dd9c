#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dualprompt {

enum class PromptMode : std::uint8_t { shared = 0, class_specific = 1 };

std::string to_string(PromptMode mode);
PromptMode prompt_mode_from_string(const std::string& s);

struct PromptConfig {
  int n_ctx_pos = 16;
  int n_ctx_neg = 16;
  int dim = 64;
  PromptMode mode = PromptMode::class_specific;
  double init_sigma = 0.02;

  void validate() const;
};

/// One learnable positive/negative context pair.
struct PromptPair {
  Eigen::MatrixXd pos_ctx;  // N+ x D
  Eigen::MatrixXd neg_ctx;  // N- x D
};

/// All trainable state: M pairs (class_specific) or a single shared pair.
struct PromptBank {
  PromptConfig config;
  int n_classes = 0;  // M the bank was built for
  std::vector<PromptPair> pairs;

  const PromptPair& pair_for_class(int m) const {
    return config.mode == PromptMode::class_specific ? pairs[std::size_t(m)]
                                                     : pairs[0];
  }
  std::size_t parameter_count() const;
  void validate() const;
};

PromptBank init_prompts(const PromptConfig& config, int n_classes,
                        std::uint64_t seed);

enum class Polarity { positive, negative };

/// Context rows in order, then the class token as the final row.
Eigen::MatrixXd assemble_prompt(const PromptPair& pair,
                                const Eigen::VectorXd& class_token,
                                Polarity polarity);

/// Checkpoint: magic "DCPT", version u32, mode u8, M/N+/N-/D u32, pos then
/// neg contexts as float32, then a u32-length-prefixed JSON metadata trailer.
void save_checkpoint(const PromptBank& bank, const std::string& meta_json,
                     const std::filesystem::path& path);
struct Checkpoint {
  PromptBank bank;
  std::string meta_json;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dualprompt
