#include "dualprompt/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace dualprompt {

std::string to_string(Reduction r) {
  return r == Reduction::mean_over_known ? "mean_over_known" : "sum";
}

Reduction reduction_from_string(const std::string& s) {
  if (s == "mean_over_known") return Reduction::mean_over_known;
  if (s == "sum") return Reduction::sum;
  throw std::invalid_argument("unknown reduction: " + s);
}

std::string LossConfig::validate() const {
  if (gamma_pos < 0 || gamma_neg < 0)
    throw std::invalid_argument("focusing exponents must be >= 0");
  if (margin < 0 || margin >= 1)
    throw std::invalid_argument("margin must lie in [0, 1)");
  if (gamma_neg < gamma_pos)
    return "gamma_neg < gamma_pos: easy negatives are not down-weighted";
  return {};
}

namespace {
void check_p(double p) {
  if (!(p > 0.0) || !(p < 1.0))
    throw std::invalid_argument("probability must lie in (0, 1)");
}
}  // namespace

double asl_loss(double p, int y, const LossConfig& cfg) {
  check_p(p);
  if (y == 1) {
    return -std::pow(1.0 - p, cfg.gamma_pos) * std::log(p);
  }
  if (y == -1) {
    const double pc = p - cfg.margin;
    if (pc <= 0.0) return 0.0;
    const double focus = cfg.gamma_neg == 0.0 ? 1.0 : std::pow(pc, cfg.gamma_neg);
    return -focus * std::log1p(-pc);
  }
  throw std::invalid_argument("asl_loss label must be +1 or -1");
}

double asl_loss_dp(double p, int y, const LossConfig& cfg) {
  check_p(p);
  if (y == 1) {
    const double g = cfg.gamma_pos;
    const double focus_d =
        g == 0.0 ? 0.0 : g * std::pow(1.0 - p, g - 1.0) * std::log(p);
    return focus_d - std::pow(1.0 - p, g) / p;
  }
  if (y == -1) {
    const double pc = p - cfg.margin;
    if (pc <= 0.0) return 0.0;
    const double g = cfg.gamma_neg;
    const double focus_d =
        g == 0.0 ? 0.0 : -g * std::pow(pc, g - 1.0) * std::log1p(-pc);
    const double focus = g == 0.0 ? 1.0 : std::pow(pc, g);
    return focus_d + focus / (1.0 - pc);
  }
  throw std::invalid_argument("asl_loss label must be +1 or -1");
}

}  // namespace dualprompt
