#pragma once

#include <string>

namespace dualprompt {

enum class Reduction { mean_over_known, sum };

std::string to_string(Reduction r);
Reduction reduction_from_string(const std::string& s);

/// Asymmetric-loss hyperparameters: focusing exponents for positive and
/// negative cells and the hard margin that zeroes easy negatives.
struct LossConfig {
  double gamma_pos = 1.0;
  double gamma_neg = 2.0;
  double margin = 0.05;  // c in [0, 1)
  Reduction reduction = Reduction::mean_over_known;

  /// Throws on invalid values; returns a warning string (possibly empty)
  /// for the recommended-but-not-required gamma_neg >= gamma_pos.
  std::string validate() const;
};

/// Loss for one known (probability, label) cell. y must be +1 or -1.
/// Positive: -(1-p)^g+ log p. Negative: -(p_c)^g- log(1-p_c) with
/// p_c = max(p - c, 0), using the 0*log(1)=0 and 0^0=1 conventions so the
/// easy-negative zone is exactly zero.
double asl_loss(double p, int y, const LossConfig& cfg);

/// d asl_loss / d p at the same point. The negative branch is identically
/// zero (value and derivative) for p <= c.
double asl_loss_dp(double p, int y, const LossConfig& cfg);

}  // namespace dualprompt
