#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "dualprompt/loss.hpp"

using namespace dualprompt;

TEST_CASE("asl_loss: scalar evaluations") {
  LossConfig cfg;
  cfg.gamma_pos = 0;
  cfg.gamma_neg = 0;
  cfg.margin = 0;
  CHECK(asl_loss(0.5, 1, cfg) == doctest::Approx(0.693147).epsilon(1e-6));

  LossConfig defaults;  // gamma+ 1, gamma- 2, c 0.05
  CHECK(asl_loss(1.0 - 1e-12, 1, defaults) == doctest::Approx(0.0).epsilon(1e-9));
  // y=+1: -(1-p)^1 log p at p=0.25
  CHECK(asl_loss(0.25, 1, defaults) ==
        doctest::Approx(-0.75 * std::log(0.25)).epsilon(1e-12));
  // y=-1: -(p-c)^2 log(1-(p-c)) at p=0.4
  const double pc = 0.35;
  CHECK(asl_loss(0.4, -1, defaults) ==
        doctest::Approx(-pc * pc * std::log1p(-pc)).epsilon(1e-12));
}

TEST_CASE("asl_loss: hard-threshold zone is exactly zero") {
  for (double gamma_neg : {0.0, 1.0, 2.0}) {
    LossConfig cfg;
    cfg.gamma_neg = gamma_neg;
    cfg.margin = 0.1;
    CHECK(asl_loss(0.05, -1, cfg) == 0.0);
    CHECK(asl_loss(0.1, -1, cfg) == 0.0);  // boundary p == c
    CHECK(asl_loss_dp(0.05, -1, cfg) == 0.0);
  }
}

TEST_CASE("asl_loss: gamma=0, c=0 reduces to binary cross-entropy") {
  LossConfig cfg;
  cfg.gamma_pos = cfg.gamma_neg = 0;
  cfg.margin = 0;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> uni(1e-6, 1.0 - 1e-6);
  for (int trial = 0; trial < 10000; ++trial) {
    const double p = uni(rng);
    const int y = rng() % 2 ? 1 : -1;
    const double bce = y == 1 ? -std::log(p) : -std::log(1 - p);
    CHECK(asl_loss(p, y, cfg) == doctest::Approx(bce).epsilon(1e-12));
  }
}

TEST_CASE("asl_loss is non-negative over valid inputs") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> uni(1e-6, 1.0 - 1e-6);
  std::uniform_real_distribution<double> g(0.0, 4.0);
  for (int trial = 0; trial < 2000; ++trial) {
    LossConfig cfg;
    cfg.gamma_pos = g(rng);
    cfg.gamma_neg = g(rng);
    cfg.margin = 0.3 * uni(rng);
    CHECK(asl_loss(uni(rng), rng() % 2 ? 1 : -1, cfg) >= 0.0);
  }
}

TEST_CASE("asl_loss_dp matches central finite differences") {
  LossConfig cfg;  // defaults
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  const double h = 1e-7;
  for (int trial = 0; trial < 200; ++trial) {
    const double p = uni(rng);
    const int y = rng() % 2 ? 1 : -1;
    if (y == -1 && std::abs(p - cfg.margin) < 10 * h) continue;  // kink
    const double fd = (asl_loss(p + h, y, cfg) - asl_loss(p - h, y, cfg)) / (2 * h);
    CHECK(asl_loss_dp(p, y, cfg) ==
          doctest::Approx(fd).epsilon(1e-5).scale(std::abs(fd) + 1e-6));
  }
}

TEST_CASE("asl_loss validates inputs and warns on inverted gammas") {
  LossConfig cfg;
  CHECK_THROWS_AS(asl_loss(0.0, 1, cfg), std::invalid_argument);
  CHECK_THROWS_AS(asl_loss(1.0, 1, cfg), std::invalid_argument);
  CHECK_THROWS_AS(asl_loss(0.5, 0, cfg), std::invalid_argument);

  LossConfig inverted;
  inverted.gamma_pos = 3;
  inverted.gamma_neg = 1;
  CHECK_FALSE(inverted.validate().empty());  // warn, don't reject
  CHECK(cfg.validate().empty());

  LossConfig bad;
  bad.margin = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
