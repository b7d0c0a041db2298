#include "oodlab/alm.hpp"

#include <doctest.h>

#include <limits>
#include <random>

using namespace oodlab;

TEST_SUITE("almstate") {

TEST_CASE("objective with inactive constraints equals the wild loss") {
  AlmConfig cfg;
  cfg.tau = 1.0;
  const AlmState s = AlmState::initial(cfg);
  Graph g;
  const Var obj = alm_objective(g.scalar(0.7), g.scalar(0.05), g.scalar(0.5), s, cfg);
  CHECK(obj.scalar() == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("penalty formula") {
  CHECK(alm_penalty(0.2, 0.1, 2.0) == doctest::Approx(0.06));
  CHECK(alm_penalty(-0.3, 0.0, 4.0) == 0.0);
  CHECK(alm_penalty(-0.3, 0.5, 4.0) == doctest::Approx(-0.15));

  AlmConfig cfg;
  cfg.alpha = 0.1;
  cfg.tau = 0.5;
  cfg.beta_max = 10.0;
  AlmState s = AlmState::initial(cfg);
  s.lambda1 = 0.1;
  s.beta1 = 2.0;
  Graph g;
  const Var obj = alm_objective(g.scalar(1.0), g.scalar(0.3), g.scalar(0.2), s, cfg);
  CHECK(obj.scalar() == doctest::Approx(1.0 + 0.06));
}

TEST_CASE("invalid state is rejected") {
  AlmConfig cfg;
  AlmState s = AlmState::initial(cfg);
  s.lambda1 = -1.0;
  Graph g;
  CHECK_THROWS(alm_objective(g.scalar(0.0), g.scalar(0.0), g.scalar(0.0), s, cfg));
  cfg.alpha = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("satisfied constraints leave the state unchanged") {
  AlmConfig cfg;
  const AlmState s0 = AlmState::initial(cfg);
  AlmState s = s0;
  for (int k = 0; k < 10; ++k) s = alm_epoch_update(s, -0.2, -0.05, cfg);
  CHECK(s.lambda1 == 0.0);
  CHECK(s.lambda2 == 0.0);
  CHECK(s.beta1 == s0.beta1);
  CHECK(s.beta2 == s0.beta2);
}

TEST_CASE("beta at the cap stays there") {
  AlmConfig cfg;
  AlmState s = AlmState::initial(cfg);
  s.beta1 = cfg.beta_max;
  s = alm_epoch_update(s, 0.4, 0.1, cfg);
  CHECK(s.beta1 == cfg.beta_max);
  for (int k = 0; k < 20; ++k) s = alm_epoch_update(s, 0.4, 0.1, cfg);
  CHECK(s.beta2 == cfg.beta_max);
}

TEST_CASE("uncapped growth passes 20 within a few epochs") {
  AlmConfig cfg;
  cfg.eta_lambda = 0.1;
  cfg.alpha = 0.05;
  cfg.beta_max = std::numeric_limits<double>::infinity();
  AlmState s = AlmState::initial(cfg);
  int epochs = 0;
  while (s.beta1 <= 20.0 && epochs < 50) {
    s = alm_epoch_update(s, 0.3, 0.1, cfg);
    ++epochs;
  }
  CHECK(s.beta1 > 20.0);
  CHECK(epochs <= 7);
  CHECK(s.lambda1 == doctest::Approx(0.1 * 0.3 * epochs));
}

TEST_CASE("state invariants over random trajectories") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 0.5);
  AlmConfig cfg;
  AlmState s = AlmState::initial(cfg);
  for (int k = 0; k < 1000; ++k) {
    const AlmState next = alm_epoch_update(s, n(rng), n(rng), cfg);
    REQUIRE(next.valid(cfg));
    CHECK(next.beta1 >= s.beta1);
    CHECK(next.beta2 >= s.beta2);
    s = next;
  }
}

TEST_CASE("detector loss") {
  Vector far(1);
  far << -50.0;
  CHECK(ood_detector_loss(far, Side::in, 0.0) < 1e-6);
  Vector at(1);
  at << 2.0;
  CHECK(ood_detector_loss(at, Side::in, 2.0) == doctest::Approx(std::log(2.0)));
  CHECK(ood_detector_loss(at, Side::out, 2.0) == doctest::Approx(std::log(2.0)));

  Vector e(4);
  e << -3.0, 0.5, 1.0, 4.0;
  double expect = 0.0;
  for (double v : e) expect += std::log1p(std::exp(1.0 - v));
  CHECK(ood_detector_loss(e, Side::out, 1.0) == doctest::Approx(expect / 4.0));
  Graph g;
  CHECK(ood_detector_loss(g.constant(e), Side::out, 1.0).scalar() == doctest::Approx(expect / 4.0));
  CHECK_THROWS(ood_detector_loss(Vector(), Side::in, 0.0));
}

}
