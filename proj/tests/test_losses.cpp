#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "nodx/losses.hpp"
#include "nodx/rng.hpp"

using namespace nodx;

TEST_CASE("bce analytic values and symmetry") {
  CHECK(bce(1.0 - 1e-7, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce(0.5, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce(0.5, 1) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double p = rng.uniform();
    CHECK(bce(p, 1) == doctest::Approx(bce(1.0 - p, 0)).epsilon(1e-12));
  }
  // clamping keeps extreme inputs finite
  CHECK(std::isfinite(bce(0.0, 1)));
  CHECK(std::isfinite(bce(1.0, 0)));
  CHECK_THROWS_AS(bce(0.5, 2), std::invalid_argument);
}

TEST_CASE("dice loss endpoints and oracle") {
  Tensor perfect({4, 4, 4});
  Tensor target({4, 4, 4});
  Rng rng(5);
  for (size_t i = 0; i < target.numel(); ++i) {
    target[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    perfect[i] = target[i];
  }
  CHECK(dice_loss(perfect, target) == doctest::Approx(0.0).epsilon(1e-4));

  Tensor disjoint({4, 4, 4});
  for (size_t i = 0; i < target.numel(); ++i) disjoint[i] = 1.0 - target[i];
  CHECK(dice_loss(disjoint, target) == doctest::Approx(1.0).epsilon(1e-4));

  // pred 0.5 everywhere, target 1 on half the voxels: direct-summation oracle
  Tensor half({2, 2, 2});
  Tensor htarget({2, 2, 2});
  for (size_t i = 0; i < 8; ++i) {
    half[i] = 0.5;
    htarget[i] = i < 4 ? 1.0 : 0.0;
  }
  double inter = 0, ps = 0, ts = 0;
  for (size_t i = 0; i < 8; ++i) {
    inter += half[i] * htarget[i];
    ps += half[i];
    ts += htarget[i];
  }
  const double oracle = 1.0 - (2 * inter + 1e-5) / (ps + ts + 1e-5);
  CHECK(std::fabs(dice_loss(half, htarget) - oracle) < 1e-9);

  Tensor wrong({2, 2, 1});
  CHECK_THROWS_AS(dice_loss(wrong, target), std::invalid_argument);
}

TEST_CASE("dice loss stays in [0,1] for probabilities") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    Tensor p({3, 3, 3}), m({3, 3, 3});
    for (size_t i = 0; i < p.numel(); ++i) {
      p[i] = rng.uniform();
      m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    const double d = dice_loss(p, m);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("seg total loss combines dice and cross entropy") {
  Rng rng(7);
  Tensor p({4, 4, 2}), m({4, 4, 2});
  for (size_t i = 0; i < p.numel(); ++i) {
    p[i] = rng.uniform(0.02, 0.98);
    m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }

  SUBCASE("perfect prediction is near zero") {
    Tensor exact = m;
    const auto t = seg_total_loss(exact, m, 1.0);
    CHECK(t.total < 1e-3);
  }

  SUBCASE("w = 0 reduces to dice") {
    const auto t = seg_total_loss(p, m, 0.0);
    CHECK(t.total == t.dice);
  }

  SUBCASE("matches independently summed dice + ce") {
    const auto t = seg_total_loss(p, m, 1.0);
    // independent scalar-loop oracle
    double inter = 0, ps = 0, ts = 0, ce = 0;
    for (size_t i = 0; i < p.numel(); ++i) {
      inter += p[i] * m[i];
      ps += p[i];
      ts += m[i];
      const double pi = std::clamp(p[i], 1e-7, 1.0 - 1e-7);
      ce += -(m[i] * std::log(pi) + (1 - m[i]) * std::log(1 - pi));
    }
    ce /= static_cast<double>(p.numel());
    const double dice = 1.0 - (2 * inter + 1e-5) / (ps + ts + 1e-5);
    CHECK(std::fabs(t.dice - dice) < 1e-9);
    CHECK(std::fabs(t.ce - ce) < 1e-9);
    CHECK(std::fabs(t.total - (dice + ce)) < 1e-9);
  }

  SUBCASE("affine in w with slope L_CE at w in {0,1,2}") {
    const auto t0 = seg_total_loss(p, m, 0.0);
    const auto t1 = seg_total_loss(p, m, 1.0);
    const auto t2 = seg_total_loss(p, m, 2.0);
    CHECK(t1.total - t0.total == doctest::Approx(t1.ce).epsilon(1e-12));
    CHECK(t2.total - t1.total == doctest::Approx(t1.ce).epsilon(1e-12));
    CHECK(t0.total == t0.dice);
    // the invariant L_total = L_Dice + w*L_CE holds exactly as stored
    CHECK(t2.total == t2.dice + 2.0 * t2.ce);
  }

  SUBCASE("negative w rejected") {
    CHECK_THROWS_AS(seg_total_loss(p, m, -0.5), std::invalid_argument);
  }
}

TEST_CASE("seg loss gradient matches finite differences") {
  Rng rng(13);
  Tensor p({4, 4, 4}), m({4, 4, 4});
  for (size_t i = 0; i < p.numel(); ++i) {
    p[i] = rng.uniform(0.05, 0.95);
    m[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  const Tensor g = seg_total_loss_grad(p, m, 1.0);
  for (size_t i = 0; i < p.numel(); ++i) {
    const double num = testing::fd_slope(&p[i], [&] { return seg_total_loss(p, m, 1.0).total; });
    CHECK(testing::grad_close(g[i], num));
  }
}

TEST_CASE("phase-1 AUC reciprocal weights") {
  // the paper's LIDC first-phase AUC set
  const auto w = weights_from_phase1_auc({0.7, 0.9, 0.9, 0.7, 0.8});
  REQUIRE(w.w.size() == 5u);
  CHECK(std::fabs(w.w[0] - 1.0 / 0.7) < 1e-12);
  CHECK(std::fabs(w.w[1] - 1.0 / 0.9) < 1e-12);
  CHECK(std::fabs(w.w[2] - 1.0 / 0.9) < 1e-12);
  CHECK(std::fabs(w.w[3] - 1.0 / 0.7) < 1e-12);
  CHECK(std::fabs(w.w[4] - 1.0 / 0.8) < 1e-12);

  const auto ones = weights_from_phase1_auc({1.0, 1.0, 1.0});
  for (double v : ones.w) CHECK(v == 1.0);

  // the in-house first-phase AUC set
  const auto ih = weights_from_phase1_auc({0.8, 0.85, 0.85, 0.75});
  CHECK(std::fabs(ih.w[0] - 1.25) < 1e-12);
  CHECK(std::fabs(ih.w[1] - 1.0 / 0.85) < 1e-12);
  CHECK(std::fabs(ih.w[2] - 1.0 / 0.85) < 1e-12);
  CHECK(std::fabs(ih.w[3] - 4.0 / 3.0) < 1e-12);

  CHECK_THROWS_AS(weights_from_phase1_auc({0.9, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(weights_from_phase1_auc({-0.5}), std::invalid_argument);
  CHECK_THROWS_AS(weights_from_phase1_auc({}), std::invalid_argument);
}

TEST_CASE("total loss weighted sum") {
  LossWeights ones{{1.0, 1.0}};
  CHECK(total_loss(0.0, {0.0, 0.0}, ones) == 0.0);
  const double v = total_loss(0.3, {0.1, 0.2}, ones);
  // independent scalar loop
  double oracle = 0.3;
  for (double x : {0.1, 0.2}) oracle += x;
  CHECK(v == oracle);

  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> lm(4), w(4);
    for (int i = 0; i < 4; ++i) {
      lm[i] = rng.uniform();
      w[i] = rng.uniform(0.5, 2.0);
    }
    const double ld = rng.uniform();
    double acc = ld;
    for (int i = 0; i < 4; ++i) acc += w[i] * lm[i];
    CHECK(total_loss(ld, lm, LossWeights{w}) == acc);
  }

  CHECK_THROWS_AS(total_loss(0.1, {0.1}, ones), std::invalid_argument);
}

TEST_CASE("total loss is exactly linear in each weight") {
  // dyadic rationals make the floating-point arithmetic exact, so the
  // finite-difference slope equals L_M_i with no tolerance at all
  const double ld = 0.375;
  const std::vector<double> lm{0.25, 0.5, 0.125, 0.75, 0.0625};
  for (size_t i = 0; i < lm.size(); ++i) {
    std::vector<double> w0{1.0, 0.5, 2.0, 0.25, 1.0};
    auto w1 = w0;
    w1[i] += 1.0;
    const double slope =
        total_loss(ld, lm, LossWeights{w1}) - total_loss(ld, lm, LossWeights{w0});
    CHECK(slope == lm[i]);
  }

  // random instances hold to floating-point accuracy
  Rng rng(19);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> lm2(3), w(3);
    for (int i = 0; i < 3; ++i) {
      lm2[i] = rng.uniform();
      w[i] = rng.uniform(0.5, 2.0);
    }
    for (int i = 0; i < 3; ++i) {
      auto wp = w;
      wp[i] += 1.0;
      const double slope = total_loss(0.2, lm2, LossWeights{wp}) -
                           total_loss(0.2, lm2, LossWeights{w});
      CHECK(slope == doctest::Approx(lm2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("selection score") {
  const auto w2 = SelectionWeights::uniform(2);
  CHECK(selection_score(0.9, {0.8, 0.6}, w2) == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(selection_score(0.0, {0.0, 0.0}, w2) == 0.0);

  // sum of selection weights is 1
  for (int k : {1, 3, 5, 7}) {
    const auto w = SelectionWeights::uniform(k);
    double s = 0.0;
    for (double x : w.w_sel) s += x;
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }

  // strict monotonicity in every component
  Rng rng(23);
  const auto w5 = SelectionWeights::uniform(5);
  std::vector<double> vm(5);
  for (auto& v : vm) v = rng.uniform(0.0, 0.9);
  const double base = selection_score(0.5, vm, w5);
  CHECK(selection_score(0.6, vm, w5) > base);
  for (int i = 0; i < 5; ++i) {
    auto vm2 = vm;
    vm2[i] += 0.05;
    CHECK(selection_score(0.5, vm2, w5) > base);
  }
}
