#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sbp/gradcheck.hpp"
#include "sbp/losses.hpp"

using namespace sbp;

TEST(IoU, WorkedExamples) {
  const Box a{1, 1, 2, 2};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{5, 5, 2, 2}), 0.0);
  EXPECT_EQ(iou(a, Box{3, 1, 2, 2}), 0.0);  // touching edges
  EXPECT_NEAR(iou(Box{0, 0, 2, 2}, Box{1, 0, 2, 2}), 1.0 / 3.0, 1e-15);
}

TEST(IoU, MatchesLatticeCount) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> c(0.0, 4.0);
  std::uniform_real_distribution<double> s(0.5, 3.0);
  for (int t = 0; t < 40; ++t) {
    const Box a{c(rng), c(rng), s(rng), s(rng)};
    const Box b{c(rng), c(rng), s(rng), s(rng)};
    EXPECT_NEAR(iou(a, b), oracle::lattice_iou(a, b, 800), 0.01);
  }
}

TEST(Wasserstein, WorkedExamples) {
  const Box a{0, 0, 2, 2};
  EXPECT_EQ(wasserstein_sq(a, a), 0.0);
  EXPECT_EQ(wasserstein_sq(a, Box{1, 0, 2, 2}), 1.0);
  EXPECT_EQ(wasserstein_sq(a, Box{0, 0, 4, 4}), 2.0);
  EXPECT_NEAR(nwd(a, Box{1, 0, 2, 2}, 0.5), std::exp(-2.0), 1e-15);
}

TEST(Wasserstein, MatchesMatrixSquareRootFormula) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> c(-5.0, 5.0);
  std::uniform_real_distribution<double> s(0.1, 6.0);
  for (int t = 0; t < 200; ++t) {
    const Box a{c(rng), c(rng), s(rng), s(rng)};
    const Box b{c(rng), c(rng), s(rng), s(rng)};
    const double want = oracle::box_w2_sq(a, b);
    EXPECT_NEAR(wasserstein_sq(a, b), want, 1e-9 * (1.0 + want));
  }
}

TEST(Nwd, BoundedSymmetricAndMonotone) {
  const Box t{10, 10, 4, 4};
  double prev = 1.0 + 1e-12;
  for (int i = 0; i <= 50; ++i) {
    const Box a{10 + 0.2 * i, 10, 4, 4};
    const double v = nwd(a, t, 2.0);
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LT(v, prev);
    prev = v;
    EXPECT_DOUBLE_EQ(v, nwd(t, a, 2.0));
  }
}

TEST(Nwd, TranslationInvariantAndScaleCovariant) {
  const Box a{1, 2, 3, 4};
  const Box b{2, 1, 5, 2};
  const double base = wasserstein_sq(a, b);
  EXPECT_NEAR(wasserstein_sq(Box{a.cx + 7, a.cy - 3, a.w, a.h}, Box{b.cx + 7, b.cy - 3, b.w, b.h}), base, 1e-12);
  EXPECT_NEAR(wasserstein_sq(Box{3 * a.cx, 3 * a.cy, 3 * a.w, 3 * a.h}, Box{3 * b.cx, 3 * b.cy, 3 * b.w, 3 * b.h}),
              9 * base, 1e-9);
  EXPECT_NEAR(nwd(Box{3 * a.cx, 3 * a.cy, 3 * a.w, 3 * a.h}, Box{3 * b.cx, 3 * b.cy, 3 * b.w, 3 * b.h}, 3 * 0.7),
              nwd(a, b, 0.7), 1e-12);
}

TEST(IoU, InvariantUnderTranslationAndScale) {
  const Box a{1, 2, 3, 4};
  const Box b{2, 1, 5, 2};
  EXPECT_NEAR(iou(Box{a.cx + 5, a.cy + 5, a.w, a.h}, Box{b.cx + 5, b.cy + 5, b.w, b.h}), iou(a, b), 1e-12);
  EXPECT_NEAR(iou(Box{2 * a.cx, 2 * a.cy, 2 * a.w, 2 * a.h}, Box{2 * b.cx, 2 * b.cy, 2 * b.w, 2 * b.h}), iou(a, b),
              1e-12);
}

TEST(Hybrid, EndpointsReduceToSingleTerms) {
  const Box a{0.4, 0.5, 0.2, 0.3};
  const Box b{0.45, 0.52, 0.25, 0.2};
  const HybridLoss pure_nwd = hybrid_loss(a, b, {0.5, 0.0});
  const HybridLoss pure_iou = hybrid_loss(a, b, {0.5, 1.0});
  EXPECT_EQ(pure_nwd.value, nwd_loss(a, b, 0.5).value);
  EXPECT_EQ(pure_iou.value, iou_loss(a, b).value);
  EXPECT_EQ(pure_nwd.grad, nwd_loss(a, b, 0.5).grad);
  EXPECT_EQ(pure_iou.grad, iou_loss(a, b).grad);
  const HybridLoss half = hybrid_loss(a, b, {0.5, 0.5});
  EXPECT_NEAR(half.value, 0.5 * (pure_nwd.value + pure_iou.value), 1e-15);
}

TEST(Hybrid, ZeroAtIdentity) {
  const Box a{3, 3, 2, 2};
  const HybridLoss l = hybrid_loss(a, a, {});
  EXPECT_EQ(l.value, 0.0);
}

TEST(Hybrid, GradientsMatchFiniteDifferences) {
  for (double alpha : {0.0, 0.5, 1.0}) {
    GradcheckOptions opt;
    opt.params.iou_ratio = alpha;
    const GradcheckResult r = run_gradcheck(opt);
    EXPECT_EQ(r.trials, 1000);
    EXPECT_TRUE(r.passed) << "alpha " << alpha << " max rel error " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_GT(r.disjoint, 100);
  }
}

TEST(Hybrid, DisjointPairsKeepANwdGradient) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> s(0.5, 2.0);
  std::uniform_real_distribution<double> gap(0.1, 5.0);
  for (int t = 0; t < 100; ++t) {
    const Box target{0, 0, s(rng), s(rng)};
    const double pw = s(rng);
    const Box p{0.5 * (target.w + pw) + gap(rng), 0.1, pw, s(rng)};
    ASSERT_EQ(iou(p, target), 0.0);
    const LossTerm il = iou_loss(p, target);
    const LossTerm nl = nwd_loss(p, target, 1.0);
    EXPECT_EQ(il.grad, (BoxGradient{0, 0, 0, 0}));
    EXPECT_GT(nl.grad[0], 0.0);  // moving further away increases the loss
    const double norm = std::hypot(nl.grad[0], nl.grad[1], nl.grad[2]);
    EXPECT_GT(norm, 0.0);
  }
}

TEST(Hybrid, OffsetSweepIsSmoothForNwd) {
  const auto rows = offset_sweep(Box{0, 0, 1, 1}, 0.5, 0.0, 3.0, 1e-3);
  ASSERT_EQ(rows.size(), 3001u);
  int iou_zero_grad = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(rows[i].nwd_loss, rows[i - 1].nwd_loss);
    // The cone apex at zero offset is the only kink.
    if (i > 1) {
      EXPECT_LT(std::abs(rows[i].nwd_grad_cx - rows[i - 1].nwd_grad_cx), 0.01);
    }
    if (rows[i].offset > 1.0 + 1e-9) {
      EXPECT_EQ(rows[i].iou_grad_cx, 0.0);
      EXPECT_GT(rows[i].nwd_grad_cx, 0.0);
      ++iou_zero_grad;
    }
  }
  EXPECT_GT(iou_zero_grad, 1900);
}

TEST(Hybrid, InvalidInputsAreConfigErrors) {
  const Box ok{0, 0, 1, 1};
  EXPECT_THROW(hybrid_loss(ok, ok, {0.0, 0.5}), ConfigError);
  EXPECT_THROW(hybrid_loss(ok, ok, {-1.0, 0.5}), ConfigError);
  EXPECT_THROW(hybrid_loss(ok, ok, {0.5, 1.5}), ConfigError);
  EXPECT_THROW(hybrid_loss(ok, ok, {0.5, -0.1}), ConfigError);
  EXPECT_THROW(hybrid_loss(Box{0, 0, 0, 1}, ok, {}), ConfigError);
  EXPECT_THROW(hybrid_loss(ok, Box{0, 0, 1, -1}, {}), ConfigError);
  EXPECT_THROW(hybrid_loss(Box{NAN, 0, 1, 1}, ok, {}), ConfigError);
}
