#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sbp/blocks.hpp"
#include "sbp/cost_model.hpp"

using namespace sbp;

namespace {

std::vector<double> weights_for(const std::vector<ConvUnit>& units, std::mt19937_64& rng) {
  return oracle::random_vector(param_count(units), rng);
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------- GhostConv

TEST(GhostConv, OutputShape) {
  GhostConv g({4, 8, 3, 5, 1, false});
  std::mt19937_64 rng(1);
  const auto y = g.forward(oracle::random_tensor({1, 4, 8, 8}, rng), weights_for(g.units(), rng));
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
  GhostConv s2({4, 8, 3, 5, 2, false});
  EXPECT_EQ(s2.forward(oracle::random_tensor({1, 4, 8, 8}, rng), weights_for(s2.units(), rng)).shape(),
            (Shape{1, 8, 4, 4}));
}

TEST(GhostConv, ParameterCountByWeightEnumeration) {
  GhostConv g({64, 64, 3, 5, 1, false});
  EXPECT_EQ(param_count(g.units()), 19232u);
  EXPECT_EQ(ConvSpec::same(64, 64, 3).param_count(), 36864u);
  const Ratio r = Ratio::of(static_cast<std::int64_t>(param_count(g.units())), 36864);
  EXPECT_EQ(r, ghost_param_ratio_closed_form(64, 3, 5, 3));
  EXPECT_NEAR(r.value(), 0.5217, 5e-5);
}

TEST(GhostConv, RatioWithinClaimedBand) {
  for (int c1 : {64, 128, 256}) {
    GhostConv g({c1, c1, 3, 5, 1, false});
    const double r = static_cast<double>(param_count(g.units())) / static_cast<double>(ConvSpec::same(c1, c1, 3).param_count());
    EXPECT_GE(r, 0.48);
    EXPECT_LE(r, 0.55);
  }
}

TEST(GhostConv, MatchesCompositionOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 24; ++trial) {
    const int c1 = 2 + trial % 5;
    const int c2 = 2 * (1 + trial % 4);
    const int stride = 1 + trial % 2;
    const bool bias = trial % 3 == 0;
    GhostConv g({c1, c2, 3, 5, stride, bias});
    const auto x = oracle::random_tensor({1 + trial % 2, c1, 7, 6}, rng);
    const auto w = weights_for(g.units(), rng);
    oracle::Params p(w);
    const auto ref = oracle::ghost(x, c2, 3, 5, stride, bias, p);
    EXPECT_EQ(p.used(), w.size());
    EXPECT_LT(max_abs_diff(g.forward(x, w), ref), 1e-12);
  }
}

TEST(GhostConv, RejectsOddWidthsAndEvenKernels) {
  EXPECT_THROW(GhostConv({4, 7, 3, 5, 1, false}), ConfigError);
  EXPECT_THROW(GhostConv({4, 8, 2, 5, 1, false}), ConfigError);
  EXPECT_THROW(GhostConv({4, 8, 3, 4, 1, false}), ConfigError);
}

// ---------------------------------------------------------------- GSConv

TEST(GSConv, StrideTwoShape) {
  GSConv g({8, 16, 2, 3, false});
  std::mt19937_64 rng(2);
  EXPECT_EQ(g.forward(oracle::random_tensor({1, 8, 16, 16}, rng), weights_for(g.units(), rng)).shape(),
            (Shape{1, 16, 8, 8}));
}

TEST(GSConv, MatchesCompositionOracle) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 24; ++trial) {
    const int c1 = 1 + trial % 6;
    const int c2 = 2 * (1 + trial % 5);
    const int stride = 1 + trial % 2;
    const bool bias = trial % 2 == 0;
    GSConv g({c1, c2, stride, 3, bias});
    const auto x = oracle::random_tensor({1, c1, 9, 8}, rng);
    const auto w = weights_for(g.units(), rng);
    oracle::Params p(w);
    const auto ref = oracle::gs_conv(x, c2, stride, bias, p);
    EXPECT_EQ(p.used(), w.size());
    EXPECT_LT(max_abs_diff(g.forward(x, w), ref), 1e-12);
  }
}

TEST(GSConv, UnshuffleRecoversBothBranches) {
  std::mt19937_64 rng(23);
  const int c2 = 12;
  GSConv g({5, c2, 1, 3, true});
  const auto x = oracle::random_tensor({2, 5, 6, 6}, rng);
  const auto w = weights_for(g.units(), rng);
  const auto out = g.forward(x, w);

  WeightCursor cur(w);
  const auto u = g.units();
  const auto y1 = apply(x, u[0], cur);
  const auto y2 = apply(y1, u[1], cur);
  const auto back = channel_unshuffle(out, 2);
  EXPECT_EQ(slice_channels(back, 0, c2 / 2), y1);
  EXPECT_EQ(slice_channels(back, c2 / 2, c2 / 2), y2);
}

TEST(GSConv, StandardBranchLandsOnEvenChannels) {
  // Identity depthwise kernels: the ghost half equals silu of the standard half.
  std::mt19937_64 rng(24);
  const int c2 = 8;
  GSConv g({3, c2, 1, 3, false});
  const auto u = g.units();
  auto w = oracle::random_vector(u[0].spec.param_count(), rng);
  std::vector<double> dw(u[1].spec.param_count(), 0.0);
  for (int c = 0; c < c2 / 2; ++c) dw[static_cast<std::size_t>(c) * 9 + 4] = 1.0;
  w.insert(w.end(), dw.begin(), dw.end());
  const auto x = oracle::random_tensor({1, 3, 5, 5}, rng);
  const auto out = g.forward(x, w);
  WeightCursor cur(w);
  const auto y1 = apply(x, u[0], cur);
  for (int j = 0; j < c2 / 2; ++j) {
    EXPECT_EQ(slice_channels(out, 2 * j, 1), slice_channels(y1, j, 1));
    EXPECT_EQ(slice_channels(out, 2 * j + 1, 1), silu(slice_channels(y1, j, 1)));
  }
}

// ---------------------------------------------------------------- GSBottleneck

TEST(GSBottleneck, HalvesChannels) {
  GSBottleneck b(8);
  std::mt19937_64 rng(3);
  EXPECT_EQ(b.forward(oracle::random_tensor({1, 8, 8, 8}, rng), weights_for(b.units(), rng)).shape(),
            (Shape{1, 4, 8, 8}));
}

TEST(GSBottleneck, ZeroMainPathLeavesShortcut) {
  std::mt19937_64 rng(25);
  GSBottleneck b(8, true);
  const auto u = b.units();
  std::vector<double> w(param_count(u), 0.0);
  const std::size_t shortcut_size = u.back().spec.param_count();
  const auto sc = oracle::random_vector(shortcut_size, rng);
  std::copy(sc.begin(), sc.end(), w.end() - static_cast<std::ptrdiff_t>(shortcut_size));
  const auto x = oracle::random_tensor({1, 8, 6, 6}, rng);
  const auto expect = conv2d(x, u.back().spec, {std::span<const double>(sc).first(u.back().spec.weight_count()),
                                                std::span<const double>(sc).subspan(u.back().spec.weight_count())});
  EXPECT_LT(max_abs_diff(b.forward(x, w), expect), 1e-15);
}

TEST(GSBottleneck, MatchesCompositionOracle) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 24; ++trial) {
    const int c1 = 4 * (1 + trial % 4);
    const bool bias = trial % 2 == 1;
    GSBottleneck b(c1, bias);
    const auto x = oracle::random_tensor({1, c1, 6, 7}, rng);
    const auto w = weights_for(b.units(), rng);
    oracle::Params p(w);
    const auto ref = oracle::gs_bottleneck(x, bias, p);
    EXPECT_EQ(p.used(), w.size());
    EXPECT_LT(max_abs_diff(b.forward(x, w), ref), 1e-12);
  }
}

TEST(GSBottleneck, RejectsOddInput) {
  EXPECT_THROW(GSBottleneck(7), ConfigError);
  EXPECT_THROW(GSBottleneck(6), ConfigError);  // inner width 3 cannot feed a GSConv
}

// ---------------------------------------------------------------- VoVGSCSPC

TEST(VoVGSCSPC, PreservesSpatialSize) {
  VoVGSCSPC v(8, 8);
  std::mt19937_64 rng(4);
  EXPECT_EQ(v.forward(oracle::random_tensor({1, 8, 16, 16}, rng), weights_for(v.units(), rng)).shape(),
            (Shape{1, 8, 16, 16}));
}

TEST(VoVGSCSPC, FuseConvSeesExactlyC1Channels) {
  for (int c1 : {4, 8, 16, 64}) {
    VoVGSCSPC v(c1, 3);
    EXPECT_EQ(v.fuse().c1, c1);
    EXPECT_EQ(v.units().back().spec.c1, c1);
  }
}

TEST(VoVGSCSPC, MatchesCompositionOracle) {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 24; ++trial) {
    const int c1 = 4 * (1 + trial % 3);
    const int c2 = 1 + trial % 7;
    const bool bias = trial % 2 == 0;
    VoVGSCSPC v(c1, c2, bias);
    const auto x = oracle::random_tensor({1 + trial % 2, c1, 6, 5}, rng);
    const auto w = weights_for(v.units(), rng);
    oracle::Params p(w);
    const auto ref = oracle::vov_gscspc(x, c2, bias, p);
    EXPECT_EQ(p.used(), w.size());
    EXPECT_LT(max_abs_diff(v.forward(x, w), ref), 1e-12);
  }
}

TEST(VoVGSCSPC, RejectsOddInput) { EXPECT_THROW(VoVGSCSPC(9, 8), ConfigError); }

// ---------------------------------------------------------------- LEDH

namespace {
std::vector<Tensor> pyramid(const std::vector<int>& ch, int base, std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < ch.size(); ++i) out.push_back(oracle::random_tensor({1, ch[i], base >> i, base >> i}, rng));
  return out;
}
}  // namespace

TEST(LEDH, OutputChannelsAre4rPlusClasses) {
  LEDH h({{16, 32, 64, 64}, 2, 16, 16, false});
  std::mt19937_64 rng(5);
  const auto w = weights_for(h.level_units(2), rng);
  const auto y = h.forward_level(oracle::random_tensor({1, 64, 80, 80}, rng), 2, w);
  EXPECT_EQ(y.shape(), (Shape{1, 66, 80, 80}));
}

TEST(LEDH, GroupCountIsChannelsOverSixteen) {
  LEDH h({{32, 64, 128, 256}, 2, 16, 16, true});
  EXPECT_EQ(h.groups(0), 2);
  EXPECT_EQ(h.groups(3), 16);
  EXPECT_TRUE(h.adjustments().empty());
}

TEST(LEDH, IndivisibleWidthRoundsGroupsDownAndReportsIt) {
  EXPECT_EQ(ledh_groups(48, 16), 3);
  EXPECT_EQ(ledh_groups(40, 16), 2);
  EXPECT_EQ(ledh_groups(17, 16), 1);
  EXPECT_EQ(ledh_groups(66, 16), 3);  // 66/16 = 4 does not divide 66; 3 does
  LEDH h({{40, 64, 128, 256}, 2, 16, 16, false});
  ASSERT_EQ(h.adjustments().size(), 1u);
  EXPECT_NE(h.adjustments()[0].find("groups rounded to 2"), std::string::npos);
}

TEST(LEDH, RejectsWrongLevelCountAndNarrowLevels) {
  EXPECT_THROW(LEDH({{32, 64, 128}, 2, 16, 16, false}), ConfigError);
  EXPECT_THROW(LEDH({{8, 64, 128, 256}, 2, 16, 16, false}), ConfigError);
  LEDH h({{16, 16, 16, 16}, 2, 16, 16, false});
  std::mt19937_64 rng(6);
  const auto w = weights_for(h.units(), rng);
  auto levels = pyramid({16, 16, 16, 16}, 16, rng);
  levels.pop_back();
  EXPECT_THROW(h.forward(levels, w), ConfigError);
}

TEST(LEDH, RejectsLevelsThatDoNotHalve) {
  LEDH h({{16, 16, 16, 16}, 2, 16, 16, false});
  std::mt19937_64 rng(7);
  auto levels = pyramid({16, 16, 16, 16}, 16, rng);
  levels[3] = oracle::random_tensor({1, 16, 3, 3}, rng);
  EXPECT_THROW(h.forward(levels, weights_for(h.units(), rng)), ShapeError);
}

TEST(LEDH, MatchesCompositionOracle) {
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<int> ch{16, 32, 32 + 16 * (trial % 2), 48};
    const int nc = 1 + trial % 3;
    const int r = 2 + trial % 3;
    const bool bias = trial % 2 == 0;
    LEDH h({ch, nc, r, 16, bias});
    const auto levels = pyramid(ch, 8, rng);
    const auto w = weights_for(h.units(), rng);
    const auto out = h.forward(levels, w);
    oracle::Params p(w);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto ref = oracle::ledh_level(levels[i], ledh_groups(ch[i], 16), r, nc, bias, p);
      EXPECT_LT(max_abs_diff(out[i], ref), 1e-12);
    }
    EXPECT_EQ(p.used(), w.size());
  }
}

TEST(LEDH, SharedStackFeedsBothBranches) {
  std::mt19937_64 rng(29);
  const int r = 4;
  const int nc = 3;
  LEDH h({{16, 16, 16, 16}, nc, r, 16, true});
  const auto x = oracle::random_tensor({1, 16, 6, 6}, rng);
  const auto u = h.level_units(0);
  auto w = weights_for(u, rng);
  const auto base = h.forward_level(x, 0, w);

  // Perturb one weight of the first grouped conv.
  auto bumped = w;
  bumped[5] += 0.25;
  const auto moved = h.forward_level(x, 0, bumped);
  EXPECT_GT(max_abs_diff(slice_channels(base, 0, 4 * r), slice_channels(moved, 0, 4 * r)), 0.0);
  EXPECT_GT(max_abs_diff(slice_channels(base, 4 * r, nc), slice_channels(moved, 4 * r, nc)), 0.0);

  // Zero the classification 1x1: regression logits unchanged, and vice versa.
  const std::size_t shared = u[0].spec.param_count() + u[1].spec.param_count();
  const std::size_t box = u[2].spec.param_count();
  auto no_cls = w;
  std::fill(no_cls.begin() + static_cast<std::ptrdiff_t>(shared + box), no_cls.end(), 0.0);
  const auto a = h.forward_level(x, 0, no_cls);
  EXPECT_EQ(slice_channels(a, 0, 4 * r), slice_channels(base, 0, 4 * r));
  auto no_box = w;
  std::fill(no_box.begin() + static_cast<std::ptrdiff_t>(shared), no_box.begin() + static_cast<std::ptrdiff_t>(shared + box), 0.0);
  const auto b = h.forward_level(x, 0, no_box);
  EXPECT_EQ(slice_channels(b, 4 * r, nc), slice_channels(base, 4 * r, nc));
}

TEST(LEDH, CheaperThanDenseHeadAtEqualChannels) {
  for (int c : {32, 64, 128, 256}) {
    LEDH l({{c, c, c, c}, 2, 16, 16, true});
    DenseHead d({{c, c, c, c}, 2, 16, true});
    Cost lc;
    Cost dc;
    for (const auto& u : l.level_units(0)) lc += count_conv(u.spec, 40, 40);
    for (const auto& u : d.level_units(0)) dc += count_conv(u.spec, 40, 40);
    EXPECT_LT(lc.flops, dc.flops) << c;
  }
}

// ---------------------------------------------------------------- dense head and proxies

TEST(DenseHead, BranchWidthsFollowTheReferenceHead) {
  DenseHead p2({{32, 64, 128, 256}, 2, 16, true});
  EXPECT_EQ(p2.box_width(), 64);
  EXPECT_EQ(p2.cls_width(), 32);
  DenseHead p3({{64, 128, 256}, 2, 16, true});
  EXPECT_EQ(p3.cls_width(), 64);
  std::mt19937_64 rng(8);
  const auto levels = pyramid({64, 128, 256}, 8, rng);
  const auto out = p3.forward(levels, weights_for(p3.units(), rng));
  ASSERT_EQ(out.size(), 3u);
  for (const auto& t : out) EXPECT_EQ(t.c(), 66);
}

TEST(Proxies, ShapesAndWeightConsumption) {
  std::mt19937_64 rng(9);
  for (bool c3k : {false, true}) {
    C3k2Proxy c({16, 32, 1, c3k, 0.5, true, true});
    const auto x = oracle::random_tensor({1, 16, 8, 8}, rng);
    EXPECT_EQ(c.forward(x, weights_for(c.units(), rng)).shape(), (Shape{1, 32, 8, 8}));
    EXPECT_THROW(c.forward(x, oracle::random_vector(param_count(c.units()) + 1, rng)), ShapeError);
  }
  SPPFProxy s(32, 32, 5, true);
  EXPECT_EQ(s.forward(oracle::random_tensor({1, 32, 5, 5}, rng), weights_for(s.units(), rng)).shape(),
            (Shape{1, 32, 5, 5}));
  C2PSAProxy a(256, 1, true);
  EXPECT_EQ(a.heads(), 2);
  EXPECT_EQ(a.forward(oracle::random_tensor({1, 256, 2, 2}, rng), weights_for(a.units(), rng)).shape(),
            (Shape{1, 256, 2, 2}));
}

TEST(Blocks, OutputsStayFiniteForBoundedInputs) {
  std::mt19937_64 rng(30);
  const auto x = oracle::random_tensor({1, 16, 8, 8}, rng);
  VoVGSCSPC v(16, 16, true);
  GhostConv g({16, 16, 3, 5, 2, true});
  GSConv s({16, 16, 1, 3, true});
  EXPECT_TRUE(all_finite(v.forward(x, weights_for(v.units(), rng))));
  EXPECT_TRUE(all_finite(g.forward(x, weights_for(g.units(), rng))));
  EXPECT_TRUE(all_finite(s.forward(x, weights_for(s.units(), rng))));
}
