#pragma once

// Finite-difference check of the hybrid loss gradient, and a 1D offset sweep
// comparing the IoU and NWD gradient along a horizontal shift.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "sbp/box.hpp"
#include "sbp/losses.hpp"

namespace sbp {

struct GradcheckOptions {
  int trials = 1000;
  std::uint64_t seed = 0x5b9'2024;
  HybridLossParams params;
  double step = 1e-6;
  double tolerance = 1e-4;
  double margin = 1e-4;  // keep every edge this far from its kinks
};

struct GradcheckResult {
  int trials = 0;
  int rejected = 0;  // pairs redrawn for sitting too close to a kink
  int disjoint = 0;
  double max_rel_error = 0.0;
  Box worst_a;
  Box worst_b;
  bool passed = false;
};

// Pairs whose edges nearly coincide, or whose overlap is nearly empty, or whose
// Gaussians nearly coincide, sit on a kink of one of the loss terms.
inline bool near_kink(const Box& a, const Box& b, double margin) {
  const std::array<double, 4> gaps{a.x1() - b.x1(), a.x2() - b.x2(), a.y1() - b.y1(), a.y2() - b.y2()};
  for (double g : gaps) {
    if (std::abs(g) < margin) return true;
  }
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (std::abs(iw) < margin || std::abs(ih) < margin) return true;
  return std::sqrt(wasserstein_sq(a, b)) < margin;
}

inline BoxGradient central_difference(const Box& a, const Box& b, const HybridLossParams& p, double h) {
  BoxGradient g{};
  for (std::size_t i = 0; i < 4; ++i) {
    Box hi = a;
    Box lo = a;
    double* ph = i == 0 ? &hi.cx : i == 1 ? &hi.cy : i == 2 ? &hi.w : &hi.h;
    double* pl = i == 0 ? &lo.cx : i == 1 ? &lo.cy : i == 2 ? &lo.w : &lo.h;
    *ph += h;
    *pl -= h;
    g[i] = (hybrid_loss(hi, b, p).value - hybrid_loss(lo, b, p).value) / (2.0 * h);
  }
  return g;
}

// |analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf, 1e-8); the floor
// keeps tiny gradients from inflating the ratio.
inline double relative_error(const BoxGradient& analytic, const BoxGradient& numeric) {
  double diff = 0.0;
  double scale = 1e-8;
  for (std::size_t i = 0; i < 4; ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

// Boxes in normalized image units: centers in [0, 1], sides in [0.02, 0.4],
// targets drawn near the prediction so overlapping and disjoint pairs both occur.
inline std::pair<Box, Box> sample_box_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> centre(0.0, 1.0);
  std::uniform_real_distribution<double> side(0.02, 0.4);
  std::uniform_real_distribution<double> shift(-0.3, 0.3);
  const Box a{centre(rng), centre(rng), side(rng), side(rng)};
  const Box b{a.cx + shift(rng), a.cy + shift(rng), side(rng), side(rng)};
  return {a, b};
}

inline GradcheckResult run_gradcheck(const GradcheckOptions& opt) {
  validate(opt.params);
  std::mt19937_64 rng(opt.seed);
  GradcheckResult r;
  while (r.trials < opt.trials) {
    const auto [a, b] = sample_box_pair(rng);
    if (near_kink(a, b, opt.margin)) {
      ++r.rejected;
      continue;
    }
    ++r.trials;
    if (iou(a, b) == 0.0) ++r.disjoint;
    const BoxGradient analytic = hybrid_loss(a, b, opt.params).grad;
    const BoxGradient numeric = central_difference(a, b, opt.params, opt.step);
    const double err = relative_error(analytic, numeric);
    if (err >= r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_a = a;
      r.worst_b = b;
    }
  }
  r.passed = r.max_rel_error < opt.tolerance;
  return r;
}

struct SweepRow {
  double offset = 0.0;
  double iou_loss = 0.0;
  double nwd_loss = 0.0;
  double iou_grad_cx = 0.0;
  double nwd_grad_cx = 0.0;
};

// Prediction slides along x past a fixed target of the same size.
inline std::vector<SweepRow> offset_sweep(const Box& target, double c, double from, double to, double step) {
  std::vector<SweepRow> rows;
  const int count = static_cast<int>(std::floor((to - from) / step + 1e-9)) + 1;
  for (int i = 0; i < count; ++i) {
    const double t = from + step * i;
    const Box a{target.cx + t, target.cy, target.w, target.h};
    const LossTerm il = iou_loss(a, target);
    const LossTerm nl = nwd_loss(a, target, c);
    rows.push_back({t, il.value, nl.value, il.grad[0], nl.grad[0]});
  }
  return rows;
}

}  // namespace sbp
