#pragma once

// Box-regression losses: plain IoU loss, the normalized Wasserstein distance
// (NWD) between box Gaussians, and their weighted mix. Gradients are analytic
// and taken with respect to the predicted box (cx, cy, w, h).

#include <array>
#include <cmath>
#include <string>

#include "sbp/box.hpp"
#include "sbp/error.hpp"

namespace sbp {

using BoxGradient = std::array<double, 4>;  // d/d(cx, cy, w, h)

struct LossTerm {
  double value = 0.0;
  BoxGradient grad{};
};

struct HybridLossParams {
  double c = 0.5;          // NWD normalization constant
  double iou_ratio = 0.5;  // weight of the IoU term; 1 - iou_ratio weighs the NWD term
};

inline void validate(const HybridLossParams& p) {
  if (!(p.c > 0.0) || !std::isfinite(p.c)) throw ConfigError("NWD constant C must be > 0");
  if (!(p.iou_ratio >= 0.0 && p.iou_ratio <= 1.0)) throw ConfigError("iou_ratio must lie in [0, 1]");
}

// Squared 2-Wasserstein distance between N((cx, cy), diag(w^2/4, h^2/4)) Gaussians.
inline double wasserstein_sq(const Box& a, const Box& b) {
  require_valid(a, "predicted box");
  require_valid(b, "target box");
  const double dx = a.cx - b.cx;
  const double dy = a.cy - b.cy;
  const double dw = 0.5 * (a.w - b.w);
  const double dh = 0.5 * (a.h - b.h);
  return dx * dx + dy * dy + dw * dw + dh * dh;
}

inline double nwd(const Box& a, const Box& b, double c) {
  if (!(c > 0.0)) throw ConfigError("NWD constant C must be > 0");
  return std::exp(-std::sqrt(wasserstein_sq(a, b)) / c);
}

// 1 - NWD. At zero distance the gradient is the zero vector (the cone apex).
inline LossTerm nwd_loss(const Box& a, const Box& b, double c) {
  const double w2 = wasserstein_sq(a, b);
  const double d = std::sqrt(w2);
  const double sim = std::exp(-d / c);
  LossTerm t;
  t.value = 1.0 - sim;
  if (d > 0.0) {
    const double s = sim / (c * d);
    t.grad = {s * (a.cx - b.cx), s * (a.cy - b.cy), s * 0.25 * (a.w - b.w), s * 0.25 * (a.h - b.h)};
  }
  return t;
}

// 1 - IoU. The gradient is zero wherever the boxes do not overlap. On the
// measure-zero edges where two box sides coincide, the one-sided derivative
// that moves the predicted side is used.
inline LossTerm iou_loss(const Box& a, const Box& b) {
  require_valid(a, "predicted box");
  require_valid(b, "target box");
  LossTerm t;
  const double ix1 = std::max(a.x1(), b.x1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy1 = std::max(a.y1(), b.y1());
  const double iy2 = std::min(a.y2(), b.y2());
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) {
    t.value = 1.0;
    return t;
  }
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  t.value = 1.0 - inter / uni;

  // Which side of the overlap is owned by the predicted box.
  const double right = a.x2() <= b.x2() ? 1.0 : 0.0;
  const double left = a.x1() >= b.x1() ? 1.0 : 0.0;
  const double bottom = a.y2() <= b.y2() ? 1.0 : 0.0;
  const double top = a.y1() >= b.y1() ? 1.0 : 0.0;

  const double diw_dcx = right - left;
  const double diw_dw = 0.5 * (right + left);
  const double dih_dcy = bottom - top;
  const double dih_dh = 0.5 * (bottom + top);

  const BoxGradient d_inter{ih * diw_dcx, iw * dih_dcy, ih * diw_dw, iw * dih_dh};
  const BoxGradient d_area{0.0, 0.0, a.h, a.w};
  const double uu = uni * uni;
  for (std::size_t i = 0; i < 4; ++i) {
    const double d_union = d_area[i] - d_inter[i];
    t.grad[i] = -(d_inter[i] * uni - inter * d_union) / uu;
  }
  return t;
}

struct HybridLoss {
  double value = 0.0;
  BoxGradient grad{};
  LossTerm nwd;
  LossTerm iou;
};

// (1 - iou_ratio) * (1 - NWD) + iou_ratio * (1 - IoU), with its gradient.
inline HybridLoss hybrid_loss(const Box& a, const Box& b, const HybridLossParams& p) {
  validate(p);
  HybridLoss out;
  out.nwd = nwd_loss(a, b, p.c);
  out.iou = iou_loss(a, b);
  const double wn = 1.0 - p.iou_ratio;
  const double wi = p.iou_ratio;
  out.value = wn * out.nwd.value + wi * out.iou.value;
  for (std::size_t i = 0; i < 4; ++i) out.grad[i] = wn * out.nwd.grad[i] + wi * out.iou.grad[i];
  return out;
}

}  // namespace sbp
