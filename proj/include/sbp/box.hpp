#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "sbp/error.hpp"

namespace sbp {

// Axis-aligned box in center-size form, pixel units.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const noexcept { return cx - 0.5 * w; }
  double x2() const noexcept { return cx + 0.5 * w; }
  double y1() const noexcept { return cy - 0.5 * h; }
  double y2() const noexcept { return cy + 0.5 * h; }
  double area() const noexcept { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline bool is_valid(const Box& b) noexcept {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && std::isfinite(b.w) && std::isfinite(b.h) && b.w > 0.0 &&
         b.h > 0.0;
}

inline const Box& require_valid(const Box& b, const char* what = "box") {
  if (!is_valid(b)) {
    throw ConfigError(std::string(what) + " must have finite coordinates and w > 0, h > 0 (got w=" +
                      std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")");
  }
  return b;
}

inline double intersection_area(const Box& a, const Box& b) noexcept {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  return (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
}

// Intersection over union. Degenerate pairs with zero union score 0.
inline double iou(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace sbp
