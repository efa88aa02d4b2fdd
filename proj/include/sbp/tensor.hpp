#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sbp/error.hpp"

namespace sbp {

// Dense NCHW extent. Every component is at least 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }

// Owning rank-4 array of doubles in row-major (n, c, h, w) order.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(checked(shape)), data_(shape_.numel(), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(checked(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("data", "buffer holds " + std::to_string(data_.size()) + " values but shape " +
                                   to_string(shape_) + " needs " + std::to_string(shape_.numel()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::size_t offset(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(int n, int c, int y, int x) noexcept { return data_[offset(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const noexcept { return data_[offset(n, c, y, x)]; }

  // Contiguous h*w plane of one (batch, channel) pair.
  std::span<double> channel(int n, int c) noexcept { return {data_.data() + offset(n, c, 0, 0), shape_.plane()}; }
  std::span<const double> channel(int n, int c) const noexcept {
    return {data_.data() + offset(n, c, 0, 0), shape_.plane()};
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static Shape checked(Shape s) {
    if (s.n < 1) throw ShapeError("batch", "must be >= 1, got " + std::to_string(s.n));
    if (s.c < 1) throw ShapeError("channels", "must be >= 1, got " + std::to_string(s.c));
    if (s.h < 1) throw ShapeError("height", "must be >= 1, got " + std::to_string(s.h));
    if (s.w < 1) throw ShapeError("width", "must be >= 1, got " + std::to_string(s.w));
    return s;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("tensor", to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

}  // namespace sbp
