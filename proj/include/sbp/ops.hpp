#pragma once

// Forward-only tensor primitives: convolution (dense, grouped, depthwise),
// channel bookkeeping, and the elementwise ops needed to assemble a detector neck.
//
// Convolution is cross-correlation with zero padding. Every tap is evaluated,
// padded ones included, so the multiply-accumulate count of one call is exactly
// c2 * (c1/g) * k * k * oh * ow.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sbp/error.hpp"
#include "sbp/tensor.hpp"

namespace sbp {

struct ConvSpec {
  int c1 = 1;
  int c2 = 1;
  int k = 1;
  int stride = 1;
  int pad = 0;
  int groups = 1;
  bool bias = false;

  // Padding defaults to k/2, which keeps the spatial size at stride 1.
  static ConvSpec same(int c1, int c2, int k, int stride = 1, int groups = 1, bool bias = false) {
    return ConvSpec{c1, c2, k, stride, k / 2, groups, bias};
  }

  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(c2) * static_cast<std::size_t>(c1 / groups) * static_cast<std::size_t>(k) *
           static_cast<std::size_t>(k);
  }
  std::size_t bias_count() const noexcept { return bias ? static_cast<std::size_t>(c2) : 0; }
  std::size_t param_count() const noexcept { return weight_count() + bias_count(); }

  int out_extent(int in) const noexcept { return (in + 2 * pad - k) / stride + 1; }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline void validate(const ConvSpec& s) {
  if (s.c1 < 1 || s.c2 < 1) throw ConfigError("conv channels must be >= 1");
  if (s.k < 1) throw ConfigError("conv kernel must be >= 1, got " + std::to_string(s.k));
  if (s.stride < 1) throw ConfigError("conv stride must be >= 1, got " + std::to_string(s.stride));
  if (s.pad < 0) throw ConfigError("conv padding must be >= 0, got " + std::to_string(s.pad));
  if (s.groups < 1) throw ConfigError("conv groups must be >= 1, got " + std::to_string(s.groups));
  if (s.c1 % s.groups != 0 || s.c2 % s.groups != 0) {
    throw ConfigError("conv channels " + std::to_string(s.c1) + "->" + std::to_string(s.c2) +
                      " not divisible by groups=" + std::to_string(s.groups));
  }
}

// Kernel tensor laid out (c2, c1/g, k, k) followed by an optional length-c2 bias.
struct WeightBlock {
  std::span<const double> weights;
  std::span<const double> bias;
};

// Worker threads used by conv2d. Results do not depend on this value.
inline std::atomic<int>& thread_budget() {
  static std::atomic<int> budget{1};
  return budget;
}

inline void set_threads(int n) { thread_budget().store(std::max(1, n)); }

namespace detail {
inline std::atomic<std::atomic<std::int64_t>*>& mac_sink() {
  static std::atomic<std::atomic<std::int64_t>*> sink{nullptr};
  return sink;
}
}  // namespace detail

// While alive, every conv2d call adds the multiply-accumulates it executes.
class ScopedMacCounter {
 public:
  ScopedMacCounter() { previous_ = detail::mac_sink().exchange(&count_); }
  ~ScopedMacCounter() { detail::mac_sink().store(previous_); }
  ScopedMacCounter(const ScopedMacCounter&) = delete;
  ScopedMacCounter& operator=(const ScopedMacCounter&) = delete;

  std::int64_t count() const noexcept { return count_.load(); }

 private:
  std::atomic<std::int64_t> count_{0};
  std::atomic<std::int64_t>* previous_ = nullptr;
};

inline Tensor conv2d(const Tensor& x, const ConvSpec& spec, WeightBlock wb) {
  validate(spec);
  if (x.c() != spec.c1) {
    throw ShapeError("channels", "conv expects c1=" + std::to_string(spec.c1) + " input channels, got " +
                                     std::to_string(x.c()));
  }
  if (wb.weights.size() != spec.weight_count()) {
    throw ShapeError("weights", "conv expects " + std::to_string(spec.weight_count()) + " kernel values, got " +
                                    std::to_string(wb.weights.size()));
  }
  if (wb.bias.size() != spec.bias_count()) {
    throw ShapeError("bias", "conv expects " + std::to_string(spec.bias_count()) + " bias values, got " +
                                 std::to_string(wb.bias.size()));
  }
  const int oh = spec.out_extent(x.h());
  const int ow = spec.out_extent(x.w());
  if (oh < 1) throw ShapeError("height", "kernel " + std::to_string(spec.k) + " exceeds padded input");
  if (ow < 1) throw ShapeError("width", "kernel " + std::to_string(spec.k) + " exceeds padded input");

  // Zero-padded copy of the input so the inner loops never branch.
  const int ph = x.h() + 2 * spec.pad;
  const int pw = x.w() + 2 * spec.pad;
  std::vector<double> padded(static_cast<std::size_t>(x.n()) * x.c() * ph * pw, 0.0);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      double* dst = padded.data() + (static_cast<std::size_t>(n) * x.c() + c) * ph * pw;
      auto src = x.channel(n, c);
      for (int y = 0; y < x.h(); ++y) {
        std::copy_n(src.data() + static_cast<std::size_t>(y) * x.w(), x.w(),
                    dst + static_cast<std::size_t>(y + spec.pad) * pw + spec.pad);
      }
    }
  }

  Tensor out(Shape{x.n(), spec.c2, oh, ow});
  const int cin_g = spec.c1 / spec.groups;
  const int cout_g = spec.c2 / spec.groups;
  const int k = spec.k;
  const int s = spec.stride;
  const std::int64_t plane_macs = static_cast<std::int64_t>(oh) * ow;

  auto run = [&](int first, int last, std::int64_t& macs) {
    for (int job = first; job < last; ++job) {
      const int n = job / spec.c2;
      const int oc = job % spec.c2;
      const int g = oc / cout_g;
      auto dst = out.channel(n, oc);
      std::fill(dst.begin(), dst.end(), wb.bias.empty() ? 0.0 : wb.bias[oc]);
      for (int icl = 0; icl < cin_g; ++icl) {
        const double* src = padded.data() + (static_cast<std::size_t>(n) * x.c() + g * cin_g + icl) * ph * pw;
        const double* kern = wb.weights.data() + (static_cast<std::size_t>(oc) * cin_g + icl) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = kern[ky * k + kx];
            for (int oy = 0; oy < oh; ++oy) {
              const double* row = src + static_cast<std::size_t>(oy * s + ky) * pw + kx;
              double* orow = dst.data() + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = 0; ox < ow; ++ox) orow[ox] += wv * row[ox];
              } else {
                for (int ox = 0; ox < ow; ++ox) orow[ox] += wv * row[ox * s];
              }
            }
            macs += plane_macs;
          }
        }
      }
    }
  };

  const int jobs = x.n() * spec.c2;
  const int workers = std::clamp(thread_budget().load(), 1, jobs);
  std::int64_t total_macs = 0;
  if (workers == 1) {
    run(0, jobs, total_macs);
  } else {
    std::vector<std::int64_t> partial(workers, 0);
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      const int first = jobs * t / workers;
      const int last = jobs * (t + 1) / workers;
      pool.emplace_back([&, t, first, last] { run(first, last, partial[t]); });
    }
    pool.clear();
    for (auto m : partial) total_macs += m;
  }
  if (auto* sink = detail::mac_sink().load()) sink->fetch_add(total_macs);
  return out;
}

// One k x k kernel per channel: conv2d with groups == channels.
inline Tensor depthwise_conv2d(const Tensor& x, int k, WeightBlock wb, int stride = 1) {
  return conv2d(x, ConvSpec::same(x.c(), x.c(), k, stride, x.c(), !wb.bias.empty()), wb);
}

// Output channel j takes input channel (j mod groups) * (c / groups) + j / groups.
inline Tensor channel_shuffle(const Tensor& x, int groups) {
  if (groups < 1 || x.c() % groups != 0) {
    throw ConfigError("channel_shuffle: " + std::to_string(x.c()) + " channels not divisible by groups=" +
                      std::to_string(groups));
  }
  const int per_group = x.c() / groups;
  Tensor out(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int j = 0; j < x.c(); ++j) {
      auto src = x.channel(n, (j % groups) * per_group + j / groups);
      std::copy(src.begin(), src.end(), out.channel(n, j).begin());
    }
  }
  return out;
}

// Inverse permutation of channel_shuffle(x, groups).
inline Tensor channel_unshuffle(const Tensor& x, int groups) {
  if (groups < 1 || x.c() % groups != 0) {
    throw ConfigError("channel_unshuffle: " + std::to_string(x.c()) + " channels not divisible by groups=" +
                      std::to_string(groups));
  }
  return channel_shuffle(x, x.c() / groups);
}

inline Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("channels", "concat of zero tensors");
  const Shape& ref = xs.front().shape();
  int channels = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Shape& s = xs[i].shape();
    if (s.n != ref.n) throw ShapeError("batch", "concat input " + std::to_string(i) + " has n=" + std::to_string(s.n));
    if (s.h != ref.h || s.w != ref.w) {
      throw ShapeError("spatial", "concat input " + std::to_string(i) + " is " + to_string(s) + ", input 0 is " +
                                      to_string(ref));
    }
    channels += s.c;
  }
  Tensor out(Shape{ref.n, channels, ref.h, ref.w});
  for (int n = 0; n < ref.n; ++n) {
    int base = 0;
    for (const Tensor& t : xs) {
      for (int c = 0; c < t.c(); ++c) {
        auto src = t.channel(n, c);
        std::copy(src.begin(), src.end(), out.channel(n, base + c).begin());
      }
      base += t.c();
    }
  }
  return out;
}

inline Tensor concat_channels(std::initializer_list<Tensor> xs) {
  return concat_channels(std::span<const Tensor>(xs.begin(), xs.size()));
}

// Channels [first, first + count).
inline Tensor slice_channels(const Tensor& x, int first, int count) {
  if (first < 0 || count < 1 || first + count > x.c()) {
    throw ShapeError("channels", "slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                                     ") outside " + std::to_string(x.c()) + " channels");
  }
  Tensor out(Shape{x.n(), count, x.h(), x.w()});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < count; ++c) {
      auto src = x.channel(n, first + c);
      std::copy(src.begin(), src.end(), out.channel(n, c).begin());
    }
  }
  return out;
}

inline Tensor add(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw ShapeError("tensor", "add of " + to_string(x.shape()) + " and " + to_string(y.shape()));
  Tensor out = x;
  auto d = out.data();
  auto s = y.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  return out;
}

inline Tensor upsample2x_nearest(const Tensor& x) {
  Tensor out(Shape{x.n(), x.c(), x.h() * 2, x.w() * 2});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int y = 0; y < out.h(); ++y) {
        for (int xx = 0; xx < out.w(); ++xx) out.at(n, c, y, xx) = x.at(n, c, y / 2, xx / 2);
      }
    }
  }
  return out;
}

inline double silu(double v) noexcept { return v / (1.0 + std::exp(-v)); }

inline Tensor silu(Tensor x) {
  for (double& v : x.data()) v = silu(v);
  return x;
}

// Max pooling; padded positions never win.
inline Tensor maxpool(const Tensor& x, int k, int stride, int pad) {
  if (k < 1 || stride < 1 || pad < 0) throw ConfigError("maxpool: invalid k/stride/pad");
  const int oh = (x.h() + 2 * pad - k) / stride + 1;
  const int ow = (x.w() + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw ShapeError("spatial", "maxpool window exceeds padded input");
  Tensor out(Shape{x.n(), x.c(), oh, ow});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double m = -std::numeric_limits<double>::infinity();
          for (int ky = 0; ky < k; ++ky) {
            const int y = oy * stride + ky - pad;
            if (y < 0 || y >= x.h()) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int xx = ox * stride + kx - pad;
              if (xx < 0 || xx >= x.w()) continue;
              m = std::max(m, x.at(n, c, y, xx));
            }
          }
          out.at(n, c, oy, ox) = m;
        }
      }
    }
  }
  return out;
}

}  // namespace sbp
