#pragma once

// Composite network blocks built from the primitives in ops.hpp.
//
// Every block exposes its convolutions as an ordered list of ConvUnits. The
// forward pass consumes one flat weight span in exactly that order, so the
// unit list is also the weight layout: unit i owns the next
// units[i].spec.param_count() values (kernel first, then bias).

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sbp/error.hpp"
#include "sbp/ops.hpp"
#include "sbp/tensor.hpp"

namespace sbp {

enum class Act { none, silu };

struct ConvUnit {
  ConvSpec spec;
  Act act = Act::silu;

  friend bool operator==(const ConvUnit&, const ConvUnit&) = default;
};

inline std::size_t param_count(std::span<const ConvUnit> units) {
  std::size_t total = 0;
  for (const auto& u : units) total += u.spec.param_count();
  return total;
}

// Hands out consecutive WeightBlocks from one flat parameter span.
class WeightCursor {
 public:
  explicit WeightCursor(std::span<const double> data) : data_(data) {}

  WeightBlock take(const ConvSpec& s) {
    const std::size_t need = s.param_count();
    if (pos_ + need > data_.size()) {
      throw ShapeError("weights", "block needs more than the " + std::to_string(data_.size()) +
                                      " parameters supplied");
    }
    WeightBlock wb{data_.subspan(pos_, s.weight_count()), data_.subspan(pos_ + s.weight_count(), s.bias_count())};
    pos_ += need;
    return wb;
  }

  std::size_t consumed() const noexcept { return pos_; }

  void expect_exhausted(const std::string& block) const {
    if (pos_ != data_.size()) {
      throw ShapeError("weights", block + " consumed " + std::to_string(pos_) + " of " +
                                      std::to_string(data_.size()) + " supplied parameters");
    }
  }

 private:
  std::span<const double> data_;
  std::size_t pos_ = 0;
};

inline Tensor apply(const Tensor& x, const ConvUnit& u, WeightCursor& cursor) {
  Tensor y = conv2d(x, u.spec, cursor.take(u.spec));
  return u.act == Act::silu ? silu(std::move(y)) : y;
}

namespace detail {
inline void require_even(int c, const char* block, const char* what) {
  if (c < 2 || c % 2 != 0) {
    throw ConfigError(std::string(block) + ": " + what + " must be even and >= 2, got " + std::to_string(c));
  }
}
inline void require_odd_kernel(int k, const char* block) {
  if (k < 1 || k % 2 == 0) throw ConfigError(std::string(block) + ": kernel must be odd, got " + std::to_string(k));
}
inline void require_input(const Tensor& x, int c1, const char* block) {
  if (x.c() != c1) {
    throw ShapeError("channels", std::string(block) + " expects " + std::to_string(c1) + " input channels, got " +
                                     std::to_string(x.c()));
  }
}
}  // namespace detail

// ---------------------------------------------------------------- GhostConv

struct GhostSpec {
  int c1 = 1;
  int c2 = 2;
  int k_main = 3;
  int k_cheap = 5;
  int stride = 1;
  bool bias = false;

  friend bool operator==(const GhostSpec&, const GhostSpec&) = default;
};

// Dense primary conv to c2/2 channels, then a depthwise k_cheap x k_cheap conv
// over the primary output produces the other c2/2 ("ghost") channels.
class GhostConv {
 public:
  explicit GhostConv(GhostSpec spec) : spec_(spec) {
    detail::require_even(spec_.c2, "ghost_conv", "c2");
    detail::require_odd_kernel(spec_.k_main, "ghost_conv");
    detail::require_odd_kernel(spec_.k_cheap, "ghost_conv");
    validate(primary());
  }

  const GhostSpec& spec() const noexcept { return spec_; }
  int out_channels() const noexcept { return spec_.c2; }

  ConvSpec primary() const { return ConvSpec::same(spec_.c1, spec_.c2 / 2, spec_.k_main, spec_.stride, 1, spec_.bias); }
  ConvSpec cheap() const {
    return ConvSpec::same(spec_.c2 / 2, spec_.c2 / 2, spec_.k_cheap, 1, spec_.c2 / 2, spec_.bias);
  }

  std::vector<ConvUnit> units() const { return {{primary(), Act::silu}, {cheap(), Act::silu}}; }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    detail::require_input(x, spec_.c1, "ghost_conv");
    WeightCursor cursor(weights);
    const auto u = units();
    Tensor main = apply(x, u[0], cursor);
    Tensor ghost = apply(main, u[1], cursor);
    cursor.expect_exhausted("ghost_conv");
    return concat_channels({std::move(main), std::move(ghost)});
  }

 private:
  GhostSpec spec_;
};

// ---------------------------------------------------------------- GSConv

struct GSConvSpec {
  int c1 = 1;
  int c2 = 2;
  int stride = 1;
  int k = 3;
  bool bias = false;

  friend bool operator==(const GSConvSpec&, const GSConvSpec&) = default;
};

// shuffle2(concat(sc(x), dw(sc(x)))): the depthwise branch reads the whole
// c2/2-channel output of the standard conv. Stride lives on the standard conv.
class GSConv {
 public:
  explicit GSConv(GSConvSpec spec) : spec_(spec) {
    detail::require_even(spec_.c2, "gs_conv", "c2");
    detail::require_odd_kernel(spec_.k, "gs_conv");
    validate(standard());
  }

  const GSConvSpec& spec() const noexcept { return spec_; }
  int out_channels() const noexcept { return spec_.c2; }

  ConvSpec standard() const { return ConvSpec::same(spec_.c1, spec_.c2 / 2, spec_.k, spec_.stride, 1, spec_.bias); }
  ConvSpec depthwise() const { return ConvSpec::same(spec_.c2 / 2, spec_.c2 / 2, 3, 1, spec_.c2 / 2, spec_.bias); }

  std::vector<ConvUnit> units() const { return {{standard(), Act::silu}, {depthwise(), Act::silu}}; }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    detail::require_input(x, spec_.c1, "gs_conv");
    WeightCursor cursor(weights);
    Tensor out = run(x, cursor);
    cursor.expect_exhausted("gs_conv");
    return out;
  }

  Tensor run(const Tensor& x, WeightCursor& cursor) const {
    const auto u = units();
    Tensor y1 = apply(x, u[0], cursor);
    Tensor y2 = apply(y1, u[1], cursor);
    return channel_shuffle(concat_channels({std::move(y1), std::move(y2)}), 2);
  }

 private:
  GSConvSpec spec_;
};

// ---------------------------------------------------------------- GSBottleneck

// out = gs(gs(proj(x))) + shortcut(x), all at c1/2 channels. The shortcut is a
// learned 1x1 projection without activation.
class GSBottleneck {
 public:
  GSBottleneck(int c1, bool bias = false) : c1_(c1), bias_(bias) {
    detail::require_even(c1_, "gs_bottleneck", "c1");
    detail::require_even(c1_ / 2, "gs_bottleneck", "c1/2");
  }

  int in_channels() const noexcept { return c1_; }
  int out_channels() const noexcept { return c1_ / 2; }

  ConvSpec projection() const { return ConvSpec::same(c1_, c1_ / 2, 1, 1, 1, bias_); }
  GSConv inner() const { return GSConv({c1_ / 2, c1_ / 2, 1, 3, bias_}); }
  ConvSpec shortcut() const { return ConvSpec::same(c1_, c1_ / 2, 1, 1, 1, bias_); }

  std::vector<ConvUnit> units() const {
    std::vector<ConvUnit> u{{projection(), Act::silu}};
    for (int i = 0; i < 2; ++i) {
      auto gs = inner().units();
      u.insert(u.end(), gs.begin(), gs.end());
    }
    u.push_back({shortcut(), Act::none});
    return u;
  }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    WeightCursor cursor(weights);
    Tensor out = run(x, cursor);
    cursor.expect_exhausted("gs_bottleneck");
    return out;
  }

  Tensor run(const Tensor& x, WeightCursor& cursor) const {
    detail::require_input(x, c1_, "gs_bottleneck");
    Tensor main = apply(x, {projection(), Act::silu}, cursor);
    const GSConv gs = inner();
    main = gs.run(main, cursor);
    main = gs.run(main, cursor);
    Tensor skip = apply(x, {shortcut(), Act::none}, cursor);
    return add(main, skip);
  }

 private:
  int c1_;
  bool bias_;
};

// ---------------------------------------------------------------- VoVGSCSPC

// out = conv1x1(concat(gs_bottleneck(x), conv1x1(x))) with both branches at
// c1/2 channels, so the fusing conv always sees exactly c1 channels.
class VoVGSCSPC {
 public:
  VoVGSCSPC(int c1, int c2, bool bias = false) : c1_(c1), c2_(c2), bias_(bias), bottleneck_(c1, bias) {
    if (c2_ < 1) throw ConfigError("vov_gscspc: c2 must be >= 1");
  }

  int in_channels() const noexcept { return c1_; }
  int out_channels() const noexcept { return c2_; }

  ConvSpec branch() const { return ConvSpec::same(c1_, c1_ / 2, 1, 1, 1, bias_); }
  ConvSpec fuse() const { return ConvSpec::same(c1_, c2_, 1, 1, 1, bias_); }

  std::vector<ConvUnit> units() const {
    auto u = bottleneck_.units();
    u.push_back({branch(), Act::silu});
    u.push_back({fuse(), Act::silu});
    return u;
  }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    detail::require_input(x, c1_, "vov_gscspc");
    WeightCursor cursor(weights);
    Tensor a = bottleneck_.run(x, cursor);
    Tensor b = apply(x, {branch(), Act::silu}, cursor);
    Tensor out = apply(concat_channels({std::move(a), std::move(b)}), {fuse(), Act::silu}, cursor);
    cursor.expect_exhausted("vov_gscspc");
    return out;
  }

 private:
  int c1_;
  int c2_;
  bool bias_;
  GSBottleneck bottleneck_;
};

// ---------------------------------------------------------------- LEDH

struct LEDHSpec {
  std::vector<int> channels;  // one entry per pyramid level, P2 first
  int num_classes = 2;
  int reg_max = 16;
  int divisor = 16;
  bool bias = false;

  friend bool operator==(const LEDHSpec&, const LEDHSpec&) = default;
};

// Group count for a c-channel level: c / divisor when exact, otherwise the
// largest divisor of c not exceeding c / divisor.
inline int ledh_groups(int c, int divisor) {
  if (divisor < 1) throw ConfigError("ledh: group divisor must be >= 1");
  if (c < divisor) {
    throw ConfigError("ledh: level with " + std::to_string(c) + " channels is below the group divisor " +
                      std::to_string(divisor));
  }
  for (int g = c / divisor; g > 1; --g) {
    if (c % g == 0) return g;
  }
  return 1;
}

// Per level: two stacked 3x3 grouped convs form one shared feature map F; a
// 1x1 conv to 4r box logits and a 1x1 conv to n_c class logits both read F.
class LEDH {
 public:
  static constexpr std::size_t kLevels = 4;

  explicit LEDH(LEDHSpec spec) : spec_(std::move(spec)) {
    if (spec_.channels.size() != kLevels) {
      throw ConfigError("ledh: expects " + std::to_string(kLevels) + " pyramid levels, got " +
                        std::to_string(spec_.channels.size()));
    }
    if (spec_.num_classes < 1) throw ConfigError("ledh: num_classes must be >= 1");
    if (spec_.reg_max < 1) throw ConfigError("ledh: reg_max must be >= 1");
    for (int c : spec_.channels) groups_.push_back(ledh_groups(c, spec_.divisor));
  }

  const LEDHSpec& spec() const noexcept { return spec_; }
  int groups(std::size_t level) const { return groups_.at(level); }
  int out_channels() const noexcept { return 4 * spec_.reg_max + spec_.num_classes; }

  // Levels whose group count was rounded because c is not a multiple of the divisor.
  std::vector<std::string> adjustments() const {
    std::vector<std::string> notes;
    for (std::size_t i = 0; i < kLevels; ++i) {
      const int c = spec_.channels[i];
      if (c % spec_.divisor != 0) {
        notes.push_back("level " + std::to_string(i) + ": " + std::to_string(c) + " channels not divisible by " +
                        std::to_string(spec_.divisor) + ", groups rounded to " + std::to_string(groups_[i]));
      }
    }
    return notes;
  }

  std::vector<ConvUnit> level_units(std::size_t level) const {
    const int c = spec_.channels.at(level);
    const int g = groups_.at(level);
    return {
        {ConvSpec::same(c, c, 3, 1, g, spec_.bias), Act::silu},
        {ConvSpec::same(c, c, 3, 1, g, spec_.bias), Act::silu},
        {ConvSpec::same(c, 4 * spec_.reg_max, 1, 1, 1, true), Act::none},
        {ConvSpec::same(c, spec_.num_classes, 1, 1, 1, true), Act::none},
    };
  }

  std::vector<ConvUnit> units() const {
    std::vector<ConvUnit> all;
    for (std::size_t i = 0; i < kLevels; ++i) {
      auto u = level_units(i);
      all.insert(all.end(), u.begin(), u.end());
    }
    return all;
  }

  Tensor forward_level(const Tensor& x, std::size_t level, std::span<const double> weights) const {
    detail::require_input(x, spec_.channels.at(level), "ledh");
    WeightCursor cursor(weights);
    const auto u = level_units(level);
    Tensor f = apply(x, u[0], cursor);
    f = apply(f, u[1], cursor);
    Tensor box = apply(f, u[2], cursor);
    Tensor cls = apply(f, u[3], cursor);
    cursor.expect_exhausted("ledh level " + std::to_string(level));
    return concat_channels({std::move(box), std::move(cls)});
  }

  std::vector<Tensor> forward(std::span<const Tensor> levels, std::span<const double> weights) const {
    check_levels(levels);
    std::vector<Tensor> out;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < kLevels; ++i) {
      const std::size_t n = param_count(level_units(i));
      if (offset + n > weights.size()) throw ShapeError("weights", "ledh weight span too short");
      out.push_back(forward_level(levels[i], i, weights.subspan(offset, n)));
      offset += n;
    }
    if (offset != weights.size()) throw ShapeError("weights", "ledh weight span too long");
    return out;
  }

 private:
  static void check_levels(std::span<const Tensor> levels) {
    if (levels.size() != kLevels) {
      throw ConfigError("ledh: expects " + std::to_string(kLevels) + " feature maps, got " +
                        std::to_string(levels.size()));
    }
    for (std::size_t i = 1; i < levels.size(); ++i) {
      const auto& hi = levels[i - 1];
      const auto& lo = levels[i];
      if (hi.h() != 2 * lo.h() || hi.w() != 2 * lo.w()) {
        throw ShapeError("spatial", "ledh level " + std::to_string(i) + " is " + to_string(lo.shape()) +
                                        ", expected half of " + to_string(hi.shape()));
      }
    }
  }

  LEDHSpec spec_;
  std::vector<int> groups_;
};

// ---------------------------------------------------------------- dense head

struct DenseHeadSpec {
  std::vector<int> channels;  // 1..4 levels, finest first
  int num_classes = 2;
  int reg_max = 16;
  bool bias = false;

  friend bool operator==(const DenseHeadSpec&, const DenseHeadSpec&) = default;
};

// YOLOv11-style decoupled head with separate conv stacks per branch:
//   box: 3x3 -> 3x3 -> 1x1(4r)
//   cls: dw3x3 -> 1x1 -> dw3x3 -> 1x1 -> 1x1(n_c)
// Branch widths follow the reference head: box max(16, c0/4, 4r), cls max(c0, min(n_c, 100)).
class DenseHead {
 public:
  explicit DenseHead(DenseHeadSpec spec) : spec_(std::move(spec)) {
    if (spec_.channels.empty() || spec_.channels.size() > 4) {
      throw ConfigError("plain_head: expects 1 to 4 levels, got " + std::to_string(spec_.channels.size()));
    }
    if (spec_.num_classes < 1) throw ConfigError("plain_head: num_classes must be >= 1");
    if (spec_.reg_max < 1) throw ConfigError("plain_head: reg_max must be >= 1");
  }

  const DenseHeadSpec& spec() const noexcept { return spec_; }
  std::size_t levels() const noexcept { return spec_.channels.size(); }
  int out_channels() const noexcept { return 4 * spec_.reg_max + spec_.num_classes; }
  int box_width() const { return std::max({16, spec_.channels[0] / 4, 4 * spec_.reg_max}); }
  int cls_width() const { return std::max(spec_.channels[0], std::min(spec_.num_classes, 100)); }

  std::vector<ConvUnit> level_units(std::size_t level) const {
    const int c = spec_.channels.at(level);
    const int cb = box_width();
    const int cc = cls_width();
    const bool b = spec_.bias;
    return {
        {ConvSpec::same(c, cb, 3, 1, 1, b), Act::silu},
        {ConvSpec::same(cb, cb, 3, 1, 1, b), Act::silu},
        {ConvSpec::same(cb, 4 * spec_.reg_max, 1, 1, 1, true), Act::none},
        {ConvSpec::same(c, c, 3, 1, c, b), Act::silu},
        {ConvSpec::same(c, cc, 1, 1, 1, b), Act::silu},
        {ConvSpec::same(cc, cc, 3, 1, cc, b), Act::silu},
        {ConvSpec::same(cc, cc, 1, 1, 1, b), Act::silu},
        {ConvSpec::same(cc, spec_.num_classes, 1, 1, 1, true), Act::none},
    };
  }

  std::vector<ConvUnit> units() const {
    std::vector<ConvUnit> all;
    for (std::size_t i = 0; i < levels(); ++i) {
      auto u = level_units(i);
      all.insert(all.end(), u.begin(), u.end());
    }
    return all;
  }

  Tensor forward_level(const Tensor& x, std::size_t level, std::span<const double> weights) const {
    detail::require_input(x, spec_.channels.at(level), "plain_head");
    WeightCursor cursor(weights);
    const auto u = level_units(level);
    Tensor box = apply(x, u[0], cursor);
    box = apply(box, u[1], cursor);
    box = apply(box, u[2], cursor);
    Tensor cls = apply(x, u[3], cursor);
    for (int i = 4; i < 8; ++i) cls = apply(cls, u[i], cursor);
    cursor.expect_exhausted("plain_head level " + std::to_string(level));
    return concat_channels({std::move(box), std::move(cls)});
  }

  std::vector<Tensor> forward(std::span<const Tensor> levels_in, std::span<const double> weights) const {
    if (levels_in.size() != levels()) {
      throw ConfigError("plain_head: expects " + std::to_string(levels()) + " feature maps, got " +
                        std::to_string(levels_in.size()));
    }
    std::vector<Tensor> out;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < levels(); ++i) {
      const std::size_t n = param_count(level_units(i));
      if (offset + n > weights.size()) throw ShapeError("weights", "plain_head weight span too short");
      out.push_back(forward_level(levels_in[i], i, weights.subspan(offset, n)));
      offset += n;
    }
    if (offset != weights.size()) throw ShapeError("weights", "plain_head weight span too long");
    return out;
  }

 private:
  DenseHeadSpec spec_;
};

// ---------------------------------------------------------------- baseline proxies
//
// Conv-only stand-ins for YOLOv11n's C3k2, SPPF and C2PSA. Channel widths and
// conv shapes follow the reference modules, so parameter and conv FLOP counts
// match them; attention matmuls in C2PSA are replaced by identity mixing.

struct C3k2Spec {
  int c1 = 1;
  int c2 = 1;
  int n = 1;
  bool c3k = false;
  double e = 0.5;
  bool shortcut = true;
  bool bias = false;

  friend bool operator==(const C3k2Spec&, const C3k2Spec&) = default;
};

class C3k2Proxy {
 public:
  explicit C3k2Proxy(C3k2Spec spec) : spec_(spec), c_(static_cast<int>(spec.c2 * spec.e)) {
    if (spec_.n < 1) throw ConfigError("c3k2_proxy: n must be >= 1");
    if (c_ < 2) throw ConfigError("c3k2_proxy: hidden width int(c2*e) must be >= 2");
    if (spec_.c3k && c_ / 2 < 1) throw ConfigError("c3k2_proxy: hidden width too small for c3k");
  }

  const C3k2Spec& spec() const noexcept { return spec_; }
  int out_channels() const noexcept { return spec_.c2; }
  int hidden() const noexcept { return c_; }

  std::vector<ConvUnit> units() const {
    const bool b = spec_.bias;
    std::vector<ConvUnit> u{{ConvSpec::same(spec_.c1, 2 * c_, 1, 1, 1, b), Act::silu}};
    for (int i = 0; i < spec_.n; ++i) {
      if (spec_.c3k) {
        const int h = c_ / 2;
        u.push_back({ConvSpec::same(c_, h, 1, 1, 1, b), Act::silu});
        u.push_back({ConvSpec::same(c_, h, 1, 1, 1, b), Act::silu});
        for (int j = 0; j < 2; ++j) {
          u.push_back({ConvSpec::same(h, h, 3, 1, 1, b), Act::silu});
          u.push_back({ConvSpec::same(h, h, 3, 1, 1, b), Act::silu});
        }
        u.push_back({ConvSpec::same(2 * h, c_, 1, 1, 1, b), Act::silu});
      } else {
        const int h = c_ / 2;
        u.push_back({ConvSpec::same(c_, h, 3, 1, 1, b), Act::silu});
        u.push_back({ConvSpec::same(h, c_, 3, 1, 1, b), Act::silu});
      }
    }
    u.push_back({ConvSpec::same((2 + spec_.n) * c_, spec_.c2, 1, 1, 1, b), Act::silu});
    return u;
  }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    detail::require_input(x, spec_.c1, "c3k2_proxy");
    const auto u = units();
    WeightCursor cursor(weights);
    std::size_t next = 0;
    Tensor stem = apply(x, u[next++], cursor);
    std::vector<Tensor> parts{slice_channels(stem, 0, c_), slice_channels(stem, c_, c_)};
    for (int i = 0; i < spec_.n; ++i) {
      const Tensor& in = parts.back();
      Tensor y;
      if (spec_.c3k) {
        Tensor a = apply(in, u[next++], cursor);
        Tensor b = apply(in, u[next++], cursor);
        for (int j = 0; j < 2; ++j) {
          Tensor t = apply(a, u[next++], cursor);
          t = apply(t, u[next++], cursor);
          a = spec_.shortcut ? add(a, t) : std::move(t);
        }
        y = apply(concat_channels({std::move(a), std::move(b)}), u[next++], cursor);
      } else {
        Tensor t = apply(in, u[next++], cursor);
        t = apply(t, u[next++], cursor);
        y = spec_.shortcut ? add(in, t) : std::move(t);
      }
      parts.push_back(std::move(y));
    }
    Tensor out = apply(concat_channels(parts), u[next++], cursor);
    cursor.expect_exhausted("c3k2_proxy");
    return out;
  }

 private:
  C3k2Spec spec_;
  int c_;
};

class SPPFProxy {
 public:
  SPPFProxy(int c1, int c2, int k = 5, bool bias = false) : c1_(c1), c2_(c2), k_(k), bias_(bias) {
    detail::require_even(c1_, "sppf_proxy", "c1");
    detail::require_odd_kernel(k_, "sppf_proxy");
    if (c2_ < 1) throw ConfigError("sppf_proxy: c2 must be >= 1");
  }

  int out_channels() const noexcept { return c2_; }
  int kernel() const noexcept { return k_; }

  std::vector<ConvUnit> units() const {
    return {{ConvSpec::same(c1_, c1_ / 2, 1, 1, 1, bias_), Act::silu},
            {ConvSpec::same(2 * c1_, c2_, 1, 1, 1, bias_), Act::silu}};
  }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    detail::require_input(x, c1_, "sppf_proxy");
    const auto u = units();
    WeightCursor cursor(weights);
    std::vector<Tensor> parts{apply(x, u[0], cursor)};
    for (int i = 0; i < 3; ++i) parts.push_back(maxpool(parts.back(), k_, 1, k_ / 2));
    Tensor out = apply(concat_channels(parts), u[1], cursor);
    cursor.expect_exhausted("sppf_proxy");
    return out;
  }

 private:
  int c1_;
  int c2_;
  int k_;
  bool bias_;
};

class C2PSAProxy {
 public:
  C2PSAProxy(int c1, int n = 1, bool bias = false) : c1_(c1), n_(n), bias_(bias), c_(c1 / 2) {
    detail::require_even(c1_, "c2psa_proxy", "c1");
    if (n_ < 1) throw ConfigError("c2psa_proxy: n must be >= 1");
    heads_ = std::max(c_ / 64, 1);
    head_dim_ = c_ / heads_;
    key_dim_ = head_dim_ / 2;
    if (key_dim_ < 1 || head_dim_ * heads_ != c_) throw ConfigError("c2psa_proxy: width does not split into heads");
  }

  int out_channels() const noexcept { return c1_; }
  int heads() const noexcept { return heads_; }

  std::vector<ConvUnit> units() const {
    const bool b = bias_;
    const int qkv = c_ + 2 * key_dim_ * heads_;
    std::vector<ConvUnit> u{{ConvSpec::same(c1_, 2 * c_, 1, 1, 1, b), Act::silu}};
    for (int i = 0; i < n_; ++i) {
      u.push_back({ConvSpec::same(c_, qkv, 1, 1, 1, b), Act::none});
      u.push_back({ConvSpec::same(c_, c_, 3, 1, c_, b), Act::none});
      u.push_back({ConvSpec::same(c_, c_, 1, 1, 1, b), Act::none});
      u.push_back({ConvSpec::same(c_, 2 * c_, 1, 1, 1, b), Act::silu});
      u.push_back({ConvSpec::same(2 * c_, c_, 1, 1, 1, b), Act::none});
    }
    u.push_back({ConvSpec::same(2 * c_, c1_, 1, 1, 1, b), Act::silu});
    return u;
  }

  Tensor forward(const Tensor& x, std::span<const double> weights) const {
    detail::require_input(x, c1_, "c2psa_proxy");
    const auto u = units();
    WeightCursor cursor(weights);
    std::size_t next = 0;
    Tensor stem = apply(x, u[next++], cursor);
    Tensor a = slice_channels(stem, 0, c_);
    Tensor b = slice_channels(stem, c_, c_);
    const int per_head = 2 * key_dim_ + head_dim_;
    for (int i = 0; i < n_; ++i) {
      Tensor qkv = apply(b, u[next++], cursor);
      std::vector<Tensor> values;
      for (int h = 0; h < heads_; ++h) values.push_back(slice_channels(qkv, h * per_head + 2 * key_dim_, head_dim_));
      Tensor v = concat_channels(values);
      Tensor mixed = add(v, apply(v, u[next++], cursor));
      b = add(b, apply(mixed, u[next++], cursor));
      Tensor ffn = apply(b, u[next++], cursor);
      b = add(b, apply(ffn, u[next++], cursor));
    }
    Tensor out = apply(concat_channels({std::move(a), std::move(b)}), u[next++], cursor);
    cursor.expect_exhausted("c2psa_proxy");
    return out;
  }

 private:
  int c1_;
  int n_;
  bool bias_;
  int c_;
  int heads_ = 1;
  int head_dim_ = 1;
  int key_dim_ = 1;
};

}  // namespace sbp
