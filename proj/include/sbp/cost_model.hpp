#pragma once

// Static parameter / FLOP accounting over an ArchGraph.
//
// Convention: one multiply-accumulate is two FLOPs, the factor-2 form used by
// the standard-convolution cost formula F = 2 c1 c2 H W k^2. Activations,
// pooling, upsampling and concatenation are bookkeeping and cost zero. Bias
// parameters are counted; bias additions are tracked separately and left out
// of the headline FLOP figure.

#include <cstdint>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sbp/blocks.hpp"
#include "sbp/error.hpp"
#include "sbp/graph.hpp"

namespace sbp {

struct Cost {
  std::int64_t params = 0;
  std::int64_t flops = 0;       // 2 FLOPs per MAC, bias adds excluded
  std::int64_t bias_flops = 0;  // one add per biased output element

  std::int64_t macs() const noexcept { return flops / 2; }

  Cost& operator+=(const Cost& o) noexcept {
    params += o.params;
    flops += o.flops;
    bias_flops += o.bias_flops;
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) noexcept { return a += b; }
  friend bool operator==(const Cost&, const Cost&) = default;
};

// h and w are the conv's OUTPUT extent.
inline Cost count_conv(const ConvSpec& spec, int h, int w) {
  validate(spec);
  const std::int64_t per_out = static_cast<std::int64_t>(spec.c1 / spec.groups) * spec.k * spec.k;
  const std::int64_t outputs = static_cast<std::int64_t>(spec.c2) * h * w;
  Cost c;
  c.params = per_out * spec.c2 + (spec.bias ? spec.c2 : 0);
  c.flops = 2 * per_out * outputs;
  c.bias_flops = spec.bias ? outputs : 0;
  return c;
}

// Closed-form GhostConv cost:
//   P = c1 (c2/2) k_m^2 + (c2/2) k_c^2
//   F = 2 c1 (c2/2) H W k_m^2 + 2 (c2/2) H W k_c^2
inline Cost count_ghost(const GhostSpec& s, int h, int w) {
  if (s.c2 < 2 || s.c2 % 2 != 0) throw ConfigError("ghost: c2 must be even");
  const std::int64_t half = s.c2 / 2;
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const std::int64_t km2 = static_cast<std::int64_t>(s.k_main) * s.k_main;
  const std::int64_t kc2 = static_cast<std::int64_t>(s.k_cheap) * s.k_cheap;
  Cost c;
  c.params = s.c1 * half * km2 + half * kc2 + (s.bias ? 2 * half : 0);
  c.flops = 2 * s.c1 * half * hw * km2 + 2 * half * hw * kc2;
  c.bias_flops = s.bias ? 2 * half * hw : 0;
  return c;
}

// Exact non-negative rational, kept in lowest terms.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Ratio of(std::int64_t n, std::int64_t d) {
    if (d == 0) throw ConfigError("ratio with zero denominator");
    const std::int64_t g = std::gcd(n, d);
    return {n / g, d / g};
  }
  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

// (k_m^2 + k_c^2 / c1) / (2 k^2), as an exact rational.
inline Ratio ghost_param_ratio_closed_form(int c1, int k_main, int k_cheap, int k) {
  return Ratio::of(static_cast<std::int64_t>(c1) * k_main * k_main + static_cast<std::int64_t>(k_cheap) * k_cheap,
                   2LL * c1 * k * k);
}

// Ghost-to-standard FLOP ratio derived from the two FLOP formulas themselves:
// (c1 k_m^2 + k_c^2) / (2 c1 k^2), the same value as the parameter ratio.
inline Ratio ghost_flop_ratio_first_principles(int c1, int k_main, int k_cheap, int k) {
  return ghost_param_ratio_closed_form(c1, k_main, k_cheap, k);
}

// (k_m^2 + k_c^2 / c1) / k^2: ghost FLOPs at 2/MAC over the standard conv's
// MAC count. Mixing conventions makes it exactly twice the same-convention ratio.
inline Ratio ghost_flop_ratio_mixed(int c1, int k_main, int k_cheap, int k) {
  return Ratio::of(static_cast<std::int64_t>(c1) * k_main * k_main + static_cast<std::int64_t>(k_cheap) * k_cheap,
                   static_cast<std::int64_t>(c1) * k * k);
}

struct LayerCost {
  int id = 0;
  LayerKind kind = LayerKind::conv;
  Cost cost;
};

struct CostReport {
  Shape3 input;
  std::vector<LayerCost> per_layer;
  Cost totals;
  std::vector<std::string> notes;
};

// Each conv unit of a node, with the output extent it is evaluated at.
struct PlacedUnit {
  ConvUnit unit;
  int out_h = 0;
  int out_w = 0;
};

inline std::vector<PlacedUnit> placed_units(const ArchGraph& g, const LayerNode& n) {
  const auto groups = block_units(make_block(n, input_shapes(g, n)));
  std::vector<PlacedUnit> placed;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Shape3& at = n.out_shapes.at(i);
    for (const auto& u : groups[i]) placed.push_back({u, at.h, at.w});
  }
  return placed;
}

inline Cost node_cost(const ArchGraph& g, const LayerNode& n) {
  Cost c;
  for (const auto& p : placed_units(g, n)) c += count_conv(p.unit.spec, p.out_h, p.out_w);
  return c;
}

inline CostReport analyze(const ArchGraph& g) {
  if (!g.shaped()) throw UsageError("analyze needs a shape-inferred graph; run infer_shapes first");
  CostReport r;
  r.input = g.meta.input;
  for (const auto& n : g.nodes) {
    const LayerCost lc{n.id, n.kind, node_cost(g, n)};
    r.totals += lc.cost;
    r.per_layer.push_back(lc);
    if (n.kind == LayerKind::ledh_head) {
      const auto block = make_block(n, input_shapes(g, n));
      for (const auto& note : std::get<LEDH>(block).adjustments()) {
        r.notes.push_back("node " + std::to_string(n.id) + " " + note);
      }
    }
  }
  r.notes.push_back("bias parameters counted; bias additions excluded from flops (" +
                    std::to_string(r.totals.bias_flops) + " adds)");
  return r;
}

// Machine-readable report. flops_per_mac selects the convention of the flops column (1 or 2).
inline void write_cost_records(std::ostream& os, const CostReport& r, int flops_per_mac, const std::string& extra = {}) {
  if (flops_per_mac != 1 && flops_per_mac != 2) throw UsageError("flops_per_mac must be 1 or 2");
  auto flops = [&](const Cost& c) { return flops_per_mac == 2 ? c.flops : c.macs(); };
  os << "# cost-report input=" << r.input.c << "x" << r.input.h << "x" << r.input.w
     << " flops_per_mac=" << flops_per_mac << " bias_in_flops=false";
  if (!extra.empty()) os << " " << extra;
  os << "\n";
  os << "# id kind params flops\n";
  for (const auto& l : r.per_layer) os << l.id << " " << to_string(l.kind) << " " << l.cost.params << " " << flops(l.cost) << "\n";
  os << "total " << r.totals.params << " " << flops(r.totals) << "\n";
  for (const auto& n : r.notes) os << "# note: " << n << "\n";
}

// Human-readable table with both conventions side by side.
inline void write_cost_table(std::ostream& os, const CostReport& r) {
  std::ostringstream line;
  os << "input " << r.input.c << "x" << r.input.h << "x" << r.input.w << "\n";
  os << std::left << std::setw(5) << "id" << std::setw(15) << "kind" << std::right << std::setw(12) << "params"
     << std::setw(18) << "FLOPs(2/MAC)" << std::setw(18) << "FLOPs(1/MAC)" << "\n";
  for (const auto& l : r.per_layer) {
    os << std::left << std::setw(5) << l.id << std::setw(15) << to_string(l.kind) << std::right << std::setw(12)
       << l.cost.params << std::setw(18) << l.cost.flops << std::setw(18) << l.cost.macs() << "\n";
  }
  os << std::fixed << std::setprecision(3);
  os << "total params " << r.totals.params << " (" << static_cast<double>(r.totals.params) / 1e6 << " M)\n";
  os << "total GFLOPs " << static_cast<double>(r.totals.flops) / 1e9 << " (2 FLOPs/MAC), "
     << static_cast<double>(r.totals.macs()) / 1e9 << " (1 FLOP/MAC)\n";
  os.unsetf(std::ios::floatfield);
  for (const auto& n : r.notes) os << "note: " << n << "\n";
}

}  // namespace sbp
