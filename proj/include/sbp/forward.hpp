#pragma once

// Executes a shape-inferred ArchGraph on a batch.

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sbp/blocks.hpp"
#include "sbp/error.hpp"
#include "sbp/graph.hpp"
#include "sbp/ops.hpp"
#include "sbp/weights.hpp"

namespace sbp {

struct ForwardResult {
  std::vector<Tensor> heads;                  // one per head level, finest first
  std::vector<std::vector<Shape3>> node_shapes;  // observed output shapes, indexed by node id
};

inline Shape3 shape3(const Tensor& t) { return {t.c(), t.h(), t.w()}; }

inline ForwardResult forward(const ArchGraph& g, const Tensor& x, const WeightStore& weights) {
  if (!g.shaped()) throw UsageError("forward needs a shape-inferred graph");
  if (shape3(x) != g.meta.input) {
    throw ShapeError("input", "graph expects " + to_string(g.meta.input) + ", got " + to_string(shape3(x)));
  }

  // Drop each activation after its last reader.
  const std::size_t count = g.nodes.size();
  std::vector<std::size_t> last_use(count, 0);
  for (const auto& n : g.nodes) {
    for (int ref : n.inputs) {
      if (ref != kInputId) last_use[static_cast<std::size_t>(ref)] = static_cast<std::size_t>(n.id);
    }
  }

  ForwardResult result;
  result.node_shapes.resize(count);
  std::vector<Tensor> outputs(count);
  for (const auto& n : g.nodes) {
    std::vector<Tensor> in;
    in.reserve(n.inputs.size());
    for (int ref : n.inputs) in.push_back(ref == kInputId ? x : outputs[static_cast<std::size_t>(ref)]);

    const NodeBlock block = make_block(n, input_shapes(g, n));
    std::span<const double> w;
    if (has_weights(n.kind)) {
      w = weights.at(n.id);
      const std::size_t need = block_param_count(block);
      if (w.size() != need) {
        throw WeightError(n.id, "expects " + std::to_string(need) + " parameters, store holds " +
                                    std::to_string(w.size()));
      }
    }

    std::vector<Tensor> produced;
    switch (n.kind) {
      case LayerKind::upsample:
        produced.push_back(upsample2x_nearest(in[0]));
        break;
      case LayerKind::concat:
        produced.push_back(concat_channels(in));
        break;
      case LayerKind::add:
        produced.push_back(add(in[0], in[1]));
        break;
      default:
        std::visit(
            [&](const auto& blk) {
              using T = std::decay_t<decltype(blk)>;
              if constexpr (std::is_same_v<T, std::monostate>) {
                throw UsageError("node " + std::to_string(n.id) + " has no block");
              } else if constexpr (std::is_same_v<T, ConvUnit>) {
                WeightCursor cursor(w);
                produced.push_back(apply(in[0], blk, cursor));
                cursor.expect_exhausted("conv");
              } else if constexpr (std::is_same_v<T, LEDH> || std::is_same_v<T, DenseHead>) {
                produced = blk.forward(in, w);
              } else {
                produced.push_back(blk.forward(in[0], w));
              }
            },
            block);
    }

    for (const auto& t : produced) result.node_shapes[static_cast<std::size_t>(n.id)].push_back(shape3(t));
    if (is_head(n.kind)) {
      result.heads = std::move(produced);
    } else {
      outputs[static_cast<std::size_t>(n.id)] = std::move(produced.front());
    }
    for (int ref : n.inputs) {
      if (ref != kInputId && last_use[static_cast<std::size_t>(ref)] == static_cast<std::size_t>(n.id)) {
        outputs[static_cast<std::size_t>(ref)] = Tensor();
      }
    }
  }
  return result;
}

// Input-pixel stride of each head level.
inline std::vector<int> head_strides(const ArchGraph& g) {
  std::vector<int> strides;
  const auto head = g.head();
  if (!head) return strides;
  for (const auto& s : g.node(*head).out_shapes) strides.push_back(g.meta.input.h / s.h);
  return strides;
}

}  // namespace sbp
