#pragma once

// Anchor-free decoding of head outputs into scored boxes, followed by
// class-wise greedy non-maximum suppression.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "sbp/box.hpp"
#include "sbp/detection.hpp"
#include "sbp/error.hpp"
#include "sbp/tensor.hpp"

namespace sbp {

struct DecodeOptions {
  int num_classes = 2;
  int reg_max = 16;
  double score_threshold = 0.25;
  double iou_threshold = 0.7;
};

// Softmax expectation over bins 0..r-1.
inline double distribution_expectation(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  double acc = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double p = std::exp(logits[j] - m);
    z += p;
    acc += p * static_cast<double>(j);
  }
  return acc / z;
}

inline double sigmoid(double v) noexcept { return 1.0 / (1.0 + std::exp(-v)); }

// Greedy NMS within each (image, class). Input order breaks score ties.
inline std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<Detection> kept;
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> survivors;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    auto& bucket = survivors[{d.image_id, d.class_id}];
    const bool suppressed = std::any_of(bucket.begin(), bucket.end(), [&](std::size_t k) {
      return iou(kept[k].box, d.box) > iou_threshold;
    });
    if (!suppressed) {
      bucket.push_back(kept.size());
      kept.push_back(d);
    }
  }
  return kept;
}

// heads[i] is (n, 4r + n_c, h_i, w_i); strides[i] maps its cells to input pixels.
// Batch index n becomes the image id.
inline std::vector<Detection> decode_detections(std::span<const Tensor> heads, std::span<const int> strides,
                                                const DecodeOptions& opt) {
  if (heads.size() != strides.size()) {
    throw ShapeError("levels", std::to_string(heads.size()) + " head maps but " + std::to_string(strides.size()) +
                                   " strides");
  }
  const int r = opt.reg_max;
  const int expected = 4 * r + opt.num_classes;
  std::vector<Detection> candidates;
  std::vector<double> bins(static_cast<std::size_t>(r));
  for (std::size_t lvl = 0; lvl < heads.size(); ++lvl) {
    const Tensor& t = heads[lvl];
    if (t.c() != expected) {
      throw ShapeError("channels", "head level " + std::to_string(lvl) + " has " + std::to_string(t.c()) +
                                       " channels, expected 4*" + std::to_string(r) + "+" +
                                       std::to_string(opt.num_classes) + "=" + std::to_string(expected));
    }
    const double stride = strides[lvl];
    for (int n = 0; n < t.n(); ++n) {
      for (int y = 0; y < t.h(); ++y) {
        for (int x = 0; x < t.w(); ++x) {
          std::array<double, 4> dist{};  // left, top, right, bottom
          for (int side = 0; side < 4; ++side) {
            for (int j = 0; j < r; ++j) bins[j] = t.at(n, side * r + j, y, x);
            dist[side] = distribution_expectation(bins) * stride;
          }
          const double ax = (x + 0.5) * stride;
          const double ay = (y + 0.5) * stride;
          const double x1 = ax - dist[0];
          const double y1 = ay - dist[1];
          const double x2 = ax + dist[2];
          const double y2 = ay + dist[3];
          const Box box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
          for (int k = 0; k < opt.num_classes; ++k) {
            const double score = sigmoid(t.at(n, 4 * r + k, y, x));
            if (score >= opt.score_threshold) candidates.push_back({std::to_string(n), k, box, score});
          }
        }
      }
    }
  }
  return non_max_suppression(std::move(candidates), opt.iou_threshold);
}

}  // namespace sbp
