#pragma once

// Detection evaluation: greedy score-ordered matching, precision / recall,
// AP as the area under the precision envelope, and mAP over classes.
//
// Record files hold one object per line:
//   image_id class_id cx cy w h [score]
// in absolute pixels; the score column is present only for detections.
// '#' starts a comment.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sbp/box.hpp"
#include "sbp/detection.hpp"
#include "sbp/error.hpp"

namespace sbp {

// ---------------------------------------------------------------- record I/O

namespace detail {

template <typename Record>
std::vector<Record> read_records(std::istream& in, const std::string& source, bool with_score) {
  std::vector<Record> out;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t want = with_score ? 7 : 6;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    ss.imbue(std::locale::classic());
    std::vector<std::string> fields;
    for (std::string f; ss >> f;) fields.push_back(f);
    if (fields.empty()) continue;
    if (fields.size() != want) {
      throw ParseError(source, line_no, 0, "expected " + std::to_string(want) + " fields, got " +
                                               std::to_string(fields.size()));
    }
    auto number = [&](std::size_t i) {
      std::istringstream v(fields[i]);
      v.imbue(std::locale::classic());
      double d = 0.0;
      if (!(v >> d) || !v.eof() || !std::isfinite(d)) {
        throw ParseError(source, line_no, 0, "field " + std::to_string(i + 1) + " '" + fields[i] + "' is not a number");
      }
      return d;
    };
    Record r;
    r.image_id = fields[0];
    const double cls = number(1);
    if (cls < 0 || cls != std::floor(cls) || cls > 1e9) {
      throw ParseError(source, line_no, 0, "class_id must be a non-negative integer");
    }
    r.class_id = static_cast<int>(cls);
    r.box = Box{number(2), number(3), number(4), number(5)};
    if (!is_valid(r.box)) throw ParseError(source, line_no, 0, "box must have w > 0 and h > 0");
    if constexpr (std::is_same_v<Record, Detection>) {
      r.score = number(6);
      if (r.score < 0.0 || r.score > 1.0) throw ParseError(source, line_no, 0, "score must lie in [0, 1]");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

inline std::vector<Detection> read_detections(std::istream& in, const std::string& source = "<detections>") {
  return detail::read_records<Detection>(in, source, true);
}

inline std::vector<GroundTruth> read_ground_truths(std::istream& in, const std::string& source = "<ground-truth>") {
  return detail::read_records<GroundTruth>(in, source, false);
}

// ---------------------------------------------------------------- matching

struct MatchResult {
  std::vector<bool> true_positive;  // parallel to the detection list
  std::vector<int> matched_gt;      // gt index per detection, -1 when unmatched
  int false_negatives = 0;
};

// Within each (image, class), detections in descending score order (input
// order on ties) take the unmatched ground truth of highest IoU >= threshold;
// IoU ties go to the earlier ground truth.
inline MatchResult match(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_threshold) {
  using Key = std::pair<std::string, int>;
  std::map<Key, std::vector<std::size_t>> det_groups;
  std::map<Key, std::vector<std::size_t>> gt_groups;
  for (std::size_t i = 0; i < dets.size(); ++i) det_groups[{dets[i].image_id, dets[i].class_id}].push_back(i);
  for (std::size_t i = 0; i < gts.size(); ++i) gt_groups[{gts[i].image_id, gts[i].class_id}].push_back(i);

  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (auto& [key, idx] : det_groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    auto it = gt_groups.find(key);
    if (it == gt_groups.end()) continue;
    for (std::size_t d : idx) {
      double best = -1.0;
      int best_gt = -1;
      for (std::size_t gi : it->second) {
        if (taken[gi]) continue;
        const double v = iou(dets[d].box, gts[gi].box);
        if (v >= iou_threshold && v > best) {
          best = v;
          best_gt = static_cast<int>(gi);
        }
      }
      if (best_gt >= 0) {
        taken[static_cast<std::size_t>(best_gt)] = true;
        r.true_positive[d] = true;
        r.matched_gt[d] = best_gt;
      }
    }
  }
  r.false_negatives = static_cast<int>(std::count(taken.begin(), taken.end(), false));
  return r;
}

// ---------------------------------------------------------------- AP

enum class Interpolation { all_point, coco101 };

// `ranked_tp` lists detections of one class in descending score order.
// Returns nullopt when the class has no ground truth (AP undefined).
//
// all_point: sum over true positives of (1/total_gt) * max precision at any
// rank at or below it, i.e. the exact area under the precision envelope.
// coco101: mean of the envelope sampled at recall 0, 0.01, ..., 1.
inline std::optional<double> average_precision(std::span<const char> ranked_tp, int total_gt,
                                               Interpolation mode = Interpolation::all_point) {
  if (total_gt <= 0) return std::nullopt;
  const std::size_t n = ranked_tp.size();
  std::vector<double> precision(n);
  std::vector<double> recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_tp[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double ap = 0.0;
  if (mode == Interpolation::all_point) {
    const double step = 1.0 / static_cast<double>(total_gt);
    for (std::size_t i = 0; i < n; ++i) {
      if (ranked_tp[i]) ap += step * precision[i];
    }
  } else {
    for (int s = 0; s <= 100; ++s) {
      const double r = s / 100.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r - 1e-12);
      if (it != recall.end()) ap += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    ap /= 101.0;
  }
  return ap;
}

// ---------------------------------------------------------------- evaluate

struct ClassEval {
  int class_id = 0;
  int num_gt = 0;
  std::vector<double> ap;  // one per threshold
  double precision = 0.0;  // at IoU 0.50, over all detections of the class
  double recall = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct EvalCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<ClassEval> per_class;  // classes with ground truth, ascending id
  std::vector<int> skipped_classes;  // classes with detections but no ground truth
  double map50 = 0.0;
  double map50_95 = 0.0;
  EvalCounts counts;  // at IoU 0.50
};

// 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

inline EvalResult evaluate(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           Interpolation mode = Interpolation::all_point) {
  EvalResult res;
  res.thresholds = coco_thresholds();

  std::map<int, int> gt_per_class;
  for (const auto& g : gts) ++gt_per_class[g.class_id];
  std::set<int> det_classes;
  for (const auto& d : dets) det_classes.insert(d.class_id);
  for (int c : det_classes) {
    if (!gt_per_class.count(c)) res.skipped_classes.push_back(c);
  }

  // Global rank order: descending score, input order on ties.
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::map<int, ClassEval> classes;
  for (const auto& [c, n] : gt_per_class) {
    ClassEval ce;
    ce.class_id = c;
    ce.num_gt = n;
    classes[c] = ce;
  }

  for (std::size_t t = 0; t < res.thresholds.size(); ++t) {
    const MatchResult m = match(dets, gts, res.thresholds[t]);
    for (auto& [c, ce] : classes) {
      // vector<bool> has no contiguous storage, so flags are chars.
      std::vector<char> ranked;
      for (std::size_t i : order) {
        if (dets[i].class_id == c) ranked.push_back(m.true_positive[i] ? 1 : 0);
      }
      ce.ap.push_back(*average_precision(ranked, ce.num_gt, mode));
      if (t == 0) {
        ce.tp = static_cast<int>(std::count(ranked.begin(), ranked.end(), 1));
        ce.fp = static_cast<int>(ranked.size()) - ce.tp;
        ce.fn = ce.num_gt - ce.tp;
        ce.precision = ranked.empty() ? 0.0 : static_cast<double>(ce.tp) / static_cast<double>(ranked.size());
        ce.recall = static_cast<double>(ce.tp) / static_cast<double>(ce.num_gt);
      }
    }
  }

  for (auto& [c, ce] : classes) {
    res.counts.tp += ce.tp;
    res.counts.fp += ce.fp;
    res.counts.fn += ce.fn;
    res.per_class.push_back(std::move(ce));
  }
  for (int c : res.skipped_classes) {
    for (const auto& d : dets) {
      if (d.class_id == c) ++res.counts.fp;
    }
  }
  if (!res.per_class.empty()) {
    double s50 = 0.0;
    double s_all = 0.0;
    for (const auto& ce : res.per_class) {
      s50 += ce.ap.front();
      s_all += std::accumulate(ce.ap.begin(), ce.ap.end(), 0.0) / static_cast<double>(ce.ap.size());
    }
    res.map50 = s50 / static_cast<double>(res.per_class.size());
    res.map50_95 = s_all / static_cast<double>(res.per_class.size());
  }
  return res;
}

// ---------------------------------------------------------------- reports

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Machine-readable lines: `class_id threshold AP`, then per-class counts and the means.
inline void write_eval_records(std::ostream& os, const EvalResult& r) {
  os << "# class_id threshold AP\n";
  for (const auto& ce : r.per_class) {
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      os << ce.class_id << " " << fixed2(r.thresholds[t]) << " " << fixed6(ce.ap[t]) << "\n";
    }
  }
  os << "# counts class_id num_gt tp fp fn precision recall (IoU 0.50)\n";
  for (const auto& ce : r.per_class) {
    os << "counts " << ce.class_id << " " << ce.num_gt << " " << ce.tp << " " << ce.fp << " " << ce.fn << " "
       << fixed6(ce.precision) << " " << fixed6(ce.recall) << "\n";
  }
  if (!r.skipped_classes.empty()) {
    os << "skipped";
    for (int c : r.skipped_classes) os << " " << c;
    os << "\n";
  }
  os << "map50 " << fixed6(r.map50) << "\n";
  os << "map50_95 " << fixed6(r.map50_95) << "\n";
}

inline void write_eval_table(std::ostream& os, const EvalResult& r) {
  os << "class  gt   tp   fp   fn  precision  recall   AP50      AP50-95\n";
  for (const auto& ce : r.per_class) {
    const double mean = std::accumulate(ce.ap.begin(), ce.ap.end(), 0.0) / static_cast<double>(ce.ap.size());
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-6d %-4d %-4d %-4d %-4d %-10.4f %-8.4f %-9.4f %.4f\n", ce.class_id, ce.num_gt,
                  ce.tp, ce.fp, ce.fn, ce.precision, ce.recall, ce.ap.front(), mean);
    os << buf;
  }
  for (int c : r.skipped_classes) os << "class " << c << " skipped: no ground truth\n";
  os << "mAP50 " << fixed6(r.map50) << "  mAP50-95 " << fixed6(r.map50_95) << "\n";
}

}  // namespace sbp
