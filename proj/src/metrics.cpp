#include "skupatch/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "skupatch/errors.hpp"

namespace skupatch {

namespace {

std::size_t intersection_count(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("mask sizes differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) n += (a.data[i] & b.data[i]) ? 1 : 0;
  return n;
}

double f_from(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

double case_iou(const Detection& d, const EvalCase& c, std::size_t g, IouKind kind) {
  if (kind == IouKind::kBox) return box_iou(to_corners(d.box), to_corners(c.gt_boxes.at(g)));
  return mask_iou(d.mask, c.gt_masks.at(g));
}

std::size_t gt_count(const EvalCase& c, IouKind kind) {
  return kind == IouKind::kBox ? c.gt_boxes.size() : c.gt_masks.size();
}

// Greedy matching of one case's detections (given in processing order).
// Returns per-detection true-positive flags.
std::vector<bool> greedy_match(const EvalCase& c, const std::vector<std::size_t>& order, double thr, IouKind kind) {
  std::vector<bool> taken(gt_count(c, kind), false);
  std::vector<bool> tp(c.detections.size(), false);
  for (std::size_t d : order) {
    double best = thr;
    std::ptrdiff_t best_g = -1;
    for (std::size_t g = 0; g < taken.size(); ++g) {
      if (taken[g]) continue;
      const double iou = case_iou(c.detections[d], c, g, kind);
      if (iou >= best) {
        if (best_g < 0 || iou > best) {
          best = iou;
          best_g = static_cast<std::ptrdiff_t>(g);
        }
      }
    }
    if (best_g >= 0) {
      taken[static_cast<std::size_t>(best_g)] = true;
      tp[d] = true;
    }
  }
  return tp;
}

std::vector<std::size_t> score_order(const EvalCase& c) {
  std::vector<std::size_t> order(c.detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return c.detections[a].score > c.detections[b].score; });
  return order;
}

}  // namespace

double mask_iou(const Mask& a, const Mask& b) {
  const double inter = static_cast<double>(intersection_count(a, b));
  const double uni = static_cast<double>(a.count() + b.count()) - inter;
  return uni > 0 ? inter / uni : 1.0;
}

double average_precision(const std::vector<EvalCase>& cases, double thr, IouKind kind) {
  std::size_t total_gt = 0;
  struct Ranked {
    double score;
    std::size_t c, d;
    bool tp;
  };
  std::vector<Ranked> ranked;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    total_gt += gt_count(c, kind);
    // Within one case, greedy matching in score order equals the pooled
    // order restricted to that case.
    const auto tp = greedy_match(c, score_order(c), thr, kind);
    for (std::size_t d = 0; d < c.detections.size(); ++d) ranked.push_back({c.detections[d].score, ci, d, tp[d]});
  }
  if (total_gt == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].tp ? 1 : 0;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double average_precision_50_95(const std::vector<EvalCase>& cases, IouKind kind) {
  double sum = 0;
  for (int i = 0; i < 10; ++i) sum += average_precision(cases, 0.5 + 0.05 * i, kind);
  return sum / 10.0;
}

PrecisionRecall OverlapTally::result() const {
  PrecisionRecall r;
  r.precision = predicted > 0 ? overlap / predicted : 0.0;
  r.recall = truth > 0 ? overlap / truth : 0.0;
  r.f_measure = f_from(r.precision, r.recall);
  return r;
}

OverlapTally overlap_tally(const std::vector<Mask>& predicted, const std::vector<Mask>& truth) {
  OverlapTally t;
  for (const auto& p : predicted) t.predicted += static_cast<double>(p.count());
  for (const auto& g : truth) t.truth += static_cast<double>(g.count());
  if (predicted.empty() || truth.empty()) return t;
  CostMatrix cost(predicted.size(), truth.size());
  std::vector<double> inter(predicted.size() * truth.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double n = static_cast<double>(intersection_count(predicted[i], truth[j]));
      inter[i * truth.size() + j] = n;
      const double p = predicted[i].count() ? n / static_cast<double>(predicted[i].count()) : 0.0;
      const double r = truth[j].count() ? n / static_cast<double>(truth[j].count()) : 0.0;
      cost.at(i, j) = -f_from(p, r);
    }
  }
  for (const auto& [i, j] : hungarian(cost).pairs) t.overlap += inter[i * truth.size() + j];
  return t;
}

PrecisionRecall overlap_prf(const std::vector<Mask>& predicted, const std::vector<Mask>& truth) {
  return overlap_tally(predicted, truth).result();
}

PrecisionRecall DetectionTally::result() const {
  PrecisionRecall r;
  r.precision = detections ? static_cast<double>(true_positives) / static_cast<double>(detections) : 0.0;
  r.recall = ground_truth ? static_cast<double>(true_positives) / static_cast<double>(ground_truth) : 0.0;
  r.f_measure = f_from(r.precision, r.recall);
  return r;
}

DetectionTally detection_tally(const EvalCase& c, double thr, double score_threshold) {
  EvalCase kept;
  kept.gt_masks = c.gt_masks;
  kept.gt_boxes = c.gt_boxes;
  for (const auto& d : c.detections) {
    if (d.score >= score_threshold) kept.detections.push_back(d);
  }
  const auto tp = greedy_match(kept, score_order(kept), thr, IouKind::kMask);
  DetectionTally t;
  t.true_positives = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), true));
  t.detections = kept.detections.size();
  t.ground_truth = kept.gt_masks.size();
  return t;
}

std::string EvalReport::summary() const {
  std::string out;
  char buf[64];
  for (const auto& [k, v] : metrics) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out += k + " = " + buf + "\n";
  }
  return out;
}

std::string EvalReport::full() const {
  std::string out = summary();
  char buf[64];
  for (std::size_t i = 0; i < per_case.size(); ++i) {
    for (const auto& [k, v] : per_case[i]) {
      std::snprintf(buf, sizeof buf, "%.6f", v);
      out += "case" + std::to_string(i) + "." + k + " = " + buf + "\n";
    }
  }
  return out;
}

EvalReport evaluate_cases(const std::vector<EvalCase>& cases, double score_threshold) {
  EvalReport report;
  report.metrics["mAP50"] = average_precision(cases, 0.5);
  report.metrics["mAP75"] = average_precision(cases, 0.75);
  report.metrics["mAP50:95"] = average_precision_50_95(cases);
  DetectionTally det_total;
  OverlapTally overlap_total;
  for (const auto& c : cases) {
    const DetectionTally dt = detection_tally(c, 0.5, score_threshold);
    std::vector<Mask> kept;
    for (const auto& d : c.detections) {
      if (d.score >= score_threshold) kept.push_back(d.mask);
    }
    const OverlapTally ot = overlap_tally(kept, c.gt_masks);
    det_total.true_positives += dt.true_positives;
    det_total.detections += dt.detections;
    det_total.ground_truth += dt.ground_truth;
    overlap_total += ot;
    const auto dr = dt.result();
    const auto orr = ot.result();
    report.per_case.push_back({{"ground_truth", static_cast<double>(dt.ground_truth)},
                               {"detections", static_cast<double>(dt.detections)},
                               {"recall", dr.recall},
                               {"precision", dr.precision},
                               {"overlap_precision", orr.precision},
                               {"overlap_recall", orr.recall}});
  }
  const auto dr = det_total.result();
  report.metrics["recall"] = dr.recall;
  report.metrics["precision"] = dr.precision;
  report.metrics["f_measure"] = dr.f_measure;
  const auto orr = overlap_total.result();
  report.metrics["overlap_precision"] = orr.precision;
  report.metrics["overlap_recall"] = orr.recall;
  report.metrics["overlap_f_measure"] = orr.f_measure;
  return report;
}

}  // namespace skupatch
