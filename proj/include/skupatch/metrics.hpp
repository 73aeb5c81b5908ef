#pragma once

// Detection and segmentation quality metrics.

#include <map>
#include <string>
#include <vector>

#include "skupatch/matching.hpp"
#include "skupatch/raster.hpp"

namespace skupatch {

/// |A ∩ B| / |A ∪ B|; two empty masks give 1. Throws DimensionError on a size
/// mismatch.
double mask_iou(const Mask& a, const Mask& b);

struct Detection {
  double score = 0;
  BoxCxcywh box{};
  Mask mask;
};

/// Everything needed to score one (image, query SKU) evaluation case.
struct EvalCase {
  std::vector<Detection> detections;
  std::vector<Mask> gt_masks;
  std::vector<BoxCxcywh> gt_boxes;
};

enum class IouKind { kMask, kBox };

/// All-point interpolated AP with detections pooled over cases and sorted by
/// descending score (ties by case, then detection index). Each ground truth is
/// matched at most once, to the unmatched one with the highest IoU at or above
/// the threshold. Returns 0 when there is no ground truth.
double average_precision(const std::vector<EvalCase>& cases, double iou_threshold, IouKind kind = IouKind::kMask);

/// Mean of average_precision over thresholds 0.50, 0.55, ..., 0.95.
double average_precision_50_95(const std::vector<EvalCase>& cases, IouKind kind = IouKind::kMask);

struct PrecisionRecall {
  double precision = 0;
  double recall = 0;
  double f_measure = 0;
};

/// Pixel-overlap P/R/F for one set of predicted and true masks. Predictions
/// are paired with truths by a maximum-F-measure assignment; P sums matched
/// overlap over all predicted pixels, R over all true pixels.
struct OverlapTally {
  double overlap = 0;
  double predicted = 0;
  double truth = 0;

  OverlapTally& operator+=(const OverlapTally& o) {
    overlap += o.overlap;
    predicted += o.predicted;
    truth += o.truth;
    return *this;
  }
  PrecisionRecall result() const;
};

OverlapTally overlap_tally(const std::vector<Mask>& predicted, const std::vector<Mask>& truth);
PrecisionRecall overlap_prf(const std::vector<Mask>& predicted, const std::vector<Mask>& truth);

/// Detection-level counts at one IoU threshold among detections scoring at
/// least `score_threshold`.
struct DetectionTally {
  std::size_t true_positives = 0;
  std::size_t detections = 0;
  std::size_t ground_truth = 0;
  PrecisionRecall result() const;
};

DetectionTally detection_tally(const EvalCase& c, double iou_threshold, double score_threshold);

struct EvalReport {
  std::map<std::string, double> metrics;
  std::vector<std::map<std::string, double>> per_case;

  /// Summary lines `key = value`, sorted by key.
  std::string summary() const;
  /// Summary followed by `case<i>.<key> = value` lines.
  std::string full() const;
};

/// mAP50, mAP75, mAP50:95, recall, precision, f_measure (detections at IoU
/// 0.5 above the score threshold), overlap_precision, overlap_recall and
/// overlap_f_measure.
EvalReport evaluate_cases(const std::vector<EvalCase>& cases, double score_threshold = 0.5);

}  // namespace skupatch
