#pragma once

// Set matching between predictions and ground truth, box geometry, and the
// composite training loss.

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "skupatch/config.hpp"
#include "skupatch/model.hpp"

namespace skupatch {

struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  std::vector<std::size_t> unmatched_rows;
  double cost = 0.0;  // summed over pairs in row order
};

/// Minimum-cost assignment of min(rows, cols) pairs. Shortest augmenting path
/// with potentials, O(n²·m); when several columns reach the same reduced cost
/// the lowest index is taken, so results are deterministic. Throws InputError
/// on non-finite costs.
MatchResult hungarian(const CostMatrix& cost);

/// Axis-aligned box in corner form.
struct Corners {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

using BoxCxcywh = std::array<double, 4>;

Corners to_corners(const BoxCxcywh& box);
double box_area(const Corners& b);
double box_iou(const Corners& a, const Corners& b);
/// IoU − (hull − union)/hull. A zero-area box contributes IoU 0; the hull
/// term is skipped when the hull is empty.
double giou(const Corners& a, const Corners& b);

struct MatchWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;

  static MatchWeights from(const ModelConfig& config) {
    return {config.weight_class, config.weight_l1, config.weight_giou};
  }
};

/// cls·(−p_object) + l1·‖box − gt‖₁ + giou·(1 − GIoU).
double match_cost(double p_object, const BoxCxcywh& box, const BoxCxcywh& gt, const MatchWeights& w);

/// Ground truth for one instance of the queried SKU.
struct InstanceTarget {
  BoxCxcywh box{};                 // normalized (cx, cy, w, h)
  std::vector<double> mask_vector;  // encoded mask, n_c values
};

template <class T>
CostMatrix build_cost_matrix(const Predictions<T>& preds, const std::vector<InstanceTarget>& targets,
                             const MatchWeights& w);

template <class T>
struct LossBreakdown {
  Tensor<T> total;  // differentiable
  double class_ce = 0;
  double box_l1 = 0;
  double box_giou = 0;
  double mask_l1 = 0;
  double weight_class = 0, weight_l1 = 0, weight_giou = 0, weight_mask = 0;
};

/// Matched predictions are pushed towards their targets and class 0; the
/// rest towards "no object". Box smooth-L1 sums the four coordinates and
/// averages over pairs; mask smooth-L1 averages over all coefficients.
/// Throws ConfigError when there are more targets than queries.
template <class T>
LossBreakdown<T> total_loss(const Predictions<T>& preds, const std::vector<InstanceTarget>& targets,
                            const MatchResult& match, const ModelConfig& config);

/// Builds the cost matrix, matches and evaluates total_loss.
template <class T>
LossBreakdown<T> matched_loss(const Predictions<T>& preds, const std::vector<InstanceTarget>& targets,
                              const ModelConfig& config, MatchResult* match_out = nullptr);

}  // namespace skupatch
