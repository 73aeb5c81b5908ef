#include "skupatch/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "skupatch/errors.hpp"

namespace skupatch {

MatchResult hungarian(const CostMatrix& cost) {
  for (double v : cost.values) {
    if (!std::isfinite(v)) throw InputError("assignment cost matrix contains a non-finite value");
  }
  MatchResult result;
  if (cost.rows == 0 || cost.cols == 0) {
    for (std::size_t r = 0; r < cost.rows; ++r) result.unmatched_rows.push_back(r);
    return result;
  }
  // The solver assigns every row of an n×m problem with n <= m.
  const bool transposed = cost.rows > cost.cols;
  const std::size_t n = transposed ? cost.cols : cost.rows;
  const std::size_t m = transposed ? cost.rows : cost.cols;
  auto a = [&](std::size_t i, std::size_t j) { return transposed ? cost.at(j - 1, i - 1) : cost.at(i - 1, j - 1); };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::ptrdiff_t> row_to_col(cost.rows, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t r = transposed ? j - 1 : p[j] - 1;
    const std::size_t c = transposed ? p[j] - 1 : j - 1;
    row_to_col[r] = static_cast<std::ptrdiff_t>(c);
  }
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (row_to_col[r] < 0) {
      result.unmatched_rows.push_back(r);
    } else {
      const auto c = static_cast<std::size_t>(row_to_col[r]);
      result.pairs.emplace_back(r, c);
      result.cost += cost.at(r, c);
    }
  }
  return result;
}

Corners to_corners(const BoxCxcywh& b) {
  return {b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

double box_area(const Corners& b) { return std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0); }

namespace {

double intersection(const Corners& a, const Corners& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0.0;
}

}  // namespace

double box_iou(const Corners& a, const Corners& b) {
  const double inter = intersection(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double giou(const Corners& a, const Corners& b) {
  const double inter = intersection(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  const double iou = uni > 0 ? inter / uni : 0.0;
  const Corners hull{std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
  const double hull_area = box_area(hull);
  if (!(hull_area > 0)) return iou;
  return iou - (hull_area - uni) / hull_area;
}

double match_cost(double p_object, const BoxCxcywh& box, const BoxCxcywh& gt, const MatchWeights& w) {
  double l1 = 0;
  for (std::size_t i = 0; i < 4; ++i) l1 += std::abs(box[i] - gt[i]);
  return w.cls * (-p_object) + w.l1 * l1 + w.giou * (1.0 - giou(to_corners(box), to_corners(gt)));
}

template <class T>
CostMatrix build_cost_matrix(const Predictions<T>& preds, const std::vector<InstanceTarget>& targets,
                             const MatchWeights& w) {
  const std::size_t k = preds.class_logits.rows();
  CostMatrix cost(k, targets.size());
  for (std::size_t i = 0; i < k; ++i) {
    const double l0 = static_cast<double>(preds.class_logits.at(i, 0));
    const double l1 = static_cast<double>(preds.class_logits.at(i, 1));
    const double p_obj = 1.0 / (1.0 + std::exp(l1 - l0));
    const BoxCxcywh box{static_cast<double>(preds.boxes.at(i, 0)), static_cast<double>(preds.boxes.at(i, 1)),
                        static_cast<double>(preds.boxes.at(i, 2)), static_cast<double>(preds.boxes.at(i, 3))};
    for (std::size_t j = 0; j < targets.size(); ++j) cost.at(i, j) = match_cost(p_obj, box, targets[j].box, w);
  }
  return cost;
}

template <class T>
LossBreakdown<T> total_loss(const Predictions<T>& preds, const std::vector<InstanceTarget>& targets,
                            const MatchResult& match, const ModelConfig& config) {
  const std::size_t k = preds.class_logits.rows();
  if (targets.size() > k) {
    throw ConfigError(std::to_string(targets.size()) + " ground-truth instances exceed " + std::to_string(k) +
                      " queries; raise the query count");
  }
  LossBreakdown<T> out;
  out.weight_class = config.weight_class;
  out.weight_l1 = config.weight_l1;
  out.weight_giou = config.weight_giou;
  out.weight_mask = config.weight_mask;

  std::vector<int> classes(k, 1);
  for (const auto& [r, c] : match.pairs) classes[r] = 0;
  const std::vector<T> class_weights{T(1), static_cast<T>(config.no_object_weight)};
  const Tensor<T> ce = cross_entropy_with_logits(preds.class_logits, std::span<const int>(classes),
                                                 std::span<const T>(class_weights));
  out.class_ce = static_cast<double>(ce.item());
  Tensor<T> total = scale(ce, static_cast<T>(config.weight_class));

  if (!match.pairs.empty()) {
    const std::size_t n = match.pairs.size();
    const std::size_t nc = preds.masks.cols();
    std::vector<std::size_t> rows(n);
    std::vector<T> box_t(n * 4), mask_t(n * nc);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& [r, c] = match.pairs[i];
      rows[i] = r;
      const auto& tgt = targets.at(c);
      if (tgt.mask_vector.size() != nc) throw DimensionError("target mask vector length does not match the mask head");
      for (std::size_t j = 0; j < 4; ++j) box_t[i * 4 + j] = static_cast<T>(tgt.box[j]);
      for (std::size_t j = 0; j < nc; ++j) mask_t[i * nc + j] = static_cast<T>(tgt.mask_vector[j]);
    }
    const std::span<const std::size_t> idx(rows);
    const Tensor<T> pb = gather_rows(preds.boxes, idx);
    const Tensor<T> tb({n, 4}, std::move(box_t));
    const T beta = static_cast<T>(config.smooth_l1_beta);
    const Tensor<T> l1 = scale(smooth_l1(pb, tb, beta), T(4));
    const Tensor<T> g = giou_loss(pb, tb);
    const Tensor<T> ml = smooth_l1(gather_rows(preds.masks, idx), Tensor<T>({n, nc}, std::move(mask_t)), beta);
    out.box_l1 = static_cast<double>(l1.item());
    out.box_giou = static_cast<double>(g.item());
    out.mask_l1 = static_cast<double>(ml.item());
    total = add(total, scale(l1, static_cast<T>(config.weight_l1)));
    total = add(total, scale(g, static_cast<T>(config.weight_giou)));
    total = add(total, scale(ml, static_cast<T>(config.weight_mask)));
  }
  out.total = total;
  return out;
}

template <class T>
LossBreakdown<T> matched_loss(const Predictions<T>& preds, const std::vector<InstanceTarget>& targets,
                              const ModelConfig& config, MatchResult* match_out) {
  const MatchResult match = hungarian(build_cost_matrix(preds, targets, MatchWeights::from(config)));
  if (match_out) *match_out = match;
  return total_loss(preds, targets, match, config);
}

#define SKUPATCH_INSTANTIATE_MATCHING(T)                                                               \
  template CostMatrix build_cost_matrix(const Predictions<T>&, const std::vector<InstanceTarget>&,     \
                                        const MatchWeights&);                                          \
  template LossBreakdown<T> total_loss(const Predictions<T>&, const std::vector<InstanceTarget>&,      \
                                       const MatchResult&, const ModelConfig&);                        \
  template LossBreakdown<T> matched_loss(const Predictions<T>&, const std::vector<InstanceTarget>&,    \
                                         const ModelConfig&, MatchResult*);

SKUPATCH_INSTANTIATE_MATCHING(float)
SKUPATCH_INSTANTIATE_MATCHING(double)

}  // namespace skupatch
