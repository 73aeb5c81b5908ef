#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "skupatch/errors.hpp"
#include "skupatch/metrics.hpp"

using namespace skupatch;
using namespace skupatch::testing;

namespace {

Mask rect(std::size_t w, std::size_t h, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  Mask m(w, h);
  for (std::size_t y = y0; y <= y1; ++y)
    for (std::size_t x = x0; x <= x1; ++x) m.set(x, y, true);
  return m;
}

Detection det(double score, const Mask& m) { return {score, {}, m}; }

// Oracle: rectangle-rule integration of the monotone precision envelope.
double oracle_ap(const std::vector<bool>& hits_in_score_order, std::size_t total_gt) {
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits_in_score_order.size(); ++i) {
    tp += hits_in_score_order[i];
    prec.push_back(static_cast<double>(tp) / (i + 1));
    rec.push_back(static_cast<double>(tp) / total_gt);
  }
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    double best = 0;
    for (std::size_t j = i; j < prec.size(); ++j) best = std::max(best, prec[j]);
    ap += (rec[i] - prev_r) * best;
    prev_r = rec[i];
  }
  return ap;
}

}  // namespace

TEST_CASE("mask IoU reference values") {
  const Mask a = rect(4, 4, 0, 0, 1, 0), b = rect(4, 4, 1, 0, 2, 0);
  CHECK(mask_iou(a, a) == 1.0);
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3));
  CHECK(mask_iou(a, rect(4, 4, 3, 3, 3, 3)) == 0.0);
  CHECK(mask_iou(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK(mask_iou(Mask(4, 4), a) == 0.0);
  CHECK_THROWS_AS(mask_iou(a, Mask(3, 4)), DimensionError);
}

TEST_CASE("average precision reference values") {
  const Mask g1 = rect(10, 10, 0, 0, 3, 3), g2 = rect(10, 10, 6, 6, 9, 9), miss = rect(10, 10, 0, 6, 2, 9);
  EvalCase c;
  c.gt_masks = {g1, g2};
  SUBCASE("perfect") {
    c.detections = {det(0.9, g1), det(0.8, g2), det(0.1, miss)};
    CHECK(average_precision({c}, 0.5) == 1.0);
  }
  SUBCASE("no predictions") { CHECK(average_precision({c}, 0.5) == 0.0); }
  SUBCASE("first correct, second wrong") {
    c.detections = {det(0.9, g1), det(0.8, miss)};
    CHECK(average_precision({c}, 0.5) == doctest::Approx(0.5));
  }
  SUBCASE("no ground truth") {
    EvalCase empty;
    empty.detections = {det(0.9, g1)};
    CHECK(average_precision({empty}, 0.5) == 0.0);
  }
}

TEST_CASE("average precision agrees with an oracle on disjoint random cases") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    // Ground truths on distinct rows; detections either exact copies or misses.
    const std::size_t n_gt = rng.uniform_int(1, 5);
    EvalCase c;
    for (std::size_t i = 0; i < n_gt; ++i) c.gt_masks.push_back(rect(8, 16, 0, 2 * i, 7, 2 * i));
    std::vector<std::pair<double, bool>> dets;
    std::vector<bool> used(n_gt, false);
    const std::size_t n_det = rng.uniform_int(0, 7);
    for (std::size_t j = 0; j < n_det; ++j) {
      const double score = rng.uniform();
      const std::size_t target = rng.uniform_int(0, static_cast<int>(n_gt));
      if (target < n_gt && !used[target]) {
        used[target] = true;
        c.detections.push_back(det(score, c.gt_masks[target]));
        dets.push_back({score, true});
      } else {
        c.detections.push_back(det(score, rect(8, 16, 0, 15, 7, 15)));
        dets.push_back({score, false});
      }
    }
    std::stable_sort(dets.begin(), dets.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<bool> hits;
    for (auto& d : dets) hits.push_back(d.second);
    CHECK(average_precision({c}, 0.5) == doctest::Approx(oracle_ap(hits, n_gt)).epsilon(1e-12));
  }
}

TEST_CASE("AP properties") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    EvalCase c;
    for (int i = 0; i < 3; ++i) {
      const std::size_t x = rng.uniform_int(0, 10), y = rng.uniform_int(0, 10);
      c.gt_masks.push_back(rect(20, 20, x, y, x + 6, y + 6));
    }
    for (int j = 0; j < 5; ++j) {
      const std::size_t x = rng.uniform_int(0, 12), y = rng.uniform_int(0, 12);
      c.detections.push_back(det(rng.uniform(), rect(20, 20, x, y, x + rng.uniform_int(3, 7), y + rng.uniform_int(3, 7))));
    }
    double prev = 2;
    for (double thr = 0.5; thr < 0.96; thr += 0.05) {
      const double ap = average_precision({c}, thr);
      CHECK(ap <= prev + 1e-12);
      CHECK((ap >= 0 && ap <= 1));
      prev = ap;
    }
    // A lower-scoring duplicate of the best detection never helps.
    const double base = average_precision({c}, 0.5);
    EvalCase dup = c;
    auto best = c.detections[0];
    for (const auto& d : c.detections)
      if (d.score > best.score) best = d;
    dup.detections.push_back(det(best.score * 0.5, best.mask));
    CHECK(average_precision({dup}, 0.5) <= base + 1e-12);
  }
}

TEST_CASE("box AP uses box IoU") {
  EvalCase c;
  c.gt_masks = {rect(10, 10, 0, 0, 1, 1)};
  c.gt_boxes = {{0.5, 0.5, 0.2, 0.2}};
  c.detections = {{0.9, {0.5, 0.5, 0.2, 0.2}, Mask(10, 10)}};
  CHECK(average_precision({c}, 0.5, IouKind::kBox) == 1.0);
  CHECK(average_precision({c}, 0.5, IouKind::kMask) == 0.0);
}

TEST_CASE("overlap precision, recall and F") {
  const Mask g = rect(10, 10, 0, 0, 3, 3);
  auto r = overlap_prf({g}, {g});
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f_measure == 1.0);

  r = overlap_prf({}, {g});
  CHECK(r.recall == 0.0);
  CHECK(r.f_measure == 0.0);

  r = overlap_prf({rect(10, 10, 0, 0, 3, 1)}, {g});
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 0.5);
  CHECK(r.f_measure == doctest::Approx(2.0 / 3));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Mask> pred, truth;
    for (int i = 0; i < 3; ++i) {
      const std::size_t x = rng.uniform_int(0, 12), y = rng.uniform_int(0, 12);
      truth.push_back(rect(20, 20, x, y, x + 5, y + 5));
      const std::size_t px = rng.uniform_int(0, 12), py = rng.uniform_int(0, 12);
      pred.push_back(rect(20, 20, px, py, px + rng.uniform_int(2, 7), py + rng.uniform_int(2, 7)));
    }
    const auto p = overlap_prf(pred, truth);
    CHECK((p.precision >= 0 && p.precision <= 1 && p.recall >= 0 && p.recall <= 1));
    if (p.precision + p.recall > 0)
      CHECK(std::abs(p.f_measure - 2 * p.precision * p.recall / (p.precision + p.recall)) < 1e-12);
  }
}

TEST_CASE("detection tally and report") {
  const Mask g1 = rect(10, 10, 0, 0, 3, 3), g2 = rect(10, 10, 6, 6, 9, 9);
  EvalCase c;
  c.gt_masks = {g1, g2};
  c.detections = {det(0.9, g1), det(0.7, rect(10, 10, 0, 6, 2, 9)), det(0.2, g2)};
  const auto t = detection_tally(c, 0.5, 0.5);
  CHECK(t.true_positives == 1);
  CHECK(t.detections == 2);
  CHECK(t.ground_truth == 2);
  CHECK(t.result().precision == 0.5);
  CHECK(t.result().recall == 0.5);

  const auto report = evaluate_cases({c, c}, 0.5);
  for (const char* key : {"mAP50", "mAP75", "mAP50:95", "recall", "precision", "f_measure", "overlap_precision",
                          "overlap_recall", "overlap_f_measure"}) {
    REQUIRE(report.metrics.count(key) == 1);
    CHECK((report.metrics.at(key) >= 0 && report.metrics.at(key) <= 1));
  }
  CHECK(report.per_case.size() == 2);
  CHECK(report.summary().find("mAP50 = ") != std::string::npos);
  CHECK(report.full().find("case1.") != std::string::npos);
}
