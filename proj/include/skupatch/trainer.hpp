#pragma once

// Training, evaluation and single-image inference on top of the model.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "skupatch/checkpoint.hpp"
#include "skupatch/metrics.hpp"
#include "skupatch/synth.hpp"
#include "skupatch/uqr.hpp"

namespace skupatch {

/// Normalized (cx, cy, w, h) of an inclusive pixel box.
BoxCxcywh normalized_box(const PixelBox& box, std::size_t width, std::size_t height);

/// Targets for every instance of `sku` in the scene, in scene order.
std::vector<InstanceTarget> make_targets(const Scene& scene, int sku, const MaskCodec& codec);

/// Decodes every query into a scored detection.
std::vector<Detection> to_detections(const Predictions<float>& preds, const MaskCodec& codec, std::size_t width,
                                     std::size_t height);

struct LossRecord {
  std::size_t step = 0;
  double total = 0, class_ce = 0, box_l1 = 0, box_giou = 0, mask_l1 = 0;
  std::string format() const;
};

struct TrainOptions {
  std::string out_dir;             // empty: keep everything in memory
  std::ostream* progress = nullptr;  // receives every log_every-th record
  bool save_optimizer = true;
};

struct TrainOutcome {
  SkuPatchModel<float> model;
  std::vector<LossRecord> history;  // one per step
};

/// Deterministic given (config, dataset, seed). Each step draws a training
/// scene, a query SKU (absent from the scene with negative_query_prob) and
/// 1..max_train_patches of its patches. Writes train_log.txt, last.ckpt and
/// best.ckpt (lowest running loss at a log step) when out_dir is set.
TrainOutcome train_model(const RunConfig& config, const LoadedDataset& data, std::uint64_t seed,
                         const TrainOptions& options = {});

enum class Split { kSeen, kUnseen, kAll };
Split parse_split(const std::string& name);

struct EvalOptions {
  Split split = Split::kUnseen;
  std::size_t patches = 1;
  bool zero_patch_tokens = false;
  std::size_t threads = 1;
  double score_threshold = 0.5;
};

/// One case per (scene in split, SKU present in the scene), guided by the
/// first `patches` patches of that SKU. Cases run in parallel; the report is
/// assembled in case order so it does not depend on the thread count.
EvalReport evaluate_model(const SkuPatchModel<float>& model, const LoadedDataset& data, const EvalOptions& options);

/// Thread count from SKUPATCH_THREADS, else hardware concurrency.
std::size_t default_threads();

struct InferenceResult {
  std::vector<Detection> detections;  // sorted by descending score
};

InferenceResult infer(const SkuPatchModel<float>& model, const Image& image, const std::vector<Image>& patches);

/// Writes detections.txt, mask_<i>.pgm for detections above the threshold and
/// overlay.ppm into out_dir.
void write_inference(const std::string& out_dir, const Image& image, const InferenceResult& result,
                     double score_threshold);

}  // namespace skupatch
