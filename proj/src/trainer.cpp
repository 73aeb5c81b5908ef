#include "skupatch/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <thread>

#include "skupatch/errors.hpp"

namespace skupatch {

namespace fs = std::filesystem;

BoxCxcywh normalized_box(const PixelBox& b, std::size_t width, std::size_t height) {
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const double x0 = b.x0, y0 = b.y0, x1 = b.x1 + 1.0, y1 = b.y1 + 1.0;
  return {(x0 + x1) / 2 / w, (y0 + y1) / 2 / h, (x1 - x0) / w, (y1 - y0) / h};
}

std::vector<InstanceTarget> make_targets(const Scene& scene, int sku, const MaskCodec& codec) {
  std::vector<InstanceTarget> out;
  for (const auto& inst : scene.instances) {
    if (inst.sku != sku) continue;
    InstanceTarget t;
    t.box = normalized_box(inst.box, scene.image.width, scene.image.height);
    t.mask_vector = codec.encode(mask_to_grid(inst.mask, inst.box, codec.grid()));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Detection> to_detections(const Predictions<float>& preds, const MaskCodec& codec, std::size_t width,
                                     std::size_t height) {
  const std::size_t k = preds.class_logits.rows();
  const std::size_t nc = preds.masks.cols();
  std::vector<Detection> out(k);
  std::vector<double> vec(nc);
  for (std::size_t i = 0; i < k; ++i) {
    Detection& d = out[i];
    const double l0 = preds.class_logits.at(i, 0), l1 = preds.class_logits.at(i, 1);
    d.score = 1.0 / (1.0 + std::exp(l1 - l0));
    for (std::size_t j = 0; j < 4; ++j) d.box[j] = preds.boxes.at(i, j);
    for (std::size_t j = 0; j < nc; ++j) vec[j] = preds.masks.at(i, j);
    d.mask = grid_to_mask(codec.decode(vec), codec.grid(), d.box, width, height);
  }
  return out;
}

std::string LossRecord::format() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step %zu total %.9g class_ce %.9g box_l1 %.9g box_giou %.9g mask_l1 %.9g", step,
                total, class_ce, box_l1, box_giou, mask_l1);
  return buf;
}

namespace {

std::vector<int> present_skus(const Scene& scene) {
  std::set<int> ids;
  for (const auto& inst : scene.instances) ids.insert(inst.sku);
  return {ids.begin(), ids.end()};
}

}  // namespace

TrainOutcome train_model(const RunConfig& config, const LoadedDataset& data, std::uint64_t seed,
                         const TrainOptions& options) {
  config.model.validate();
  config.train.validate();
  const TrainConfig& tc = config.train;
  std::vector<std::size_t> train_scenes;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    if (data.scenes[i].train) train_scenes.push_back(i);
  }
  if (train_scenes.empty()) throw InputError("dataset has no training scenes");

  TrainOutcome outcome{SkuPatchModel<float>::create(config.model, seed), {}};
  SkuPatchModel<float>& model = outcome.model;
  const MaskCodec codec(config.model.mask_grid, config.model.mask_coeffs);
  AdamW<float> opt(model.parameters(), {tc.lr, tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay});
  Rng rng(derive_seed(seed, 0x747261696eULL));

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    log_file.open(fs::path(options.out_dir) / "train_log.txt");
    if (!log_file) throw InputError("cannot write training log in " + options.out_dir);
  }
  auto save = [&](const std::string& name) {
    if (options.out_dir.empty()) return;
    save_checkpoint((fs::path(options.out_dir) / name).string(),
                    snapshot(model, options.save_optimizer ? &opt : nullptr));
  };

  double ema = 0, best = std::numeric_limits<double>::infinity();
  for (std::size_t step = 1; step <= tc.steps; ++step) {
    LossRecord rec;
    rec.step = step;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      const Scene& scene = data.scenes[train_scenes[static_cast<std::size_t>(
                                           rng.uniform_int(0, static_cast<int>(train_scenes.size()) - 1))]]
                               .scene;
      const std::vector<int> present = present_skus(scene);
      std::vector<int> absent;
      for (int id : data.manifest.seen) {
        if (!std::binary_search(present.begin(), present.end(), id) && data.patches.count(id)) absent.push_back(id);
      }
      int sku;
      if (!absent.empty() && rng.bernoulli(tc.negative_query_prob)) {
        sku = absent[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(absent.size()) - 1))];
      } else {
        if (present.empty()) continue;
        sku = present[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(present.size()) - 1))];
      }
      const auto it = data.patches.find(sku);
      if (it == data.patches.end() || it->second.empty()) throw InputError("no patches for sku " + std::to_string(sku));
      std::vector<std::size_t> order(it->second.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      const std::size_t n = static_cast<std::size_t>(
          rng.uniform_int(1, static_cast<int>(std::min(tc.max_train_patches, order.size()))));
      std::vector<Image> patches;
      for (std::size_t j = 0; j < n; ++j) {
        const auto r = j + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(order.size() - j) - 1));
        std::swap(order[j], order[r]);
        patches.push_back(it->second[order[j]]);
      }

      const auto targets = make_targets(scene, sku, codec);
      const ModelOutput<float> out = model.forward(scene.image, patches);
      LossBreakdown<float> loss = matched_loss(out.final, targets, config.model);
      Tensor<float> total = loss.total;
      for (const auto& aux : out.auxiliary) total = add(total, matched_loss(aux, targets, config.model).total);
      if (tc.batch_size > 1) total = scale(total, 1.0f / static_cast<float>(tc.batch_size));
      if (!std::isfinite(total.item())) throw NumericalError("non-finite loss at step " + std::to_string(step));
      backward(total);
      const double inv = 1.0 / static_cast<double>(tc.batch_size);
      rec.total += static_cast<double>(total.item());
      rec.class_ce += loss.class_ce * inv;
      rec.box_l1 += loss.box_l1 * inv;
      rec.box_giou += loss.box_giou * inv;
      rec.mask_l1 += loss.mask_l1 * inv;
    }
    if (tc.grad_clip > 0) opt.clip_grad_norm(tc.grad_clip);
    const double warm = tc.warmup_steps ? std::min(1.0, static_cast<double>(step) / static_cast<double>(tc.warmup_steps)) : 1.0;
    opt.set_lr(tc.lr * warm);
    opt.step();
    opt.zero_grad();

    outcome.history.push_back(rec);
    if (log_file) log_file << rec.format() << "\n";
    ema = step == 1 ? rec.total : 0.9 * ema + 0.1 * rec.total;
    if (step % tc.log_every == 0 || step == tc.steps) {
      if (options.progress) *options.progress << rec.format() << "\n" << std::flush;
      if (ema < best) {
        best = ema;
        save("best.ckpt");
      }
    }
  }
  save("last.ckpt");
  return outcome;
}

Split parse_split(const std::string& name) {
  if (name == "seen") return Split::kSeen;
  if (name == "unseen") return Split::kUnseen;
  if (name == "all") return Split::kAll;
  throw UsageError("split must be seen, unseen or all");
}

std::size_t default_threads() {
  if (const char* env = std::getenv("SKUPATCH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalReport evaluate_model(const SkuPatchModel<float>& model, const LoadedDataset& data, const EvalOptions& options) {
  if (options.patches == 0) throw UsageError("at least one patch is required");
  struct Job {
    std::size_t scene;
    int sku;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    const bool train = data.scenes[i].train;
    if ((options.split == Split::kSeen && !train) || (options.split == Split::kUnseen && train)) continue;
    for (int sku : present_skus(data.scenes[i].scene)) {
      const auto it = data.patches.find(sku);
      if (it == data.patches.end() || it->second.size() < options.patches) {
        throw UsageError("sku " + std::to_string(sku) + " has fewer than " + std::to_string(options.patches) +
                         " patches");
      }
      jobs.push_back({i, sku});
    }
  }
  const MaskCodec codec(model.config().mask_grid, model.config().mask_coeffs);
  std::vector<EvalCase> cases(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    NoGradGuard no_grad;
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Scene& scene = data.scenes[jobs[j].scene].scene;
      const auto& all = data.patches.at(jobs[j].sku);
      const std::vector<Image> patches(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(options.patches));
      const ModelOutput<float> out = model.forward(scene.image, patches, {options.zero_patch_tokens});
      EvalCase& c = cases[j];
      c.detections = to_detections(out.final, codec, scene.image.width, scene.image.height);
      for (const auto& inst : scene.instances) {
        if (inst.sku != jobs[j].sku) continue;
        c.gt_masks.push_back(inst.mask);
        c.gt_boxes.push_back(normalized_box(inst.box, scene.image.width, scene.image.height));
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return evaluate_cases(cases, options.score_threshold);
}

InferenceResult infer(const SkuPatchModel<float>& model, const Image& image, const std::vector<Image>& patches) {
  NoGradGuard no_grad;
  const MaskCodec codec(model.config().mask_grid, model.config().mask_coeffs);
  const ModelOutput<float> out = model.forward(image, patches);
  InferenceResult r;
  r.detections = to_detections(out.final, codec, image.width, image.height);
  std::stable_sort(r.detections.begin(), r.detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return r;
}

void write_inference(const std::string& out_dir, const Image& image, const InferenceResult& result,
                     double score_threshold) {
  fs::create_directories(out_dir);
  std::ofstream det(fs::path(out_dir) / "detections.txt");
  if (!det) throw InputError("cannot write detections in " + out_dir);
  det << "# rank score cx cy w h mask\n";
  Image overlay = image;
  static constexpr std::uint8_t kColors[6][3] = {{230, 25, 75}, {60, 180, 75}, {255, 225, 25},
                                                  {0, 130, 200}, {245, 130, 48}, {145, 30, 180}};
  char buf[160];
  for (std::size_t i = 0; i < result.detections.size(); ++i) {
    const Detection& d = result.detections[i];
    const bool kept = d.score >= score_threshold;
    std::string mask_name = "-";
    if (kept) {
      std::snprintf(buf, sizeof buf, "mask_%03zu.pgm", i);
      mask_name = buf;
      write_pgm_mask((fs::path(out_dir) / mask_name).string(), d.mask);
      const auto* col = kColors[i % 6];
      for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
          if (!d.mask.at(x, y)) continue;
          auto* px = overlay.pixel(x, y);
          for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>((px[c] + col[c]) / 2);
        }
      }
    }
    std::snprintf(buf, sizeof buf, "%zu %.6f %.6f %.6f %.6f %.6f ", i, d.score, d.box[0], d.box[1], d.box[2], d.box[3]);
    det << buf << mask_name << "\n";
  }
  write_ppm((fs::path(out_dir) / "overlay.ppm").string(), overlay);
}

}  // namespace skupatch
