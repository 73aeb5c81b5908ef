#include "skupatch/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "skupatch/matching.hpp"
#include "skupatch/synth.hpp"
#include "skupatch/trainer.hpp"
#include "skupatch/uqr.hpp"

namespace skupatch {

std::vector<SelftestCase> ablation_cases() {
  ModelConfig base;
  base.image_size = 32;
  base.patch_size = 16;
  base.stride = 4;
  base.patch_stride = 4;
  base.width = 32;
  base.heads = 4;
  base.layers = 3;
  base.queries = 16;
  base.window = 4;
  base.ffn_hidden = 64;
  base.mask_grid = 16;
  base.mask_coeffs = 32;

  std::vector<SelftestCase> cases;
  cases.push_back({"full", base});
  auto with = [&](const std::string& name, auto edit) {
    ModelConfig c = base;
    edit(c);
    cases.push_back({name, c});
  };
  with("no_fuse", [](ModelConfig& c) { c.fuse = false; });
  with("no_cross_attention", [](ModelConfig& c) { c.decoder_cross_attention = false; });
  with("no_deformable", [](ModelConfig& c) { c.deformable = false; });
  with("detr_like", [](ModelConfig& c) {
    c.fuse = false;
    c.decoder_cross_attention = false;
    c.deformable = false;
  });
  with("dot_logit_deformable", [](ModelConfig& c) { c.deformable_dot_logits = true; });
  with("no_encoder_patch_attention", [](ModelConfig& c) { c.encoder_patch_attention = false; });
  with("fusion_add", [](ModelConfig& c) { c.patch_fusion = PatchFusion::kAdd; });
  with("fusion_momentum", [](ModelConfig& c) { c.patch_fusion = PatchFusion::kMomentum; });
  with("aux_loss", [](ModelConfig& c) { c.aux_loss = true; });
  with("absolute_box_head", [](ModelConfig& c) { c.box_from_reference = false; });
  for (std::size_t k : {100, 200, 300}) with("queries_" + std::to_string(k), [k](ModelConfig& c) { c.queries = k; });
  return cases;
}

namespace {

bool report(std::ostream& out, const std::string& name, bool ok, const std::string& detail = {}) {
  out << (ok ? "PASS " : "FAIL ") << name;
  if (!detail.empty()) out << "  " << detail;
  out << "\n";
  return ok;
}

bool all_finite(const Tensor<float>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace

bool run_selftest(std::ostream& out) {
  bool ok = true;

  // Scene and patches shared by every configuration.
  DataConfig data;
  data.image_size = 32;
  data.patch_size = 16;
  data.sku_size_min = 10;
  data.sku_size_max = 16;
  const SkuAsset a0 = generate_sku(7, 0), a1 = generate_sku(7, 1);
  const Scene scene = compose_scene({&a0, &a1}, Clutter::kEasy, data, 11);
  const std::vector<Image> patches = extract_patches(a0, 3, data.patch_size, 13);

  for (const auto& c : ablation_cases()) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto model = SkuPatchModel<float>::create(c.config, 1);
      const MaskCodec codec(c.config.mask_grid, c.config.mask_coeffs);
      const auto targets = make_targets(scene, 0, codec);
      const ModelOutput<float> o = model.forward(scene.image, patches);
      const std::size_t k = c.config.queries;
      const bool shapes = o.final.class_logits.shape() == Shape{k, 2} && o.final.boxes.shape() == Shape{k, 4} &&
                          o.final.masks.shape() == Shape{k, c.config.mask_coeffs};
      const auto loss = matched_loss(o.final, targets, c.config);
      const bool finite = all_finite(o.final.class_logits) && all_finite(o.final.boxes) &&
                          all_finite(o.final.masks) && std::isfinite(loss.total.item());
      const bool aux_ok = !c.config.aux_loss || o.auxiliary.size() + 1 == c.config.layers;
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      ok &= report(out, "forward " + c.name, shapes && finite && aux_ok,
                   "params=" + std::to_string(model.parameter_count()) + " loss=" +
                       std::to_string(loss.total.item()) + " ms=" + std::to_string(static_cast<int>(ms)));
    } catch (const std::exception& e) {
      ok &= report(out, "forward " + c.name, false, e.what());
    }
  }

  {
    Rng rng(3);
    const MaskCodec codec(8, 64);
    std::vector<double> map(64);
    for (auto& v : map) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const auto back = codec.decode(codec.encode(map));
    double err = 0;
    for (std::size_t i = 0; i < map.size(); ++i) err = std::max(err, std::abs(back[i] - map[i]));
    ok &= report(out, "dct round trip", err < 1e-9, "max_err=" + std::to_string(err));
  }

  {
    Rng rng(5);
    bool match_ok = true;
    for (int trial = 0; trial < 20 && match_ok; ++trial) {
      CostMatrix cost(4, 3);
      for (auto& v : cost.values) v = rng.uniform(0, 1);
      const double got = hungarian(cost).cost;
      std::vector<std::size_t> perm(4);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) s += cost.at(perm[j], j);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      match_ok = std::abs(got - best) < 1e-12;
    }
    ok &= report(out, "hungarian brute force", match_ok);
  }

  out << (ok ? "selftest passed" : "selftest FAILED") << "\n";
  return ok;
}

}  // namespace skupatch
