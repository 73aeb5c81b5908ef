#include <filesystem>
#include <fstream>
#include <cmath>
#include <set>

#include <unistd.h>

#include "doctest.h"
#include "fixtures.hpp"
#include "skupatch/errors.hpp"
#include "skupatch/synth.hpp"

using namespace skupatch;
using namespace skupatch::testing;
namespace fs = std::filesystem;

namespace {

DataConfig small_data() {
  DataConfig d;
  d.image_size = 64;
  d.patch_size = 32;
  d.num_seen_skus = 6;
  d.num_unseen_skus = 3;
  d.train_scenes = 12;
  d.test_scenes = 6;
  d.patches_per_sku = 3;
  return d;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("skupatch_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

// NCC over the pixels flagged in `region` only.
double masked_ncc(const Image& a, const Image& b, const std::vector<bool>& region) {
  double n = 0, ma = 0, mb = 0;
  for (std::size_t p = 0; p < region.size(); ++p)
    if (region[p])
      for (int ch = 0; ch < 3; ++ch) {
        ma += a.rgb[3 * p + ch];
        mb += b.rgb[3 * p + ch];
        n += 1;
      }
  if (n == 0) return -1;
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t p = 0; p < region.size(); ++p)
    if (region[p])
      for (int ch = 0; ch < 3; ++ch) {
        const double da = a.rgb[3 * p + ch] - ma, db = b.rgb[3 * p + ch] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
      }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

// Template matching oracle: best masked NCC of the patch against the asset
// rendered over a small grid of rotations, scales and sub-pixel shifts. The
// mask keeps the comparison on the object, so lighting changes that move the
// object relative to the background do not count against it.
double template_match(const Image& patch, const SkuAsset& asset) {
  const std::size_t side = patch.width;
  const double fit = 0.85 * side / kAssetSide;
  double best = -2;
  for (int deg = -5; deg <= 5; ++deg)
    for (double sc : {0.95, 0.975, 1.0, 1.025, 1.05})
      for (double sx = -1; sx <= 1; sx += 0.5)
        for (double sy = -1; sy <= 1; sy += 0.5) {
          const double t = deg * M_PI / 180, c = std::cos(t), s = std::sin(t), k = fit * sc;
          Image r(side, side, 128);
          std::vector<bool> region(side * side, false);
          for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
              const double dx = x + 0.5 - (side / 2.0 + sx), dy = y + 0.5 - (side / 2.0 + sy);
              const double u = (c * dx + s * dy) / k + asset.texture.width / 2.0;
              const double v = (-s * dx + c * dy) / k + asset.texture.height / 2.0;
              if (u < 0 || v < 0 || u >= asset.texture.width || v >= asset.texture.height) continue;
              const auto ui = static_cast<std::size_t>(u), vi = static_cast<std::size_t>(v);
              if (!asset.mask.at(ui, vi)) continue;
              std::copy_n(asset.texture.pixel(ui, vi), 3, r.pixel(x, y));
              region[y * side + x] = true;
            }
          best = std::max(best, masked_ncc(patch, r, region));
        }
  return best;
}

}  // namespace

TEST_CASE("assets are deterministic and distinct") {
  CHECK(generate_sku(5, 3) == generate_sku(5, 3));
  std::vector<SkuAsset> assets;
  std::set<int> families;
  for (int id = 0; id < 50; ++id) {
    assets.push_back(generate_sku(5, id));
    families.insert(static_cast<int>(assets.back().family));
  }
  for (std::size_t i = 0; i < assets.size(); ++i)
    for (std::size_t j = i + 1; j < assets.size(); ++j) CHECK_FALSE(assets[i].texture == assets[j].texture);
  CHECK(families.size() == 4);
}

TEST_CASE("asset rasters live inside their masks") {
  for (int id = 0; id < 30; ++id) {
    const auto a = generate_sku(9, id);
    CHECK(std::max(a.texture.width, a.texture.height) == kAssetSide);
    CHECK(a.mask.count() > 0);
    for (std::size_t y = 0; y < a.mask.height; ++y)
      for (std::size_t x = 0; x < a.mask.width; ++x)
        if (!a.mask.at(x, y)) {
          const auto* p = a.texture.pixel(x, y);
          CHECK(p[0] + p[1] + p[2] == 0);
        }
  }
}

TEST_CASE("ellipse masks follow the analytic ellipse within one pixel") {
  int ellipses = 0;
  for (int id = 0; id < 40; ++id) {
    const auto a = generate_sku(11, id);
    if (a.shape != ShapeKind::kEllipse) {
      CHECK(a.mask.count() == a.mask.width * a.mask.height);
      continue;
    }
    ++ellipses;
    const double rx = a.mask.width / 2.0, ry = a.mask.height / 2.0;
    for (std::size_t y = 0; y < a.mask.height; ++y)
      for (std::size_t x = 0; x < a.mask.width; ++x) {
        const double dx = x + 0.5 - rx, dy = y + 0.5 - ry;
        const double inner = (dx * dx) / ((rx - 1) * (rx - 1)) + (dy * dy) / ((ry - 1) * (ry - 1));
        const double outer = (dx * dx) / ((rx + 1) * (rx + 1)) + (dy * dy) / ((ry + 1) * (ry + 1));
        if (inner < 1) CHECK(a.mask.at(x, y));
        if (outer > 1) CHECK_FALSE(a.mask.at(x, y));
      }
  }
  CHECK(ellipses > 5);
}

TEST_CASE("scene invariants") {
  const DataConfig d = small_data();
  std::vector<SkuAsset> assets;
  for (int id = 0; id < 3; ++id) assets.push_back(generate_sku(1, id));
  const std::vector<const SkuAsset*> ptrs{&assets[0], &assets[1], &assets[2]};
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto clutter = seed % 2 ? Clutter::kHard : Clutter::kEasy;
    const Scene s = compose_scene(ptrs, clutter, d, seed);
    CHECK(s.image.width == d.image_size);
    std::vector<int> owner(d.image_size * d.image_size, -1);
    for (std::size_t i = 0; i < s.instances.size(); ++i) {
      const auto& inst = s.instances[i];
      CHECK(inst.box == tight_box(inst.mask));
      CHECK((inst.visibility >= d.min_visibility && inst.visibility <= 1.0));
      for (std::size_t p = 0; p < owner.size(); ++p)
        if (inst.mask.data[p]) {
          CHECK(owner[p] == -1);
          owner[p] = static_cast<int>(i);
        }
    }
    CHECK(compose_scene(ptrs, clutter, d, seed).image == s.image);
  }
  CHECK_THROWS_AS(compose_scene({}, Clutter::kEasy, d, 1), UsageError);
}

TEST_CASE("hard scenes hold more instances than easy ones") {
  const DataConfig d = small_data();
  std::vector<SkuAsset> assets;
  for (int id = 0; id < 3; ++id) assets.push_back(generate_sku(2, id));
  const std::vector<const SkuAsset*> ptrs{&assets[0], &assets[1], &assets[2]};
  double easy = 0, hard = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    easy += compose_scene(ptrs, Clutter::kEasy, d, seed).instances.size();
    hard += compose_scene(ptrs, Clutter::kHard, d, seed).instances.size();
  }
  CHECK(hard > easy);
}

TEST_CASE("patches resemble their source SKU most") {
  const std::size_t p = 32;
  std::vector<SkuAsset> assets;
  std::vector<Image> templates;
  for (int id = 0; id < 12; ++id) {
    assets.push_back(generate_sku(3, id));
    templates.push_back(canonical_patch(assets.back(), p));
  }
  for (std::size_t s = 0; s < assets.size(); ++s) {
    const auto patches = extract_patches(assets[s], 10, p, 100 + s);
    CHECK(patches.size() == 10);
    for (const auto& patch : patches) {
      CHECK(patch.width == p);
      CHECK(patch.height == p);
      std::size_t best = 0;
      double best_ncc = -2;
      for (std::size_t t = 0; t < templates.size(); ++t) {
        const double ncc = normalized_cross_correlation(patch, templates[t]);
        if (ncc > best_ncc) {
          best_ncc = ncc;
          best = t;
        }
      }
      CHECK(best == s);
      INFO("sku " << s << " family " << static_cast<int>(assets[s].family) << " palette " << int(assets[s].palette[0][0]) << "," << int(assets[s].palette[0][1]) << "," << int(assets[s].palette[0][2]) << " / " << int(assets[s].palette[1][0]) << "," << int(assets[s].palette[1][1]) << "," << int(assets[s].palette[1][2]));
      CHECK(template_match(patch, assets[s]) >= 0.8);
    }
  }
  CHECK(extract_patches(assets[0], 1, p, 7) == extract_patches(assets[0], 1, p, 7));
  CHECK_THROWS_AS(extract_patches(assets[0], 0, p, 7), UsageError);
  CHECK_THROWS_AS(extract_patches(assets[0], 11, p, 7), UsageError);
}

TEST_CASE("dataset build, manifest audit and reload") {
  const DataConfig d = small_data();
  const fs::path dir = scratch("dataset");
  const auto manifest = build_dataset(d, 42, dir.string());

  std::set<int> seen(manifest.seen.begin(), manifest.seen.end()), unseen(manifest.unseen.begin(), manifest.unseen.end());
  CHECK(seen.size() == d.num_seen_skus);
  CHECK(unseen.size() == d.num_unseen_skus);
  for (int u : unseen) CHECK(seen.count(u) == 0);
  std::size_t train = 0, test = 0;
  for (const auto& s : manifest.scenes) {
    (s.train ? train : test) += 1;
    for (const auto& inst : s.instances) {
      CHECK((s.train ? seen : unseen).count(inst.sku) == 1);
      CHECK(fs::exists(manifest.resolve(inst.mask_path)));
    }
    CHECK(fs::exists(manifest.resolve(s.image_path)));
  }
  CHECK(train == d.train_scenes);
  CHECK(test == d.test_scenes);
  std::map<int, int> per_sku;
  for (const auto& [sku, path] : manifest.patches) {
    ++per_sku[sku];
    CHECK(fs::exists(manifest.resolve(path)));
  }
  CHECK(per_sku.size() == seen.size() + unseen.size());
  for (auto [sku, n] : per_sku) CHECK(n == static_cast<int>(d.patches_per_sku));
  CHECK(manifest.config_hash == fnv1a64(serialize(d)));

  const auto reread = read_manifest((dir / "manifest.txt").string());
  CHECK(format_manifest(reread) == format_manifest(manifest));

  const auto loaded = load_dataset((dir / "manifest.txt").string());
  CHECK(loaded.scenes.size() == manifest.scenes.size());
  CHECK(loaded.patches.size() == per_sku.size());

  // Same seed, same bytes.
  const fs::path dir2 = scratch("dataset2");
  build_dataset(d, 42, dir2.string());
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path other = dir2 / fs::relative(entry.path(), dir);
    std::ifstream a(entry.path(), std::ios::binary), b(other, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("malformed manifests are rejected with a line number") {
  const fs::path dir = scratch("badmanifest");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.txt") << "seed 1\nconfig_hash 0000000000000001\nscene a.ppm sideways 0\n";
  try {
    read_manifest((dir / "manifest.txt").string());
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  fs::remove_all(dir);
}
