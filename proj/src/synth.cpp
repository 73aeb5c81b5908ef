#include "skupatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "skupatch/errors.hpp"
#include "skupatch/rng.hpp"

namespace skupatch {

namespace fs = std::filesystem;

namespace {

constexpr double kSceneRotation = 30.0 * std::numbers::pi / 180.0;
constexpr double kPatchRotation = 5.0 * std::numbers::pi / 180.0;
constexpr std::uint8_t kPatchBackground = 128;

std::array<std::uint8_t, 3> random_color(Rng& rng) {
  return {static_cast<std::uint8_t>(rng.uniform_int(20, 235)), static_cast<std::uint8_t>(rng.uniform_int(20, 235)),
          static_cast<std::uint8_t>(rng.uniform_int(20, 235))};
}

int color_distance(const std::array<std::uint8_t, 3>& a, const std::array<std::uint8_t, 3>& b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d += std::abs(int(a[c]) - int(b[c]));
  return d;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Placement {
  double cx = 0, cy = 0;  // pixel units
  double scale = 1;       // canvas pixels per asset pixel
  double theta = 0;
  double gain = 1, offset = 0;
};

// Paints the asset with nearest-neighbor inverse mapping and returns the
// number of canvas pixels it covers. `labels` (if given) records `label`.
std::size_t paint(Image& canvas, std::vector<int>* labels, int label, const SkuAsset& asset, const Placement& pl) {
  const double aw = static_cast<double>(asset.texture.width);
  const double ah = static_cast<double>(asset.texture.height);
  const double reach = 0.5 * std::hypot(aw, ah) * pl.scale + 1;
  const double c = std::cos(pl.theta), s = std::sin(pl.theta);
  const auto lo_x = static_cast<long>(std::max(0.0, std::floor(pl.cx - reach)));
  const auto hi_x = static_cast<long>(std::min(static_cast<double>(canvas.width) - 1, std::ceil(pl.cx + reach)));
  const auto lo_y = static_cast<long>(std::max(0.0, std::floor(pl.cy - reach)));
  const auto hi_y = static_cast<long>(std::min(static_cast<double>(canvas.height) - 1, std::ceil(pl.cy + reach)));
  std::size_t covered = 0;
  for (long y = lo_y; y <= hi_y; ++y) {
    for (long x = lo_x; x <= hi_x; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - pl.cx;
      const double dy = static_cast<double>(y) + 0.5 - pl.cy;
      const double u = (c * dx + s * dy) / pl.scale + aw / 2;
      const double v = (-s * dx + c * dy) / pl.scale + ah / 2;
      if (u < 0 || v < 0 || u >= aw || v >= ah) continue;
      const auto ui = static_cast<std::size_t>(u);
      const auto vi = static_cast<std::size_t>(v);
      if (!asset.mask.at(ui, vi)) continue;
      const auto* src = asset.texture.pixel(ui, vi);
      auto* dst = canvas.pixel(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      for (int ch = 0; ch < 3; ++ch) dst[ch] = clamp_byte(pl.gain * src[ch] + pl.offset);
      if (labels) (*labels)[static_cast<std::size_t>(y) * canvas.width + static_cast<std::size_t>(x)] = label;
      ++covered;
    }
  }
  return covered;
}

}  // namespace

SkuAsset generate_sku(std::uint64_t seed, int sku_id) {
  Rng rng(derive_seed(seed, 0x736b7500ULL + static_cast<std::uint64_t>(sku_id)));
  SkuAsset a;
  a.id = sku_id;
  a.family = static_cast<TextureFamily>(rng.uniform_int(0, 3));
  a.shape = rng.bernoulli(0.5) ? ShapeKind::kEllipse : ShapeKind::kRectangle;
  a.palette[0] = random_color(rng);
  do {
    a.palette[1] = random_color(rng);
  } while (color_distance(a.palette[0], a.palette[1]) < 150);

  const auto short_side = static_cast<std::size_t>(std::lround(static_cast<double>(kAssetSide) * rng.uniform(0.6, 1.0)));
  const bool wide = rng.bernoulli(0.5);
  const std::size_t w = wide ? kAssetSide : short_side;
  const std::size_t h = wide ? short_side : kAssetSide;
  a.texture = Image(w, h);
  a.mask = Mask(w, h);

  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(4.0, 10.0);
  const int cell = rng.uniform_int(3, 8);
  const double spacing = rng.uniform(6.0, 10.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double wd = static_cast<double>(w), hd = static_cast<double>(h);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      if (a.shape == ShapeKind::kEllipse) {
        const double ex = (px - wd / 2) / (wd / 2), ey = (py - hd / 2) / (hd / 2);
        if (ex * ex + ey * ey > 1.0) continue;
      }
      a.mask.set(x, y, true);
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!a.mask.at(x, y)) continue;
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double t = 0;
      switch (a.family) {
        case TextureFamily::kStripes:
          t = std::fmod(std::abs(px * ca + py * sa), period) < period / 2 ? 0.0 : 1.0;
          break;
        case TextureFamily::kChecker:
          t = ((x / static_cast<std::size_t>(cell)) + (y / static_cast<std::size_t>(cell))) % 2 ? 1.0 : 0.0;
          break;
        case TextureFamily::kSpots: {
          const double fx = std::fmod(px, spacing) - spacing / 2, fy = std::fmod(py, spacing) - spacing / 2;
          t = fx * fx + fy * fy < (0.3 * spacing) * (0.3 * spacing) ? 1.0 : 0.0;
          break;
        }
        case TextureFamily::kGradient:
          t = std::clamp((px * ca + py * sa) / (std::abs(ca) * wd + std::abs(sa) * hd), 0.0, 1.0);
          break;
      }
      // Dark outline on the shape boundary separates touching instances.
      const bool edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h || !a.mask.at(x - 1, y) ||
                        !a.mask.at(x + 1, y) || !a.mask.at(x, y - 1) || !a.mask.at(x, y + 1);
      auto* dst = a.texture.pixel(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - t) * a.palette[0][c] + t * a.palette[1][c];
        dst[c] = clamp_byte(edge ? 0.35 * v : v);
      }
    }
  }
  return a;
}

Scene compose_scene(const std::vector<const SkuAsset*>& assets, Clutter clutter, const DataConfig& config,
                    std::uint64_t seed) {
  if (assets.empty()) throw UsageError("compose_scene needs at least one asset");
  Rng rng(seed);
  const std::size_t side = config.image_size;
  Image background(side, side);
  const int base = rng.uniform_int(70, 130);
  for (auto& v : background.rgb) v = static_cast<std::uint8_t>(base + rng.uniform_int(-6, 6));

  const bool hard = clutter == Clutter::kHard;
  const int n = rng.uniform_int(static_cast<int>(hard ? config.hard_instances_min : config.easy_instances_min),
                                static_cast<int>(hard ? config.hard_instances_max : config.easy_instances_max));
  struct Pending {
    const SkuAsset* asset;
    Placement placement;
  };
  std::vector<Pending> pending;
  for (int i = 0; i < n; ++i) {
    const SkuAsset* asset = assets[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(assets.size()) - 1))];
    Placement pl;
    const double longest = rng.uniform(static_cast<double>(config.sku_size_min), static_cast<double>(config.sku_size_max));
    pl.scale = longest / static_cast<double>(kAssetSide);
    pl.theta = rng.uniform(-kSceneRotation, kSceneRotation);
    const double margin = 0.3 * longest;
    pl.cx = rng.uniform(margin, static_cast<double>(side) - margin);
    pl.cy = rng.uniform(margin, static_cast<double>(side) - margin);
    pending.push_back({asset, pl});
  }

  Scene scene;
  scene.clutter = clutter;
  for (int pass = 0; pass < 2; ++pass) {
    scene.image = background;
    scene.instances.clear();
    std::vector<int> labels(side * side, -1);
    std::vector<std::size_t> full(pending.size());
    for (std::size_t i = 0; i < pending.size(); ++i) {
      full[i] = paint(scene.image, &labels, static_cast<int>(i), *pending[i].asset, pending[i].placement);
    }
    std::vector<Pending> kept;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      SceneInstance inst;
      inst.sku = pending[i].asset->id;
      inst.mask = Mask(side, side);
      for (std::size_t p = 0; p < labels.size(); ++p) inst.mask.data[p] = labels[p] == static_cast<int>(i) ? 1 : 0;
      const std::size_t visible = inst.mask.count();
      inst.visibility = full[i] ? static_cast<double>(visible) / static_cast<double>(full[i]) : 0.0;
      if (visible == 0 || inst.visibility < config.min_visibility) continue;
      inst.box = tight_box(inst.mask);
      scene.instances.push_back(std::move(inst));
      kept.push_back(pending[i]);
    }
    if (kept.size() == pending.size()) break;
    // Re-render without the dropped instances; removing paint only raises the
    // visibility of the rest, so one extra pass suffices.
    pending = std::move(kept);
  }
  return scene;
}

std::vector<Image> extract_patches(const SkuAsset& asset, std::size_t n, std::size_t patch_size, std::uint64_t seed) {
  if (n == 0 || n > 10) throw UsageError("patch count must be between 1 and 10");
  Rng rng(seed);
  std::vector<Image> out;
  const double fit = 0.85 * static_cast<double>(patch_size) / static_cast<double>(kAssetSide);
  for (std::size_t k = 0; k < n; ++k) {
    Placement pl;
    pl.theta = rng.uniform(-kPatchRotation, kPatchRotation);
    pl.scale = fit * rng.uniform(0.95, 1.05);
    pl.gain = rng.uniform(0.85, 1.15);
    pl.offset = rng.uniform(-12.0, 12.0);
    pl.cx = static_cast<double>(patch_size) / 2 + rng.uniform(-1.0, 1.0);
    pl.cy = static_cast<double>(patch_size) / 2 + rng.uniform(-1.0, 1.0);
    Image img(patch_size, patch_size, kPatchBackground);
    paint(img, nullptr, 0, asset, pl);
    out.push_back(std::move(img));
  }
  return out;
}

Image canonical_patch(const SkuAsset& asset, std::size_t patch_size) {
  Placement pl;
  pl.scale = 0.85 * static_cast<double>(patch_size) / static_cast<double>(kAssetSide);
  pl.cx = pl.cy = static_cast<double>(patch_size) / 2;
  Image img(patch_size, patch_size, kPatchBackground);
  paint(img, nullptr, 0, asset, pl);
  return img;
}

double normalized_cross_correlation(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("NCC needs equally sized rasters");
  const double n = static_cast<double>(a.rgb.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    ma += a.rgb[i];
    mb += b.rgb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double da = a.rgb[i] - ma, db = b.rgb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

std::string to_string(Clutter clutter) { return clutter == Clutter::kHard ? "hard" : "easy"; }

std::string DatasetManifest::resolve(const std::string& rel) const {
  return root.empty() ? rel : (fs::path(root) / rel).string();
}

namespace {

std::string numbered(const char* fmt, std::size_t a, std::size_t b = 0) {
  char buf[96];
  std::snprintf(buf, sizeof buf, fmt, a, b);
  return buf;
}

}  // namespace

DatasetManifest build_dataset(const DataConfig& config, std::uint64_t seed, const std::string& out_dir) {
  config.validate();
  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.config_hash = fnv1a64(serialize(config));
  manifest.root = out_dir;
  for (std::size_t i = 0; i < config.num_seen_skus; ++i) manifest.seen.push_back(static_cast<int>(i));
  for (std::size_t i = 0; i < config.num_unseen_skus; ++i) {
    manifest.unseen.push_back(static_cast<int>(config.num_seen_skus + i));
  }
  for (const char* dir : {"train", "test", "patches"}) fs::create_directories(fs::path(out_dir) / dir);

  std::map<int, SkuAsset> assets;
  for (int id : manifest.seen) assets.emplace(id, generate_sku(seed, id));
  for (int id : manifest.unseen) assets.emplace(id, generate_sku(seed, id));

  auto make_scenes = [&](bool train, std::size_t count, const std::vector<int>& pool) {
    const char* split = train ? "train" : "test";
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, (train ? 0x10000000ULL : 0x20000000ULL) + i));
      const double f = config.hard_fraction;
      const bool hard = std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
      std::vector<int> ids = pool;
      const std::size_t k = std::min<std::size_t>(
          ids.size(), static_cast<std::size_t>(rng.uniform_int(static_cast<int>(config.skus_per_scene_min),
                                                                static_cast<int>(config.skus_per_scene_max))));
      for (std::size_t j = 0; j < k; ++j) {
        const auto r = j + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(ids.size() - j) - 1));
        std::swap(ids[j], ids[r]);
      }
      std::vector<const SkuAsset*> chosen;
      for (std::size_t j = 0; j < k; ++j) chosen.push_back(&assets.at(ids[j]));
      const Scene scene = compose_scene(chosen, hard ? Clutter::kHard : Clutter::kEasy, config, rng.next_u64());

      DatasetScene entry;
      entry.train = train;
      entry.clutter = scene.clutter;
      entry.image_path = std::string(split) + numbered("/scene_%04zu.ppm", i);
      write_ppm(manifest.resolve(entry.image_path), scene.image);
      for (std::size_t j = 0; j < scene.instances.size(); ++j) {
        const auto& inst = scene.instances[j];
        const std::string mask_path = std::string(split) + numbered("/scene_%04zu_m%02zu.pgm", i, j);
        write_pgm_mask(manifest.resolve(mask_path), inst.mask);
        entry.instances.push_back({inst.sku, inst.box, mask_path});
      }
      manifest.scenes.push_back(std::move(entry));
    }
  };
  make_scenes(true, config.train_scenes, manifest.seen);
  make_scenes(false, config.test_scenes, manifest.unseen);

  for (const auto& [id, asset] : assets) {
    const auto patches = extract_patches(asset, config.patches_per_sku, config.patch_size,
                                         derive_seed(seed, 0x30000000ULL + static_cast<std::uint64_t>(id)));
    for (std::size_t k = 0; k < patches.size(); ++k) {
      const std::string path = numbered("patches/sku_%03zu_%zu.ppm", static_cast<std::size_t>(id), k);
      write_ppm(manifest.resolve(path), patches[k]);
      manifest.patches.emplace_back(id, path);
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.txt").string(), manifest);
  return manifest;
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m.config_hash));
  out << "seed " << m.seed << "\n";
  out << "config_hash " << hash << "\n";
  out << "seen";
  for (int id : m.seen) out << " " << id;
  out << "\nunseen";
  for (int id : m.unseen) out << " " << id;
  out << "\n";
  int current = -1;
  for (const auto& s : m.scenes) {
    if (current != static_cast<int>(s.train)) {
      out << "split " << (s.train ? "train" : "test") << "\n";
      current = static_cast<int>(s.train);
    }
    out << "scene " << s.image_path << " " << to_string(s.clutter) << " " << s.instances.size() << "\n";
    for (const auto& inst : s.instances) {
      out << "instance " << inst.sku << " " << inst.box.x0 << " " << inst.box.y0 << " " << inst.box.x1 << " "
          << inst.box.y1 << " " << inst.mask_path << "\n";
    }
  }
  for (const auto& [id, path] : m.patches) out << "patch " << id << " " << path << "\n";
  return out.str();
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << format_manifest(manifest);
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  std::size_t lineno = 0;
  bool train = true;
  std::size_t expected_instances = 0;
  auto fail = [&](const std::string& what) {
    throw InputError(path + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string kw;
    if (!(ls >> kw)) continue;
    if (expected_instances > 0 && kw != "instance") fail("expected an instance line");
    if (kw == "seed") {
      if (!(ls >> m.seed)) fail("bad seed");
    } else if (kw == "config_hash") {
      std::string hex;
      if (!(ls >> hex)) fail("bad config hash");
      try {
        m.config_hash = std::stoull(hex, nullptr, 16);
      } catch (const std::exception&) {
        fail("bad config hash");
      }
    } else if (kw == "seen" || kw == "unseen") {
      auto& list = kw == "seen" ? m.seen : m.unseen;
      int id;
      while (ls >> id) list.push_back(id);
    } else if (kw == "split") {
      std::string s;
      ls >> s;
      if (s != "train" && s != "test") fail("split must be train or test");
      train = s == "train";
    } else if (kw == "scene") {
      DatasetScene s;
      std::string clutter;
      if (!(ls >> s.image_path >> clutter >> expected_instances)) fail("malformed scene line");
      if (clutter != "easy" && clutter != "hard") fail("clutter must be easy or hard");
      s.clutter = clutter == "hard" ? Clutter::kHard : Clutter::kEasy;
      s.train = train;
      m.scenes.push_back(std::move(s));
    } else if (kw == "instance") {
      if (m.scenes.empty() || expected_instances == 0) fail("instance outside a scene");
      DatasetScene::Instance inst;
      if (!(ls >> inst.sku >> inst.box.x0 >> inst.box.y0 >> inst.box.x1 >> inst.box.y1 >> inst.mask_path)) {
        fail("malformed instance line");
      }
      m.scenes.back().instances.push_back(std::move(inst));
      --expected_instances;
    } else if (kw == "patch") {
      int id;
      std::string p;
      if (!(ls >> id >> p)) fail("malformed patch line");
      m.patches.emplace_back(id, p);
    } else {
      fail("unknown directive '" + kw + "'");
    }
  }
  if (expected_instances > 0) fail("manifest ends inside a scene");
  return m;
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  LoadedDataset ds;
  ds.manifest = read_manifest(manifest_path);
  for (const auto& s : ds.manifest.scenes) {
    LoadedScene ls;
    ls.train = s.train;
    ls.scene.clutter = s.clutter;
    ls.scene.image = read_ppm(ds.manifest.resolve(s.image_path));
    for (const auto& inst : s.instances) {
      SceneInstance si;
      si.sku = inst.sku;
      si.mask = read_pgm_mask(ds.manifest.resolve(inst.mask_path));
      if (si.mask.width != ls.scene.image.width || si.mask.height != ls.scene.image.height) {
        throw InputError(inst.mask_path + ": mask size differs from its scene");
      }
      si.box = inst.box;
      if (!(tight_box(si.mask) == si.box)) throw InputError(inst.mask_path + ": box is not the mask's tight box");
      ls.scene.instances.push_back(std::move(si));
    }
    ds.scenes.push_back(std::move(ls));
  }
  for (const auto& [id, path] : ds.manifest.patches) ds.patches[id].push_back(read_ppm(ds.manifest.resolve(path)));
  return ds;
}

}  // namespace skupatch
