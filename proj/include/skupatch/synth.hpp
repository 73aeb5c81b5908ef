#pragma once

// Procedural SKU assets, cluttered scenes with exact instance ground truth,
// jittered SKU patches, and the on-disk dataset with its manifest.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skupatch/config.hpp"
#include "skupatch/raster.hpp"

namespace skupatch {

enum class TextureFamily { kStripes, kChecker, kSpots, kGradient };
enum class ShapeKind { kRectangle, kEllipse };

struct SkuAsset {
  int id = 0;
  TextureFamily family = TextureFamily::kStripes;
  ShapeKind shape = ShapeKind::kRectangle;
  std::array<std::array<std::uint8_t, 3>, 2> palette{};
  Image texture;  // canonical raster, background pixels zero
  Mask mask;      // canonical shape

  bool operator==(const SkuAsset&) const = default;
};

/// Canonical assets have their longer side equal to this many pixels.
inline constexpr std::size_t kAssetSide = 32;

/// Deterministic in (seed, sku_id).
SkuAsset generate_sku(std::uint64_t seed, int sku_id);

enum class Clutter { kEasy, kHard };

struct SceneInstance {
  int sku = 0;
  PixelBox box;  // tight box of `mask`
  Mask mask;     // visible pixels, image sized
  double visibility = 1.0;
};

struct Scene {
  Image image;
  std::vector<SceneInstance> instances;
  Clutter clutter = Clutter::kEasy;
};

/// Paints 3–6 (easy) or 8–15 (hard) instances back to front, removes occluded
/// pixels from lower masks and drops instances less visible than the
/// threshold. Throws UsageError without assets.
Scene compose_scene(const std::vector<const SkuAsset*>& assets, Clutter clutter, const DataConfig& config,
                    std::uint64_t seed);

/// n patch rasters of side config.patch_size under rotation, scale and
/// lighting jitter. Throws UsageError unless 1 <= n <= 10.
std::vector<Image> extract_patches(const SkuAsset& asset, std::size_t n, std::size_t patch_size, std::uint64_t seed);

/// The asset centered on the patch background without jitter.
Image canonical_patch(const SkuAsset& asset, std::size_t patch_size);

/// Normalized cross-correlation of two equally sized rasters over all channels.
double normalized_cross_correlation(const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Dataset on disk. Manifest grammar, one directive per line, paths relative to
// the manifest's directory:
//   seed <u64>
//   config_hash <16 hex digits>
//   seen <sku id>...
//   unseen <sku id>...
//   split <train|test>                     (applies to following scenes)
//   scene <path> <easy|hard> <count>
//   instance <sku id> <x0> <y0> <x1> <y1> <mask path>   (count lines after scene)
//   patch <sku id> <path>

struct DatasetScene {
  std::string image_path;
  bool train = true;
  Clutter clutter = Clutter::kEasy;
  struct Instance {
    int sku = 0;
    PixelBox box;
    std::string mask_path;
  };
  std::vector<Instance> instances;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<int> seen;
  std::vector<int> unseen;
  std::vector<DatasetScene> scenes;
  std::vector<std::pair<int, std::string>> patches;
  std::string root;  // directory of the manifest file

  std::string resolve(const std::string& rel) const;
};

/// Writes every raster plus `manifest.txt` under `out_dir` and returns the
/// manifest. Training scenes draw from seen SKUs only, test scenes from unseen.
DatasetManifest build_dataset(const DataConfig& config, std::uint64_t seed, const std::string& out_dir);

std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::string& path, const DatasetManifest& manifest);
/// Throws InputError with the line number on malformed input.
DatasetManifest read_manifest(const std::string& path);

/// Manifest with every raster loaded.
struct LoadedScene {
  Scene scene;
  bool train = true;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<LoadedScene> scenes;
  std::map<int, std::vector<Image>> patches;  // per SKU, manifest order
};

LoadedDataset load_dataset(const std::string& manifest_path);

std::string to_string(Clutter clutter);

}  // namespace skupatch
