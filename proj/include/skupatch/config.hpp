#pragma once

// Run configuration. Files are line-oriented `key = value` text; `#` starts a
// comment, blank lines are ignored and unknown keys are rejected.

#include <cstdint>
#include <string>

namespace skupatch {

/// How N patch token sets are combined into one.
enum class PatchFusion { kAttention, kAdd, kMomentum };

struct ModelConfig {
  std::size_t image_size = 64;     // square input side, pixels
  std::size_t stride = 4;          // image pixels per token side
  std::size_t patch_size = 32;     // canonical patch side after resampling
  std::size_t patch_stride = 4;
  std::size_t width = 64;          // d
  std::size_t heads = 4;
  std::size_t layers = 4;          // L, encoder layers = pyramid levels
  std::size_t queries = 32;        // K
  std::size_t window = 4;          // windowed self-attention tile side (tokens)
  std::size_t points = 4;          // D, deformable samples per query and head
  std::size_t ffn_hidden = 128;
  std::size_t head_layers = 4;
  std::size_t mask_grid = 32;      // m
  std::size_t mask_coeffs = 64;    // n_c
  double mask_output_scale = 8.0;  // fixed gain on the mask head output

  double weight_class = 2.0;
  double weight_l1 = 5.0;
  double weight_giou = 2.0;
  double weight_mask = 1.0;
  double no_object_weight = 0.1;
  double smooth_l1_beta = 1.0;

  bool fuse = true;                     // pyramid fusion in the decoder
  bool decoder_cross_attention = true;  // patch-aware enhancement of image tokens
  bool deformable = true;               // deformable (else dense) object attention
  bool deformable_dot_logits = false;   // dot-product logits instead of predicted weights
  bool box_from_reference = true;       // box centre predicted as an offset from the deformable reference point
  bool encoder_patch_attention = true;  // image tokens attend to patch tokens
  PatchFusion patch_fusion = PatchFusion::kAttention;
  double patch_momentum = 0.9;
  bool aux_loss = false;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;
  std::size_t image_grid() const { return image_size / stride; }
  std::size_t patch_grid() const { return patch_size / patch_stride; }
};

struct DataConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 32;
  std::size_t num_seen_skus = 20;
  std::size_t num_unseen_skus = 5;
  std::size_t train_scenes = 200;
  std::size_t test_scenes = 40;
  std::size_t patches_per_sku = 10;
  double hard_fraction = 0.5;
  std::size_t skus_per_scene_min = 2;
  std::size_t skus_per_scene_max = 3;
  std::size_t sku_size_min = 16;
  std::size_t sku_size_max = 28;
  std::size_t easy_instances_min = 3;
  std::size_t easy_instances_max = 6;
  std::size_t hard_instances_min = 8;
  std::size_t hard_instances_max = 15;
  double min_visibility = 0.25;

  void validate() const;
};

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t steps = 1000;
  std::size_t batch_size = 1;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::size_t warmup_steps = 0;
  std::size_t max_train_patches = 5;
  double negative_query_prob = 0.1;
  std::size_t log_every = 10;
  double score_threshold = 0.5;  // detections kept for recall/precision/overlap metrics

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
};

/// Parses `key = value` text on top of `base`. Throws ConfigError with the
/// offending line number on unknown keys or malformed values.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path);

/// Canonical serializations, one `key = value` per line in a fixed order.
std::string serialize(const ModelConfig& config);
std::string serialize(const DataConfig& config);
std::string serialize(const TrainConfig& config);
std::string serialize(const RunConfig& config);

ModelConfig parse_model_config(const std::string& text);

/// FNV-1a 64-bit hash, printed in hex in manifests.
std::uint64_t fnv1a64(const std::string& text);

std::string to_string(PatchFusion fusion);

}  // namespace skupatch
