#pragma once

// Full network: image and patch tokenization, multi-patch fusion, encoder,
// decoder and the three per-query prediction heads.

#include <vector>

#include "skupatch/decoder.hpp"
#include "skupatch/encoder.hpp"
#include "skupatch/tokenize.hpp"

namespace skupatch {

/// Per-query predictions. Class column 0 is "instance of the queried SKU",
/// column 1 is "no object".
template <class T>
struct Predictions {
  Tensor<T> class_logits;  // K × 2
  Tensor<T> boxes;         // K × 4, (cx, cy, w, h) in [0, 1]
  Tensor<T> masks;         // K × n_c mask vectors
};

template <class T>
struct Heads {
  Mlp<T> classifier;
  Mlp<T> box;
  Mlp<T> mask;
  T mask_scale = T(1);

  static Heads create(const ModelConfig& config, Rng& rng);
  /// With `reference` (K × 2 logits) the box centre is
  /// sigmoid(mlp + reference) instead of sigmoid(mlp).
  Predictions<T> operator()(const Tensor<T>& objects, const Tensor<T>& reference = {}) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <class T>
struct ModelOutput {
  Predictions<T> final;
  std::vector<Predictions<T>> auxiliary;  // one per earlier decoder layer when aux_loss is on
};

struct ForwardOptions {
  bool zero_patch_tokens = false;  // ablation: remove all patch information
};

template <class T>
class SkuPatchModel {
 public:
  /// Validates the config; throws ConfigError on inconsistencies.
  static SkuPatchModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Image must be image_size square; patches are resampled to patch_size.
  ModelOutput<T> forward(const Image& image, const std::vector<Image>& patches, ForwardOptions options = {}) const;

  /// Forward from already-embedded tokens (used by gradient checks).
  ModelOutput<T> forward_tokens(const TokenSet<T>& image, const std::vector<TokenSet<T>>& patches,
                                ForwardOptions options = {}) const;

  /// Every learnable tensor, in a fixed order with unique dotted names.
  void visit(const ParamVisitor<T>& fn);
  std::vector<std::pair<std::string, Tensor<T>>> parameters();
  std::size_t parameter_count();

  PatchEmbedding<T> image_embed;
  PatchEmbedding<T> patch_embed;
  AttentionParams<T> patch_fusion;
  Tensor<T> object_queries;  // K × d
  std::vector<EncoderLayer<T>> encoder;
  Decoder<T> decoder;
  Heads<T> heads;

 private:
  ModelConfig config_;
};

}  // namespace skupatch
