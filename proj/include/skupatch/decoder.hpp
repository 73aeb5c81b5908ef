#pragma once

// Patch-aware decoder: top-down pyramid fusion followed by one refinement
// layer per pyramid level, coarse to fine.

#include <vector>

#include "skupatch/attention.hpp"
#include "skupatch/config.hpp"
#include "skupatch/encoder.hpp"

namespace skupatch {

/// x + expand(gelu(reduce(x))), width d → d/2 → d.
template <class T>
struct Bottleneck {
  Linear<T> reduce;
  Linear<T> expand;

  static Bottleneck create(std::size_t width, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// One block pair per non-coarsest level.
template <class T>
struct PyramidFusion {
  std::vector<Bottleneck<T>> lateral;  // applied to the level's own tokens
  std::vector<Bottleneck<T>> smooth;   // applied after adding the upsampled coarser level

  static PyramidFusion create(std::size_t levels, std::size_t width, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// ×2 bilinear upsampling of grid tokens (half-pixel centers).
template <class T>
TokenSet<T> upsample2x(const TokenSet<T>& coarse);

/// fused[last] = pyramid[last]; fused[i] = smooth_i(lateral_i(pyramid[i]) +
/// up2(fused[i+1])). Throws DimensionError if adjacent grids are not exactly ×2.
template <class T>
std::vector<TokenSet<T>> pyramid_fuse(const std::vector<TokenSet<T>>& pyramid, const PyramidFusion<T>& fusion);

/// Sparse attention of object queries over a few bilinearly sampled grid
/// locations per head.
template <class T>
struct DeformableAttention {
  LayerNorm<T> norm_query;
  LayerNorm<T> norm_value;
  Linear<T> reference;   // d → 2, through a sigmoid
  Linear<T> offsets;     // d → heads·points·2, scaled by 1/grid side
  Linear<T> weights;     // d → heads·points (predicted-weight mode)
  Linear<T> query_proj;  // dot-logit mode only
  Linear<T> key_proj;    // dot-logit mode only
  Linear<T> value_proj;
  Linear<T> output;
  std::size_t heads = 1;
  std::size_t points = 1;
  bool dot_logits = false;

  static DeformableAttention create(const ModelConfig& config, Rng& rng);
  std::size_t width() const { return value_proj.in_features(); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Extra outputs of deformable_attention_core for inspection.
template <class T>
struct DeformableTrace {
  Tensor<T> points;   // (queries·heads·points) × 2, before clamping
  Tensor<T> weights;  // queries × (heads·points), softmax over points per head
};

/// Reference point logits (K × 2, x then y); sampling is centred on their
/// sigmoid.
template <class T>
Tensor<T> reference_logits(const Tensor<T>& queries, const DeformableAttention<T>& params);

/// Pre-residual deformable attention output. When `pinned_points` is given it
/// replaces the predicted sampling locations; its row count must be
/// queries·heads·points.
template <class T>
Tensor<T> deformable_attention_core(const Tensor<T>& queries, const TokenSet<T>& grid_tokens,
                                    const DeformableAttention<T>& params, const Tensor<T>* pinned_points = nullptr,
                                    DeformableTrace<T>* trace = nullptr);

template <class T>
struct DecoderLayer {
  AttentionParams<T> image_from_patch;   // patch-aware enhancement of the level's image tokens
  DeformableAttention<T> deformable;
  AttentionParams<T> object_from_image;  // dense fallback
  AttentionParams<T> object_self;
  FeedForward<T> object_ffn;
  bool use_cross_attention = true;
  bool use_deformable = true;

  static DecoderLayer create(const ModelConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// `reference_out`, when given, receives the layer's reference logits
/// (left undefined for the dense fallback).
template <class T>
Tensor<T> decoder_layer_forward(const Tensor<T>& objects, const TokenSet<T>& image, const TokenSet<T>& patch,
                                const DecoderLayer<T>& layer, Tensor<T>* reference_out = nullptr);

template <class T>
struct Decoder {
  PyramidFusion<T> fusion;
  std::vector<DecoderLayer<T>> layers;  // layers[0] runs on the coarsest level
  LayerNorm<T> norm;
  bool fuse = true;

  static Decoder create(const ModelConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Final object embeddings (normalized) plus the normalized output of every
/// earlier layer for auxiliary supervision, each with the reference logits
/// its layer sampled around (undefined with dense attention).
template <class T>
struct DecoderOutput {
  Tensor<T> objects;
  Tensor<T> reference;
  std::vector<Tensor<T>> intermediate;
  std::vector<Tensor<T>> intermediate_reference;
};

template <class T>
DecoderOutput<T> decoder_forward(const EncoderOutput<T>& encoded, const Decoder<T>& decoder);

}  // namespace skupatch
