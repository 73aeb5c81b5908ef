#pragma once

// Patch-image correlation encoder: a stack of layers that calibrate image
// tokens against patch tokens, collect a multi-scale image pyramid and
// aggregate object tokens from the image.

#include <vector>

#include "skupatch/attention.hpp"
#include "skupatch/config.hpp"

namespace skupatch {

template <class T>
struct EncoderLayer {
  AttentionParams<T> image_from_patch;   // image tokens attend to patch tokens
  AttentionParams<T> patch_from_image;   // patch tokens attend to image tokens
  AttentionParams<T> image_self;         // windowed
  FeedForward<T> image_ffn;
  AttentionParams<T> object_from_image;
  AttentionParams<T> object_self;
  FeedForward<T> object_ffn;
  Linear<T> merge;                       // applied after 2×2 pooling; undefined on the last layer
  std::size_t window = 4;
  bool use_patch_attention = true;

  static EncoderLayer create(const ModelConfig& config, bool with_merge, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <class T>
struct EncoderLevel {
  TokenSet<T> image;   // calibrated, pre-merge
  TokenSet<T> patch;
  TokenSet<T> objects;
};

/// One layer. `level` receives this level's calibrated outputs; the returned
/// tuple is the next layer's input (merged image grid, pooled patch grid).
template <class T>
struct EncoderStep {
  EncoderLevel<T> level;
  TokenSet<T> next_image;
  TokenSet<T> next_patch;
};

template <class T>
EncoderStep<T> encoder_layer_forward(const TokenSet<T>& image, const TokenSet<T>& patch,
                                     const TokenSet<T>& objects, const EncoderLayer<T>& layer);

template <class T>
struct EncoderOutput {
  std::vector<TokenSet<T>> image_pyramid;  // level 0 finest
  std::vector<TokenSet<T>> patch_levels;
  TokenSet<T> objects;
};

/// Runs every layer; throws ConfigError when a grid cannot be halved as often
/// as the layer count requires.
template <class T>
EncoderOutput<T> encoder_forward(const TokenSet<T>& image, const TokenSet<T>& patch,
                                 const Tensor<T>& object_queries, const std::vector<EncoderLayer<T>>& layers);

}  // namespace skupatch
