#pragma once

// Block embedding of images and SKU patches into token sets, and fusion of
// several patch token sets into one.

#include <vector>

#include "skupatch/attention.hpp"
#include "skupatch/config.hpp"
#include "skupatch/raster.hpp"

namespace skupatch {

/// Linear embedding of stride×stride×3 pixel blocks plus a learned positional
/// embedding per grid cell.
template <class T>
struct PatchEmbedding {
  Linear<T> proj;        // (stride²·3) × width
  Tensor<T> positions;   // grid.count() × width
  std::size_t stride = 1;
  GridShape grid;

  static PatchEmbedding create(std::size_t stride, GridShape grid, std::size_t width, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Unfolds the raster into grid-order block rows scaled to [0, 1]; block
/// layout is (dy, dx, channel). Throws ConfigError if a side is not divisible
/// by the stride.
template <class T>
Tensor<T> unfold_blocks(const Image& image, std::size_t stride);

/// Throws ConfigError on indivisible sides and DimensionError if the token
/// grid does not match the embedding's positional grid.
template <class T>
TokenSet<T> tokenize_image(const Image& image, const PatchEmbedding<T>& embed);

/// Bilinearly resamples the patch to size×size, then embeds it. Throws
/// InputError on a zero-area patch.
template <class T>
TokenSet<T> tokenize_patch(const Image& patch, std::size_t size, const PatchEmbedding<T>& embed);

struct PatchFusionOptions {
  PatchFusion mode = PatchFusion::kAttention;
  double momentum = 0.9;
};

/// Folds patches 2..N into the first, in list order. Attention mode applies a
/// residual cross-attention of the running set onto each further patch; add
/// mode averages; momentum mode keeps an exponential running average. A single
/// patch is returned unchanged. Throws UsageError on an empty list and
/// DimensionError on mixed shapes.
template <class T>
TokenSet<T> n_to_1(const std::vector<TokenSet<T>>& patches, const AttentionParams<T>& params,
                   PatchFusionOptions options = {});

}  // namespace skupatch
