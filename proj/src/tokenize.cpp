#include "skupatch/tokenize.hpp"

#include "skupatch/errors.hpp"

namespace skupatch {

template <class T>
PatchEmbedding<T> PatchEmbedding<T>::create(std::size_t stride, GridShape grid, std::size_t width, Rng& rng) {
  PatchEmbedding e;
  e.proj = Linear<T>::create(stride * stride * 3, width, rng);
  e.positions = normal_parameter<T>({grid.count(), width}, 0.02, rng);
  e.stride = stride;
  e.grid = grid;
  return e;
}

template <class T>
void PatchEmbedding<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  proj.visit(prefix + ".proj", fn);
  fn(prefix + ".pos", positions);
}

template <class T>
Tensor<T> unfold_blocks(const Image& image, std::size_t stride) {
  if (stride == 0 || image.width % stride != 0 || image.height % stride != 0) {
    throw ConfigError("raster " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      " is not divisible by token stride " + std::to_string(stride));
  }
  const std::size_t gw = image.width / stride;
  const std::size_t gh = image.height / stride;
  const std::size_t block = stride * stride * 3;
  std::vector<T> values(gw * gh * block);
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* row = &values[(gy * gw + gx) * block];
      for (std::size_t dy = 0; dy < stride; ++dy) {
        for (std::size_t dx = 0; dx < stride; ++dx) {
          const auto* px = image.pixel(gx * stride + dx, gy * stride + dy);
          for (std::size_t c = 0; c < 3; ++c) row[(dy * stride + dx) * 3 + c] = static_cast<T>(px[c]) / T(255);
        }
      }
    }
  }
  return Tensor<T>({gw * gh, block}, std::move(values));
}

template <class T>
TokenSet<T> tokenize_image(const Image& image, const PatchEmbedding<T>& embed) {
  const Tensor<T> blocks = unfold_blocks<T>(image, embed.stride);
  const GridShape grid{image.height / embed.stride, image.width / embed.stride};
  if (!(grid == embed.grid)) {
    throw DimensionError("token grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                         " does not match embedding grid " + std::to_string(embed.grid.rows) + "x" +
                         std::to_string(embed.grid.cols));
  }
  return {add(embed.proj(blocks), embed.positions), grid};
}

template <class T>
TokenSet<T> tokenize_patch(const Image& patch, std::size_t size, const PatchEmbedding<T>& embed) {
  if (patch.width == 0 || patch.height == 0) throw InputError("zero-area patch");
  return tokenize_image(resize(patch, size, size), embed);
}

template <class T>
TokenSet<T> n_to_1(const std::vector<TokenSet<T>>& patches, const AttentionParams<T>& params,
                   PatchFusionOptions options) {
  if (patches.empty()) throw UsageError("n_to_1 needs at least one patch");
  for (const auto& p : patches) {
    if (p.tokens.shape() != patches.front().tokens.shape()) {
      throw DimensionError("n_to_1: patch token sets differ in shape (" + shape_str(p.tokens.shape()) + " vs " +
                           shape_str(patches.front().tokens.shape()) + ")");
    }
  }
  TokenSet<T> fused = patches.front();
  if (patches.size() == 1) return fused;
  switch (options.mode) {
    case PatchFusion::kAttention:
      for (std::size_t j = 1; j < patches.size(); ++j) fused = cross_attention(fused, patches[j], params);
      break;
    case PatchFusion::kAdd: {
      Tensor<T> acc = fused.tokens;
      for (std::size_t j = 1; j < patches.size(); ++j) acc = add(acc, patches[j].tokens);
      fused.tokens = scale(acc, T(1) / static_cast<T>(patches.size()));
      break;
    }
    case PatchFusion::kMomentum: {
      const T mu = static_cast<T>(options.momentum);
      for (std::size_t j = 1; j < patches.size(); ++j) {
        fused.tokens = add(scale(fused.tokens, mu), scale(patches[j].tokens, T(1) - mu));
      }
      break;
    }
  }
  return fused;
}

#define SKUPATCH_INSTANTIATE_TOKENIZE(T)                                                          \
  template struct PatchEmbedding<T>;                                                              \
  template Tensor<T> unfold_blocks<T>(const Image&, std::size_t);                                 \
  template TokenSet<T> tokenize_image(const Image&, const PatchEmbedding<T>&);                    \
  template TokenSet<T> tokenize_patch(const Image&, std::size_t, const PatchEmbedding<T>&);       \
  template TokenSet<T> n_to_1(const std::vector<TokenSet<T>>&, const AttentionParams<T>&,         \
                              PatchFusionOptions);

SKUPATCH_INSTANTIATE_TOKENIZE(float)
SKUPATCH_INSTANTIATE_TOKENIZE(double)

}  // namespace skupatch
