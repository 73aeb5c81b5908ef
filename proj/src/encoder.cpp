#include "skupatch/encoder.hpp"

#include "skupatch/errors.hpp"

namespace skupatch {

template <class T>
EncoderLayer<T> EncoderLayer<T>::create(const ModelConfig& c, bool with_merge, Rng& rng) {
  EncoderLayer l;
  l.image_from_patch = AttentionParams<T>::create(c.width, c.heads, rng);
  l.patch_from_image = AttentionParams<T>::create(c.width, c.heads, rng);
  l.image_self = AttentionParams<T>::create(c.width, c.heads, rng);
  l.image_ffn = FeedForward<T>::create(c.width, c.ffn_hidden, rng);
  l.object_from_image = AttentionParams<T>::create(c.width, c.heads, rng);
  l.object_self = AttentionParams<T>::create(c.width, c.heads, rng);
  l.object_ffn = FeedForward<T>::create(c.width, c.ffn_hidden, rng);
  if (with_merge) l.merge = Linear<T>::create(c.width, c.width, rng);
  l.window = c.window;
  l.use_patch_attention = c.encoder_patch_attention;
  return l;
}

template <class T>
void EncoderLayer<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  if (use_patch_attention) image_from_patch.visit(prefix + ".image_from_patch", fn);
  patch_from_image.visit(prefix + ".patch_from_image", fn);
  image_self.visit(prefix + ".image_self", fn);
  image_ffn.visit(prefix + ".image_ffn", fn);
  object_from_image.visit(prefix + ".object_from_image", fn);
  object_self.visit(prefix + ".object_self", fn);
  object_ffn.visit(prefix + ".object_ffn", fn);
  if (merge.weight.defined()) merge.visit(prefix + ".merge", fn);
}

namespace {

template <class T>
TokenSet<T> pool(const TokenSet<T>& x) {
  const GridShape g = *x.grid;
  if (g.rows % 2 != 0 || g.cols % 2 != 0) {
    throw ConfigError("token grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                      " cannot be halved for the next encoder level");
  }
  return {avg_pool2x2(x.tokens, g), GridShape{g.rows / 2, g.cols / 2}};
}

}  // namespace

template <class T>
EncoderStep<T> encoder_layer_forward(const TokenSet<T>& image, const TokenSet<T>& patch,
                                     const TokenSet<T>& objects, const EncoderLayer<T>& layer) {
  if (!image.grid || !patch.grid) throw UsageError("encoder layer needs grid-shaped image and patch tokens");
  TokenSet<T> z_i = image;
  if (layer.use_patch_attention) z_i = cross_attention(z_i, patch, layer.image_from_patch);
  const TokenSet<T> z_p = cross_attention(patch, z_i, layer.patch_from_image);
  z_i = windowed_self_attention(z_i, layer.window, layer.image_self);
  z_i.tokens = layer.image_ffn(z_i.tokens);
  TokenSet<T> z_o = cross_attention(objects, z_i, layer.object_from_image);
  z_o = self_attention(z_o, layer.object_self);
  z_o.tokens = layer.object_ffn(z_o.tokens);

  EncoderStep<T> step{{z_i, z_p, z_o}, {}, {}};
  if (layer.merge.weight.defined()) {
    TokenSet<T> pooled = pool(z_i);
    step.next_image = {layer.merge(pooled.tokens), pooled.grid};
    step.next_patch = pool(z_p);
  }
  return step;
}

template <class T>
EncoderOutput<T> encoder_forward(const TokenSet<T>& image, const TokenSet<T>& patch,
                                 const Tensor<T>& object_queries, const std::vector<EncoderLayer<T>>& layers) {
  if (layers.empty()) throw ConfigError("encoder needs at least one layer");
  if (!image.grid || !patch.grid) throw UsageError("encoder needs grid-shaped image and patch tokens");
  const std::size_t halvings = std::size_t{1} << (layers.size() - 1);
  for (const GridShape g : {*image.grid, *patch.grid}) {
    if (g.rows % halvings != 0 || g.cols % halvings != 0) {
      throw ConfigError("token grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                        " cannot be halved " + std::to_string(layers.size() - 1) + " times");
    }
  }
  EncoderOutput<T> out;
  TokenSet<T> z_i = image;
  TokenSet<T> z_p = patch;
  TokenSet<T> z_o{object_queries, std::nullopt};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    EncoderStep<T> step = encoder_layer_forward(z_i, z_p, z_o, layers[i]);
    out.image_pyramid.push_back(step.level.image);
    out.patch_levels.push_back(step.level.patch);
    z_o = step.level.objects;
    if (i + 1 < layers.size()) {
      if (!step.next_image.tokens.defined()) throw ConfigError("non-final encoder layer lacks a merge map");
      z_i = step.next_image;
      z_p = step.next_patch;
    }
  }
  out.objects = z_o;
  return out;
}

#define SKUPATCH_INSTANTIATE_ENCODER(T)                                                             \
  template struct EncoderLayer<T>;                                                                  \
  template EncoderStep<T> encoder_layer_forward(const TokenSet<T>&, const TokenSet<T>&,             \
                                                const TokenSet<T>&, const EncoderLayer<T>&);        \
  template EncoderOutput<T> encoder_forward(const TokenSet<T>&, const TokenSet<T>&, const Tensor<T>&, \
                                            const std::vector<EncoderLayer<T>>&);

SKUPATCH_INSTANTIATE_ENCODER(float)
SKUPATCH_INSTANTIATE_ENCODER(double)

}  // namespace skupatch
