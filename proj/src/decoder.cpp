#include "skupatch/decoder.hpp"

#include <cmath>
#include <numbers>

#include "skupatch/errors.hpp"

namespace skupatch {

template <class T>
Bottleneck<T> Bottleneck<T>::create(std::size_t width, Rng& rng) {
  return {Linear<T>::create(width, width / 2, rng), Linear<T>::create(width / 2, width, rng)};
}

template <class T>
Tensor<T> Bottleneck<T>::operator()(const Tensor<T>& x) const {
  return add(x, expand(gelu(reduce(x))));
}

template <class T>
void Bottleneck<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  reduce.visit(prefix + ".reduce", fn);
  expand.visit(prefix + ".expand", fn);
}

template <class T>
PyramidFusion<T> PyramidFusion<T>::create(std::size_t levels, std::size_t width, Rng& rng) {
  PyramidFusion f;
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    f.lateral.push_back(Bottleneck<T>::create(width, rng));
    f.smooth.push_back(Bottleneck<T>::create(width, rng));
  }
  return f;
}

template <class T>
void PyramidFusion<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  for (std::size_t i = 0; i < lateral.size(); ++i) {
    lateral[i].visit(prefix + ".lateral" + std::to_string(i), fn);
    smooth[i].visit(prefix + ".smooth" + std::to_string(i), fn);
  }
}

template <class T>
TokenSet<T> upsample2x(const TokenSet<T>& coarse) {
  if (!coarse.grid) throw UsageError("upsampling needs grid-shaped tokens");
  const GridShape fine{coarse.grid->rows * 2, coarse.grid->cols * 2};
  std::vector<T> pts;
  pts.reserve(fine.count() * 2);
  for (std::size_t r = 0; r < fine.rows; ++r) {
    for (std::size_t c = 0; c < fine.cols; ++c) {
      pts.push_back((static_cast<T>(c) + T(0.5)) / static_cast<T>(fine.cols));
      pts.push_back((static_cast<T>(r) + T(0.5)) / static_cast<T>(fine.rows));
    }
  }
  const Tensor<T> points({fine.count(), 2}, std::move(pts));
  return {bilinear_sample(coarse.tokens, *coarse.grid, points), fine};
}

template <class T>
std::vector<TokenSet<T>> pyramid_fuse(const std::vector<TokenSet<T>>& pyramid, const PyramidFusion<T>& fusion) {
  if (pyramid.empty()) return {};
  if (fusion.lateral.size() + 1 != pyramid.size()) {
    throw DimensionError("pyramid has " + std::to_string(pyramid.size()) + " levels, fusion expects " +
                         std::to_string(fusion.lateral.size() + 1));
  }
  std::vector<TokenSet<T>> fused(pyramid.size());
  fused.back() = pyramid.back();
  for (std::size_t i = pyramid.size() - 1; i-- > 0;) {
    const GridShape g = *pyramid[i].grid;
    const GridShape gc = *pyramid[i + 1].grid;
    if (g.rows != 2 * gc.rows || g.cols != 2 * gc.cols) {
      throw DimensionError("pyramid level " + std::to_string(i) + " is not twice the next level");
    }
    const Tensor<T> up = upsample2x(fused[i + 1]).tokens;
    fused[i] = {fusion.smooth[i](add(fusion.lateral[i](pyramid[i].tokens), up)), g};
  }
  return fused;
}

template <class T>
DeformableAttention<T> DeformableAttention<T>::create(const ModelConfig& c, Rng& rng) {
  DeformableAttention a;
  const std::size_t d = c.width;
  a.heads = c.heads;
  a.points = c.points;
  a.dot_logits = c.deformable_dot_logits;
  a.norm_query = LayerNorm<T>::create(d);
  a.norm_value = LayerNorm<T>::create(d);
  a.reference = Linear<T>::create(d, 2, rng);
  a.offsets = Linear<T>::zeros(d, c.heads * c.points * 2);
  // Initial sampling pattern: each head looks along its own direction, with
  // points at increasing distance (in token units).
  auto bias = a.offsets.bias.mutable_data();
  for (std::size_t h = 0; h < c.heads; ++h) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(c.heads);
    double dx = std::cos(angle), dy = std::sin(angle);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (std::size_t j = 0; j < c.points; ++j) {
      bias[(h * c.points + j) * 2] = static_cast<T>(dx * static_cast<double>(j + 1));
      bias[(h * c.points + j) * 2 + 1] = static_cast<T>(dy * static_cast<double>(j + 1));
    }
  }
  a.weights = Linear<T>::zeros(d, c.heads * c.points);
  if (a.dot_logits) {
    a.query_proj = Linear<T>::create(d, d, rng);
    a.key_proj = Linear<T>::create(d, d, rng);
  }
  a.value_proj = Linear<T>::create(d, d, rng);
  a.output = Linear<T>::create(d, d, rng);
  return a;
}

template <class T>
void DeformableAttention<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  norm_query.visit(prefix + ".norm_q", fn);
  norm_value.visit(prefix + ".norm_v", fn);
  reference.visit(prefix + ".reference", fn);
  offsets.visit(prefix + ".offsets", fn);
  if (dot_logits) {
    query_proj.visit(prefix + ".q", fn);
    key_proj.visit(prefix + ".k", fn);
  } else {
    weights.visit(prefix + ".weights", fn);
  }
  value_proj.visit(prefix + ".v", fn);
  output.visit(prefix + ".o", fn);
}

template <class T>
Tensor<T> deformable_attention_core(const Tensor<T>& queries, const TokenSet<T>& grid_tokens,
                                    const DeformableAttention<T>& p, const Tensor<T>* pinned_points,
                                    DeformableTrace<T>* trace) {
  if (!grid_tokens.grid) throw UsageError("deformable attention needs grid-shaped tokens");
  const std::size_t d = p.width();
  if (queries.cols() != d || grid_tokens.width() != d) {
    throw DimensionError("deformable attention: token widths do not match block width " + std::to_string(d));
  }
  const GridShape grid = *grid_tokens.grid;
  const std::size_t nq = queries.rows();
  const std::size_t samples = p.heads * p.points;

  const Tensor<T> qn = p.norm_query(queries);
  const Tensor<T> vn = p.norm_value(grid_tokens.tokens);

  Tensor<T> points;
  if (pinned_points) {
    if (pinned_points->rows() != nq * samples || pinned_points->cols() != 2) {
      throw DimensionError("pinned sampling points must be (queries*heads*points) x 2");
    }
    points = *pinned_points;
  } else {
    const Tensor<T> ref = sigmoid(p.reference(qn));  // same as reference_logits()
    std::vector<std::size_t> owner(nq * samples);
    for (std::size_t i = 0; i < owner.size(); ++i) owner[i] = i / samples;
    std::vector<T> unit(nq * samples * 2);
    for (std::size_t i = 0; i < unit.size(); i += 2) {
      unit[i] = T(1) / static_cast<T>(grid.cols);
      unit[i + 1] = T(1) / static_cast<T>(grid.rows);
    }
    const Tensor<T> off = mul(p.offsets(qn), Tensor<T>({nq, samples * 2}, std::move(unit)));
    points = add(gather_rows(ref, std::span<const std::size_t>(owner)), reshape(off, {nq * samples, 2}));
  }

  const Tensor<T> values = bilinear_sample(p.value_proj(vn), grid, points);
  Tensor<T> logits;
  if (p.dot_logits) {
    const Tensor<T> keys = bilinear_sample(p.key_proj(vn), grid, points);
    logits = head_dot_logits(p.query_proj(qn), keys, p.heads, p.points, T(1) / std::sqrt(static_cast<T>(d)));
  } else {
    logits = p.weights(qn);
  }
  const Tensor<T> w = reshape(softmax(reshape(logits, {nq * p.heads, p.points}), 1), {nq, samples});
  if (trace) {
    trace->points = points;
    trace->weights = w;
  }
  return p.output(head_weighted_sum(values, w, p.heads, p.points));
}

template <class T>
Tensor<T> reference_logits(const Tensor<T>& queries, const DeformableAttention<T>& p) {
  return p.reference(p.norm_query(queries));
}

template <class T>
DecoderLayer<T> DecoderLayer<T>::create(const ModelConfig& c, Rng& rng) {
  DecoderLayer l;
  l.image_from_patch = AttentionParams<T>::create(c.width, c.heads, rng);
  l.deformable = DeformableAttention<T>::create(c, rng);
  l.object_from_image = AttentionParams<T>::create(c.width, c.heads, rng);
  l.object_self = AttentionParams<T>::create(c.width, c.heads, rng);
  l.object_ffn = FeedForward<T>::create(c.width, c.ffn_hidden, rng);
  l.use_cross_attention = c.decoder_cross_attention;
  l.use_deformable = c.deformable;
  return l;
}

template <class T>
void DecoderLayer<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  if (use_cross_attention) image_from_patch.visit(prefix + ".image_from_patch", fn);
  if (use_deformable) {
    deformable.visit(prefix + ".deformable", fn);
  } else {
    object_from_image.visit(prefix + ".object_from_image", fn);
  }
  object_self.visit(prefix + ".object_self", fn);
  object_ffn.visit(prefix + ".object_ffn", fn);
}

template <class T>
Tensor<T> decoder_layer_forward(const Tensor<T>& objects, const TokenSet<T>& image, const TokenSet<T>& patch,
                                const DecoderLayer<T>& layer, Tensor<T>* reference_out) {
  const TokenSet<T> features = layer.use_cross_attention ? cross_attention(image, patch, layer.image_from_patch) : image;
  TokenSet<T> z_o{objects, std::nullopt};
  if (layer.use_deformable) {
    z_o.tokens = add(objects, deformable_attention_core(objects, features, layer.deformable));
    if (reference_out) *reference_out = reference_logits(objects, layer.deformable);
  } else {
    z_o = cross_attention(z_o, features, layer.object_from_image);
  }
  z_o = self_attention(z_o, layer.object_self);
  return layer.object_ffn(z_o.tokens);
}

template <class T>
Decoder<T> Decoder<T>::create(const ModelConfig& c, Rng& rng) {
  Decoder dec;
  dec.fuse = c.fuse;
  if (c.fuse) dec.fusion = PyramidFusion<T>::create(c.layers, c.width, rng);
  for (std::size_t i = 0; i < c.layers; ++i) dec.layers.push_back(DecoderLayer<T>::create(c, rng));
  dec.norm = LayerNorm<T>::create(c.width);
  return dec;
}

template <class T>
void Decoder<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  if (fuse) fusion.visit(prefix + ".fusion", fn);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  norm.visit(prefix + ".norm", fn);
}

template <class T>
DecoderOutput<T> decoder_forward(const EncoderOutput<T>& encoded, const Decoder<T>& decoder) {
  const std::size_t levels = encoded.image_pyramid.size();
  if (levels == 0 || encoded.patch_levels.size() != levels) throw UsageError("incomplete encoder output");
  if (decoder.layers.size() != levels) {
    throw DimensionError("decoder has " + std::to_string(decoder.layers.size()) + " layers for " +
                         std::to_string(levels) + " pyramid levels");
  }
  const std::vector<TokenSet<T>> fused =
      decoder.fuse ? pyramid_fuse(encoded.image_pyramid, decoder.fusion) : std::vector<TokenSet<T>>{};
  DecoderOutput<T> out;
  Tensor<T> z_o = encoded.objects.tokens;
  for (std::size_t j = 0; j < levels; ++j) {
    const std::size_t level = decoder.fuse ? levels - 1 - j : levels - 1;
    const TokenSet<T>& image = decoder.fuse ? fused[level] : encoded.image_pyramid[level];
    Tensor<T> reference;
    z_o = decoder_layer_forward(z_o, image, encoded.patch_levels[level], decoder.layers[j], &reference);
    if (j + 1 < levels) {
      out.intermediate.push_back(decoder.norm(z_o));
      out.intermediate_reference.push_back(reference);
    } else {
      out.reference = reference;
    }
  }
  out.objects = decoder.norm(z_o);
  return out;
}

#define SKUPATCH_INSTANTIATE_DECODER(T)                                                              \
  template struct Bottleneck<T>;                                                                     \
  template struct PyramidFusion<T>;                                                                  \
  template struct DeformableAttention<T>;                                                            \
  template struct DecoderLayer<T>;                                                                   \
  template struct Decoder<T>;                                                                        \
  template TokenSet<T> upsample2x(const TokenSet<T>&);                                               \
  template std::vector<TokenSet<T>> pyramid_fuse(const std::vector<TokenSet<T>>&, const PyramidFusion<T>&); \
  template Tensor<T> deformable_attention_core(const Tensor<T>&, const TokenSet<T>&,                 \
                                               const DeformableAttention<T>&, const Tensor<T>*,      \
                                               DeformableTrace<T>*);                                 \
  template Tensor<T> reference_logits(const Tensor<T>&, const DeformableAttention<T>&);             \
  template Tensor<T> decoder_layer_forward(const Tensor<T>&, const TokenSet<T>&, const TokenSet<T>&, \
                                           const DecoderLayer<T>&, Tensor<T>*);                              \
  template DecoderOutput<T> decoder_forward(const EncoderOutput<T>&, const Decoder<T>&);

SKUPATCH_INSTANTIATE_DECODER(float)
SKUPATCH_INSTANTIATE_DECODER(double)

}  // namespace skupatch
