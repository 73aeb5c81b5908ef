#include "skupatch/model.hpp"

#include "skupatch/errors.hpp"

namespace skupatch {

template <class T>
Heads<T> Heads<T>::create(const ModelConfig& c, Rng& rng) {
  Heads h;
  h.classifier = Mlp<T>::create(c.width, c.width, 2, c.head_layers, rng);
  h.box = Mlp<T>::create(c.width, c.width, 4, c.head_layers, rng);
  h.mask = Mlp<T>::create(c.width, c.width, c.mask_coeffs, c.head_layers, rng);
  h.mask_scale = static_cast<T>(c.mask_output_scale);
  return h;
}

template <class T>
Predictions<T> Heads<T>::operator()(const Tensor<T>& objects, const Tensor<T>& reference) const {
  Tensor<T> raw = box(objects);
  if (reference.defined()) {
    const std::vector<Tensor<T>> parts{reference, Tensor<T>({reference.rows(), 2}, T(0))};
    raw = add(raw, concat<T>(parts, 1));
  }
  return {classifier(objects), sigmoid(raw), scale(mask(objects), mask_scale)};
}

template <class T>
void Heads<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  classifier.visit(prefix + ".class", fn);
  box.visit(prefix + ".box", fn);
  mask.visit(prefix + ".mask", fn);
}

template <class T>
SkuPatchModel<T> SkuPatchModel<T>::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  SkuPatchModel m;
  m.config_ = config;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  const std::size_t gi = config.image_grid();
  const std::size_t gp = config.patch_grid();
  m.image_embed = PatchEmbedding<T>::create(config.stride, {gi, gi}, config.width, rng);
  m.patch_embed = PatchEmbedding<T>::create(config.patch_stride, {gp, gp}, config.width, rng);
  m.patch_fusion = AttentionParams<T>::create(config.width, config.heads, rng);
  m.object_queries = normal_parameter<T>({config.queries, config.width}, 0.02, rng);
  for (std::size_t i = 0; i < config.layers; ++i) {
    m.encoder.push_back(EncoderLayer<T>::create(config, i + 1 < config.layers, rng));
  }
  m.decoder = Decoder<T>::create(config, rng);
  m.heads = Heads<T>::create(config, rng);
  return m;
}

template <class T>
ModelOutput<T> SkuPatchModel<T>::forward(const Image& image, const std::vector<Image>& patches,
                                         ForwardOptions options) const {
  if (image.width != config_.image_size || image.height != config_.image_size) {
    throw DimensionError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         ", model expects " + std::to_string(config_.image_size) + " square");
  }
  if (patches.empty()) throw UsageError("at least one patch is required");
  std::vector<TokenSet<T>> patch_tokens;
  patch_tokens.reserve(patches.size());
  for (const auto& p : patches) patch_tokens.push_back(tokenize_patch(p, config_.patch_size, patch_embed));
  return forward_tokens(tokenize_image(image, image_embed), patch_tokens, options);
}

template <class T>
ModelOutput<T> SkuPatchModel<T>::forward_tokens(const TokenSet<T>& image, const std::vector<TokenSet<T>>& patches,
                                                ForwardOptions options) const {
  TokenSet<T> patch = n_to_1(patches, patch_fusion, {config_.patch_fusion, config_.patch_momentum});
  if (options.zero_patch_tokens) patch.tokens = Tensor<T>(patch.tokens.shape(), T(0));
  const EncoderOutput<T> encoded = encoder_forward(image, patch, object_queries, encoder);
  const DecoderOutput<T> decoded = decoder_forward(encoded, decoder);
  ModelOutput<T> out;
  const bool anchored = config_.box_from_reference;
  out.final = heads(decoded.objects, anchored ? decoded.reference : Tensor<T>{});
  if (config_.aux_loss) {
    for (std::size_t i = 0; i < decoded.intermediate.size(); ++i) {
      out.auxiliary.push_back(heads(decoded.intermediate[i], anchored ? decoded.intermediate_reference[i] : Tensor<T>{}));
    }
  }
  return out;
}

template <class T>
void SkuPatchModel<T>::visit(const ParamVisitor<T>& fn) {
  image_embed.visit("image_embed", fn);
  patch_embed.visit("patch_embed", fn);
  if (config_.patch_fusion == PatchFusion::kAttention) patch_fusion.visit("patch_fusion", fn);
  fn("object_queries", object_queries);
  for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("encoder" + std::to_string(i), fn);
  decoder.visit("decoder", fn);
  heads.visit("heads", fn);
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> SkuPatchModel<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <class T>
std::size_t SkuPatchModel<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template struct Heads<float>;
template struct Heads<double>;
template class SkuPatchModel<float>;
template class SkuPatchModel<double>;

}  // namespace skupatch
