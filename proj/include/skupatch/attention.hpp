#pragma once

// Multi-head attention blocks shared by the encoder, decoder and the
// multi-patch fusion. Blocks are pre-norm: the query and key/value token sets
// are layer-normalized, projected, attended, projected back, and (optionally)
// added to the incoming query tokens.

#include "skupatch/nn.hpp"

namespace skupatch {

template <class T>
struct AttentionParams {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;
  LayerNorm<T> norm_query;
  LayerNorm<T> norm_kv;
  std::size_t heads = 1;
  bool residual = true;
  bool pre_norm = true;

  /// Throws DimensionError unless width is divisible by heads.
  static AttentionParams create(std::size_t width, std::size_t heads, Rng& rng);
  std::size_t width() const { return query.in_features(); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Attention logits are divided by sqrt(width), matching the single-head
/// formulation the blocks are derived from.
template <class T>
T attention_scale(std::size_t width);

/// Pre-residual cross-attention output: output(MHA(Q(q), K(kv), V(kv))).
template <class T>
Tensor<T> cross_attention_core(const Tensor<T>& query_tokens, const Tensor<T>& kv_tokens,
                               const AttentionParams<T>& params,
                               std::vector<std::vector<std::vector<T>>>* weights = nullptr);

/// Cross-attention with the residual applied per params; keeps the query's
/// token count and grid layout. Throws DimensionError on width mismatch and
/// UsageError on an empty key/value set.
template <class T>
TokenSet<T> cross_attention(const TokenSet<T>& query_tokens, const TokenSet<T>& kv_tokens,
                            const AttentionParams<T>& params);

/// Full self-attention over all tokens of the set.
template <class T>
TokenSet<T> self_attention(const TokenSet<T>& tokens, const AttentionParams<T>& params);

/// Partition of a grid into non-overlapping window×window tiles. Tiles on the
/// bottom/right border hold fewer tokens when the grid side is not divisible,
/// which is the same as zero-padding and masking the padded keys.
std::vector<AttentionGroup> window_groups(GridShape grid, std::size_t window);

/// Self-attention computed independently inside each window.
template <class T>
TokenSet<T> windowed_self_attention(const TokenSet<T>& grid_tokens, std::size_t window,
                                    const AttentionParams<T>& params);

}  // namespace skupatch
