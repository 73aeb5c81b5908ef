#include "skupatch/attention.hpp"

#include <cmath>

#include "skupatch/errors.hpp"

namespace skupatch {

template <class T>
AttentionParams<T> AttentionParams<T>::create(std::size_t width, std::size_t heads, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("attention width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.query = Linear<T>::create(width, width, rng);
  p.key = Linear<T>::create(width, width, rng);
  p.value = Linear<T>::create(width, width, rng);
  p.output = Linear<T>::create(width, width, rng);
  p.norm_query = LayerNorm<T>::create(width);
  p.norm_kv = LayerNorm<T>::create(width);
  p.heads = heads;
  return p;
}

template <class T>
void AttentionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  query.visit(prefix + ".q", fn);
  key.visit(prefix + ".k", fn);
  value.visit(prefix + ".v", fn);
  output.visit(prefix + ".o", fn);
  norm_query.visit(prefix + ".norm_q", fn);
  norm_kv.visit(prefix + ".norm_kv", fn);
}

template <class T>
T attention_scale(std::size_t width) {
  return T(1) / std::sqrt(static_cast<T>(width));
}

namespace {

template <class T>
void check_widths(const Tensor<T>& q, const Tensor<T>& kv, const AttentionParams<T>& p) {
  if (q.cols() != p.width() || kv.cols() != p.width()) {
    throw DimensionError("attention: token widths " + std::to_string(q.cols()) + "/" +
                         std::to_string(kv.cols()) + " do not match block width " +
                         std::to_string(p.width()));
  }
  if (kv.rows() == 0) throw UsageError("attention: empty key/value token set");
}

}  // namespace

template <class T>
Tensor<T> cross_attention_core(const Tensor<T>& query_tokens, const Tensor<T>& kv_tokens,
                               const AttentionParams<T>& p,
                               std::vector<std::vector<std::vector<T>>>* weights) {
  check_widths(query_tokens, kv_tokens, p);
  const Tensor<T> qn = p.pre_norm ? p.norm_query(query_tokens) : query_tokens;
  const Tensor<T> kvn = p.pre_norm ? p.norm_kv(kv_tokens) : kv_tokens;
  const Tensor<T> attended = dense_attention<T>(p.query(qn), p.key(kvn), p.value(kvn), p.heads,
                                                attention_scale<T>(p.width()), weights);
  return p.output(attended);
}

template <class T>
TokenSet<T> cross_attention(const TokenSet<T>& query_tokens, const TokenSet<T>& kv_tokens,
                            const AttentionParams<T>& p) {
  Tensor<T> out = cross_attention_core(query_tokens.tokens, kv_tokens.tokens, p);
  if (p.residual) out = add(query_tokens.tokens, out);
  return {out, query_tokens.grid};
}

template <class T>
TokenSet<T> self_attention(const TokenSet<T>& tokens, const AttentionParams<T>& p) {
  check_widths(tokens.tokens, tokens.tokens, p);
  const Tensor<T> xn = p.pre_norm ? p.norm_query(tokens.tokens) : tokens.tokens;
  Tensor<T> out = p.output(dense_attention<T>(p.query(xn), p.key(xn), p.value(xn), p.heads,
                                              attention_scale<T>(p.width())));
  if (p.residual) out = add(tokens.tokens, out);
  return {out, tokens.grid};
}

std::vector<AttentionGroup> window_groups(GridShape grid, std::size_t window) {
  if (window == 0) throw ConfigError("window size must be positive");
  std::vector<AttentionGroup> groups;
  for (std::size_t r0 = 0; r0 < grid.rows; r0 += window) {
    for (std::size_t c0 = 0; c0 < grid.cols; c0 += window) {
      AttentionGroup g;
      for (std::size_t r = r0; r < std::min(r0 + window, grid.rows); ++r) {
        for (std::size_t c = c0; c < std::min(c0 + window, grid.cols); ++c) {
          g.queries.push_back(r * grid.cols + c);
        }
      }
      g.keys = g.queries;
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

template <class T>
TokenSet<T> windowed_self_attention(const TokenSet<T>& grid_tokens, std::size_t window,
                                    const AttentionParams<T>& p) {
  if (!grid_tokens.grid) throw UsageError("windowed attention needs grid-shaped tokens");
  const GridShape grid = *grid_tokens.grid;
  if (grid.count() != grid_tokens.count()) {
    throw DimensionError("windowed attention: token count does not match grid");
  }
  check_widths(grid_tokens.tokens, grid_tokens.tokens, p);
  const auto groups = window_groups(grid, window);
  const Tensor<T> xn = p.pre_norm ? p.norm_query(grid_tokens.tokens) : grid_tokens.tokens;
  Tensor<T> out = p.output(grouped_attention<T>(p.query(xn), p.key(xn), p.value(xn), p.heads,
                                                attention_scale<T>(p.width()), groups));
  if (p.residual) out = add(grid_tokens.tokens, out);
  return {out, grid};
}

#define SKUPATCH_INSTANTIATE_ATTENTION(T)                                                          \
  template struct AttentionParams<T>;                                                              \
  template T attention_scale<T>(std::size_t);                                                      \
  template Tensor<T> cross_attention_core(const Tensor<T>&, const Tensor<T>&,                      \
                                          const AttentionParams<T>&,                               \
                                          std::vector<std::vector<std::vector<T>>>*);              \
  template TokenSet<T> cross_attention(const TokenSet<T>&, const TokenSet<T>&,                     \
                                       const AttentionParams<T>&);                                 \
  template TokenSet<T> self_attention(const TokenSet<T>&, const AttentionParams<T>&);              \
  template TokenSet<T> windowed_self_attention(const TokenSet<T>&, std::size_t,                    \
                                               const AttentionParams<T>&);

SKUPATCH_INSTANTIATE_ATTENTION(float)
SKUPATCH_INSTANTIATE_ATTENTION(double)

}  // namespace skupatch
