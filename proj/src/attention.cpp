#include "vit/attention.hpp"

#include <cmath>

namespace vit {

template <typename T>
QKV<T> qkv_project(Tape<T>& tape, const Var<T>& z, const MSAParams<T>& params) {
  const Shape& s = z.shape();
  if (s.size() != 3) throw DimensionError("qkv_project: expected [B x N' x D], got " + shape_str(s));
  const std::size_t b = s[0], n = s[1], d = s[2], k = params.heads;
  if (k == 0 || d % k != 0) {
    throw ConfigError("heads (" + std::to_string(k) + ") must divide model dim " + std::to_string(d));
  }
  if (params.qkv_w->value.shape() != Shape{d, 3 * d}) {
    throw DimensionError("qkv_project: U_qkv " + shape_str(params.qkv_w->value.shape()) + " expected " +
                         shape_str({d, 3 * d}));
  }
  const std::size_t dh = d / k;
  std::optional<Var<T>> bias;
  if (params.qkv_b) bias = tape.param(*params.qkv_b);
  auto x = ops::linear(z, tape.param(*params.qkv_w), bias);  // [B, N', 3D]
  x = ops::reshape(x, {b, n, 3, k, dh});
  x = ops::permute(x, {2, 0, 3, 1, 4});  // [3, B, k, N', Dh]
  auto part = [&](std::size_t i) { return ops::reshape(ops::narrow(x, 0, i, 1), {b * k, n, dh}); };
  return {part(0), part(1), part(2)};
}

template <typename T>
Var<T> attention_weights(const Var<T>& q, const Var<T>& k, const std::optional<Var<T>>& bias) {
  const std::size_t dh = q.shape().back();
  auto logits = ops::scale(ops::bmm(q, k, true), T(1) / std::sqrt(T(dh)));
  if (bias) logits = ops::add(logits, *bias);
  return ops::softmax(logits, 2);
}

std::size_t relative_table_rows(std::size_t grid_h, std::size_t grid_w) {
  return (2 * grid_h - 1) * (2 * grid_w - 1) + 1;
}

std::vector<std::size_t> relative_offset_index(std::size_t grid_h, std::size_t grid_w) {
  const std::size_t n = grid_h * grid_w + 1;
  const std::size_t span_w = 2 * grid_w - 1;
  const std::size_t class_row = relative_table_rows(grid_h, grid_w) - 1;
  std::vector<std::size_t> index(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == 0 || j == 0) {
        index[i * n + j] = class_row;
        continue;
      }
      const std::size_t ri = (i - 1) / grid_w, ci = (i - 1) % grid_w;
      const std::size_t rj = (j - 1) / grid_w, cj = (j - 1) % grid_w;
      // offset p_q - p_k shifted to be non-negative
      const std::size_t dr = ri + grid_h - 1 - rj;
      const std::size_t dc = ci + grid_w - 1 - cj;
      index[i * n + j] = dr * span_w + dc;
    }
  }
  return index;
}

template <typename T>
Var<T> relative_bias(const Var<T>& q, const Var<T>& table, const std::vector<std::size_t>& index, std::size_t heads) {
  const Shape& qs = q.shape();
  const Shape& ts = table.shape();
  if (qs.size() != 3 || ts.size() != 2 || heads == 0 || qs[0] % heads != 0 || ts[1] != heads * qs[2]) {
    throw DimensionError("relative_bias: q " + shape_str(qs) + " incompatible with table " + shape_str(ts));
  }
  const std::size_t g = qs[0], n = qs[1], dh = qs[2], rows = ts[0];
  if (index.size() != n * n) throw ConfigError("relative_bias: offset index does not cover every token pair");
  for (auto v : index) {
    if (v >= rows) throw ConfigError("relative_bias: offset row " + std::to_string(v) + " missing from table");
  }
  auto per_head = ops::permute(ops::reshape(table, {rows, heads, dh}), {1, 0, 2});  // [k, R, Dh]
  auto keys = ops::reshape(ops::expand_leading(per_head, g / heads), {g, rows, dh});
  auto logits = ops::bmm(q, keys, true);  // [G, N', R]
  return ops::take_along_last(logits, index, n);
}

template <typename T>
Var<T> self_attention(Tape<T>& tape, const Var<T>& z, const MSAParams<T>& params, const AttentionContext<T>& ctx) {
  auto qkv = qkv_project(tape, z, params);
  std::optional<Var<T>> bias;
  if (params.rel_table) {
    if (!ctx.rel_index) throw ConfigError("relative attention requires an offset index");
    bias = relative_bias(qkv.q, tape.param(*params.rel_table), *ctx.rel_index, params.heads);
  }
  auto a = attention_weights(qkv.q, qkv.k, bias);
  if (ctx.sink) {
    const auto& av = a.value();
    const std::size_t g = av.dim(0), n = av.dim(1);
    for (std::size_t i = 0; i < g; ++i) {
      Tensor<double> m({n, n});
      for (std::size_t e = 0; e < n * n; ++e) m[e] = static_cast<double>(av[i * n * n + e]);
      ctx.sink->record({ctx.layer, i % params.heads, ctx.image_offset + i / params.heads, std::move(m)});
    }
  }
  if (ctx.dropout > 0.0 && ctx.training) {
    if (!ctx.rng) throw ContractError("attention dropout requires an rng");
    a = ops::dropout(a, ctx.dropout, *ctx.rng, true);
  }
  return ops::bmm(a, qkv.v);
}

template <typename T>
Var<T> multi_head(Tape<T>& tape, const Var<T>& z, const MSAParams<T>& params, const AttentionContext<T>& ctx) {
  const Shape s = z.shape();
  if (s.size() != 3) throw DimensionError("multi_head: expected [B x N' x D], got " + shape_str(s));
  const std::size_t b = s[0], n = s[1], d = s[2], k = params.heads;
  if (k == 0 || d % k != 0) {
    throw ConfigError("heads (" + std::to_string(k) + ") must divide model dim " + std::to_string(d));
  }
  auto heads = self_attention(tape, z, params, ctx);  // [B*k, N', Dh]
  auto merged = ops::reshape(ops::permute(ops::reshape(heads, {b, k, n, d / k}), {0, 2, 1, 3}), {b, n, d});
  std::optional<Var<T>> bias;
  if (params.out_b) bias = tape.param(*params.out_b);
  return ops::linear(merged, tape.param(*params.out_w), bias);
}

#define VIT_INSTANTIATE_ATTENTION(T)                                                                              \
  template QKV<T> qkv_project(Tape<T>&, const Var<T>&, const MSAParams<T>&);                                      \
  template Var<T> attention_weights(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);                  \
  template Var<T> relative_bias(const Var<T>&, const Var<T>&, const std::vector<std::size_t>&, std::size_t);      \
  template Var<T> self_attention(Tape<T>&, const Var<T>&, const MSAParams<T>&, const AttentionContext<T>&);       \
  template Var<T> multi_head(Tape<T>&, const Var<T>&, const MSAParams<T>&, const AttentionContext<T>&);

VIT_INSTANTIATE_ATTENTION(float)
VIT_INSTANTIATE_ATTENTION(double)

}  // namespace vit
