#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vit/rng.hpp"
#include "vit/tape.hpp"
#include "vit/tensor.hpp"

// Differentiable primitives. Every op records its output on the tape of its
// first input and registers an exact backward rule. Instantiated for float and
// double.
namespace vit::ops {

// --- linear algebra -------------------------------------------------------

/// a[m x k] * b[k x n] -> [m x n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// x[... x in] * w[in x out] (+ bias[out]) over all leading dims.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias = std::nullopt);
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  return linear(x, w, std::optional<Var<T>>(bias));
}

/// Batched product a[B x m x k] * b[B x k x n], or b[B x n x k]^T when
/// transpose_b is set.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false);

// --- elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// x + y where y's shape equals the trailing dims of x (bias, positional rows).
template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& y);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

/// x * Phi(x) with the exact Gaussian CDF.
template <typename T>
Var<T> gelu(const Var<T>& x);

template <typename T>
Var<T> tanh(const Var<T>& x);

/// Numerically stable softmax along `axis`.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Normalizes each vector along the last dim, then applies gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-6));

/// Inverted dropout. Identity when !training or rate == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool training);

// --- shape ----------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Output axis i is input axis perm[i].
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm);

template <typename T>
Var<T> narrow(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Var<T> concat(std::span<const Var<T>> xs, std::size_t axis);

/// x[...] -> [n x ...], each slice a copy of x.
template <typename T>
Var<T> expand_leading(const Var<T>& x, std::size_t n);

/// Views x as [M x D] (D = last dim) and selects the listed rows.
template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows);

/// x[... x M x R], index[M x N] -> out[... x M x N] with
/// out[..., i, j] = x[..., i, index[i*N + j]].
template <typename T>
Var<T> take_along_last(const Var<T>& x, const std::vector<std::size_t>& index, std::size_t n);

// --- reductions -----------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

// --- convolution stem -----------------------------------------------------

/// NHWC convolution. x[B x H x W x Cin], w[kh x kw x Cin x Cout], no bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride, std::size_t pad);

/// Standardizes each output filter (last axis) to zero mean, unit variance
/// over all leading axes.
template <typename T>
Var<T> weight_standardize(const Var<T>& w, T eps = T(1e-10));

/// GroupNorm over x[B x H x W x C] with per-channel gain and bias.
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, std::size_t groups, T eps = T(1e-6));

}  // namespace vit::ops
