#include "vit/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <sstream>

namespace vit {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace vit

namespace vit::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMat<T>> mat(T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

template <typename T>
Eigen::Map<const RowMat<T>> cmat(const T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

template <typename T>
void same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

template <typename T>
void accumulate(Tape<T>& t, std::size_t id, const Tensor<T>& g) {
  if (!t.requires_grad(id)) return;
  auto& dst = t.grad(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

// Visits (out_index, in_index) pairs of a permutation with the output in
// row-major order.
template <typename F>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& perm, F&& fn) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = shape_size(in_shape);
  const std::size_t last = out_shape[rank - 1];
  const std::size_t last_stride = stride[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_off = 0;
  for (std::size_t out = 0; out < total; out += last) {
    for (std::size_t j = 0; j < last; ++j) fn(out + j, in_off + j * last_stride);
    // increment the multi-index over all but the last axis
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      in_off += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      in_off -= stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T>
T gaussian_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gaussian_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

}  // namespace

// --- linear algebra -------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> out({m, n});
  mat(out.ptr(), m, n).noalias() = cmat(A.ptr(), m, k) * cmat(B.ptr(), k, n);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).ptr();
    if (t.requires_grad(ia)) {
      mat(t.grad(ia).ptr(), m, k).noalias() += cmat(g, m, n) * cmat(t.value(ib).ptr(), k, n).transpose();
    }
    if (t.requires_grad(ib)) {
      mat(t.grad(ib).ptr(), k, n).noalias() += cmat(t.value(ia).ptr(), m, k).transpose() * cmat(g, m, n);
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias) {
  same_tape(x, w);
  const auto& X = x.value();
  const auto& W = w.value();
  if (W.rank() != 2 || X.shape().back() != W.dim(0)) {
    throw DimensionError("linear: input " + shape_str(X.shape()) + " vs weight " + shape_str(W.shape()));
  }
  const std::size_t in = W.dim(0), outd = W.dim(1), rows = X.size() / in;
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != outd)) {
    throw DimensionError("linear: bias shape " + shape_str(bias->value().shape()));
  }
  Shape out_shape = X.shape();
  out_shape.back() = outd;
  Tensor<T> out(out_shape);
  auto O = mat(out.ptr(), rows, outd);
  O.noalias() = cmat(X.ptr(), rows, in) * cmat(W.ptr(), in, outd);
  if (bias) {
    const auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->value().ptr(), outd);
    O.rowwise() += bv;
  }
  const auto ix = x.id(), iw = w.id();
  const std::size_t ib = bias ? bias->id() : SIZE_MAX;
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), std::span<const Var<T>>(inputs),
                         [ix, iw, ib, rows, in, outd](Tape<T>& t, std::size_t self) {
                           const auto G = cmat(t.grad(self).ptr(), rows, outd);
                           if (t.requires_grad(ix)) {
                             mat(t.grad(ix).ptr(), rows, in).noalias() +=
                                 G * cmat(t.value(iw).ptr(), in, outd).transpose();
                           }
                           if (t.requires_grad(iw)) {
                             mat(t.grad(iw).ptr(), in, outd).noalias() +=
                                 cmat(t.value(ix).ptr(), rows, in).transpose() * G;
                           }
                           if (ib != SIZE_MAX && t.requires_grad(ib)) {
                             mat(t.grad(ib).ptr(), 1, outd) += G.colwise().sum();
                           }
                         });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b) {
  same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  const std::size_t batch = A.dim(0), m = A.dim(1), k = A.dim(2);
  const std::size_t n = transpose_b ? B.dim(1) : B.dim(2);
  if ((transpose_b ? B.dim(2) : B.dim(1)) != k) {
    throw DimensionError("bmm: inner dims differ " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  Tensor<T> out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    auto O = mat(out.ptr() + i * m * n, m, n);
    const auto Ai = cmat(A.ptr() + i * m * k, m, k);
    if (transpose_b) O.noalias() = Ai * cmat(B.ptr() + i * n * k, n, k).transpose();
    else O.noalias() = Ai * cmat(B.ptr() + i * k * n, k, n);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).ptr();
    const T* av = t.value(ia).ptr();
    const T* bv = t.value(ib).ptr();
    T* ga = t.requires_grad(ia) ? t.grad(ia).ptr() : nullptr;
    T* gb = t.requires_grad(ib) ? t.grad(ib).ptr() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto G = cmat(g + i * m * n, m, n);
      if (transpose_b) {
        // out = A B^T: dA = G B, dB = G^T A
        if (ga) mat(ga + i * m * k, m, k).noalias() += G * cmat(bv + i * n * k, n, k);
        if (gb) mat(gb + i * n * k, n, k).noalias() += G.transpose() * cmat(av + i * m * k, m, k);
      } else {
        if (ga) mat(ga + i * m * k, m, k).noalias() += G * cmat(bv + i * k * n, k, n).transpose();
        if (gb) mat(gb + i * k * n, k, n).noalias() += cmat(av + i * m * k, m, k).transpose() * G;
      }
    }
  });
}

// --- elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& y) {
  same_tape(x, y);
  const auto& X = x.value();
  const auto& Y = y.value();
  if (Y.rank() > X.rank() || !std::equal(Y.shape().begin(), Y.shape().end(), X.shape().end() - Y.rank())) {
    throw DimensionError("add_broadcast: " + shape_str(Y.shape()) + " is not a suffix of " + shape_str(X.shape()));
  }
  const std::size_t ny = Y.size(), reps = X.size() / ny;
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < ny; ++j) out[r * ny + j] = X[r * ny + j] + Y[j];
  }
  const auto ix = x.id(), iy = y.id();
  return x.tape().record(std::move(out), {x, y}, [ix, iy, ny, reps](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    accumulate(t, ix, g);
    if (t.requires_grad(iy)) {
      auto& gy = t.grad(iy);
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < ny; ++j) gy[j] += g[r * ny + j];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  const auto& X = x.value();
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * factor;
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, factor](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const auto& X = x.value();
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * gaussian_cdf(X[i]);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(ix);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      gx[i] += g[i] * (gaussian_cdf(v) + v * gaussian_pdf(v));
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  const auto& X = x.value();
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::tanh(X[i]);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const auto& X = x.value();
  if (axis >= X.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(X.shape()));
  const std::size_t len = X.dim(axis);
  const std::size_t inner = prod(X.shape(), axis + 1, X.rank());
  const std::size_t outer = prod(X.shape(), 0, axis);
  Tensor<T> out(X.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = X[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, X[base + j * inner]);
      T s = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(X[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, len, inner, outer](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(ix);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t p = base + j * inner;
          gx[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  const auto& X = x.value();
  const std::size_t d = X.shape().back();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = X.size() / d;
  const auto& G = gain.value();
  const auto& B = bias.value();
  Tensor<T> out(X.shape());
  std::vector<T> xhat(X.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.ptr() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * G[j] + B[j];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          T* gg = t.requires_grad(ig) ? t.grad(ig).ptr() : nullptr;
          T* gb = t.requires_grad(ib) ? t.grad(ib).ptr() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gg) gg[j] += g[r * d + j] * xhat[r * d + j];
              if (gb) gb[j] += g[r * d + j];
            }
          }
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 /= T(d);
            m2 /= T(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gv[j];
              gx[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) throw ParameterError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const auto& X = x.value();
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(X.size());
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = X[i] * mask[i];
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// --- shape ----------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& t, std::size_t self) {
    accumulate(t, ix, t.grad(self));
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const auto& X = x.value();
  const std::size_t rank = X.rank();
  if (perm.size() != rank) throw DimensionError("permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = X.dim(perm[i]);
  Tensor<T> out(out_shape);
  for_each_permuted(X.shape(), perm, [&](std::size_t o, std::size_t i) { out[o] = X[i]; });
  const auto ix = x.id();
  Shape in_shape = X.shape();
  return x.tape().record(std::move(out), {x}, [ix, perm, in_shape](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for_each_permuted(in_shape, perm, [&](std::size_t o, std::size_t i) { gx[i] += g[o]; });
  });
}

template <typename T>
Var<T> narrow(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& X = x.value();
  if (axis >= X.rank() || length == 0 || start + length > X.dim(axis)) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") invalid for axis " + std::to_string(axis) + " of " + shape_str(X.shape()));
  }
  const std::size_t outer = prod(X.shape(), 0, axis);
  const std::size_t inner = prod(X.shape(), axis + 1, X.rank());
  const std::size_t full = X.dim(axis);
  Shape out_shape = X.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(X.ptr() + (o * full + start) * inner, length * inner, out.ptr() + o * length * inner);
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = g.ptr() + o * length * inner;
      T* dst = gx.ptr() + (o * full + start) * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = xs[0].value().shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const auto& v : xs) {
    same_tape(xs[0], v);
    const Shape& s = v.value().shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) throw DimensionError("concat: shape mismatch off the concat axis");
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  const std::size_t outer = prod(s0, 0, axis);
  const std::size_t inner = prod(s0, axis + 1, s0.size());
  Shape out_shape = s0;
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& X = xs[k].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(X.ptr() + o * lens[k] * inner, lens[k] * inner, out.ptr() + (o * total + offset) * inner);
    }
    offset += lens[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& v : xs) ids.push_back(v.id());
  return xs[0].tape().record(std::move(out), xs, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        auto& gx = t.grad(ids[k]);
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.ptr() + (o * total + off) * inner;
          T* dst = gx.ptr() + o * lens[k] * inner;
          for (std::size_t i = 0; i < lens[k] * inner; ++i) dst[i] += src[i];
        }
      }
      off += lens[k];
    }
  });
}

template <typename T>
Var<T> expand_leading(const Var<T>& x, std::size_t n) {
  const auto& X = x.value();
  if (n == 0) throw DimensionError("expand_leading: n must be positive");
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), X.shape().begin(), X.shape().end());
  Tensor<T> out(out_shape);
  const std::size_t sz = X.size();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(X.ptr(), sz, out.ptr() + i * sz);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, n, sz](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < sz; ++j) gx[j] += g[i * sz + j];
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& rows) {
  const auto& X = x.value();
  const std::size_t d = X.shape().back();
  const std::size_t m = X.size() / d;
  if (rows.empty()) throw DimensionError("gather_rows: empty row set");
  for (auto r : rows) {
    if (r >= m) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of " + std::to_string(m));
  }
  Tensor<T> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(X.ptr() + rows[i] * d, d, out.ptr() + i * d);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, rows, d](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gx[rows[i] * d + j] += g[i * d + j];
    }
  });
}

template <typename T>
Var<T> take_along_last(const Var<T>& x, const std::vector<std::size_t>& index, std::size_t n) {
  const auto& X = x.value();
  if (X.rank() < 2) throw DimensionError("take_along_last: rank must be >= 2");
  const std::size_t r = X.shape().back();
  const std::size_t m = X.dim(X.rank() - 2);
  if (index.size() != m * n) throw DimensionError("take_along_last: index table must be M x N");
  for (auto v : index) {
    if (v >= r) throw DimensionError("take_along_last: index " + std::to_string(v) + " >= " + std::to_string(r));
  }
  const std::size_t batch = X.size() / (m * r);
  Shape out_shape = X.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* src = X.ptr() + (b * m + i) * r;
      T* dst = out.ptr() + (b * m + i) * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] = src[index[i * n + j]];
    }
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < m; ++i) {
        const T* src = g.ptr() + (b * m + i) * n;
        T* dst = gx.ptr() + (b * m + i) * r;
        for (std::size_t j = 0; j < n; ++j) dst[index[i * n + j]] += src[j];
      }
    }
  });
}

// --- reductions -----------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& x) {
  const auto& X = x.value();
  T s = 0;
  for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
  const auto ix = x.id();
  return x.tape().record(Tensor<T>({1}, {s}), {x}, [ix](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto& gx = t.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.value().size()));
}

// --- convolution stem -----------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::size_t stride, std::size_t pad) {
  same_tape(x, w);
  const auto& X = x.value();
  const auto& W = w.value();
  if (X.rank() != 4 || W.rank() != 4 || W.dim(2) != X.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(X.shape()) + " vs filter " + shape_str(W.shape()));
  }
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t batch = X.dim(0), h = X.dim(1), wd = X.dim(2), cin = X.dim(3);
  const std::size_t kh = W.dim(0), kw = W.dim(1), cout = W.dim(3);
  if (h + 2 * pad < kh || wd + 2 * pad < kw) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t patch = kh * kw * cin;
  const std::size_t rows = batch * ho * wo;
  std::vector<T> cols(rows * patch, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* dst = cols.data() + ((b * ho + oy) * wo + ox) * patch;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            std::copy_n(X.ptr() + ((b * h + iy) * wd + ix) * cin, cin, dst + (ky * kw + kx) * cin);
          }
        }
      }
    }
  }
  Tensor<T> out({batch, ho, wo, cout});
  mat(out.ptr(), rows, cout).noalias() = cmat(cols.data(), rows, patch) * cmat(W.ptr(), patch, cout);
  const auto ixd = x.id(), iw = w.id();
  return x.tape().record(
      std::move(out), {x, w},
      [=, cols = std::move(cols)](Tape<T>& t, std::size_t self) {
        const auto G = cmat(t.grad(self).ptr(), rows, cout);
        if (t.requires_grad(iw)) {
          mat(t.grad(iw).ptr(), patch, cout).noalias() += cmat(cols.data(), rows, patch).transpose() * G;
        }
        if (t.requires_grad(ixd)) {
          RowMat<T> dcols = G * cmat(t.value(iw).ptr(), patch, cout).transpose();
          auto& gx = t.grad(ixd);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const T* src = dcols.data() + ((b * ho + oy) * wo + ox) * patch;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                    T* dst = gx.ptr() + ((b * h + iy) * wd + ix) * cin;
                    const T* s = src + (ky * kw + kx) * cin;
                    for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> weight_standardize(const Var<T>& w, T eps) {
  const auto& W = w.value();
  if (W.rank() < 2) throw DimensionError("weight_standardize: rank must be >= 2");
  const std::size_t cout = W.shape().back();
  const std::size_t fan = W.size() / cout;
  Tensor<T> out(W.shape());
  std::vector<T> rstd(cout);
  for (std::size_t c = 0; c < cout; ++c) {
    T mu = 0;
    for (std::size_t i = 0; i < fan; ++i) mu += W[i * cout + c];
    mu /= T(fan);
    T var = 0;
    for (std::size_t i = 0; i < fan; ++i) var += (W[i * cout + c] - mu) * (W[i * cout + c] - mu);
    var /= T(fan);
    rstd[c] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < fan; ++i) out[i * cout + c] = (W[i * cout + c] - mu) * rstd[c];
  }
  const auto iw = w.id();
  return w.tape().record(std::move(out), {w}, [iw, cout, fan, rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gw = t.grad(iw);
    for (std::size_t c = 0; c < cout; ++c) {
      T m1 = 0, m2 = 0;
      for (std::size_t i = 0; i < fan; ++i) {
        m1 += g[i * cout + c];
        m2 += g[i * cout + c] * y[i * cout + c];
      }
      m1 /= T(fan);
      m2 /= T(fan);
      for (std::size_t i = 0; i < fan; ++i) {
        const std::size_t p = i * cout + c;
        gw[p] += rstd[c] * (g[p] - m1 - y[p] * m2);
      }
    }
  });
}

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, std::size_t groups, T eps) {
  same_tape(x, gain);
  same_tape(x, bias);
  const auto& X = x.value();
  if (X.rank() != 4) throw DimensionError("group_norm: expected [B x H x W x C], got " + shape_str(X.shape()));
  const std::size_t batch = X.dim(0), hw = X.dim(1) * X.dim(2), c = X.dim(3);
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(c) +
                      " channels");
  }
  if (gain.value().shape() != Shape{c} || bias.value().shape() != Shape{c}) {
    throw DimensionError("group_norm: gain/bias must be [" + std::to_string(c) + "]");
  }
  const std::size_t cg = c / groups;
  const T count = T(hw * cg);
  const auto& G = gain.value();
  const auto& B = bias.value();
  Tensor<T> out(X.shape());
  std::vector<T> xhat(X.size());
  std::vector<T> rstd(batch * groups);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t grp = 0; grp < groups; ++grp) {
      T mu = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t j = 0; j < cg; ++j) mu += X[(b * hw + p) * c + grp * cg + j];
      }
      mu /= count;
      T var = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t j = 0; j < cg; ++j) {
          const T dv = X[(b * hw + p) * c + grp * cg + j] - mu;
          var += dv * dv;
        }
      }
      var /= count;
      const T rs = T(1) / std::sqrt(var + eps);
      rstd[b * groups + grp] = rs;
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t j = 0; j < cg; ++j) {
          const std::size_t ch = grp * cg + j;
          const std::size_t idx = (b * hw + p) * c + ch;
          xhat[idx] = (X[idx] - mu) * rs;
          out[idx] = xhat[idx] * G[ch] + B[ch];
        }
      }
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig);
        T* gg = t.requires_grad(ig) ? t.grad(ig).ptr() : nullptr;
        T* gb = t.requires_grad(ib) ? t.grad(ib).ptr() : nullptr;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gg) gg[i % c] += g[i] * xhat[i];
          if (gb) gb[i % c] += g[i];
        }
        if (!t.requires_grad(ix)) return;
        auto& gx = t.grad(ix);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t grp = 0; grp < groups; ++grp) {
            T m1 = 0, m2 = 0;
            for (std::size_t p = 0; p < hw; ++p) {
              for (std::size_t j = 0; j < cg; ++j) {
                const std::size_t ch = grp * cg + j;
                const std::size_t idx = (b * hw + p) * c + ch;
                const T dh = g[idx] * gv[ch];
                m1 += dh;
                m2 += dh * xhat[idx];
              }
            }
            m1 /= count;
            m2 /= count;
            const T rs = rstd[b * groups + grp];
            for (std::size_t p = 0; p < hw; ++p) {
              for (std::size_t j = 0; j < cg; ++j) {
                const std::size_t ch = grp * cg + j;
                const std::size_t idx = (b * hw + p) * c + ch;
                gx[idx] += rs * (g[idx] * gv[ch] - m1 - xhat[idx] * m2);
              }
            }
          }
        }
      });
}

#define VIT_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> linear(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);            \
  template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> gelu(const Var<T>&);                                                           \
  template Var<T> tanh(const Var<T>&);                                                           \
  template Var<T> softmax(const Var<T>&, std::size_t);                                           \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                    \
  template Var<T> dropout(const Var<T>&, double, Rng&, bool);                                    \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                       \
  template Var<T> narrow(const Var<T>&, std::size_t, std::size_t, std::size_t);                  \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                                  \
  template Var<T> expand_leading(const Var<T>&, std::size_t);                                    \
  template Var<T> gather_rows(const Var<T>&, const std::vector<std::size_t>&);                   \
  template Var<T> take_along_last(const Var<T>&, const std::vector<std::size_t>&, std::size_t);  \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);                \
  template Var<T> weight_standardize(const Var<T>&, T);                                          \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, T);

VIT_INSTANTIATE_OPS(float)
VIT_INSTANTIATE_OPS(double)

}  // namespace vit::ops
